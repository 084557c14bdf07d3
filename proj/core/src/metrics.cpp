#include "armp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace armp::metrics {

namespace {

void check_same_grid(const LabelMask& a, const LabelMask& b) {
  if (a.height != b.height || a.width != b.width)
    throw ShapeError("metrics: mask shapes differ");
  if (a.spacing_row_mm != b.spacing_row_mm || a.spacing_col_mm != b.spacing_col_mm)
    throw ShapeError("metrics: mask spacings differ");
}

// Uniform-bucket nearest-neighbor structure over boundary points. Selection
// happens on squared distances; ties and accumulation order therefore match
// the brute-force oracle bit for bit.
class BucketGrid {
 public:
  explicit BucketGrid(const std::vector<BoundaryPoint>& points) : points_(points) {
    min_x_ = min_y_ = 1e300;
    double max_x = -1e300, max_y = -1e300;
    for (const auto& p : points) {
      min_x_ = std::min(min_x_, p.x_mm);
      min_y_ = std::min(min_y_, p.y_mm);
      max_x = std::max(max_x, p.x_mm);
      max_y = std::max(max_y, p.y_mm);
    }
    const double span = std::max(max_x - min_x_, max_y - min_y_);
    cell_ = span > 0 ? span / 32.0 : 1.0;
    nx_ = static_cast<int>((max_x - min_x_) / cell_) + 1;
    ny_ = static_cast<int>((max_y - min_y_) / cell_) + 1;
    buckets_.resize(static_cast<size_t>(nx_) * ny_);
    for (size_t i = 0; i < points.size(); ++i)
      buckets_[bucket_of(points[i])].push_back(static_cast<int>(i));
  }

  double nearest_d2(const BoundaryPoint& q) const {
    const int qx = clampi(static_cast<int>((q.x_mm - min_x_) / cell_), 0, nx_ - 1);
    const int qy = clampi(static_cast<int>((q.y_mm - min_y_) / cell_), 0, ny_ - 1);
    double best = 1e300;
    for (int ring = 0; ring < std::max(nx_, ny_); ++ring) {
      bool any = false;
      for (int by = qy - ring; by <= qy + ring; ++by) {
        if (by < 0 || by >= ny_) continue;
        for (int bx = qx - ring; bx <= qx + ring; ++bx) {
          if (bx < 0 || bx >= nx_) continue;
          if (std::max(std::abs(bx - qx), std::abs(by - qy)) != ring) continue;
          any = true;
          for (int idx : buckets_[static_cast<size_t>(by) * nx_ + bx]) {
            const double dx = points_[static_cast<size_t>(idx)].x_mm - q.x_mm;
            const double dy = points_[static_cast<size_t>(idx)].y_mm - q.y_mm;
            best = std::min(best, dx * dx + dy * dy);
          }
        }
      }
      // A hit at ring r bounds the true nearest by (r+1) cells; one extra ring
      // closes the corner-vs-edge gap.
      if (best < 1e300) {
        const double safe = static_cast<double>(ring) * cell_;
        if (best <= safe * safe || ring + 1 >= std::max(nx_, ny_)) break;
      }
      if (!any && ring > std::max(nx_, ny_)) break;
    }
    return best;
  }

 private:
  static int clampi(int v, int lo, int hi) { return std::min(std::max(v, lo), hi); }
  size_t bucket_of(const BoundaryPoint& p) const {
    const int bx = clampi(static_cast<int>((p.x_mm - min_x_) / cell_), 0, nx_ - 1);
    const int by = clampi(static_cast<int>((p.y_mm - min_y_) / cell_), 0, ny_ - 1);
    return static_cast<size_t>(by) * nx_ + bx;
  }

  const std::vector<BoundaryPoint>& points_;
  std::vector<std::vector<int>> buckets_;
  double min_x_, min_y_, cell_;
  int nx_, ny_;
};

double directed_mean_d(const std::vector<BoundaryPoint>& from, const BucketGrid& to) {
  double acc = 0.0;
  for (const auto& p : from) acc += std::sqrt(to.nearest_d2(p));
  return acc / static_cast<double>(from.size());
}

double directed_max_d(const std::vector<BoundaryPoint>& from, const BucketGrid& to) {
  double best = 0.0;
  for (const auto& p : from) best = std::max(best, std::sqrt(to.nearest_d2(p)));
  return best;
}

}  // namespace

const char* organ_name(Organ o) {
  switch (o) {
    case Organ::kLung: return "lung";
    case Organ::kHeart: return "heart";
    case Organ::kTumor: return "tumor";
  }
  return "?";
}

size_t LabelMask::count() const {
  size_t n = 0;
  for (uint8_t v : fg) n += v != 0;
  return n;
}

LabelMask mask_from_labels(const phantom::PhaseVolume& phase, Organ organ) {
  LabelMask m;
  m.height = phase.height;
  m.width = phase.width;
  m.spacing_row_mm = phase.spacing_row_mm;
  m.spacing_col_mm = phase.spacing_col_mm;
  m.organ = organ;
  m.fg.resize(phase.labels.size());
  const uint8_t want = static_cast<uint8_t>(organ);
  for (size_t i = 0; i < phase.labels.size(); ++i) m.fg[i] = phase.labels[i] == want ? 1 : 0;
  return m;
}

LabelMask threshold_channel(const std::vector<float>& probs, int height, int width,
                            double spacing_row_mm, double spacing_col_mm, Organ organ,
                            float threshold) {
  if (static_cast<int>(probs.size()) != height * width)
    throw ShapeError("threshold_channel: size mismatch");
  LabelMask m;
  m.height = height;
  m.width = width;
  m.spacing_row_mm = spacing_row_mm;
  m.spacing_col_mm = spacing_col_mm;
  m.organ = organ;
  m.fg.resize(probs.size());
  for (size_t i = 0; i < probs.size(); ++i) m.fg[i] = probs[i] >= threshold ? 1 : 0;
  return m;
}

LabelMask mask_from_intensity_band(const std::vector<float>& intensity, int height, int width,
                                   double spacing_row_mm, double spacing_col_mm, Organ organ) {
  float lo = 0, hi = 0;
  switch (organ) {
    case Organ::kLung:
      lo = phantom::IntensityBands::kLungLo;
      hi = phantom::IntensityBands::kLungHi;
      break;
    case Organ::kHeart:
      lo = phantom::IntensityBands::kHeartLo;
      hi = phantom::IntensityBands::kHeartHi;
      break;
    case Organ::kTumor:
      lo = phantom::IntensityBands::kTumorLo;
      hi = phantom::IntensityBands::kTumorHi;
      break;
  }
  if (static_cast<int>(intensity.size()) != height * width)
    throw ShapeError("mask_from_intensity_band: size mismatch");
  LabelMask m;
  m.height = height;
  m.width = width;
  m.spacing_row_mm = spacing_row_mm;
  m.spacing_col_mm = spacing_col_mm;
  m.organ = organ;
  m.fg.resize(intensity.size());
  for (size_t i = 0; i < intensity.size(); ++i)
    m.fg[i] = (intensity[i] >= lo && intensity[i] < hi) ? 1 : 0;
  return m;
}

double iou(const LabelMask& a, const LabelMask& b) {
  check_same_grid(a, b);
  size_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.fg.size(); ++i) {
    const bool fa = a.fg[i] != 0, fb = b.fg[i] != 0;
    inter += fa && fb;
    uni += fa || fb;
  }
  if (uni == 0) return 1.0;  // both empty: perfect agreement
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double dsc(const LabelMask& a, const LabelMask& b) {
  check_same_grid(a, b);
  size_t inter = 0, total = 0;
  for (size_t i = 0; i < a.fg.size(); ++i) {
    const bool fa = a.fg[i] != 0, fb = b.fg[i] != 0;
    inter += fa && fb;
    total += fa;
    total += fb;
  }
  if (total == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

std::vector<BoundaryPoint> extract_boundary(const LabelMask& mask) {
  if (mask.empty_mask()) throw EmptyMaskError("extract_boundary: empty mask");
  std::vector<BoundaryPoint> out;
  for (int r = 0; r < mask.height; ++r) {
    for (int c = 0; c < mask.width; ++c) {
      if (!mask.at(r, c)) continue;
      const bool edge = r == 0 || r == mask.height - 1 || c == 0 || c == mask.width - 1 ||
                        !mask.at(r - 1, c) || !mask.at(r + 1, c) || !mask.at(r, c - 1) ||
                        !mask.at(r, c + 1);
      if (edge)
        out.push_back({(c + 0.5) * mask.spacing_col_mm, (r + 0.5) * mask.spacing_row_mm});
    }
  }
  return out;
}

double surface_distance(const LabelMask& a, const LabelMask& b) {
  check_same_grid(a, b);
  const auto ba = extract_boundary(a);
  const auto bb = extract_boundary(b);
  BucketGrid ga(ba), gb(bb);
  return 0.5 * (directed_mean_d(ba, gb) + directed_mean_d(bb, ga));
}

double hausdorff(const LabelMask& a, const LabelMask& b) {
  check_same_grid(a, b);
  const auto ba = extract_boundary(a);
  const auto bb = extract_boundary(b);
  BucketGrid ga(ba), gb(bb);
  return std::max(directed_max_d(ba, gb), directed_max_d(bb, ga));
}

MetricsRecord evaluate_pair(const LabelMask& prediction, const LabelMask& truth,
                            const std::string& patient_id, int phase, const std::string& method) {
  MetricsRecord rec;
  rec.patient_id = patient_id;
  rec.phase = phase;
  rec.organ = truth.organ;
  rec.method = method;
  rec.iou = iou(prediction, truth);
  rec.dsc = dsc(prediction, truth);
  if (!prediction.empty_mask() && !truth.empty_mask()) {
    rec.sd_mm = surface_distance(prediction, truth);
    rec.hd_mm = hausdorff(prediction, truth);
  }
  return rec;
}

std::string records_to_csv(const std::vector<MetricsRecord>& records) {
  std::ostringstream os;
  os << "patient_id,phase,organ,method,iou,dsc,sd_mm,hd_mm\n";
  os.precision(9);
  os << std::fixed;
  for (const auto& r : records) {
    os << r.patient_id << ',' << r.phase << ',' << organ_name(r.organ) << ',' << r.method << ','
       << r.iou << ',' << r.dsc << ',';
    if (r.sd_mm) os << *r.sd_mm;
    os << ',';
    if (r.hd_mm) os << *r.hd_mm;
    os << '\n';
  }
  return os.str();
}

std::vector<MetricsRecord> records_from_csv(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line)) throw FormatError("metrics csv: empty");
  if (line != "patient_id,phase,organ,method,iou,dsc,sd_mm,hd_mm")
    throw FormatError("metrics csv: unexpected header: " + line);
  std::vector<MetricsRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    while (cells.size() < 8) cells.emplace_back();
    if (cells.size() != 8) throw FormatError("metrics csv: malformed row: " + line);
    MetricsRecord r;
    r.patient_id = cells[0];
    r.phase = std::stoi(cells[1]);
    if (cells[2] == "lung")
      r.organ = Organ::kLung;
    else if (cells[2] == "heart")
      r.organ = Organ::kHeart;
    else if (cells[2] == "tumor")
      r.organ = Organ::kTumor;
    else
      throw FormatError("metrics csv: unknown organ: " + cells[2]);
    r.method = cells[3];
    r.iou = std::stod(cells[4]);
    r.dsc = std::stod(cells[5]);
    if (!cells[6].empty()) r.sd_mm = std::stod(cells[6]);
    if (!cells[7].empty()) r.hd_mm = std::stod(cells[7]);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace armp::metrics
