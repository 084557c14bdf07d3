#include "armp/phantom.hpp"

#include <cmath>
#include <cstring>

namespace armp::phantom {

namespace {

bool bits_equal(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

bool ellipse_inside_ellipse(const Ellipse& inner, const Ellipse& outer, double margin_mm,
                            int samples = 128) {
  for (int i = 0; i < samples; ++i) {
    const double a = 2.0 * kPi * i / samples;
    const double px = inner.cx_mm + inner.rx_mm * std::cos(a);
    const double py = inner.cy_mm + inner.ry_mm * std::sin(a);
    const double nx = (px - outer.cx_mm) / (outer.rx_mm - margin_mm);
    const double ny = (py - outer.cy_mm) / (outer.ry_mm - margin_mm);
    if (nx * nx + ny * ny >= 1.0) return false;
  }
  return true;
}

bool disc_inside_ellipse(double cx, double cy, double r, const Ellipse& outer, double margin_mm,
                         int samples = 32) {
  Ellipse disc{cx, cy, r, r};
  return ellipse_inside_ellipse(disc, outer, margin_mm, samples);
}

// Lung ellipse at breathing displacement d: vertical radius grows by d.
Ellipse lung_at(const Ellipse& base, double d) {
  return Ellipse{base.cx_mm, base.cy_mm, base.rx_mm, base.ry_mm + d};
}

struct Geometry {
  Ellipse lung_left, lung_right;
  Ellipse heart;
  double tumor_cx, tumor_cy, tumor_r;
};

Geometry geometry_at(const PatientParams& p, double breath_d, double heart_d) {
  Geometry g;
  g.lung_left = lung_at(p.lung_left, breath_d);
  g.lung_right = lung_at(p.lung_right, breath_d);
  g.heart = p.heart;
  g.heart.cy_mm += heart_d;
  const Ellipse& host = p.host_lung();
  g.tumor_cx = host.cx_mm + p.tumor_dx_mm;
  g.tumor_cy = host.cy_mm + p.tumor_dy_mm + breath_d;
  g.tumor_r = p.tumor_r_mm;
  return g;
}

// Containment across the whole cycle, checked at the extremes and a grid of
// intermediate displacements.
bool params_geometry_valid(const PatientParams& p) {
  const double a = p.breath_amp_mm;
  for (int i = 0; i <= 16; ++i) {
    const double d = -a + 2.0 * a * i / 16.0;
    const Geometry g = geometry_at(p, d, 0.0);
    if (!ellipse_inside_ellipse(g.lung_left, p.thorax, 2.0)) return false;
    if (!ellipse_inside_ellipse(g.lung_right, p.thorax, 2.0)) return false;
    const Ellipse& host = p.tumor_host == 0 ? g.lung_left : g.lung_right;
    if (!disc_inside_ellipse(g.tumor_cx, g.tumor_cy, g.tumor_r, host, 1.5)) return false;
  }
  for (double hd : {-p.heart_amp_mm, 0.0, p.heart_amp_mm}) {
    Ellipse h = p.heart;
    h.cy_mm += hd;
    if (!ellipse_inside_ellipse(h, p.thorax, 2.0)) return false;
  }
  // Heart clear of the lungs in x for any vertical positions.
  const double heart_max_x = p.heart.cx_mm + p.heart.rx_mm;
  const double heart_min_x = p.heart.cx_mm - p.heart.rx_mm;
  const double left_inner = p.lung_left.cx_mm + p.lung_left.rx_mm;
  const double right_inner = p.lung_right.cx_mm - p.lung_right.rx_mm;
  return heart_min_x > left_inner + 1.0 && heart_max_x < right_inner - 1.0;
}

}  // namespace

bool point_in_ellipse(const Ellipse& e, double x_mm, double y_mm) {
  const double nx = (x_mm - e.cx_mm) / e.rx_mm;
  const double ny = (y_mm - e.cy_mm) / e.ry_mm;
  return nx * nx + ny * ny < 1.0;
}

bool PhaseVolume::same_content(const PhaseVolume& o) const {
  return height == o.height && width == o.width && spacing_row_mm == o.spacing_row_mm &&
         spacing_col_mm == o.spacing_col_mm && phase_index == o.phase_index &&
         bits_equal(intensity, o.intensity) && labels == o.labels;
}

bool ScanSequence::same_content(const ScanSequence& o) const {
  if (phases.size() != o.phases.size()) return false;
  for (size_t i = 0; i < phases.size(); ++i)
    if (!phases[i].same_content(o.phases[i])) return false;
  return true;
}

void ScanSequence::validate() const {
  if (phases.empty()) throw ValueError("scan: no phases");
  const auto& first = phases.front();
  for (size_t i = 0; i < phases.size(); ++i) {
    const auto& ph = phases[i];
    if (ph.phase_index != static_cast<int>(i)) throw ValueError("scan: phase indices not 0..T-1");
    if (ph.height != first.height || ph.width != first.width ||
        ph.spacing_row_mm != first.spacing_row_mm || ph.spacing_col_mm != first.spacing_col_mm)
      throw ValueError("scan: phases disagree on raster geometry");
    if (ph.spacing_row_mm <= 0 || ph.spacing_col_mm <= 0) throw ValueError("scan: bad spacing");
    if (static_cast<int>(ph.intensity.size()) != ph.height * ph.width ||
        ph.intensity.size() != ph.labels.size())
      throw ValueError("scan: pixel buffer size mismatch");
    for (float v : ph.intensity)
      if (!(v >= 0.0f && v <= 1.0f)) throw ValueError("scan: intensity outside [0,1]");
    for (uint8_t l : ph.labels)
      if (l > kTumor) throw ValueError("scan: unknown label value");
  }
}

void GenerationConfig::validate() const {
  if (phases < 2) throw ValueError("generation config: need at least 2 phases");
  if (height <= 0 || width <= 0 || spacing_mm <= 0)
    throw ValueError("generation config: bad raster");
  auto range_ok = [](double lo, double hi) { return lo <= hi; };
  if (!range_ok(amp_min_mm, amp_max_mm) || !range_ok(heart_amp_min_mm, heart_amp_max_mm) ||
      !range_ok(phase_offset_min, phase_offset_max))
    throw ValueError("generation config: degenerate range (min > max)");
  if (amp_min_mm < 0 || heart_amp_min_mm < 0) throw ValueError("generation config: negative amplitude");
}

PatientParams sample_patient(uint64_t seed, const GenerationConfig& cfg) {
  cfg.validate();
  Rng root(seed);
  Rng geo = root.fork("geometry");

  const double fw = cfg.fov_w_mm();
  const double fh = cfg.fov_h_mm();

  PatientParams p;
  p.seed = seed;
  p.breath_amp_mm = geo.uniform(cfg.amp_min_mm, cfg.amp_max_mm);
  p.heart_amp_mm = geo.uniform(cfg.heart_amp_min_mm, cfg.heart_amp_max_mm);
  p.phase_offset = geo.uniform(cfg.phase_offset_min, cfg.phase_offset_max);
  while (p.phase_offset >= 2.0 * kPi) p.phase_offset -= 2.0 * kPi;
  while (p.phase_offset < 0.0) p.phase_offset += 2.0 * kPi;

  p.levels.body = static_cast<float>(geo.uniform(0.42, 0.46));
  p.levels.lung = static_cast<float>(geo.uniform(0.19, 0.25));
  p.levels.heart = static_cast<float>(geo.uniform(0.59, 0.65));
  p.levels.tumor = static_cast<float>(geo.uniform(0.82, 0.88));

  for (int attempt = 0; attempt < 256; ++attempt) {
    const double cx = fw * geo.uniform(0.48, 0.52);
    const double cy = fh * geo.uniform(0.48, 0.52);
    p.thorax = Ellipse{cx, cy, fw * geo.uniform(0.37, 0.43), fh * geo.uniform(0.30, 0.36)};

    const double lung_dx = fw * geo.uniform(0.18, 0.22);
    const double lung_cy = cy + fh * geo.uniform(-0.02, 0.02);
    p.lung_left = Ellipse{cx - lung_dx, lung_cy, fw * geo.uniform(0.10, 0.125),
                          fh * geo.uniform(0.165, 0.19)};
    p.lung_right = Ellipse{cx + lung_dx, lung_cy, fw * geo.uniform(0.10, 0.125),
                           fh * geo.uniform(0.165, 0.19)};

    const double heart_cx = cx + fw * geo.uniform(-0.01, 0.01);
    const double gap_left = (heart_cx - (p.lung_left.cx_mm + p.lung_left.rx_mm));
    const double gap_right = ((p.lung_right.cx_mm - p.lung_right.rx_mm) - heart_cx);
    const double heart_rx_cap = std::min(gap_left, gap_right) - 1.5;
    const double heart_rx = std::min(fw * geo.uniform(0.050, 0.062), heart_rx_cap);
    p.heart = Ellipse{heart_cx, lung_cy + fh * geo.uniform(0.01, 0.05), heart_rx,
                      fh * geo.uniform(0.07, 0.09)};
    if (heart_rx < 6.0) continue;

    p.tumor_host = static_cast<int>(geo.below(2));
    bool tumor_ok = false;
    for (int t_try = 0; t_try < 64 && !tumor_ok; ++t_try) {
      const Ellipse& host = p.host_lung();
      p.tumor_dx_mm = host.rx_mm * geo.uniform(-0.45, 0.45);
      p.tumor_dy_mm = host.ry_mm * geo.uniform(-0.40, 0.40);
      p.tumor_r_mm = geo.uniform(7.0, 12.0);
      tumor_ok = true;
      const double a = p.breath_amp_mm;
      for (int i = 0; i <= 8 && tumor_ok; ++i) {
        const double d = -a + 2.0 * a * i / 8.0;
        const Geometry g = geometry_at(p, d, 0.0);
        const Ellipse& lung = p.tumor_host == 0 ? g.lung_left : g.lung_right;
        tumor_ok = disc_inside_ellipse(g.tumor_cx, g.tumor_cy, g.tumor_r, lung, 1.5);
      }
    }
    if (!tumor_ok) {
      // Lung center with the smallest radius always admits a small tumor.
      p.tumor_dx_mm = 0.0;
      p.tumor_dy_mm = 0.0;
      p.tumor_r_mm = 7.0;
    }

    if (params_geometry_valid(p)) return p;
  }
  throw ValueError("sample_patient: failed to draw a valid geometry (config too tight)");
}

double breathing_displacement_mm(const PatientParams& p, int64_t t, int T) {
  const int64_t tm = ((t % T) + T) % T;
  return p.breath_amp_mm * std::sin(2.0 * kPi * static_cast<double>(tm) / T + p.phase_offset);
}

double heart_displacement_mm(const PatientParams& p, int64_t t, int T) {
  const int64_t tm = ((t % T) + T) % T;
  return p.heart_amp_mm *
         std::sin(2.0 * kPi * static_cast<double>(tm) / T + p.phase_offset + kPi / 2.0);
}

float texture_noise(uint64_t seed, int r, int c) {
  // Value noise on an 8 px lattice, bilinear between hashed corners.
  constexpr int kCell = 8;
  const int gx = c / kCell, gy = r / kCell;
  const float fx = static_cast<float>(c % kCell) / kCell;
  const float fy = static_cast<float>(r % kCell) / kCell;
  auto corner = [seed](int64_t x, int64_t y) {
    uint64_t h = seed ^ (static_cast<uint64_t>(x) * 0x632be59bd9b4e019ull) ^
                 (static_cast<uint64_t>(y) * 0x9e3779b97f4a7c15ull);
    h += 0x9e3779b97f4a7c15ull;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    h ^= h >> 31;
    return static_cast<float>(h >> 40) * 0x1.0p-23f - 1.0f;  // [-1, 1)
  };
  const float v00 = corner(gx, gy), v10 = corner(gx + 1, gy);
  const float v01 = corner(gx, gy + 1), v11 = corner(gx + 1, gy + 1);
  const float top = v00 + (v10 - v00) * fx;
  const float bot = v01 + (v11 - v01) * fx;
  return top + (bot - top) * fy;
}

PhaseVolume render_phase(const PatientParams& p, int t, int T, const RasterSpec& raster) {
  if (T < 1) throw ValueError("render_phase: T must be positive");
  if (t < 0 || t >= T) throw ValueError("render_phase: phase index out of range");

  const double breath_d = breathing_displacement_mm(p, t, T);
  const double heart_d = heart_displacement_mm(p, t, T);
  const Geometry g = geometry_at(p, breath_d, heart_d);

  PhaseVolume out;
  out.height = raster.height;
  out.width = raster.width;
  out.spacing_row_mm = raster.spacing_row_mm;
  out.spacing_col_mm = raster.spacing_col_mm;
  out.phase_index = t;
  out.intensity.resize(static_cast<size_t>(raster.height) * raster.width);
  out.labels.resize(out.intensity.size());

  const Ellipse tumor{g.tumor_cx, g.tumor_cy, g.tumor_r, g.tumor_r};
  for (int r = 0; r < raster.height; ++r) {
    const double y = (r + 0.5) * raster.spacing_row_mm;
    for (int c = 0; c < raster.width; ++c) {
      const double x = (c + 0.5) * raster.spacing_col_mm;
      uint8_t label = kBackground;
      float level;
      if (point_in_ellipse(tumor, x, y)) {
        label = kTumor;
        level = p.levels.tumor;
      } else if (point_in_ellipse(g.heart, x, y)) {
        label = kHeart;
        level = p.levels.heart;
      } else if (point_in_ellipse(g.lung_left, x, y) || point_in_ellipse(g.lung_right, x, y)) {
        label = kLung;
        level = p.levels.lung;
      } else if (point_in_ellipse(p.thorax, x, y)) {
        level = p.levels.body;
      } else {
        level = p.levels.air;
      }
      float v = level + kTextureAmplitude * texture_noise(p.seed, r, c);
      v = std::min(1.0f, std::max(0.0f, v));
      const size_t idx = static_cast<size_t>(r) * raster.width + c;
      out.labels[idx] = label;
      out.intensity[idx] = v;
    }
  }
  return out;
}

ScanSequence generate_scan(const PatientParams& p, int T, int H, int W, double spacing_mm) {
  if (T < 2) throw ValueError("generate_scan: need at least 2 phases");
  RasterSpec raster{H, W, spacing_mm, spacing_mm};
  ScanSequence scan;
  scan.params = p;
  scan.phases.reserve(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) scan.phases.push_back(render_phase(p, t, T, raster));
  scan.validate();
  return scan;
}

}  // namespace armp::phantom
