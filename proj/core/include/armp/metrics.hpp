#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "armp/errors.hpp"
#include "armp/phantom.hpp"

namespace armp::metrics {

enum class Organ : uint8_t { kLung = 1, kHeart = 2, kTumor = 3 };

const char* organ_name(Organ o);

struct LabelMask {
  int height = 0, width = 0;
  double spacing_row_mm = 1.0, spacing_col_mm = 1.0;
  Organ organ = Organ::kLung;
  std::vector<uint8_t> fg;  // H*W, nonzero = foreground

  bool at(int r, int c) const { return fg[static_cast<size_t>(r) * width + c] != 0; }
  size_t count() const;
  bool empty_mask() const { return count() == 0; }
};

/// Foreground mask for one organ pulled out of a label grid.
LabelMask mask_from_labels(const phantom::PhaseVolume& phase, Organ organ);

/// Probability channel thresholded at >= 0.5.
LabelMask threshold_channel(const std::vector<float>& probs, int height, int width,
                            double spacing_row_mm, double spacing_col_mm, Organ organ,
                            float threshold = 0.5f);

/// Organ masks recovered from a bare intensity image by tissue bands
/// (the ct_only route; lower fidelity than decoded mask channels).
LabelMask mask_from_intensity_band(const std::vector<float>& intensity, int height, int width,
                                   double spacing_row_mm, double spacing_col_mm, Organ organ);

struct BoundaryPoint {
  double x_mm, y_mm;
};

// ---- overlap -----------------------------------------------------------

/// |A n B| / |A u B|; 1.0 when both masks are empty.
double iou(const LabelMask& a, const LabelMask& b);
/// 2|A n B| / (|A| + |B|); 1.0 when both masks are empty.
double dsc(const LabelMask& a, const LabelMask& b);

// ---- surface distances ---------------------------------------------------

/// Foreground pixels with at least one background 4-neighbor; pixels outside
/// the image count as background. Pixel centers scaled by spacing.
/// Throws EmptyMaskError for an empty mask.
std::vector<BoundaryPoint> extract_boundary(const LabelMask& mask);

/// Average symmetric surface distance in mm.
double surface_distance(const LabelMask& a, const LabelMask& b);
/// Full (max-of-directed) Hausdorff distance in mm.
double hausdorff(const LabelMask& a, const LabelMask& b);

// ---- records ---------------------------------------------------------------

struct MetricsRecord {
  std::string patient_id;
  int phase = 0;
  Organ organ = Organ::kLung;
  std::string method;
  double iou = 0.0;
  double dsc = 0.0;
  std::optional<double> sd_mm;  // missing when either mask is empty
  std::optional<double> hd_mm;
};

/// Overlap always computed; distances left missing on empty masks.
MetricsRecord evaluate_pair(const LabelMask& prediction, const LabelMask& truth,
                            const std::string& patient_id, int phase,
                            const std::string& method);

/// CSV with header patient_id,phase,organ,method,iou,dsc,sd_mm,hd_mm;
/// missing distances serialize as empty cells.
std::string records_to_csv(const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> records_from_csv(const std::string& csv);

}  // namespace armp::metrics
