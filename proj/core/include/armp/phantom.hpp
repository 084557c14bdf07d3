#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "armp/errors.hpp"
#include "armp/rng.hpp"

namespace armp::phantom {

inline constexpr double kPi = 3.14159265358979323846;

struct Ellipse {
  double cx_mm = 0, cy_mm = 0;  // x = column axis, y = row axis
  double rx_mm = 1, ry_mm = 1;
};

enum Label : uint8_t { kBackground = 0, kLung = 1, kHeart = 2, kTumor = 3 };

struct TissueLevels {
  float air = 0.02f;
  float body = 0.44f;
  float lung = 0.22f;
  float heart = 0.62f;
  float tumor = 0.85f;
};

/// Intensity bands that recover organ masks from a bare intensity image.
/// Tissue levels plus texture stay strictly inside their band so that
/// label/intensity consistency holds pixel-exactly.
struct IntensityBands {
  static constexpr float kLungLo = 0.12f, kLungHi = 0.32f;
  static constexpr float kHeartLo = 0.52f, kHeartHi = 0.72f;
  static constexpr float kTumorLo = 0.75f, kTumorHi = 0.95f;
};

inline constexpr float kTextureAmplitude = 0.04f;

struct PatientParams {
  Ellipse thorax;
  Ellipse lung_left, lung_right;  // ry is the base vertical radius
  Ellipse heart;
  int tumor_host = 0;  // 0 = left lung, 1 = right lung
  double tumor_dx_mm = 0, tumor_dy_mm = 0;
  double tumor_r_mm = 8;
  double breath_amp_mm = 4;   // a
  double heart_amp_mm = 1;
  double phase_offset = 0;    // phi
  TissueLevels levels;
  uint64_t seed = 0;

  const Ellipse& host_lung() const { return tumor_host == 0 ? lung_left : lung_right; }
};

struct PhaseVolume {
  int height = 0, width = 0;
  double spacing_row_mm = 0, spacing_col_mm = 0;
  int phase_index = 0;
  std::vector<float> intensity;  // H*W row-major, values in [0,1]
  std::vector<uint8_t> labels;   // H*W, Label values

  float intensity_at(int r, int c) const {
    return intensity[static_cast<size_t>(r) * width + c];
  }
  uint8_t label_at(int r, int c) const { return labels[static_cast<size_t>(r) * width + c]; }

  /// Bitwise equality of geometry and per-pixel data.
  bool same_content(const PhaseVolume& other) const;
};

struct ScanSequence {
  std::string patient_id;
  std::vector<PhaseVolume> phases;
  std::optional<PatientParams> params;

  int phase_count() const { return static_cast<int>(phases.size()); }
  bool same_content(const ScanSequence& other) const;
  /// Throws ValueError when the phase list violates the sequence invariants.
  void validate() const;
};

/// Sampling ranges; every range is [min, max] and min <= max is required.
struct GenerationConfig {
  int phases = 10;  // T
  int height = 64, width = 64;
  double spacing_mm = 4.0;

  double amp_min_mm = 2.0, amp_max_mm = 8.0;
  double heart_amp_min_mm = 0.5, heart_amp_max_mm = 2.0;
  // Phase 0 sits near full inhale: offsets cluster around pi/2 so the
  // breathing cycle is close to mirror-symmetric about t = 0.
  double phase_offset_min = kPi / 2 - 0.4, phase_offset_max = kPi / 2 + 0.4;

  void validate() const;
  double fov_w_mm() const { return width * spacing_mm; }
  double fov_h_mm() const { return height * spacing_mm; }
};

struct RasterSpec {
  int height = 64, width = 64;
  double spacing_row_mm = 4.0, spacing_col_mm = 4.0;
};

/// Deterministic patient draw; all PatientParams invariants hold over the
/// whole motion cycle (lungs in thorax, tumor in lung, heart clear of lungs).
PatientParams sample_patient(uint64_t seed, const GenerationConfig& cfg);

/// Vertical breathing displacement at integer phase t of a T-phase cycle.
/// Computed from t mod T, so one full cycle is bit-exactly periodic.
double breathing_displacement_mm(const PatientParams& p, int64_t t, int T);
double heart_displacement_mm(const PatientParams& p, int64_t t, int T);

/// Deterministic per-patient value noise in [-1, 1] at pixel (r, c).
float texture_noise(uint64_t seed, int r, int c);

PhaseVolume render_phase(const PatientParams& p, int t, int T, const RasterSpec& raster);

ScanSequence generate_scan(const PatientParams& p, int T, int H, int W, double spacing_mm);

bool point_in_ellipse(const Ellipse& e, double x_mm, double y_mm);

}  // namespace armp::phantom
