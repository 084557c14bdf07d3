#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace armp {

/// Seedable 64-bit generator with named substreams.
///
/// Core state advance is splitmix64 (Steele et al., public domain), which is
/// fully defined by the seed integer, so replays are bit-identical on one
/// machine regardless of standard-library implementation. `fork(label)`
/// derives an independent stream for a module ("vq-init", "ar-batch", ...),
/// keeping draw order in one module insensitive to draw counts in another.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Child generator seeded from this stream and a label hash.
  Rng fork(std::string_view label) {
    uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
    for (char c : label) {
      h ^= static_cast<uint8_t>(c);
      h *= 0x100000001b3ull;
    }
    return Rng(next_u64() ^ h);
  }

  /// Uniform in [0, 1) with 24 bits of mantissa.
  float uniform() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

  /// Uniform in [lo, hi); collapses to lo when the range is degenerate.
  double uniform(double lo, double hi) {
    double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }

  /// Integer in [0, n). n must be positive.
  int64_t below(int64_t n) { return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n)); }

  /// Standard normal via Box-Muller (no stdlib distribution, for replayability).
  float normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    } while (u1 <= 0.0);
    u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = static_cast<float>(r * std::sin(a));
    have_spare_ = true;
    return static_cast<float>(r * std::cos(a));
  }

 private:
  uint64_t state_;
  float spare_ = 0.0f;
  bool have_spare_ = false;
};

}  // namespace armp
