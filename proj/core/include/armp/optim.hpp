#pragma once

#include <cstdint>
#include <vector>

#include "armp/tensor.hpp"

namespace armp {

struct AdamConfig {
  float lr = 3e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

/// Adam with bias correction. Moment buffers mirror each parameter's shape;
/// the step counter advances by exactly one per step().
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg = {});

  /// Applies one update from the gradients currently stored on the params.
  /// A parameter with no materialized gradient is treated as zero-gradient.
  void step();

  void zero_grad();

  int64_t step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(float lr) { cfg_.lr = lr; }

  /// Clears the moment state for rows [row, row+count) of a rank-2 parameter.
  /// Used when codebook entries are re-seeded mid-training.
  void reset_rows(const Tensor& param, int row, int count);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  AdamConfig cfg_;
  int64_t step_ = 0;
};

}  // namespace armp
