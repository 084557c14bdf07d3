#include "armp/optim.hpp"

#include <cmath>

namespace armp {

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    if (!p.defined()) throw ValueError("Adam: undefined parameter");
    m_.emplace_back(p.numel(), 0.0f);
    v_.emplace_back(p.numel(), 0.0f);
  }
}

void Adam::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(step_));
  const float inv_bc1 = static_cast<float>(1.0 / bc1);
  const float inv_bc2 = static_cast<float>(1.0 / bc2);
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    auto& p = params_[pi];
    auto values = p.raw_data();
    auto grads = p.grad();
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (size_t i = 0; i < values.size(); ++i) {
      const float g = grads.empty() ? 0.0f : grads[i];
      m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * g * g;
      const float m_hat = m[i] * inv_bc1;
      const float v_hat = v[i] * inv_bc2;
      values[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::reset_rows(const Tensor& param, int row, int count) {
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    if (params_[pi].node() != param.node()) continue;
    if (params_[pi].rank() != 2) throw ShapeError("Adam::reset_rows: rank-2 parameter required");
    const int cols = params_[pi].dim(1);
    if (row < 0 || count < 0 || (row + count) > params_[pi].dim(0))
      throw ValueError("Adam::reset_rows: row range out of bounds");
    for (int r = row; r < row + count; ++r)
      for (int c = 0; c < cols; ++c) {
        m_[pi][static_cast<size_t>(r) * cols + c] = 0.0f;
        v_[pi][static_cast<size_t>(r) * cols + c] = 0.0f;
      }
    return;
  }
  throw ValueError("Adam::reset_rows: parameter not managed by this optimizer");
}

}  // namespace armp
