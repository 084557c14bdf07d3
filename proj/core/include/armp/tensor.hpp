#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "armp/errors.hpp"
#include "armp/rng.hpp"

namespace armp {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

/// One recorded value in the define-by-run graph. The graph is rebuilt on
/// every forward pass; `backprop` pushes this node's gradient into its inputs.
struct Node {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;  // empty until needed
  bool requires_grad = false;
  bool backward_done = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backprop;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0f);
  }
};

}  // namespace detail

/// Autograd is recorded only while enabled (default on). Generation and
/// evaluation paths disable it with NoGradGuard to avoid taping.
bool grad_enabled();

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Value-semantic handle to a graph node. Copies share the node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
  static Tensor scalar(float value);
  /// Values drawn i.i.d. normal(0, stddev) from the given stream.
  static Tensor randn(Shape shape, Rng& rng, float stddev = 1.0f, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const float> data() const { return node_->value; }
  /// Mutable view; meant for leaves (parameter updates, in-place init).
  std::span<float> raw_data() { return node_->value; }

  float item() const;
  bool all_finite() const;

  std::span<const float> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad();

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  static Tensor wrap(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

// ---- elementwise / arithmetic -------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);
Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// ---- linear algebra ------------------------------------------------------

/// 2-D matrix product with optional operand transposes.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
/// [N,M] plus a length-M row bias.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);

// ---- convolution (cross-correlation, no kernel flip) ---------------------

/// input [C,H,W] or [N,C,H,W]; kernels [F,C,k,k]; optional bias [F].
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, int stride,
              int pad);
/// Transposed convolution; kernels [C_in,C_out,k,k]; output size
/// (H-1)*stride - 2*pad + k.
Tensor conv_transpose2d(const Tensor& input, const Tensor& kernels, const Tensor& bias,
                        int stride, int pad);

// ---- shape plumbing ------------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape);
Tensor slice_rows(const Tensor& x, int start, int count);
Tensor slice_cols(const Tensor& x, int start, int count);
Tensor concat_cols(const std::vector<Tensor>& parts);
/// [C,H,W] -> [H*W, C] (row-major spatial order) and back.
Tensor chw_to_rows(const Tensor& x);
Tensor rows_to_chw(const Tensor& x, int channels, int height, int width);

// ---- reductions / losses -------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse_loss(const Tensor& a, const Tensor& b);
/// Mean of elementwise max(l,0) - l*t + log(1+exp(-|l|)).
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

/// Row-wise softmax cross entropy, numerically stabilized by max-subtraction.
/// Mean over rows where mask is nonzero (empty mask = all rows).
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                             const std::vector<uint8_t>& mask = {});

/// [N,N] scores; row i is softmax over columns 0..i, exactly zero beyond.
Tensor causal_softmax(const Tensor& scores);

/// RMS normalization over the last dim of [N,M], scaled by a length-M gain.
Tensor rms_norm(const Tensor& x, const Tensor& gain, float eps = 1e-5f);

/// table [V,D] gathered by indices -> [N,D]; gradient scatter-adds into table.
Tensor embedding(const Tensor& table, const std::vector<int>& indices);

/// Copy of x cut out of the graph (constant leaf).
Tensor detach(const Tensor& x);

// ---- backward ------------------------------------------------------------

/// Reverse-mode sweep from a scalar loss. Each reachable node is visited once
/// in reverse topological order; leaf gradients accumulate into .grad.
/// Throws on non-scalar loss or on a second call for the same root.
void backward(const Tensor& loss);

}  // namespace armp
