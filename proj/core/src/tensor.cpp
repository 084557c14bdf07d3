#include "armp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <utility>

namespace armp {

namespace {

bool g_grad_enabled = true;

using detail::Node;

void check(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

Tensor make_op(Shape shape, std::vector<float> value, std::vector<Tensor> inputs,
               std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool rg = false;
  for (const auto& t : inputs) rg = rg || t.requires_grad();
  rg = rg && g_grad_enabled;
  n->requires_grad = rg;
  if (rg) {
    n->inputs.reserve(inputs.size());
    for (const auto& t : inputs) n->inputs.push_back(t.node_ptr());
    n->backprop = std::move(backprop);
  }
  return Tensor::wrap(std::move(n));
}

// Accumulates into grad when the buffer was materialized by the backward
// driver (i.e. the input requires grad); otherwise the input is a constant.
bool wants_grad(Node& n, size_t input_idx) { return !n.inputs[input_idx]->grad.empty(); }

std::span<float> grad_of(Node& n, size_t input_idx) { return n.inputs[input_idx]->grad; }

std::span<const float> value_of(Node& n, size_t input_idx) { return n.inputs[input_idx]->value; }

// ---- GEMM ----------------------------------------------------------------

// c[m,n] += a[m,k] * b[k,n], all row-major contiguous.
void gemm_kernel(const float* __restrict__ a, const float* __restrict__ b, float* __restrict__ c,
                 int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<size_t>(i) * k;
    float* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const float av = arow[p];
      const float* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void transpose_into(const float* src, int rows, int cols, std::vector<float>& dst) {
  dst.resize(static_cast<size_t>(rows) * cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      dst[static_cast<size_t>(j) * rows + i] = src[static_cast<size_t>(i) * cols + j];
}

// C[m,n] += op(A) * op(B) with A stored [ar,ac], B stored [br,bc].
void gemm_full(const float* a, int ar, int ac, bool ta, const float* b, int br, int bc, bool tb,
               float* c) {
  const int m = ta ? ac : ar;
  const int k = ta ? ar : ac;
  const int n = tb ? br : bc;
  std::vector<float> scratch_a, scratch_b;
  const float* ap = a;
  const float* bp = b;
  if (ta) {
    transpose_into(a, ar, ac, scratch_a);
    ap = scratch_a.data();
  }
  if (tb) {
    transpose_into(b, br, bc, scratch_b);
    bp = scratch_b.data();
  }
  gemm_kernel(ap, bp, c, m, k, n);
}

// ---- im2col / col2im -----------------------------------------------------
//
// cols[(c*k+ky)*k+kx][sy*sw+sx] <-> big[c][sy*stride+ky-pad][sx*stride+kx-pad]
// where (sh,sw) is the small (strided) grid and big is the full-resolution map.

void im2col(const float* big, int channels, int bh, int bw, int k, int stride, int pad, int sh,
            int sw, float* cols) {
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* crow =
            cols + (static_cast<size_t>((c * k + ky) * k + kx)) * (static_cast<size_t>(sh) * sw);
        for (int sy = 0; sy < sh; ++sy) {
          const int y = sy * stride + ky - pad;
          if (y < 0 || y >= bh) {
            std::fill(crow + static_cast<size_t>(sy) * sw, crow + static_cast<size_t>(sy + 1) * sw,
                      0.0f);
            continue;
          }
          const float* brow = big + (static_cast<size_t>(c) * bh + y) * bw;
          for (int sx = 0; sx < sw; ++sx) {
            const int x = sx * stride + kx - pad;
            crow[static_cast<size_t>(sy) * sw + sx] = (x >= 0 && x < bw) ? brow[x] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const float* cols, int channels, int bh, int bw, int k, int stride, int pad, int sh,
            int sw, float* big /* accumulated into */) {
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* crow =
            cols + (static_cast<size_t>((c * k + ky) * k + kx)) * (static_cast<size_t>(sh) * sw);
        for (int sy = 0; sy < sh; ++sy) {
          const int y = sy * stride + ky - pad;
          if (y < 0 || y >= bh) continue;
          float* brow = big + (static_cast<size_t>(c) * bh + y) * bw;
          for (int sx = 0; sx < sw; ++sx) {
            const int x = sx * stride + kx - pad;
            if (x >= 0 && x < bw) brow[x] += crow[static_cast<size_t>(sy) * sw + sx];
          }
        }
      }
    }
  }
}

float sigmoid_scalar(float x) {
  if (x >= 0.0f) {
    const float e = std::exp(-x);
    return 1.0f / (1.0f + e);
  }
  const float e = std::exp(x);
  return e / (1.0f + e);
}

}  // namespace

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor Tensor::wrap(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  const int64_t count = shape_numel(shape);
  if (count < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
  n->shape = std::move(shape);
  n->value.assign(static_cast<size_t>(count), value);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("data length does not match shape " + shape_str(shape));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::scalar(float value) { return from_data({1}, {value}); }

Tensor Tensor::randn(Shape shape, Rng& rng, float stddev, bool requires_grad) {
  const int64_t count = shape_numel(shape);
  std::vector<float> data(static_cast<size_t>(count));
  for (auto& v : data) v = rng.normal() * stddev;
  return from_data(std::move(shape), std::move(data), requires_grad);
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() requires a scalar, got " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::all_finite() const {
  for (float v : node_->value)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check(same_shape(a, b), "add: shape mismatch");
  std::vector<float> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& n) {
    for (size_t s = 0; s < 2; ++s) {
      if (!wants_grad(n, s)) continue;
      auto g = grad_of(n, s);
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check(same_shape(a, b), "sub: shape mismatch");
  std::vector<float> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& n) {
    if (wants_grad(n, 0)) {
      auto g = grad_of(n, 0);
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (wants_grad(n, 1)) {
      auto g = grad_of(n, 1);
      for (size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check(same_shape(a, b), "mul: shape mismatch");
  std::vector<float> out(a.numel());
  const auto ad = a.data();
  const auto bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& n) {
    auto av = value_of(n, 0);
    auto bv = value_of(n, 1);
    if (wants_grad(n, 0)) {
      auto g = grad_of(n, 0);
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (wants_grad(n, 1)) {
      auto g = grad_of(n, 1);
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, float factor) {
  std::vector<float> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_op(a.shape(), std::move(out), {a}, [factor](Node& n) {
    if (!wants_grad(n, 0)) return;
    auto g = grad_of(n, 0);
    for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * factor;
  });
}

Tensor relu(const Tensor& x) {
  std::vector<float> out(x.numel());
  const auto xd = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0f ? xd[i] : 0.0f;
  return make_op(x.shape(), std::move(out), {x}, [](Node& n) {
    if (!wants_grad(n, 0)) return;
    auto g = grad_of(n, 0);
    auto xv = value_of(n, 0);
    for (size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0f) g[i] += n.grad[i];
  });
}

Tensor silu(const Tensor& x) {
  std::vector<float> out(x.numel());
  const auto xd = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * sigmoid_scalar(xd[i]);
  return make_op(x.shape(), std::move(out), {x}, [](Node& n) {
    if (!wants_grad(n, 0)) return;
    auto g = grad_of(n, 0);
    auto xv = value_of(n, 0);
    for (size_t i = 0; i < g.size(); ++i) {
      const float s = sigmoid_scalar(xv[i]);
      g[i] += n.grad[i] * s * (1.0f + xv[i] * (1.0f - s));
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<float> out(x.numel());
  const auto xd = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(xd[i]);
  return make_op(x.shape(), std::move(out), {x}, [](Node& n) {
    if (!wants_grad(n, 0)) return;
    auto g = grad_of(n, 0);
    for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * n.value[i] * (1.0f - n.value[i]);
  });
}

// ---- matmul ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  check(a.rank() == 2 && b.rank() == 2, "matmul: operands must be rank 2");
  const int ar = a.dim(0), ac = a.dim(1);
  const int br = b.dim(0), bc = b.dim(1);
  const int m = trans_a ? ac : ar;
  const int k = trans_a ? ar : ac;
  const int k2 = trans_b ? bc : br;
  const int n = trans_b ? br : bc;
  if (k != k2)
    throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::vector<float> out(static_cast<size_t>(m) * n, 0.0f);
  gemm_full(a.data().data(), ar, ac, trans_a, b.data().data(), br, bc, trans_b, out.data());
  return make_op({m, n}, std::move(out), {a, b}, [=](Node& n_) {
    const float* dc = n_.grad.data();
    const float* av = n_.inputs[0]->value.data();
    const float* bv = n_.inputs[1]->value.data();
    if (wants_grad(n_, 0)) {
      float* da = grad_of(n_, 0).data();
      if (!trans_a)
        gemm_full(dc, m, n, false, bv, br, bc, !trans_b, da);
      else
        gemm_full(bv, br, bc, trans_b, dc, m, n, true, da);
    }
    if (wants_grad(n_, 1)) {
      float* db = grad_of(n_, 1).data();
      if (!trans_b)
        gemm_full(av, ar, ac, !trans_a, dc, m, n, false, db);
      else
        gemm_full(dc, m, n, true, av, ar, ac, trans_a, db);
    }
  });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  check(x.rank() == 2 && bias.rank() == 1 && bias.dim(0) == x.dim(1),
        "add_row_bias: bias length must equal columns");
  const int rows = x.dim(0), cols = x.dim(1);
  std::vector<float> out(x.data().begin(), x.data().end());
  const auto bd = bias.data();
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out[static_cast<size_t>(i) * cols + j] += bd[j];
  return make_op(x.shape(), std::move(out), {x, bias}, [rows, cols](Node& n) {
    if (wants_grad(n, 0)) {
      auto g = grad_of(n, 0);
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (wants_grad(n, 1)) {
      auto g = grad_of(n, 1);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) g[j] += n.grad[static_cast<size_t>(i) * cols + j];
    }
  });
}

// ---- convolution ------------------------------------------------------------

namespace {

struct ConvGeom {
  int batch, in_c, in_h, in_w;
  int out_c, out_h, out_w, k;
  bool batched;
};

ConvGeom conv_geometry(const Tensor& input, const Tensor& kernels, int stride, int pad) {
  check(input.rank() == 3 || input.rank() == 4, "conv2d: input must be [C,H,W] or [N,C,H,W]");
  check(kernels.rank() == 4, "conv2d: kernels must be [F,C,k,k]");
  ConvGeom g;
  g.batched = input.rank() == 4;
  g.batch = g.batched ? input.dim(0) : 1;
  g.in_c = input.dim(g.batched ? 1 : 0);
  g.in_h = input.dim(g.batched ? 2 : 1);
  g.in_w = input.dim(g.batched ? 3 : 2);
  g.out_c = kernels.dim(0);
  g.k = kernels.dim(2);
  if (kernels.dim(1) != g.in_c) throw ShapeError("conv2d: kernel channel count mismatch");
  if (kernels.dim(3) != g.k) throw ShapeError("conv2d: kernels must be square");
  if (g.k % 2 == 0) throw ShapeError("conv2d: kernel size must be odd");
  if (stride < 1 || pad < 0) throw ValueError("conv2d: bad stride/pad");
  // Floor-division output size, the convention of the major frameworks. A
  // kernel larger than the padded input has no valid output position.
  const int hn = g.in_h + 2 * pad - g.k;
  const int wn = g.in_w + 2 * pad - g.k;
  if (hn < 0 || wn < 0) throw ShapeError("conv2d: non-integral output size");
  g.out_h = hn / stride + 1;
  g.out_w = wn / stride + 1;
  return g;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, int stride,
              int pad) {
  const ConvGeom g = conv_geometry(input, kernels, stride, pad);
  const bool has_bias = bias.defined();
  if (has_bias)
    check(bias.rank() == 1 && bias.dim(0) == g.out_c, "conv2d: bias must be [F]");

  const size_t in_img = static_cast<size_t>(g.in_c) * g.in_h * g.in_w;
  const size_t out_img = static_cast<size_t>(g.out_c) * g.out_h * g.out_w;
  const int ckk = g.in_c * g.k * g.k;
  const size_t spatial = static_cast<size_t>(g.out_h) * g.out_w;

  std::vector<float> out(static_cast<size_t>(g.batch) * out_img, 0.0f);
  std::vector<float> cols(static_cast<size_t>(ckk) * spatial);
  for (int b = 0; b < g.batch; ++b) {
    im2col(input.data().data() + b * in_img, g.in_c, g.in_h, g.in_w, g.k, stride, pad, g.out_h,
           g.out_w, cols.data());
    gemm_kernel(kernels.data().data(), cols.data(), out.data() + b * out_img, g.out_c, ckk,
                static_cast<int>(spatial));
    if (has_bias) {
      float* o = out.data() + b * out_img;
      for (int f = 0; f < g.out_c; ++f) {
        const float bv = bias.data()[f];
        for (size_t s = 0; s < spatial; ++s) o[static_cast<size_t>(f) * spatial + s] += bv;
      }
    }
  }

  Shape out_shape = g.batched ? Shape{g.batch, g.out_c, g.out_h, g.out_w}
                              : Shape{g.out_c, g.out_h, g.out_w};
  std::vector<Tensor> ins = {input, kernels};
  if (has_bias) ins.push_back(bias);
  return make_op(std::move(out_shape), std::move(out), std::move(ins),
                 [g, stride, pad, has_bias, in_img, out_img, ckk, spatial](Node& n) {
                   std::vector<float> cols(static_cast<size_t>(ckk) * spatial);
                   std::vector<float> dcols(static_cast<size_t>(ckk) * spatial);
                   const float* w = n.inputs[1]->value.data();
                   for (int b = 0; b < g.batch; ++b) {
                     const float* dout = n.grad.data() + b * out_img;
                     if (wants_grad(n, 1) || wants_grad(n, 0))
                       im2col(n.inputs[0]->value.data() + b * in_img, g.in_c, g.in_h, g.in_w, g.k,
                              stride, pad, g.out_h, g.out_w, cols.data());
                     if (wants_grad(n, 1)) {
                       // dW += dOut * cols^T
                       gemm_full(dout, g.out_c, static_cast<int>(spatial), false, cols.data(), ckk,
                                 static_cast<int>(spatial), true, grad_of(n, 1).data());
                     }
                     if (wants_grad(n, 0)) {
                       std::fill(dcols.begin(), dcols.end(), 0.0f);
                       // dcols = W^T * dOut
                       gemm_full(w, g.out_c, ckk, true, dout, g.out_c, static_cast<int>(spatial),
                                 false, dcols.data());
                       col2im(dcols.data(), g.in_c, g.in_h, g.in_w, g.k, stride, pad, g.out_h,
                              g.out_w, grad_of(n, 0).data() + b * in_img);
                     }
                     if (has_bias && wants_grad(n, 2)) {
                       auto gb = grad_of(n, 2);
                       for (int f = 0; f < g.out_c; ++f)
                         for (size_t s = 0; s < spatial; ++s)
                           gb[f] += dout[static_cast<size_t>(f) * spatial + s];
                     }
                   }
                 });
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, int stride,
                        int pad) {
  check(input.rank() == 3 || input.rank() == 4,
        "conv_transpose2d: input must be [C,H,W] or [N,C,H,W]");
  check(kernels.rank() == 4, "conv_transpose2d: kernels must be [C_in,C_out,k,k]");
  const bool batched = input.rank() == 4;
  const int batch = batched ? input.dim(0) : 1;
  const int in_c = input.dim(batched ? 1 : 0);
  const int in_h = input.dim(batched ? 2 : 1);
  const int in_w = input.dim(batched ? 3 : 2);
  const int out_c = kernels.dim(1);
  const int k = kernels.dim(2);
  if (kernels.dim(0) != in_c) throw ShapeError("conv_transpose2d: kernel channel mismatch");
  if (kernels.dim(3) != k) throw ShapeError("conv_transpose2d: kernels must be square");
  if (stride < 1 || pad < 0) throw ValueError("conv_transpose2d: bad stride/pad");
  const int out_h = (in_h - 1) * stride - 2 * pad + k;
  const int out_w = (in_w - 1) * stride - 2 * pad + k;
  if (out_h <= 0 || out_w <= 0) throw ShapeError("conv_transpose2d: empty output");
  const bool has_bias = bias.defined();
  if (has_bias)
    check(bias.rank() == 1 && bias.dim(0) == out_c, "conv_transpose2d: bias must be [C_out]");

  const size_t in_img = static_cast<size_t>(in_c) * in_h * in_w;
  const size_t out_img = static_cast<size_t>(out_c) * out_h * out_w;
  const int ckk = out_c * k * k;
  const size_t spatial = static_cast<size_t>(in_h) * in_w;  // small grid = input grid

  std::vector<float> out(static_cast<size_t>(batch) * out_img, 0.0f);
  std::vector<float> cols(static_cast<size_t>(ckk) * spatial, 0.0f);
  for (int b = 0; b < batch; ++b) {
    std::fill(cols.begin(), cols.end(), 0.0f);
    // cols = W_view^T [Ckk, C_in] * x_mat [C_in, spatial]
    gemm_full(kernels.data().data(), in_c, ckk, true, input.data().data() + b * in_img, in_c,
              static_cast<int>(spatial), false, cols.data());
    col2im(cols.data(), out_c, out_h, out_w, k, stride, pad, in_h, in_w, out.data() + b * out_img);
    if (has_bias) {
      float* o = out.data() + b * out_img;
      const size_t os = static_cast<size_t>(out_h) * out_w;
      for (int f = 0; f < out_c; ++f) {
        const float bv = bias.data()[f];
        for (size_t s = 0; s < os; ++s) o[static_cast<size_t>(f) * os + s] += bv;
      }
    }
  }

  Shape out_shape = batched ? Shape{batch, out_c, out_h, out_w} : Shape{out_c, out_h, out_w};
  std::vector<Tensor> ins = {input, kernels};
  if (has_bias) ins.push_back(bias);
  return make_op(
      std::move(out_shape), std::move(out), std::move(ins),
      [=](Node& n) {
        std::vector<float> dcols(static_cast<size_t>(ckk) * spatial);
        for (int b = 0; b < batch; ++b) {
          const float* dout = n.grad.data() + b * out_img;
          im2col(dout, out_c, out_h, out_w, k, stride, pad, in_h, in_w, dcols.data());
          if (wants_grad(n, 0)) {
            // dX += W_view [C_in, Ckk] * dcols [Ckk, spatial]
            gemm_full(n.inputs[1]->value.data(), in_c, ckk, false, dcols.data(), ckk,
                      static_cast<int>(spatial), false, grad_of(n, 0).data() + b * in_img);
          }
          if (wants_grad(n, 1)) {
            // dW_view += x_mat [C_in, spatial] * dcols^T
            gemm_full(n.inputs[0]->value.data() + b * in_img, in_c, static_cast<int>(spatial),
                      false, dcols.data(), ckk, static_cast<int>(spatial), true,
                      grad_of(n, 1).data());
          }
          if (has_bias && wants_grad(n, 2)) {
            auto gb = grad_of(n, 2);
            const size_t os = static_cast<size_t>(out_h) * out_w;
            for (int f = 0; f < out_c; ++f)
              for (size_t s = 0; s < os; ++s) gb[f] += dout[static_cast<size_t>(f) * os + s];
          }
        }
      });
}

// ---- shape plumbing ---------------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw ShapeError("reshape: element count mismatch " + shape_str(x.shape()) + " -> " +
                     shape_str(new_shape));
  std::vector<float> out(x.data().begin(), x.data().end());
  return make_op(std::move(new_shape), std::move(out), {x}, [](Node& n) {
    if (!wants_grad(n, 0)) return;
    auto g = grad_of(n, 0);
    for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

Tensor slice_rows(const Tensor& x, int start, int count) {
  check(x.rank() == 2, "slice_rows: rank-2 input required");
  const int rows = x.dim(0), cols = x.dim(1);
  if (start < 0 || count < 0 || start + count > rows) throw ValueError("slice_rows: out of range");
  std::vector<float> out(static_cast<size_t>(count) * cols);
  std::copy_n(x.data().data() + static_cast<size_t>(start) * cols, out.size(), out.data());
  return make_op({count, cols}, std::move(out), {x}, [start, cols](Node& n) {
    if (!wants_grad(n, 0)) return;
    auto g = grad_of(n, 0);
    for (size_t i = 0; i < n.grad.size(); ++i)
      g[static_cast<size_t>(start) * cols + i] += n.grad[i];
  });
}

Tensor slice_cols(const Tensor& x, int start, int count) {
  check(x.rank() == 2, "slice_cols: rank-2 input required");
  const int rows = x.dim(0), cols = x.dim(1);
  if (start < 0 || count < 0 || start + count > cols) throw ValueError("slice_cols: out of range");
  std::vector<float> out(static_cast<size_t>(rows) * count);
  for (int i = 0; i < rows; ++i)
    std::copy_n(x.data().data() + static_cast<size_t>(i) * cols + start, count,
                out.data() + static_cast<size_t>(i) * count);
  return make_op({rows, count}, std::move(out), {x}, [start, rows, cols, count](Node& n) {
    if (!wants_grad(n, 0)) return;
    auto g = grad_of(n, 0);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < count; ++j)
        g[static_cast<size_t>(i) * cols + start + j] += n.grad[static_cast<size_t>(i) * count + j];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_cols: empty input");
  const int rows = parts[0].dim(0);
  int cols = 0;
  for (const auto& p : parts) {
    check(p.rank() == 2 && p.dim(0) == rows, "concat_cols: row count mismatch");
    cols += p.dim(1);
  }
  std::vector<float> out(static_cast<size_t>(rows) * cols);
  int off = 0;
  for (const auto& p : parts) {
    const int pc = p.dim(1);
    for (int i = 0; i < rows; ++i)
      std::copy_n(p.data().data() + static_cast<size_t>(i) * pc, pc,
                  out.data() + static_cast<size_t>(i) * cols + off);
    off += pc;
  }
  std::vector<int> widths;
  widths.reserve(parts.size());
  for (const auto& p : parts) widths.push_back(p.dim(1));
  return make_op({rows, cols}, std::move(out), parts, [rows, cols, widths](Node& n) {
    int off = 0;
    for (size_t s = 0; s < widths.size(); ++s) {
      const int pc = widths[s];
      if (wants_grad(n, s)) {
        auto g = grad_of(n, s);
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < pc; ++j)
            g[static_cast<size_t>(i) * pc + j] += n.grad[static_cast<size_t>(i) * cols + off + j];
      }
      off += pc;
    }
  });
}

Tensor chw_to_rows(const Tensor& x) {
  check(x.rank() == 3 || x.rank() == 4, "chw_to_rows: rank-3 or rank-4 input required");
  const bool batched = x.rank() == 4;
  const int batch = batched ? x.dim(0) : 1;
  const int c = x.dim(batched ? 1 : 0);
  const int h = x.dim(batched ? 2 : 1);
  const int w = x.dim(batched ? 3 : 2);
  const size_t hw = static_cast<size_t>(h) * w;
  const size_t img = hw * c;
  std::vector<float> out(static_cast<size_t>(batch) * img);
  const auto xd = x.data();
  for (int b = 0; b < batch; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (size_t s = 0; s < hw; ++s)
        out[b * img + s * c + ch] = xd[b * img + static_cast<size_t>(ch) * hw + s];
  return make_op({static_cast<int>(batch * hw), c}, std::move(out), {x},
                 [batch, c, hw, img](Node& n) {
                   if (!wants_grad(n, 0)) return;
                   auto g = grad_of(n, 0);
                   for (int b = 0; b < batch; ++b)
                     for (int ch = 0; ch < c; ++ch)
                       for (size_t s = 0; s < hw; ++s)
                         g[b * img + static_cast<size_t>(ch) * hw + s] +=
                             n.grad[b * img + s * c + ch];
                 });
}

Tensor rows_to_chw(const Tensor& x, int channels, int height, int width) {
  check(x.rank() == 2 && x.dim(1) == channels && x.dim(0) % (height * width) == 0,
        "rows_to_chw: shape mismatch");
  const int batch = x.dim(0) / (height * width);
  const size_t hw = static_cast<size_t>(height) * width;
  const size_t img = hw * static_cast<size_t>(channels);
  std::vector<float> out(static_cast<size_t>(batch) * img);
  const auto xd = x.data();
  for (int b = 0; b < batch; ++b)
    for (int ch = 0; ch < channels; ++ch)
      for (size_t s = 0; s < hw; ++s)
        out[b * img + static_cast<size_t>(ch) * hw + s] = xd[b * img + s * channels + ch];
  Shape shape = batch == 1 ? Shape{channels, height, width}
                           : Shape{batch, channels, height, width};
  return make_op(std::move(shape), std::move(out), {x}, [batch, channels, hw, img](Node& n) {
    if (!wants_grad(n, 0)) return;
    auto g = grad_of(n, 0);
    for (int b = 0; b < batch; ++b)
      for (int ch = 0; ch < channels; ++ch)
        for (size_t s = 0; s < hw; ++s)
          g[b * img + s * channels + ch] += n.grad[b * img + static_cast<size_t>(ch) * hw + s];
  });
}

// ---- reductions / losses ----------------------------------------------------

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  return make_op({1}, {static_cast<float>(acc)}, {x}, [](Node& n) {
    if (!wants_grad(n, 0)) return;
    auto g = grad_of(n, 0);
    for (auto& v : g) v += n.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const float inv = 1.0f / static_cast<float>(x.numel());
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  return make_op({1}, {static_cast<float>(acc * inv)}, {x}, [inv](Node& n) {
    if (!wants_grad(n, 0)) return;
    auto g = grad_of(n, 0);
    for (auto& v : g) v += n.grad[0] * inv;
  });
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
  check(same_shape(a, b), "mse_loss: shape mismatch");
  const auto ad = a.data();
  const auto bd = b.data();
  double acc = 0.0;
  for (size_t i = 0; i < ad.size(); ++i) {
    const double d = static_cast<double>(ad[i]) - bd[i];
    acc += d * d;
  }
  const float inv = 1.0f / static_cast<float>(a.numel());
  return make_op({1}, {static_cast<float>(acc * inv)}, {a, b}, [inv](Node& n) {
    auto av = value_of(n, 0);
    auto bv = value_of(n, 1);
    const float go = n.grad[0];
    if (wants_grad(n, 0)) {
      auto g = grad_of(n, 0);
      for (size_t i = 0; i < g.size(); ++i) g[i] += go * 2.0f * (av[i] - bv[i]) * inv;
    }
    if (wants_grad(n, 1)) {
      auto g = grad_of(n, 1);
      for (size_t i = 0; i < g.size(); ++i) g[i] -= go * 2.0f * (av[i] - bv[i]) * inv;
    }
  });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  check(same_shape(logits, targets), "bce_with_logits: shape mismatch");
  const auto ld = logits.data();
  const auto td = targets.data();
  double acc = 0.0;
  for (size_t i = 0; i < ld.size(); ++i) {
    const double l = ld[i];
    acc += std::max(l, 0.0) - l * td[i] + std::log1p(std::exp(-std::abs(l)));
  }
  const float inv = 1.0f / static_cast<float>(logits.numel());
  return make_op({1}, {static_cast<float>(acc * inv)}, {logits, targets}, [inv](Node& n) {
    auto lv = value_of(n, 0);
    auto tv = value_of(n, 1);
    const float go = n.grad[0];
    if (wants_grad(n, 0)) {
      auto g = grad_of(n, 0);
      for (size_t i = 0; i < g.size(); ++i) g[i] += go * (sigmoid_scalar(lv[i]) - tv[i]) * inv;
    }
    if (wants_grad(n, 1)) {
      auto g = grad_of(n, 1);
      for (size_t i = 0; i < g.size(); ++i) g[i] += go * (-lv[i]) * inv;
    }
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                             const std::vector<uint8_t>& mask) {
  check(logits.rank() == 2, "softmax_cross_entropy: logits must be [N,V]");
  const int n_rows = logits.dim(0), vocab = logits.dim(1);
  if (static_cast<int>(targets.size()) != n_rows)
    throw ShapeError("softmax_cross_entropy: target count mismatch");
  if (!mask.empty() && static_cast<int>(mask.size()) != n_rows)
    throw ShapeError("softmax_cross_entropy: mask length mismatch");
  int active = 0;
  for (int i = 0; i < n_rows; ++i) {
    if (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= vocab)
      throw ValueError("softmax_cross_entropy: target index out of range");
    if (mask.empty() || mask[static_cast<size_t>(i)]) ++active;
  }
  if (active == 0) throw ValueError("softmax_cross_entropy: all positions masked");

  const auto ld = logits.data();
  double total = 0.0;
  // Probabilities are cached for the backward pass.
  auto probs = std::make_shared<std::vector<float>>(static_cast<size_t>(n_rows) * vocab);
  for (int i = 0; i < n_rows; ++i) {
    const float* row = ld.data() + static_cast<size_t>(i) * vocab;
    float* prow = probs->data() + static_cast<size_t>(i) * vocab;
    float mx = row[0];
    for (int j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < vocab; ++j) {
      const double e = std::exp(static_cast<double>(row[j]) - mx);
      prow[j] = static_cast<float>(e);
      denom += e;
    }
    const float inv_denom = static_cast<float>(1.0 / denom);
    for (int j = 0; j < vocab; ++j) prow[j] *= inv_denom;
    if (mask.empty() || mask[static_cast<size_t>(i)]) {
      total += -(static_cast<double>(row[targets[static_cast<size_t>(i)]]) - mx - std::log(denom));
    }
  }
  const float inv_active = 1.0f / static_cast<float>(active);
  std::vector<uint8_t> mask_copy = mask;
  std::vector<int> targets_copy = targets;
  return make_op({1}, {static_cast<float>(total * inv_active)}, {logits},
                 [n_rows, vocab, inv_active, probs, mask_copy = std::move(mask_copy),
                  targets_copy = std::move(targets_copy)](Node& n) {
                   if (!wants_grad(n, 0)) return;
                   auto g = grad_of(n, 0);
                   const float go = n.grad[0] * inv_active;
                   for (int i = 0; i < n_rows; ++i) {
                     if (!mask_copy.empty() && !mask_copy[static_cast<size_t>(i)]) continue;
                     const float* prow = probs->data() + static_cast<size_t>(i) * vocab;
                     float* grow = g.data() + static_cast<size_t>(i) * vocab;
                     for (int j = 0; j < vocab; ++j) grow[j] += go * prow[j];
                     grow[targets_copy[static_cast<size_t>(i)]] -= go;
                   }
                 });
}

Tensor causal_softmax(const Tensor& scores) {
  check(scores.rank() == 2 && scores.dim(0) == scores.dim(1),
        "causal_softmax: square [N,N] scores required");
  const int n_rows = scores.dim(0);
  const auto sd = scores.data();
  std::vector<float> out(static_cast<size_t>(n_rows) * n_rows, 0.0f);
  for (int i = 0; i < n_rows; ++i) {
    const float* row = sd.data() + static_cast<size_t>(i) * n_rows;
    float* orow = out.data() + static_cast<size_t>(i) * n_rows;
    float mx = row[0];
    for (int j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j <= i; ++j) {
      const double e = std::exp(static_cast<double>(row[j]) - mx);
      orow[j] = static_cast<float>(e);
      denom += e;
    }
    const float inv = static_cast<float>(1.0 / denom);
    for (int j = 0; j <= i; ++j) orow[j] *= inv;
    // entries j > i stay exactly 0
  }
  return make_op(scores.shape(), std::move(out), {scores}, [n_rows](Node& n) {
    if (!wants_grad(n, 0)) return;
    auto g = grad_of(n, 0);
    for (int i = 0; i < n_rows; ++i) {
      const float* p = n.value.data() + static_cast<size_t>(i) * n_rows;
      const float* dout = n.grad.data() + static_cast<size_t>(i) * n_rows;
      float* din = g.data() + static_cast<size_t>(i) * n_rows;
      double dot = 0.0;
      for (int j = 0; j <= i; ++j) dot += static_cast<double>(dout[j]) * p[j];
      for (int j = 0; j <= i; ++j) din[j] += p[j] * (dout[j] - static_cast<float>(dot));
    }
  });
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, float eps) {
  check(x.rank() == 2 && gain.rank() == 1 && gain.dim(0) == x.dim(1),
        "rms_norm: gain length must equal columns");
  const int rows = x.dim(0), cols = x.dim(1);
  const auto xd = x.data();
  const auto gd = gain.data();
  std::vector<float> out(static_cast<size_t>(rows) * cols);
  auto inv_rms = std::make_shared<std::vector<float>>(static_cast<size_t>(rows));
  for (int i = 0; i < rows; ++i) {
    const float* row = xd.data() + static_cast<size_t>(i) * cols;
    double ss = 0.0;
    for (int j = 0; j < cols; ++j) ss += static_cast<double>(row[j]) * row[j];
    const float inv = static_cast<float>(1.0 / std::sqrt(ss / cols + eps));
    (*inv_rms)[static_cast<size_t>(i)] = inv;
    float* orow = out.data() + static_cast<size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) orow[j] = row[j] * gd[j] * inv;
  }
  return make_op(x.shape(), std::move(out), {x, gain}, [rows, cols, inv_rms](Node& n) {
    auto xv = value_of(n, 0);
    auto gv = value_of(n, 1);
    for (int i = 0; i < rows; ++i) {
      const float* xrow = xv.data() + static_cast<size_t>(i) * cols;
      const float* drow = n.grad.data() + static_cast<size_t>(i) * cols;
      const float inv = (*inv_rms)[static_cast<size_t>(i)];
      if (wants_grad(n, 0)) {
        double dot = 0.0;  // sum_j dy*g*x
        for (int j = 0; j < cols; ++j)
          dot += static_cast<double>(drow[j]) * gv[j] * xrow[j];
        const float coef = static_cast<float>(dot) * inv * inv * inv / static_cast<float>(cols);
        float* gx = grad_of(n, 0).data() + static_cast<size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) gx[j] += drow[j] * gv[j] * inv - xrow[j] * coef;
      }
      if (wants_grad(n, 1)) {
        auto gg = grad_of(n, 1);
        for (int j = 0; j < cols; ++j) gg[j] += drow[j] * xrow[j] * inv;
      }
    }
  });
}

Tensor embedding(const Tensor& table, const std::vector<int>& indices) {
  check(table.rank() == 2, "embedding: table must be [V,D]");
  const int vocab = table.dim(0), dim = table.dim(1);
  for (int idx : indices)
    if (idx < 0 || idx >= vocab) throw ValueError("embedding: index out of range");
  const int n_rows = static_cast<int>(indices.size());
  std::vector<float> out(static_cast<size_t>(n_rows) * dim);
  for (int i = 0; i < n_rows; ++i)
    std::copy_n(table.data().data() + static_cast<size_t>(indices[static_cast<size_t>(i)]) * dim,
                dim, out.data() + static_cast<size_t>(i) * dim);
  std::vector<int> idx_copy = indices;
  return make_op({n_rows, dim}, std::move(out), {table},
                 [dim, idx_copy = std::move(idx_copy)](Node& n) {
                   if (!wants_grad(n, 0)) return;
                   auto g = grad_of(n, 0);
                   for (size_t i = 0; i < idx_copy.size(); ++i) {
                     const float* src = n.grad.data() + i * dim;
                     float* dst = g.data() + static_cast<size_t>(idx_copy[i]) * dim;
                     for (int j = 0; j < dim; ++j) dst[j] += src[j];
                   }
                 });
}

Tensor detach(const Tensor& x) {
  std::vector<float> out(x.data().begin(), x.data().end());
  return Tensor::from_data(x.shape(), std::move(out), false);
}

// ---- backward ---------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ValueError("backward: undefined tensor");
  if (loss.numel() != 1)
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  Node* root = loss.node();
  if (!root->requires_grad)
    throw ValueError("backward: loss was not produced by recorded operations");
  if (root->backward_done) throw ValueError("backward: called twice without a new forward pass");
  root->backward_done = true;

  // Iterative post-order DFS over grad-requiring nodes.
  std::vector<Node*> order;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root, 0);
  // 1 = on stack, 2 = finished
  std::unordered_map<Node*, int> state;
  state[root] = 1;
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    bool descended = false;
    while (next_child < node->inputs.size()) {
      Node* child = node->inputs[next_child].get();
      ++next_child;
      if (!child->requires_grad) continue;
      auto it = state.find(child);
      if (it == state.end()) {
        state[child] = 1;
        stack.emplace_back(child, 0);
        descended = true;
        break;
      }
    }
    if (descended) continue;
    order.push_back(node);
    state[node] = 2;
    stack.pop_back();
  }

  for (Node* n : order) n->ensure_grad();
  root->grad[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
  // Consume the graph: break edges and drop intermediate gradients so the
  // activation memory is released even while handles remain alive.
  for (Node* n : order) {
    if (n->backprop) {
      n->inputs.clear();
      n->backprop = nullptr;
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
  root->backward_done = true;
}

}  // namespace armp
