// Independent reference implementations used as test oracles. Everything here
// is deliberately naive (direct loops, double precision) and shares no code
// with the library paths it checks.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

namespace oracle {

// Triple-loop matrix product, double accumulation.
inline std::vector<double> matmul(const std::vector<double>& a, int m, int k,
                                  const std::vector<double>& b, int n) {
  std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p)
        acc += a[static_cast<size_t>(i) * k + p] * b[static_cast<size_t>(p) * n + j];
      c[static_cast<size_t>(i) * n + j] = acc;
    }
  return c;
}

// Direct six-loop cross-correlation. input [C,H,W], kernels [F,C,k,k].
inline std::vector<double> conv2d(const std::vector<double>& input, int channels, int height,
                                  int width, const std::vector<double>& kernels,
                                  const std::vector<double>& bias, int filters, int k, int stride,
                                  int pad, int* out_h, int* out_w) {
  const int oh = (height + 2 * pad - k) / stride + 1;
  const int ow = (width + 2 * pad - k) / stride + 1;
  *out_h = oh;
  *out_w = ow;
  std::vector<double> out(static_cast<size_t>(filters) * oh * ow, 0.0);
  for (int f = 0; f < filters; ++f)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = bias.empty() ? 0.0 : bias[static_cast<size_t>(f)];
        for (int c = 0; c < channels; ++c)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int y = oy * stride + ky - pad;
              const int x = ox * stride + kx - pad;
              if (y < 0 || y >= height || x < 0 || x >= width) continue;
              acc += input[(static_cast<size_t>(c) * height + y) * width + x] *
                     kernels[((static_cast<size_t>(f) * channels + c) * k + ky) * k + kx];
            }
        out[(static_cast<size_t>(f) * oh + oy) * ow + ox] = acc;
      }
  return out;
}

// Direct transposed convolution. input [C,H,W], kernels [C_in,C_out,k,k].
inline std::vector<double> conv_transpose2d(const std::vector<double>& input, int in_c, int height,
                                            int width, const std::vector<double>& kernels,
                                            const std::vector<double>& bias, int out_c, int k,
                                            int stride, int pad, int* out_h, int* out_w) {
  const int oh = (height - 1) * stride - 2 * pad + k;
  const int ow = (width - 1) * stride - 2 * pad + k;
  *out_h = oh;
  *out_w = ow;
  std::vector<double> out(static_cast<size_t>(out_c) * oh * ow, 0.0);
  for (int co = 0; co < out_c; ++co) {
    if (!bias.empty())
      for (int i = 0; i < oh * ow; ++i) out[static_cast<size_t>(co) * oh * ow + i] = bias[co];
  }
  for (int ci = 0; ci < in_c; ++ci)
    for (int iy = 0; iy < height; ++iy)
      for (int ix = 0; ix < width; ++ix) {
        const double v = input[(static_cast<size_t>(ci) * height + iy) * width + ix];
        for (int co = 0; co < out_c; ++co)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int y = iy * stride + ky - pad;
              const int x = ix * stride + kx - pad;
              if (y < 0 || y >= oh || x < 0 || x >= ow) continue;
              out[(static_cast<size_t>(co) * oh + y) * ow + x] +=
                  v * kernels[((static_cast<size_t>(ci) * out_c + co) * k + ky) * k + kx];
            }
      }
  return out;
}

// Mean softmax cross entropy from the explicit exp/sum formula, extended
// precision, optional row mask.
inline double softmax_cross_entropy(const std::vector<double>& logits, int rows, int vocab,
                                    const std::vector<int>& targets,
                                    const std::vector<uint8_t>& mask = {}) {
  long double total = 0.0L;
  int active = 0;
  for (int i = 0; i < rows; ++i) {
    if (!mask.empty() && !mask[static_cast<size_t>(i)]) continue;
    const double* row = logits.data() + static_cast<size_t>(i) * vocab;
    long double denom = 0.0L;
    for (int j = 0; j < vocab; ++j) denom += expl(static_cast<long double>(row[j]));
    const long double p = expl(static_cast<long double>(row[targets[static_cast<size_t>(i)]])) /
                          denom;
    total += -logl(p);
    ++active;
  }
  return static_cast<double>(total / active);
}

// Row-wise causally masked softmax, double precision.
inline std::vector<double> causal_softmax(const std::vector<double>& scores, int n) {
  std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    double mx = scores[static_cast<size_t>(i) * n];
    for (int j = 1; j <= i; ++j) mx = std::max(mx, scores[static_cast<size_t>(i) * n + j]);
    double denom = 0.0;
    for (int j = 0; j <= i; ++j) denom += std::exp(scores[static_cast<size_t>(i) * n + j] - mx);
    for (int j = 0; j <= i; ++j)
      out[static_cast<size_t>(i) * n + j] = std::exp(scores[static_cast<size_t>(i) * n + j] - mx) / denom;
  }
  return out;
}

inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }
inline double silu(double x) { return x * sigmoid(x); }

// ---- finite differences ----------------------------------------------------
//
// `f` evaluates a scalar loss in double precision from flat parameter blocks.
// Central differences with the given absolute step.
//
// Pass criterion is the blended bound |ad - fd| <= max(rel_tol*|fd|, atol):
// pure relative comparison at healthy magnitudes, an absolute floor where the
// f32 forward's own rounding noise (~1e-6) dominates. Reported as
// |ad - fd| / max(|fd|, atol/rel_tol) so callers compare against rel_tol.

struct FdResult {
  double max_rel_err = 0.0;
  double worst_autodiff = 0.0;
  double worst_fd = 0.0;
  int checked = 0;
};

inline FdResult compare_gradients(
    std::vector<std::vector<double>> params,
    const std::function<double(const std::vector<std::vector<double>>&)>& f,
    const std::vector<std::vector<float>>& autodiff_grads, double step = 1e-3,
    double rel_tol = 1e-4, double atol = 1e-5) {
  FdResult res;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    for (size_t i = 0; i < params[pi].size(); ++i) {
      const double keep = params[pi][i];
      params[pi][i] = keep + step;
      const double up = f(params);
      params[pi][i] = keep - step;
      const double down = f(params);
      params[pi][i] = keep;
      const double fd = (up - down) / (2.0 * step);
      const double ad = static_cast<double>(autodiff_grads[pi][i]);
      const double denom = std::max(std::abs(fd), atol / rel_tol);
      const double rel = std::abs(ad - fd) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_autodiff = ad;
        res.worst_fd = fd;
      }
      ++res.checked;
    }
  }
  return res;
}

}  // namespace oracle
