// Small fixed networks shared by the unit gradient checks and the acceptance
// suite: forward in the library (f32 autodiff) and an independent double
// precision forward for finite differencing.
#pragma once

#include <vector>

#include "armp/rng.hpp"
#include "armp/tensor.hpp"
#include "oracles.hpp"

namespace gradnets {

struct Net {
  std::vector<armp::Tensor> params;                 // f32 leaves, requires_grad
  std::function<armp::Tensor()> forward_f32;        // rebuilds the graph
  std::function<double(const std::vector<std::vector<double>>&)> forward_f64;
};

inline std::vector<std::vector<double>> params_as_double(const Net& net) {
  std::vector<std::vector<double>> out;
  for (const auto& p : net.params) {
    std::vector<double> v(p.data().begin(), p.data().end());
    out.push_back(std::move(v));
  }
  return out;
}

inline oracle::FdResult run_gradcheck(Net& net) {
  armp::Tensor loss = net.forward_f32();
  armp::backward(loss);
  std::vector<std::vector<float>> grads;
  for (auto& p : net.params) grads.emplace_back(p.grad().begin(), p.grad().end());
  return oracle::compare_gradients(params_as_double(net), net.forward_f64, grads);
}

// Two-layer MLP with SiLU, mean squared error head.
inline Net make_mlp(uint64_t seed) {
  using armp::Tensor;
  armp::Rng rng(seed);
  const int batch = 4, in = 5, hidden = 8, out = 3;
  Net net;
  Tensor x = Tensor::randn({batch, in}, rng);
  Tensor target = Tensor::randn({batch, out}, rng);
  Tensor w1 = Tensor::randn({in, hidden}, rng, 0.5f, true);
  Tensor b1 = Tensor::randn({hidden}, rng, 0.1f, true);
  Tensor w2 = Tensor::randn({hidden, out}, rng, 0.5f, true);
  Tensor b2 = Tensor::randn({out}, rng, 0.1f, true);
  net.params = {w1, b1, w2, b2};
  net.forward_f32 = [=]() {
    Tensor h = armp::silu(armp::add_row_bias(armp::matmul(x, w1), b1));
    Tensor y = armp::add_row_bias(armp::matmul(h, w2), b2);
    return armp::mse_loss(y, target);
  };
  std::vector<double> xd(x.data().begin(), x.data().end());
  std::vector<double> td(target.data().begin(), target.data().end());
  net.forward_f64 = [=](const std::vector<std::vector<double>>& p) {
    std::vector<double> h = oracle::matmul(xd, batch, in, p[0], hidden);
    for (int i = 0; i < batch; ++i)
      for (int j = 0; j < hidden; ++j) {
        h[static_cast<size_t>(i) * hidden + j] =
            oracle::silu(h[static_cast<size_t>(i) * hidden + j] + p[1][static_cast<size_t>(j)]);
      }
    std::vector<double> y = oracle::matmul(h, batch, hidden, p[2], out);
    double acc = 0.0;
    for (int i = 0; i < batch; ++i)
      for (int j = 0; j < out; ++j) {
        const double v =
            y[static_cast<size_t>(i) * out + j] + p[3][static_cast<size_t>(j)] -
            td[static_cast<size_t>(i) * out + j];
        acc += v * v;
      }
    return acc / (batch * out);
  };
  return net;
}

// conv -> silu -> strided conv -> silu -> transposed conv -> silu -> linear.
inline Net make_conv_stack(uint64_t seed) {
  using armp::Tensor;
  armp::Rng rng(seed);
  const int in_c = 2, h0 = 7, w0 = 7;
  const int c1 = 3, c2 = 2, ct = 2;
  Net net;
  Tensor x = Tensor::randn({in_c, h0, w0}, rng);
  Tensor k1 = Tensor::randn({c1, in_c, 3, 3}, rng, 0.4f, true);
  Tensor bias1 = Tensor::randn({c1}, rng, 0.1f, true);
  Tensor k2 = Tensor::randn({c2, c1, 3, 3}, rng, 0.4f, true);
  Tensor bias2 = Tensor::randn({c2}, rng, 0.1f, true);
  Tensor kt = Tensor::randn({c2, ct, 4, 4}, rng, 0.4f, true);
  Tensor biast = Tensor::randn({ct}, rng, 0.1f, true);
  const int flat = ct * 8 * 8;
  Tensor wl = Tensor::randn({flat, 1}, rng, 0.2f, true);
  Tensor target = Tensor::from_data({1, 1}, {0.7f});
  net.params = {k1, bias1, k2, bias2, kt, biast, wl};
  net.forward_f32 = [=]() {
    Tensor a = armp::silu(armp::conv2d(x, k1, bias1, 1, 1));       // [3,7,7]
    Tensor b = armp::silu(armp::conv2d(a, k2, bias2, 2, 1));       // [2,4,4]
    Tensor c = armp::silu(armp::conv_transpose2d(b, kt, biast, 2, 1));  // [2,8,8]
    Tensor f = armp::reshape(c, {1, flat});
    return armp::mse_loss(armp::matmul(f, wl), target);
  };
  std::vector<double> xd(x.data().begin(), x.data().end());
  net.forward_f64 = [=](const std::vector<std::vector<double>>& p) {
    int oh = 0, ow = 0;
    auto a = oracle::conv2d(xd, in_c, h0, w0, p[0], p[1], c1, 3, 1, 1, &oh, &ow);
    for (auto& v : a) v = oracle::silu(v);
    int oh2 = 0, ow2 = 0;
    auto b = oracle::conv2d(a, c1, oh, ow, p[2], p[3], c2, 3, 2, 1, &oh2, &ow2);
    for (auto& v : b) v = oracle::silu(v);
    int oh3 = 0, ow3 = 0;
    auto c = oracle::conv_transpose2d(b, c2, oh2, ow2, p[4], p[5], ct, 4, 2, 1, &oh3, &ow3);
    for (auto& v : c) v = oracle::silu(v);
    double y = 0.0;
    for (size_t i = 0; i < c.size(); ++i) y += c[i] * p[6][i];
    const double d = y - 0.7;
    return d * d;
  };
  return net;
}

}  // namespace gradnets
