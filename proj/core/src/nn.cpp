#include "armp/nn.hpp"

#include <cmath>

namespace armp::nn {

namespace {
// Kaiming-style fan-in scaling.
float init_std(int fan_in) { return std::sqrt(2.0f / static_cast<float>(fan_in)); }
}  // namespace

Linear::Linear(int in, int out, Rng& rng, bool with_bias) {
  weight = Tensor::randn({in, out}, rng, init_std(in), true);
  if (with_bias) bias = Tensor::zeros({out}, true);
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  if (bias.defined()) y = add_row_bias(y, bias);
  return y;
}

void Linear::params(ParamList& out, const std::string& prefix) const {
  collect(out, prefix + ".weight", weight);
  if (bias.defined()) collect(out, prefix + ".bias", bias);
}

Conv2d::Conv2d(int in_c, int out_c, int k, int stride_, int pad_, Rng& rng)
    : stride(stride_), pad(pad_) {
  weight = Tensor::randn({out_c, in_c, k, k}, rng, init_std(in_c * k * k), true);
  bias = Tensor::zeros({out_c}, true);
}

Tensor Conv2d::operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, pad); }

void Conv2d::params(ParamList& out, const std::string& prefix) const {
  collect(out, prefix + ".weight", weight);
  collect(out, prefix + ".bias", bias);
}

ConvTranspose2d::ConvTranspose2d(int in_c, int out_c, int k, int stride_, int pad_, Rng& rng)
    : stride(stride_), pad(pad_) {
  weight = Tensor::randn({in_c, out_c, k, k}, rng, init_std(in_c * k * k), true);
  bias = Tensor::zeros({out_c}, true);
}

Tensor ConvTranspose2d::operator()(const Tensor& x) const {
  return conv_transpose2d(x, weight, bias, stride, pad);
}

void ConvTranspose2d::params(ParamList& out, const std::string& prefix) const {
  collect(out, prefix + ".weight", weight);
  collect(out, prefix + ".bias", bias);
}

RmsNorm::RmsNorm(int dim) { gain = Tensor::full({dim}, 1.0f, true); }

void RmsNorm::params(ParamList& out, const std::string& prefix) const {
  collect(out, prefix + ".gain", gain);
}

}  // namespace armp::nn
