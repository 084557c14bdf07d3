#pragma once

#include <string>
#include <utility>
#include <vector>

#include "armp/rng.hpp"
#include "armp/tensor.hpp"

namespace armp::nn {

/// Flat (name, parameter) list collected from a model, in declaration order.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

inline void collect(ParamList& out, const std::string& name, const Tensor& t) {
  out.emplace_back(name, t);
}

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out], optional

  Linear() = default;
  Linear(int in, int out, Rng& rng, bool with_bias = true);
  Tensor operator()(const Tensor& x) const;
  void params(ParamList& out, const std::string& prefix) const;
};

struct Conv2d {
  Tensor weight;  // [F, C, k, k]
  Tensor bias;    // [F]
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(int in_c, int out_c, int k, int stride, int pad, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void params(ParamList& out, const std::string& prefix) const;
};

struct ConvTranspose2d {
  Tensor weight;  // [C_in, C_out, k, k]
  Tensor bias;    // [C_out]
  int stride = 1;
  int pad = 0;

  ConvTranspose2d() = default;
  ConvTranspose2d(int in_c, int out_c, int k, int stride, int pad, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void params(ParamList& out, const std::string& prefix) const;
};

struct RmsNorm {
  Tensor gain;  // [dim], ones at init
  float eps = 1e-5f;

  RmsNorm() = default;
  explicit RmsNorm(int dim);
  Tensor operator()(const Tensor& x) const { return rms_norm(x, gain, eps); }
  void params(ParamList& out, const std::string& prefix) const;
};

}  // namespace armp::nn
