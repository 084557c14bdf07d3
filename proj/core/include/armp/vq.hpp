#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "armp/nn.hpp"
#include "armp/optim.hpp"
#include "armp/rng.hpp"
#include "armp/tensor.hpp"

namespace armp::vq {

struct VqConfig {
  int input_channels = 4;
  int downsample = 8;        // f; power of two
  int codebook_size = 256;   // K
  int code_dim = 32;         // D
  float commitment_beta = 0.25f;
  int base_width = 32;       // stage widths double from here, capped at 4x

  int stages() const;
  void validate() const;
  void check_image(int height, int width) const;  // divisibility by f
};

struct TokenGrid {
  int h = 0, w = 0;
  std::vector<int> indices;  // h*w, values in [0, K)
  int source_phase = -1;
};

struct QuantizeResult {
  std::vector<int> indices;  // one per latent vector, image-major for batches
  int grid_h = 0, grid_w = 0;
  int images = 1;
  Tensor straight_through;  // [rows, D]; decoder gradient passes to encoder
  Tensor codebook_loss;     // ||sg(z) - e||^2, mean
  Tensor commitment_loss;   // ||z - sg(e)||^2, mean

  TokenGrid grid(int image = 0) const;
};

struct VqStepStats {
  float total = 0, intensity = 0, mask = 0, codebook = 0, commitment = 0;
};

/// Convolutional VQ autoencoder: log2(f) stride-2 stages with one residual
/// block each; nearest-code quantization with straight-through gradients;
/// codebook learned by gradient with dead-code re-seeding.
class VqModel {
 public:
  VqModel(VqConfig cfg, uint64_t seed);

  const VqConfig& config() const { return cfg_; }

  /// [C,H,W] (or [N,C,H,W]) -> [D, H/f, W/f] (or batched).
  Tensor encode(const Tensor& image) const;

  /// Latent [D,h,w] or [N,D,h,w] -> per-image token grids + losses.
  /// Nearest code by Euclidean distance, ties to the lowest index.
  QuantizeResult quantize(const Tensor& latent) const;

  /// Codebook rows for a token grid, as the decoder would consume them.
  Tensor decoder_input(const TokenGrid& tokens) const;

  /// Tokens -> [C,H,W]; intensity channel sigmoided, mask channels logits.
  Tensor decode(const TokenGrid& tokens) const;
  /// Decoder applied to arbitrary latent rows (training path).
  Tensor decode_latent_rows(const Tensor& rows, int h, int w) const;

  /// Tokenize one phase image without recording gradients.
  TokenGrid tokenize(const Tensor& image) const;

  /// One optimization step on a batch of [C,H,W] images (reconstruction
  /// targets are the inputs). Aborts with NumericError on NaN loss.
  VqStepStats train_step(const std::vector<Tensor>& batch, Adam& optimizer, Rng& reinit_rng);

  nn::ParamList named_parameters() const;
  const Tensor& codebook() const { return codebook_; }
  const std::vector<int64_t>& usage_counters() const { return usage_; }
  double never_used_fraction() const;
  int64_t steps_taken() const { return step_; }

  int tokens_per_image(int height, int width) const;

 private:
  struct ResBlock {
    nn::Conv2d conv1, conv2;
    Tensor operator()(const Tensor& x) const;
    void params(nn::ParamList& out, const std::string& prefix) const;
  };

  VqConfig cfg_;
  std::vector<nn::Conv2d> enc_down_;
  std::vector<ResBlock> enc_res_;
  nn::Conv2d enc_out_;
  nn::Conv2d dec_in_;
  std::vector<ResBlock> dec_res_;
  std::vector<nn::ConvTranspose2d> dec_up_;
  nn::Conv2d dec_out_;
  Tensor codebook_;  // [K, D]

  std::vector<int64_t> usage_;
  std::vector<int64_t> last_used_step_;
  int64_t step_ = 0;

  Tensor run_decoder(const Tensor& latent_chw) const;
};

/// 10*log10(1 / MSE) over an intensity channel in [0,1]; +infinity when the
/// images are identical.
double reconstruction_psnr(std::span<const float> a, std::span<const float> b);

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// Codes idle for this many consecutive steps are re-seeded from the batch.
inline constexpr int64_t kDeadCodeSteps = 200;

}  // namespace armp::vq
