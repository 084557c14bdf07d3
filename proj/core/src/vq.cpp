#include "armp/vq.hpp"

#include <cmath>

#include "armp/channels.hpp"

namespace armp::vq {

int VqConfig::stages() const {
  int f = downsample, n = 0;
  while (f > 1) {
    f >>= 1;
    ++n;
  }
  return n;
}

void VqConfig::validate() const {
  if (downsample < 2 || (downsample & (downsample - 1)) != 0)
    throw ValueError("vq: downsample factor must be a power of two >= 2");
  if (codebook_size < 2) throw ValueError("vq: codebook size must be >= 2");
  if (code_dim < 1) throw ValueError("vq: code dim must be >= 1");
  if (input_channels < 1) throw ValueError("vq: need at least one input channel");
  if (base_width < 1) throw ValueError("vq: base width must be positive");
  if (!(commitment_beta >= 0.0f)) throw ValueError("vq: commitment beta must be >= 0");
}

void VqConfig::check_image(int height, int width) const {
  if (height % downsample != 0 || width % downsample != 0)
    throw ShapeError("vq: image dims must be divisible by the downsample factor");
}

Tensor VqModel::ResBlock::operator()(const Tensor& x) const {
  return add(x, conv2(silu(conv1(x))));
}

void VqModel::ResBlock::params(nn::ParamList& out, const std::string& prefix) const {
  conv1.params(out, prefix + ".conv1");
  conv2.params(out, prefix + ".conv2");
}

VqModel::VqModel(VqConfig cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = Rng(seed).fork("vq-init");
  const int stages = cfg_.stages();
  auto width_of = [&](int stage) {
    int w = cfg_.base_width << stage;
    return std::min(w, cfg_.base_width * 4);
  };

  int prev = cfg_.input_channels;
  for (int s = 0; s < stages; ++s) {
    const int w = width_of(s);
    enc_down_.emplace_back(prev, w, 3, 2, 1, rng);
    enc_res_.push_back(ResBlock{nn::Conv2d(w, w, 3, 1, 1, rng), nn::Conv2d(w, w, 3, 1, 1, rng)});
    prev = w;
  }
  enc_out_ = nn::Conv2d(prev, cfg_.code_dim, 1, 1, 0, rng);

  dec_in_ = nn::Conv2d(cfg_.code_dim, prev, 1, 1, 0, rng);
  for (int s = stages - 1; s >= 0; --s) {
    const int w = width_of(s);
    const int next = s == 0 ? cfg_.base_width : width_of(s - 1);
    dec_res_.push_back(ResBlock{nn::Conv2d(w, w, 3, 1, 1, rng), nn::Conv2d(w, w, 3, 1, 1, rng)});
    dec_up_.emplace_back(w, next, 4, 2, 1, rng);
  }
  dec_out_ = nn::Conv2d(cfg_.base_width, cfg_.input_channels, 3, 1, 1, rng);

  codebook_ = Tensor::randn({cfg_.codebook_size, cfg_.code_dim}, rng, 1.0f, true);
  usage_.assign(static_cast<size_t>(cfg_.codebook_size), 0);
  last_used_step_.assign(static_cast<size_t>(cfg_.codebook_size), 0);
}

Tensor VqModel::encode(const Tensor& image) const {
  const bool batched = image.rank() == 4;
  const int c = image.dim(batched ? 1 : 0);
  if (c != cfg_.input_channels) throw ShapeError("vq encode: wrong channel count");
  cfg_.check_image(image.dim(batched ? 2 : 1), image.dim(batched ? 3 : 2));
  Tensor x = image;
  for (size_t s = 0; s < enc_down_.size(); ++s) {
    x = silu(enc_down_[s](x));
    x = enc_res_[s](x);
  }
  return enc_out_(x);
}

TokenGrid QuantizeResult::grid(int image) const {
  if (image < 0 || image >= images) throw ValueError("quantize grid: image index out of range");
  TokenGrid g;
  g.h = grid_h;
  g.w = grid_w;
  const size_t per = static_cast<size_t>(grid_h) * grid_w;
  g.indices.assign(indices.begin() + static_cast<std::ptrdiff_t>(image * per),
                   indices.begin() + static_cast<std::ptrdiff_t>((image + 1) * per));
  return g;
}

QuantizeResult VqModel::quantize(const Tensor& latent) const {
  const bool batched = latent.rank() == 4;
  if (latent.dim(batched ? 1 : 0) != cfg_.code_dim)
    throw ShapeError("vq quantize: latent dim mismatch");

  QuantizeResult out;
  out.images = batched ? latent.dim(0) : 1;
  out.grid_h = latent.dim(batched ? 2 : 1);
  out.grid_w = latent.dim(batched ? 3 : 2);

  Tensor rows = chw_to_rows(latent);  // [rows, D]
  const int n_rows = rows.dim(0);
  const int dim = cfg_.code_dim;
  const int K = cfg_.codebook_size;
  const auto rd = rows.data();
  const auto cd = codebook_.data();

  out.indices.resize(static_cast<size_t>(n_rows));
  for (int i = 0; i < n_rows; ++i) {
    const float* z = rd.data() + static_cast<size_t>(i) * dim;
    int best = 0;
    float best_d2 = std::numeric_limits<float>::infinity();
    for (int k = 0; k < K; ++k) {
      const float* e = cd.data() + static_cast<size_t>(k) * dim;
      float d2 = 0.0f;
      for (int j = 0; j < dim; ++j) {
        const float d = z[j] - e[j];
        d2 += d * d;
      }
      if (d2 < best_d2) {  // strict: ties keep the lowest index
        best_d2 = d2;
        best = k;
      }
    }
    out.indices[static_cast<size_t>(i)] = best;
  }

  Tensor selected = embedding(codebook_, out.indices);  // live codebook rows
  out.codebook_loss = mse_loss(selected, detach(rows));
  out.commitment_loss = mse_loss(rows, detach(selected));
  out.straight_through = add(rows, detach(sub(selected, rows)));
  return out;
}

Tensor VqModel::decoder_input(const TokenGrid& tokens) const {
  for (int idx : tokens.indices)
    if (idx < 0 || idx >= cfg_.codebook_size) throw ValueError("vq decode: token index >= K");
  return embedding(codebook_, tokens.indices);
}

Tensor VqModel::run_decoder(const Tensor& latent_chw) const {
  Tensor x = dec_in_(latent_chw);
  for (size_t s = 0; s < dec_up_.size(); ++s) {
    x = dec_res_[s](x);
    x = silu(dec_up_[s](x));
  }
  return dec_out_(x);
}

Tensor VqModel::decode_latent_rows(const Tensor& rows, int h, int w) const {
  Tensor chw = rows_to_chw(rows, cfg_.code_dim, h, w);
  Tensor raw = run_decoder(chw);
  // Intensity channel through a sigmoid; mask channels stay logits.
  const bool batched = raw.rank() == 4;
  const int channels = raw.dim(batched ? 1 : 0);
  if (channels == cfg_.input_channels && cfg_.input_channels >= 1) {
    // Split, transform, reassemble via rows to keep gradients exact.
    Tensor as_rows = chw_to_rows(raw);  // [rows, C]
    std::vector<Tensor> parts;
    int ch = 0;
    // ct_only and ct_and_mask have intensity first; mask_only has none.
    // The model does not know the channel semantics; callers pass images whose
    // first channel is intensity unless the model was built mask-only (C==3).
    const bool has_intensity = cfg_.input_channels != 3;
    if (has_intensity) {
      parts.push_back(sigmoid(slice_cols(as_rows, 0, 1)));
      ch = 1;
    }
    if (ch < channels) parts.push_back(slice_cols(as_rows, ch, channels - ch));
    Tensor merged = parts.size() == 1 ? parts[0] : concat_cols(parts);
    const int out_h = raw.dim(batched ? 2 : 1);
    const int out_w = raw.dim(batched ? 3 : 2);
    return rows_to_chw(merged, channels, out_h, out_w);
  }
  return raw;
}

Tensor VqModel::decode(const TokenGrid& tokens) const {
  NoGradGuard no_grad;
  Tensor rows = decoder_input(tokens);
  return decode_latent_rows(rows, tokens.h, tokens.w);
}

TokenGrid VqModel::tokenize(const Tensor& image) const {
  NoGradGuard no_grad;
  Tensor latent = encode(image);
  return quantize(latent).grid(0);
}

VqStepStats VqModel::train_step(const std::vector<Tensor>& batch, Adam& optimizer,
                                Rng& reinit_rng) {
  if (batch.empty()) throw ValueError("vq train: empty batch");
  for (const auto& img : batch)
    if (img.rank() != 3) throw ShapeError("vq train: batch entries must be [C,H,W]");
  const int H = batch[0].dim(1), W = batch[0].dim(2);

  // Stack the batch so convolutions run once.
  std::vector<float> stacked;
  stacked.reserve(batch.size() * batch[0].data().size());
  for (const auto& img : batch) stacked.insert(stacked.end(), img.data().begin(), img.data().end());
  Tensor input = Tensor::from_data({static_cast<int>(batch.size()), cfg_.input_channels, H, W},
                                   std::move(stacked));

  Tensor latent = encode(input);
  QuantizeResult q = quantize(latent);
  Tensor recon = decode_latent_rows(q.straight_through, q.grid_h, q.grid_w);

  Tensor recon_rows = chw_to_rows(recon);
  Tensor target_rows = chw_to_rows(input);
  const bool has_intensity = cfg_.input_channels != 3;

  VqStepStats stats;
  Tensor loss;
  if (has_intensity) {
    Tensor intensity_loss = mse_loss(slice_cols(recon_rows, 0, 1), slice_cols(target_rows, 0, 1));
    stats.intensity = intensity_loss.item();
    loss = intensity_loss;
  }
  if (cfg_.input_channels - (has_intensity ? 1 : 0) > 0) {
    const int mask_start = has_intensity ? 1 : 0;
    const int mask_count = cfg_.input_channels - mask_start;
    Tensor mask_loss = bce_with_logits(slice_cols(recon_rows, mask_start, mask_count),
                                       slice_cols(target_rows, mask_start, mask_count));
    stats.mask = mask_loss.item();
    loss = loss.defined() ? add(loss, mask_loss) : mask_loss;
  }
  loss = add(loss, q.codebook_loss);
  stats.codebook = q.codebook_loss.item();
  if (cfg_.commitment_beta != 0.0f) {
    loss = add(loss, scale(q.commitment_loss, cfg_.commitment_beta));
  }
  stats.commitment = cfg_.commitment_beta * q.commitment_loss.item();
  stats.total = loss.item();
  if (!std::isfinite(stats.total))
    throw NumericError("vq train: non-finite loss at step " + std::to_string(step_ + 1));

  optimizer.zero_grad();
  backward(loss);
  optimizer.step();
  ++step_;

  for (int idx : q.indices) {
    ++usage_[static_cast<size_t>(idx)];
    last_used_step_[static_cast<size_t>(idx)] = step_;
  }

  // Re-seed codes that sat idle for kDeadCodeSteps straight.
  const auto latent_rows = chw_to_rows(detach(latent));
  const int n_rows = latent_rows.dim(0);
  for (int k = 0; k < cfg_.codebook_size; ++k) {
    if (step_ - last_used_step_[static_cast<size_t>(k)] < kDeadCodeSteps) continue;
    const int pick = static_cast<int>(reinit_rng.below(n_rows));
    auto cb = codebook_.raw_data();
    const auto lr = latent_rows.data();
    for (int j = 0; j < cfg_.code_dim; ++j)
      cb[static_cast<size_t>(k) * cfg_.code_dim + j] =
          lr[static_cast<size_t>(pick) * cfg_.code_dim + j];
    optimizer.reset_rows(codebook_, k, 1);
    last_used_step_[static_cast<size_t>(k)] = step_;
  }
  return stats;
}

nn::ParamList VqModel::named_parameters() const {
  nn::ParamList out;
  for (size_t s = 0; s < enc_down_.size(); ++s) {
    enc_down_[s].params(out, "enc.down" + std::to_string(s));
    enc_res_[s].params(out, "enc.res" + std::to_string(s));
  }
  enc_out_.params(out, "enc.out");
  dec_in_.params(out, "dec.in");
  for (size_t s = 0; s < dec_up_.size(); ++s) {
    dec_res_[s].params(out, "dec.res" + std::to_string(s));
    dec_up_[s].params(out, "dec.up" + std::to_string(s));
  }
  dec_out_.params(out, "dec.out");
  out.emplace_back("codebook", codebook_);
  return out;
}

double VqModel::never_used_fraction() const {
  size_t never = 0;
  for (int64_t u : usage_) never += u == 0;
  return static_cast<double>(never) / static_cast<double>(usage_.size());
}

int VqModel::tokens_per_image(int height, int width) const {
  cfg_.check_image(height, width);
  return (height / cfg_.downsample) * (width / cfg_.downsample);
}

double reconstruction_psnr(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ShapeError("psnr: size mismatch");
  if (a.empty()) throw ValueError("psnr: empty input");
  double mse = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace armp::vq
