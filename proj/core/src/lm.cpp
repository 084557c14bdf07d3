#include "armp/lm.hpp"

#include <algorithm>
#include <cmath>

namespace armp::lm {

namespace {
constexpr float kNormEps = 1e-5f;
}

void LmConfig::validate() const {
  if (vocab_size < 2) throw ValueError("lm: vocab size must be >= 2");
  if (ctx_len < 2) throw ValueError("lm: context length must be >= 2");
  if (layers < 1 || heads < 1 || dim < 1 || ffn_dim < 1) throw ValueError("lm: bad dimensions");
  if (dim % heads != 0) throw ValueError("lm: dim must be divisible by heads");
}

CausalLm::CausalLm(LmConfig cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = Rng(seed).fork("lm-init");
  const float base = 0.02f;
  const float resid = base / std::sqrt(2.0f * static_cast<float>(cfg_.layers));
  tok_emb_ = Tensor::randn({cfg_.vocab_size, cfg_.dim}, rng, base, true);
  pos_emb_ = Tensor::randn({cfg_.ctx_len, cfg_.dim}, rng, base, true);
  layers_.reserve(static_cast<size_t>(cfg_.layers));
  for (int i = 0; i < cfg_.layers; ++i) {
    Layer l;
    l.wq = Tensor::randn({cfg_.dim, cfg_.dim}, rng, base, true);
    l.wk = Tensor::randn({cfg_.dim, cfg_.dim}, rng, base, true);
    l.wv = Tensor::randn({cfg_.dim, cfg_.dim}, rng, base, true);
    l.wo = Tensor::randn({cfg_.dim, cfg_.dim}, rng, resid, true);
    l.w1 = Tensor::randn({cfg_.dim, cfg_.ffn_dim}, rng, base, true);
    l.w2 = Tensor::randn({cfg_.ffn_dim, cfg_.dim}, rng, resid, true);
    l.w3 = Tensor::randn({cfg_.dim, cfg_.ffn_dim}, rng, base, true);
    l.norm1 = nn::RmsNorm(cfg_.dim);
    l.norm2 = nn::RmsNorm(cfg_.dim);
    l.norm1.eps = kNormEps;
    l.norm2.eps = kNormEps;
    layers_.push_back(std::move(l));
  }
  final_norm_ = nn::RmsNorm(cfg_.dim);
  final_norm_.eps = kNormEps;
  head_ = Tensor::randn({cfg_.dim, cfg_.vocab_size}, rng, base, true);
}

Tensor CausalLm::forward(std::span<const int> tokens, ForwardTrace* trace) const {
  const int n = static_cast<int>(tokens.size());
  if (n < 1) throw ValueError("lm forward: empty sequence");
  if (n > cfg_.ctx_len) throw ValueError("lm forward: sequence exceeds context length");
  for (int t : tokens)
    if (t < 0 || t >= cfg_.vocab_size) throw ValueError("lm forward: token index out of range");

  const int hs = cfg_.head_dim();
  const float att_scale = 1.0f / std::sqrt(static_cast<float>(hs));

  if (trace) {
    trace->attn.assign(static_cast<size_t>(cfg_.layers), {});
    trace->q.assign(static_cast<size_t>(cfg_.layers), {});
    trace->k.assign(static_cast<size_t>(cfg_.layers), {});
    trace->v.assign(static_cast<size_t>(cfg_.layers), {});
  }

  std::vector<int> idx(tokens.begin(), tokens.end());
  Tensor x = add(embedding(tok_emb_, idx), slice_rows(pos_emb_, 0, n));
  for (size_t li = 0; li < layers_.size(); ++li) {
    const Layer& l = layers_[li];
    Tensor xn = l.norm1(x);
    Tensor q = matmul(xn, l.wq);
    Tensor k = matmul(xn, l.wk);
    Tensor v = matmul(xn, l.wv);
    if (trace) {
      trace->q[li].assign(q.data().begin(), q.data().end());
      trace->k[li].assign(k.data().begin(), k.data().end());
      trace->v[li].assign(v.data().begin(), v.data().end());
    }
    std::vector<Tensor> ctx_heads;
    ctx_heads.reserve(static_cast<size_t>(cfg_.heads));
    for (int h = 0; h < cfg_.heads; ++h) {
      Tensor qh = slice_cols(q, h * hs, hs);
      Tensor kh = slice_cols(k, h * hs, hs);
      Tensor vh = slice_cols(v, h * hs, hs);
      Tensor probs = causal_softmax(scale(matmul(qh, kh, false, true), att_scale));
      if (trace) trace->attn[li].emplace_back(probs.data().begin(), probs.data().end());
      ctx_heads.push_back(matmul(probs, vh));
    }
    Tensor ctx = cfg_.heads == 1 ? ctx_heads[0] : concat_cols(ctx_heads);
    x = add(x, matmul(ctx, l.wo));
    Tensor xn2 = l.norm2(x);
    Tensor gated = mul(silu(matmul(xn2, l.w1)), matmul(xn2, l.w3));
    x = add(x, matmul(gated, l.w2));
  }
  return matmul(final_norm_(x), head_);
}

Tensor CausalLm::loss(std::span<const int> tokens, std::span<const uint8_t> loss_mask) const {
  const int n = static_cast<int>(tokens.size());
  if (n < 2) throw ValueError("lm loss: need at least two tokens");
  if (!loss_mask.empty() && static_cast<int>(loss_mask.size()) != n)
    throw ValueError("lm loss: mask length mismatch");
  Tensor logits = forward(tokens);
  Tensor shifted = slice_rows(logits, 0, n - 1);
  std::vector<int> targets(tokens.begin() + 1, tokens.end());
  std::vector<uint8_t> mask;
  if (!loss_mask.empty()) mask.assign(loss_mask.begin() + 1, loss_mask.end());
  return softmax_cross_entropy(shifted, targets, mask);
}

float CausalLm::train_step(const std::vector<std::vector<int>>& batch, Adam& optimizer) const {
  if (batch.empty()) throw ValueError("lm train: empty batch");
  optimizer.zero_grad();
  double total = 0.0;
  const float inv = 1.0f / static_cast<float>(batch.size());
  for (const auto& seq : batch) {
    Tensor l = scale(loss(seq), inv);
    const float v = l.item();
    if (!std::isfinite(v)) throw NumericError("lm train: non-finite loss");
    total += static_cast<double>(v);
    backward(l);  // gradients accumulate across the batch
  }
  optimizer.step();
  return static_cast<float>(total);
}

std::vector<int> CausalLm::generate(std::span<const int> prefix, int n_new,
                                    const DecodeOptions& opts) const {
  if (n_new < 0) throw ValueError("lm generate: negative token count");
  if (n_new == 0) return {};
  if (prefix.empty()) throw ValueError("lm generate: empty prefix");
  if (static_cast<int>(prefix.size()) + n_new > cfg_.ctx_len)
    throw ValueError("lm generate: context overflow");

  InferenceSession session(*this);
  const std::vector<float>* logits = nullptr;
  for (int t : prefix) logits = &session.step(t);

  Rng rng(opts.seed);
  std::vector<int> out;
  out.reserve(static_cast<size_t>(n_new));
  for (int i = 0; i < n_new; ++i) {
    int next;
    if (opts.greedy) {
      next = 0;
      for (int v = 1; v < cfg_.vocab_size; ++v)
        if ((*logits)[static_cast<size_t>(v)] > (*logits)[static_cast<size_t>(next)]) next = v;
    } else {
      std::vector<std::pair<float, int>> scored(static_cast<size_t>(cfg_.vocab_size));
      for (int v = 0; v < cfg_.vocab_size; ++v)
        scored[static_cast<size_t>(v)] = {(*logits)[static_cast<size_t>(v)], v};
      int keep = opts.top_k > 0 ? std::min(opts.top_k, cfg_.vocab_size) : cfg_.vocab_size;
      std::partial_sort(scored.begin(), scored.begin() + keep, scored.end(),
                        [](auto& a, auto& b) {
                          return a.first != b.first ? a.first > b.first : a.second < b.second;
                        });
      const float temp = std::max(opts.temperature, 1e-6f);
      double mx = scored[0].first;
      std::vector<double> probs(static_cast<size_t>(keep));
      double denom = 0.0;
      for (int v = 0; v < keep; ++v) {
        probs[static_cast<size_t>(v)] = std::exp((scored[static_cast<size_t>(v)].first - mx) / temp);
        denom += probs[static_cast<size_t>(v)];
      }
      double u = rng.uniform(0.0, denom);
      int pick = 0;
      for (int v = 0; v < keep; ++v) {
        u -= probs[static_cast<size_t>(v)];
        if (u <= 0.0) {
          pick = v;
          break;
        }
        if (v == keep - 1) pick = v;
      }
      next = scored[static_cast<size_t>(pick)].second;
    }
    out.push_back(next);
    if (i + 1 < n_new) logits = &session.step(next);
  }
  return out;
}

nn::ParamList CausalLm::named_parameters() const {
  nn::ParamList out;
  out.emplace_back("tok_emb", tok_emb_);
  out.emplace_back("pos_emb", pos_emb_);
  for (size_t i = 0; i < layers_.size(); ++i) {
    const std::string p = "layer" + std::to_string(i);
    const Layer& l = layers_[i];
    out.emplace_back(p + ".attn.wq", l.wq);
    out.emplace_back(p + ".attn.wk", l.wk);
    out.emplace_back(p + ".attn.wv", l.wv);
    out.emplace_back(p + ".attn.wo", l.wo);
    l.norm1.params(out, p + ".norm1");
    out.emplace_back(p + ".ffn.w1", l.w1);
    out.emplace_back(p + ".ffn.w2", l.w2);
    out.emplace_back(p + ".ffn.w3", l.w3);
    l.norm2.params(out, p + ".norm2");
  }
  final_norm_.params(out, "final_norm");
  out.emplace_back("head", head_);
  return out;
}

// ---- inference session -------------------------------------------------------

namespace {

void rms_norm_vec(const float* x, const float* gain, int d, float* out) {
  double ss = 0.0;
  for (int i = 0; i < d; ++i) ss += static_cast<double>(x[i]) * x[i];
  const float inv = static_cast<float>(1.0 / std::sqrt(ss / d + kNormEps));
  for (int i = 0; i < d; ++i) out[i] = x[i] * gain[i] * inv;
}

// y[j] = sum_i x[i] * w[i*cols + j]
void vec_mat(const float* x, const float* w, int rows, int cols, float* y) {
  std::fill(y, y + cols, 0.0f);
  for (int i = 0; i < rows; ++i) {
    const float xv = x[i];
    const float* wrow = w + static_cast<size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) y[j] += xv * wrow[j];
  }
}

float sigmoid_f(float x) {
  return x >= 0 ? 1.0f / (1.0f + std::exp(-x)) : std::exp(x) / (1.0f + std::exp(x));
}

}  // namespace

InferenceSession::InferenceSession(const CausalLm& model) : m_(model) {
  const auto& cfg = m_.cfg_;
  k_cache_.assign(static_cast<size_t>(cfg.layers),
                  std::vector<float>(static_cast<size_t>(cfg.ctx_len) * cfg.dim));
  v_cache_ = k_cache_;
  logits_.resize(static_cast<size_t>(cfg.vocab_size));
}

const std::vector<float>& InferenceSession::step(int token) {
  const auto& cfg = m_.cfg_;
  if (pos_ >= cfg.ctx_len) throw ValueError("lm inference: context overflow");
  if (token < 0 || token >= cfg.vocab_size)
    throw ValueError("lm inference: token index out of range");
  const int d = cfg.dim, hs = cfg.head_dim();
  const float att_scale = 1.0f / std::sqrt(static_cast<float>(hs));

  std::vector<float> x(static_cast<size_t>(d));
  {
    const float* te = m_.tok_emb_.data().data() + static_cast<size_t>(token) * d;
    const float* pe = m_.pos_emb_.data().data() + static_cast<size_t>(pos_) * d;
    for (int i = 0; i < d; ++i) x[static_cast<size_t>(i)] = te[i] + pe[i];
  }

  std::vector<float> xn(static_cast<size_t>(d)), q(static_cast<size_t>(d));
  std::vector<float> ctx(static_cast<size_t>(d)), tmp(static_cast<size_t>(d));
  std::vector<float> scores(static_cast<size_t>(pos_) + 1);
  std::vector<float> a(static_cast<size_t>(cfg.ffn_dim)), b(static_cast<size_t>(cfg.ffn_dim));

  for (size_t li = 0; li < m_.layers_.size(); ++li) {
    const auto& l = m_.layers_[li];
    rms_norm_vec(x.data(), l.norm1.gain.data().data(), d, xn.data());
    vec_mat(xn.data(), l.wq.data().data(), d, d, q.data());
    float* krow = k_cache_[li].data() + static_cast<size_t>(pos_) * d;
    float* vrow = v_cache_[li].data() + static_cast<size_t>(pos_) * d;
    vec_mat(xn.data(), l.wk.data().data(), d, d, krow);
    vec_mat(xn.data(), l.wv.data().data(), d, d, vrow);

    for (int h = 0; h < cfg.heads; ++h) {
      const int off = h * hs;
      for (int p = 0; p <= pos_; ++p) {
        const float* kp = k_cache_[li].data() + static_cast<size_t>(p) * d + off;
        float dot = 0.0f;
        for (int j = 0; j < hs; ++j) dot += q[static_cast<size_t>(off + j)] * kp[j];
        scores[static_cast<size_t>(p)] = dot * att_scale;
      }
      float mx = scores[0];
      for (int p = 1; p <= pos_; ++p) mx = std::max(mx, scores[static_cast<size_t>(p)]);
      double denom = 0.0;
      for (int p = 0; p <= pos_; ++p) {
        scores[static_cast<size_t>(p)] = std::exp(scores[static_cast<size_t>(p)] - mx);
        denom += scores[static_cast<size_t>(p)];
      }
      const float inv = static_cast<float>(1.0 / denom);
      for (int j = 0; j < hs; ++j) ctx[static_cast<size_t>(off + j)] = 0.0f;
      for (int p = 0; p <= pos_; ++p) {
        const float wgt = scores[static_cast<size_t>(p)] * inv;
        const float* vp = v_cache_[li].data() + static_cast<size_t>(p) * d + off;
        for (int j = 0; j < hs; ++j) ctx[static_cast<size_t>(off + j)] += wgt * vp[j];
      }
    }
    vec_mat(ctx.data(), l.wo.data().data(), d, d, tmp.data());
    for (int i = 0; i < d; ++i) x[static_cast<size_t>(i)] += tmp[static_cast<size_t>(i)];

    rms_norm_vec(x.data(), l.norm2.gain.data().data(), d, xn.data());
    vec_mat(xn.data(), l.w1.data().data(), d, cfg.ffn_dim, a.data());
    vec_mat(xn.data(), l.w3.data().data(), d, cfg.ffn_dim, b.data());
    for (int i = 0; i < cfg.ffn_dim; ++i)
      a[static_cast<size_t>(i)] = a[static_cast<size_t>(i)] * sigmoid_f(a[static_cast<size_t>(i)]) *
                                  b[static_cast<size_t>(i)];
    vec_mat(a.data(), l.w2.data().data(), cfg.ffn_dim, d, tmp.data());
    for (int i = 0; i < d; ++i) x[static_cast<size_t>(i)] += tmp[static_cast<size_t>(i)];
  }

  rms_norm_vec(x.data(), m_.final_norm_.gain.data().data(), d, xn.data());
  vec_mat(xn.data(), m_.head_.data().data(), d, cfg.vocab_size, logits_.data());
  ++pos_;
  return logits_;
}

}  // namespace armp::lm
