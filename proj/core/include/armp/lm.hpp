#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "armp/nn.hpp"
#include "armp/optim.hpp"
#include "armp/rng.hpp"
#include "armp/tensor.hpp"

namespace armp::lm {

struct LmConfig {
  int vocab_size = 256;   // == codebook size
  int ctx_len = 704;      // 64 tokens x 11 phases of headroom
  int layers = 4;
  int heads = 4;
  int dim = 128;
  int ffn_dim = 512;      // 4 * dim

  int head_dim() const { return dim / heads; }
  void validate() const;
};

/// Per-layer attention probabilities captured for tests: trace[layer][head]
/// is an [N,N] row-major matrix, plus the raw q/k/v activations.
struct ForwardTrace {
  std::vector<std::vector<std::vector<float>>> attn;  // [layer][head][N*N]
  std::vector<std::vector<float>> q, k, v;            // [layer][N*dim]
};

struct DecodeOptions {
  bool greedy = true;      // argmax, lowest index wins ties
  float temperature = 1.0f;
  int top_k = 0;           // 0 = unrestricted
  uint64_t seed = 0;
};

/// Decoder-only transformer: learned absolute positions, pre-RMSNorm blocks,
/// causal attention, gated (SwiGLU) feed-forward, untied output head.
class CausalLm {
 public:
  CausalLm(LmConfig cfg, uint64_t seed);

  const LmConfig& config() const { return cfg_; }

  /// Full-sequence logits [N, V]; position i sees tokens 0..i only.
  Tensor forward(std::span<const int> tokens, ForwardTrace* trace = nullptr) const;

  /// Teacher-forced next-token loss: mean CE of logits[i] vs tokens[i+1]
  /// over positions where loss_mask[i+1] is set (empty mask = all).
  Tensor loss(std::span<const int> tokens, std::span<const uint8_t> loss_mask = {}) const;

  /// Autoregressive generation with a per-call KV cache; each new token is
  /// appended to the context before the next step.
  std::vector<int> generate(std::span<const int> prefix, int n_new,
                            const DecodeOptions& opts = {}) const;

  /// One Adam step on a batch of token sequences (gradient accumulation,
  /// mean loss). Aborts with NumericError on NaN loss.
  float train_step(const std::vector<std::vector<int>>& batch, Adam& optimizer) const;

  nn::ParamList named_parameters() const;

 private:
  struct Layer {
    Tensor wq, wk, wv, wo;    // [d, d]
    Tensor w1, w2, w3;        // [d, ffn], [ffn, d], [d, ffn]
    nn::RmsNorm norm1, norm2;
  };

  LmConfig cfg_;
  Tensor tok_emb_;   // [V, d]
  Tensor pos_emb_;   // [ctx, d]
  std::vector<Layer> layers_;
  nn::RmsNorm final_norm_;
  Tensor head_;      // [d, V]

  friend struct InferenceSession;
};

/// Incremental evaluator used by generate(); separate from the taped forward
/// so rollouts stay O(tokens * context) without autodiff overhead.
struct InferenceSession {
  explicit InferenceSession(const CausalLm& model);

  /// Feeds one token at the next position; returns logits [V].
  const std::vector<float>& step(int token);
  int position() const { return pos_; }

 private:
  const CausalLm& m_;
  int pos_ = 0;
  std::vector<std::vector<float>> k_cache_, v_cache_;  // [layer][ctx*dim]
  std::vector<float> logits_;
};

}  // namespace armp::lm
