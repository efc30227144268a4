#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrdf/embedding.hpp"
#include "mrdf/params.hpp"
#include "mrdf/tensor.hpp"

namespace mrdf {

struct AttentionWeights {
  Tensor wq, wk, wv, wo;  // each [D, D], right-multiplied
};

struct FeedForwardParams {
  Tensor w1, b1;  // [D, D_ff], [D_ff]
  Tensor w2, b2;  // [D_ff, D], [D]

  static FeedForwardParams create(ParamStore& store, const std::string& prefix, std::size_t dim,
                                  std::size_t ffn_ratio, Rng& rng);
};

struct TransformerBlockParams {
  Tensor ln1_gamma, ln1_beta;
  AttentionWeights attn;
  Tensor ln2_gamma, ln2_beta;
  FeedForwardParams ffn;
  std::size_t heads = 1;

  std::size_t dim() const { return ln1_gamma.numel(); }

  static TransformerBlockParams create(ParamStore& store, const std::string& prefix, std::size_t dim,
                                       std::size_t heads, std::size_t ffn_ratio, Rng& rng);
};

// Multiply counts of the two attention matmuls (scores and weighted sum).
struct AttentionCounter {
  std::uint64_t score_mults = 0;
  std::uint64_t value_mults = 0;
};

// Tokens of x [T, D] grouped into equally sized windows. `windows` lists the
// token ids of each window back to back and must cover every token exactly
// once. `mask`, when defined, is added to the logits: [n_windows, L, L].
struct WindowLayout {
  std::vector<std::int64_t> tokens;
  std::size_t window_len = 0;

  std::size_t count() const { return window_len ? tokens.size() / window_len : 0; }
  static WindowLayout global(std::size_t n_tokens);
};

Tensor windowed_attention(const Tensor& x, const AttentionWeights& w, std::size_t heads, const WindowLayout& layout,
                          const Tensor& mask, double logit_scale, AttentionCounter* counter = nullptr);

// Global multi-head self-attention with scale 1/sqrt(D/heads).
Tensor msa(const Tensor& x, const AttentionWeights& w, std::size_t heads);

// affine -> GELU -> affine
Tensor feed_forward(const Tensor& x, const FeedForwardParams& p);

// Pre-norm block: x + MSA(LN(x)), then + FFN(LN(.)).
Tensor transformer_block(const Tensor& x, const TransformerBlockParams& p);

// Applies the same block stack to every view independently.
std::vector<ViewTokenGrid> run_backbone(const std::vector<ViewTokenGrid>& views,
                                        const std::vector<TransformerBlockParams>& blocks);

}  // namespace mrdf
