#include "mrdf/backbone.hpp"

#include <cmath>
#include <numeric>

#include "mrdf/error.hpp"
#include "mrdf/ops.hpp"

namespace mrdf {

TransformerBlockParams TransformerBlockParams::create(ParamStore& store, const std::string& prefix, std::size_t dim,
                                                      std::size_t heads, std::size_t ffn_ratio, Rng& rng) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("embed dim " + std::to_string(dim) + " is not divisible by head count " + std::to_string(heads));
  }
  TransformerBlockParams p;
  p.heads = heads;
  p.ln1_gamma = store.add_constant(prefix + ".ln1.gamma", {dim}, 1.0);
  p.ln1_beta = store.add_constant(prefix + ".ln1.beta", {dim}, 0.0);
  p.attn.wq = store.add_uniform(prefix + ".attn.wq", {dim, dim}, dim, rng);
  p.attn.wk = store.add_uniform(prefix + ".attn.wk", {dim, dim}, dim, rng);
  p.attn.wv = store.add_uniform(prefix + ".attn.wv", {dim, dim}, dim, rng);
  p.attn.wo = store.add_uniform(prefix + ".attn.wo", {dim, dim}, dim, rng);
  p.ln2_gamma = store.add_constant(prefix + ".ln2.gamma", {dim}, 1.0);
  p.ln2_beta = store.add_constant(prefix + ".ln2.beta", {dim}, 0.0);
  p.ffn = FeedForwardParams::create(store, prefix + ".ffn", dim, ffn_ratio, rng);
  return p;
}

FeedForwardParams FeedForwardParams::create(ParamStore& store, const std::string& prefix, std::size_t dim,
                                            std::size_t ffn_ratio, Rng& rng) {
  const std::size_t hidden = dim * ffn_ratio;
  FeedForwardParams p;
  p.w1 = store.add_uniform(prefix + ".w1", {dim, hidden}, dim, rng);
  p.b1 = store.add_constant(prefix + ".b1", {hidden}, 0.0);
  p.w2 = store.add_uniform(prefix + ".w2", {hidden, dim}, hidden, rng);
  p.b2 = store.add_constant(prefix + ".b2", {dim}, 0.0);
  return p;
}

WindowLayout WindowLayout::global(std::size_t n_tokens) {
  WindowLayout w;
  w.tokens.resize(n_tokens);
  std::iota(w.tokens.begin(), w.tokens.end(), 0);
  w.window_len = n_tokens;
  return w;
}

Tensor windowed_attention(const Tensor& x, const AttentionWeights& w, std::size_t heads, const WindowLayout& layout,
                          const Tensor& mask, double logit_scale, AttentionCounter* counter) {
  if (x.ndim() != 2) throw DimensionError("attention input must be [T, D], got " + shape_str(x.shape()));
  const std::size_t T = x.dim(0), D = x.dim(1);
  if (heads == 0 || D % heads != 0) {
    throw DimensionError("attention: dim " + std::to_string(D) + " not divisible by " + std::to_string(heads) + " heads");
  }
  if (layout.window_len == 0 || layout.tokens.size() != T || T % layout.window_len != 0) {
    throw DimensionError("attention: window layout does not cover " + std::to_string(T) + " tokens");
  }
  const std::size_t L = layout.window_len, nW = layout.count(), dh = D / heads;
  if (mask.defined() && mask.shape() != Shape{nW, L, L}) {
    throw DimensionError("attention: mask " + shape_str(mask.shape()) + " does not match windows");
  }

  const Tensor q = matmul(x, w.wq);
  const Tensor k = matmul(x, w.wk);
  const Tensor v = matmul(x, w.wv);

  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    std::vector<std::int64_t> idx(nW * L * dh);
    for (std::size_t i = 0; i < nW * L; ++i)
      for (std::size_t j = 0; j < dh; ++j)
        idx[i * dh + j] = layout.tokens[i] * static_cast<std::int64_t>(D) + static_cast<std::int64_t>(h * dh + j);
    const Tensor qh = gather(q, {nW, L, dh}, idx);
    const Tensor kh = gather(k, {nW, L, dh}, idx);
    const Tensor vh = gather(v, {nW, L, dh}, std::move(idx));
    Tensor logits = scale(matmul_bt(qh, kh), logit_scale);
    if (mask.defined()) logits = add(logits, mask);
    head_out.push_back(matmul(softmax(logits, -1), vh));
    if (counter) {
      counter->score_mults += nW * L * L * dh;
      counter->value_mults += nW * L * L * dh;
    }
  }
  // [nW, L, D] in window order -> [T, D] in token order.
  const Tensor merged = concat(head_out, -1);
  std::vector<std::int64_t> back(T * D);
  for (std::size_t i = 0; i < T; ++i) {
    const auto t = static_cast<std::size_t>(layout.tokens[i]);
    for (std::size_t c = 0; c < D; ++c) back[t * D + c] = static_cast<std::int64_t>(i * D + c);
  }
  return matmul(gather(merged, {T, D}, std::move(back)), w.wo);
}

Tensor msa(const Tensor& x, const AttentionWeights& w, std::size_t heads) {
  const std::size_t D = x.dim(-1);
  return windowed_attention(x, w, heads, WindowLayout::global(x.dim(0)), Tensor(),
                            1.0 / std::sqrt(static_cast<double>(D / heads)));
}

Tensor feed_forward(const Tensor& x, const FeedForwardParams& p) {
  return add(matmul(gelu(add(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

Tensor transformer_block(const Tensor& x, const TransformerBlockParams& p) {
  const Tensor h = add(x, msa(layer_norm(x, p.ln1_gamma, p.ln1_beta), p.attn, p.heads));
  return add(h, feed_forward(layer_norm(h, p.ln2_gamma, p.ln2_beta), p.ffn));
}

std::vector<ViewTokenGrid> run_backbone(const std::vector<ViewTokenGrid>& views,
                                        const std::vector<TransformerBlockParams>& blocks) {
  std::vector<ViewTokenGrid> out;
  out.reserve(views.size());
  for (const auto& view : views) {
    if (view.modality != views.front().modality) {
      throw UsageError("run_backbone: views of different modalities in one call");
    }
    ViewTokenGrid g = view;
    for (const auto& block : blocks) g.tokens = transformer_block(g.tokens, block);
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace mrdf
