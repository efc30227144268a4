#include "mrdf/mm_fusion.hpp"

#include <cmath>

#include "mrdf/error.hpp"
#include "mrdf/ops.hpp"

namespace mrdf {

std::size_t mswm_conv_count(std::size_t rate, Branch branch) {
  std::size_t large = 0;
  switch (rate) {
    case 8: large = 3; break;
    case 4: large = 2; break;
    case 2: large = 1; break;
    default: throw ConfigError("receptive-field rate must be 8, 4 or 2, got " + std::to_string(rate));
  }
  return branch == Branch::Large ? large : large - 1;
}

std::size_t MswmBranch::downsample() const {
  return std::size_t{1} << mswm_conv_count(rate, branch);
}

MswmBranch MswmBranch::create(ParamStore& store, const std::string& prefix, std::size_t rate, Branch branch,
                              std::size_t dim, Rng& rng) {
  MswmBranch b;
  b.rate = rate;
  b.branch = branch;
  const std::size_t n = mswm_conv_count(rate, branch);
  if (n == 0) {
    ConvLayer c;
    c.weight = store.add_uniform(prefix + ".conv0.w", {dim, dim, 1, 1}, dim, rng);
    c.bias = store.add_constant(prefix + ".conv0.b", {dim}, 0.0);
    b.convs.push_back(std::move(c));
  }
  for (std::size_t i = 0; i < n; ++i) {
    ConvLayer c;
    const std::string name = prefix + ".conv" + std::to_string(i);
    c.weight = store.add_uniform(name + ".w", {dim, dim, 2, 2}, dim * 4, rng);
    c.bias = store.add_constant(name + ".b", {dim}, 0.0);
    c.opts.stride = {2, 2};
    b.convs.push_back(std::move(c));
  }
  return b;
}

std::size_t mswm_output_side(std::size_t side, const MswmBranch& branch) {
  const std::size_t ds = branch.downsample();
  return (side + ds - 1) / ds;
}

namespace {

// [N, C] tokens on a side x side grid -> [B=1, C, padded, padded].
Tensor tokens_to_image(const Tensor& tokens, std::size_t side, std::size_t padded) {
  const std::size_t C = tokens.dim(1);
  std::vector<std::int64_t> idx(C * padded * padded, -1);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x)
        idx[(c * padded + y) * padded + x] = static_cast<std::int64_t>((y * side + x) * C + c);
  return gather(tokens, {1, C, padded, padded}, std::move(idx));
}

// [1, C, s, s] -> [s*s, C]
Tensor image_to_tokens(const Tensor& image) {
  const std::size_t C = image.dim(1), s = image.dim(2);
  std::vector<std::int64_t> idx(s * s * C);
  for (std::size_t p = 0; p < s * s; ++p)
    for (std::size_t c = 0; c < C; ++c) idx[p * C + c] = static_cast<std::int64_t>(c * s * s + p);
  return gather(image, {s * s, C}, std::move(idx));
}

void check_stream(const ModalStream& s, const char* what) {
  if (s.tokens.ndim() != 2 || s.side * s.side != s.tokens.dim(0)) {
    throw DimensionError(std::string(what) + ": stream of shape " + shape_str(s.tokens.shape()) +
                         " is not a square grid of side " + std::to_string(s.side));
  }
}

}  // namespace

Tensor mswm(const ModalStream& y, const MswmBranch& branch) {
  check_stream(y, "mswm");
  const std::size_t ds = branch.downsample();
  const std::size_t padded = mswm_output_side(y.side, branch) * ds;
  Tensor img = tokens_to_image(y.tokens, y.side, padded);
  for (std::size_t i = 0; i < branch.convs.size(); ++i) {
    if (i > 0) img = gelu(img);
    img = conv2d(img, branch.convs[i].weight, branch.convs[i].bias, branch.convs[i].opts);
  }
  return image_to_tokens(img);
}

LrclParams LrclParams::create(ParamStore& store, const std::string& prefix, std::size_t head_dim, Rng& rng) {
  LrclParams p;
  p.w_row = store.add_uniform(prefix + ".row.w", {head_dim, head_dim, 1, 3}, head_dim * 3, rng);
  p.b_row = store.add_constant(prefix + ".row.b", {head_dim}, 0.0);
  p.w_col = store.add_uniform(prefix + ".col.w", {head_dim, head_dim, 3, 1}, head_dim * 3, rng);
  p.b_col = store.add_constant(prefix + ".col.b", {head_dim}, 0.0);
  return p;
}

Tensor lrcl_residual(const Tensor& values, std::size_t side, std::size_t heads, const LrclParams& p) {
  const std::size_t n = values.dim(0), width = values.dim(1), dh = width / heads;
  if (side * side != n || dh * heads != width || p.w_row.dim(0) != dh) {
    throw DimensionError("lrcl: values " + shape_str(values.shape()) + " incompatible with " + std::to_string(heads) +
                         " heads on a " + std::to_string(side) + "-grid");
  }
  // Heads become the conv batch: [heads, dh, side, side].
  std::vector<std::int64_t> to_img(width * n);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t c = 0; c < dh; ++c)
      for (std::size_t t = 0; t < n; ++t)
        to_img[(h * dh + c) * n + t] = static_cast<std::int64_t>(t * width + h * dh + c);
  Tensor img = gather(values, {heads, dh, side, side}, std::move(to_img));
  img = conv2d(img, p.w_row, p.b_row, Conv2dOptions{{1, 1}, {0, 1}});
  img = conv2d(img, p.w_col, p.b_col, Conv2dOptions{{1, 1}, {1, 0}});
  std::vector<std::int64_t> back(n * width);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t c = 0; c < dh; ++c)
        back[t * width + h * dh + c] = static_cast<std::int64_t>((h * dh + c) * n + t);
  return add(values, gather(img, {n, width}, std::move(back)));
}

McaParams McaParams::create(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t heads,
                            std::size_t rate, Rng& rng) {
  if (heads == 0 || heads % 2 != 0) throw ConfigError("MCA head count must be even, got " + std::to_string(heads));
  if (dim % heads != 0) {
    throw ConfigError("embed dim " + std::to_string(dim) + " is not divisible by MCA head count " + std::to_string(heads));
  }
  const std::size_t half = dim / 2, dh = dim / heads;
  McaParams p;
  p.heads = heads;
  p.rate = rate;
  p.wq = store.add_uniform(prefix + ".wq", {dim, dim}, dim, rng);
  p.large = MswmBranch::create(store, prefix + ".mswm_large", rate, Branch::Large, dim, rng);
  p.small = MswmBranch::create(store, prefix + ".mswm_small", rate, Branch::Small, dim, rng);
  p.wk_large = store.add_uniform(prefix + ".wk_large", {dim, half}, dim, rng);
  p.wv_large = store.add_uniform(prefix + ".wv_large", {dim, half}, dim, rng);
  p.wk_small = store.add_uniform(prefix + ".wk_small", {dim, half}, dim, rng);
  p.wv_small = store.add_uniform(prefix + ".wv_small", {dim, half}, dim, rng);
  p.lrcl_large = LrclParams::create(store, prefix + ".lrcl_large", dh, rng);
  p.lrcl_small = LrclParams::create(store, prefix + ".lrcl_small", dh, rng);
  p.wo = store.add_uniform(prefix + ".wo", {dim, dim}, dim, rng);
  return p;
}

Tensor mca(const ModalStream& x, const ModalStream& y, const McaParams& p, McaTrace* trace) {
  check_stream(x, "mca query");
  check_stream(y, "mca key/value");
  const std::size_t h = p.heads;
  if (h == 0 || h % 2 != 0) throw ConfigError("MCA head count must be even, got " + std::to_string(h));
  const std::size_t D = x.tokens.dim(1);
  if (y.tokens.dim(1) != D || p.wq.shape() != Shape{D, D}) {
    throw DimensionError("mca: feature dims differ: query " + shape_str(x.tokens.shape()) + ", key/value " +
                         shape_str(y.tokens.shape()));
  }
  const std::size_t dh = D / h, half_heads = h / 2;
  const double logit_scale = 1.0 / std::sqrt(static_cast<double>(D));

  const Tensor q = matmul(x.tokens, p.wq);

  struct BranchKV {
    Tensor source, k, v;
  };
  auto branch_kv = [&](const MswmBranch& b, const Tensor& wk, const Tensor& wv, const LrclParams& lrcl) {
    BranchKV kv;
    kv.source = mswm(y, b);
    kv.k = matmul(kv.source, wk);
    kv.v = matmul(kv.source, wv);
    kv.v = lrcl_residual(kv.v, mswm_output_side(y.side, b), half_heads, lrcl);
    return kv;
  };
  const BranchKV large = branch_kv(p.large, p.wk_large, p.wv_large, p.lrcl_large);
  const BranchKV small = branch_kv(p.small, p.wk_small, p.wv_small, p.lrcl_small);
  if (trace) {
    *trace = McaTrace{};
    trace->large_source = large.source.node().get();
    trace->small_source = small.source.node().get();
  }

  std::vector<Tensor> heads_out;
  heads_out.reserve(h);
  for (std::size_t i = 0; i < h; ++i) {
    const bool is_large = i < half_heads;
    const BranchKV& kv = is_large ? large : small;
    const std::size_t j = is_large ? i : i - half_heads;
    const Tensor qi = slice_last(q, i * dh, (i + 1) * dh);
    const Tensor ki = slice_last(kv.k, j * dh, (j + 1) * dh);
    const Tensor vi = slice_last(kv.v, j * dh, (j + 1) * dh);
    const Tensor attn = softmax(scale(matmul_bt(qi, ki), logit_scale), -1);
    heads_out.push_back(matmul(attn, vi));
    if (trace) {
      trace->head_branch.push_back(is_large ? Branch::Large : Branch::Small);
      trace->head_source.push_back(kv.source.node().get());
      trace->attention.push_back(attn);
    }
  }
  return matmul(concat(heads_out, -1), p.wo);
}

MmcamDirection MmcamDirection::create(ParamStore& store, const std::string& prefix, std::size_t dim,
                                      std::size_t heads, std::size_t rate, Rng& rng) {
  MmcamDirection d;
  d.ln_q_gamma = store.add_constant(prefix + ".ln_q.gamma", {dim}, 1.0);
  d.ln_q_beta = store.add_constant(prefix + ".ln_q.beta", {dim}, 0.0);
  d.ln_kv_gamma = store.add_constant(prefix + ".ln_kv.gamma", {dim}, 1.0);
  d.ln_kv_beta = store.add_constant(prefix + ".ln_kv.beta", {dim}, 0.0);
  d.mca = McaParams::create(store, prefix + ".mca", dim, heads, rate, rng);
  d.ln_ffn_gamma = store.add_constant(prefix + ".ln_ffn.gamma", {dim}, 1.0);
  d.ln_ffn_beta = store.add_constant(prefix + ".ln_ffn.beta", {dim}, 0.0);
  d.ffn = FeedForwardParams::create(store, prefix + ".ffn", dim, 4, rng);
  return d;
}

MmcamParams MmcamParams::create(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t heads,
                                std::size_t rate, Rng& rng) {
  MmcamParams p;
  p.rate = rate;
  p.x_from_y = MmcamDirection::create(store, prefix + ".x", dim, heads, rate, rng);
  p.y_from_x = MmcamDirection::create(store, prefix + ".y", dim, heads, rate, rng);
  return p;
}

namespace {

ModalStream mmcam_direction(const ModalStream& query, const ModalStream& context, const MmcamDirection& d) {
  const ModalStream q{layer_norm(query.tokens, d.ln_q_gamma, d.ln_q_beta), query.side, query.modality};
  const ModalStream kv{layer_norm(context.tokens, d.ln_kv_gamma, d.ln_kv_beta), context.side, context.modality};
  const Tensor h = add(query.tokens, mca(q, kv, d.mca));
  const Tensor out = add(h, feed_forward(layer_norm(h, d.ln_ffn_gamma, d.ln_ffn_beta), d.ffn));
  return ModalStream{out, query.side, query.modality};
}

}  // namespace

std::pair<ModalStream, ModalStream> mmcam(const ModalStream& x, const ModalStream& y, const MmcamParams& p) {
  return {mmcam_direction(x, y, p.x_from_y), mmcam_direction(y, x, p.y_from_x)};
}

CfftParams CfftParams::create(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t heads,
                              const std::vector<std::size_t>& schedule, Rng& rng) {
  CfftParams p;
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    p.stages.push_back(MmcamParams::create(store, prefix + ".stage" + std::to_string(i), dim, heads, schedule[i], rng));
  }
  return p;
}

Tensor cfft(const ModalStream& cfp, const ModalStream& ffa, const CfftParams& p,
            const std::vector<std::size_t>& schedule) {
  if (cfp.tokens.shape() != ffa.tokens.shape() || cfp.side != ffa.side) {
    throw DimensionError("cfft: modal streams differ: " + shape_str(cfp.tokens.shape()) + " vs " +
                         shape_str(ffa.tokens.shape()));
  }
  if (p.stages.size() != schedule.size()) throw ConfigError("cfft: stage count does not match the rate schedule");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (p.stages[i].rate != schedule[i]) {
      throw ConfigError("cfft: stage " + std::to_string(i) + " has rate " + std::to_string(p.stages[i].rate) +
                        ", schedule expects " + std::to_string(schedule[i]));
    }
  }
  ModalStream x = cfp, y = ffa;
  for (const auto& stage : p.stages) std::tie(x, y) = mmcam(x, y, stage);
  return concat({x.tokens, y.tokens}, -1);
}

}  // namespace mrdf
