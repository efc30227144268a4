#include "mrdf/mv_fusion.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

#include "mrdf/error.hpp"
#include "mrdf/ops.hpp"

namespace mrdf {

Tensor MultiViewGrid::tokens() const { return reshape(grid, {side * width(), grid.dim(-1)}); }

void validate_windows(std::size_t side, std::size_t views, const WindowConfig& cfg) {
  if (cfg.window == 0 || side % cfg.window != 0 || (views * side) % cfg.window != 0) {
    throw ConfigError("grid " + std::to_string(side) + "x" + std::to_string(views * side) +
                      " is not divisible by window size M=" + std::to_string(cfg.window));
  }
  if (cfg.shift != 0 && cfg.shift != cfg.window / 2) {
    throw ConfigError("window shift must be 0 or M/2=" + std::to_string(cfg.window / 2) + ", got " +
                      std::to_string(cfg.shift));
  }
}

MultiViewGrid concat_views(const std::vector<ViewTokenGrid>& views, const Tensor& mvpos) {
  if (views.empty()) throw UsageError("concat_views: no views");
  const std::size_t side = views.front().side, D = views.front().tokens.dim(-1), N = side * side, V = views.size();
  std::vector<Tensor> parts;
  for (const auto& v : views) {
    if (v.side != side || v.tokens.shape() != Shape{N, D}) {
      throw DimensionError("concat_views: inconsistent view grids");
    }
    parts.push_back(v.tokens);
  }
  if (mvpos.shape() != Shape{V * N, D}) {
    throw DimensionError("concat_views: multi-view position table " + shape_str(mvpos.shape()) + " must be [" +
                         std::to_string(V * N) + "," + std::to_string(D) + "]");
  }
  const Tensor stacked = add(concat(parts, 0), mvpos);  // [V*N, D], view-major
  const std::size_t width = V * side;
  std::vector<std::int64_t> idx(side * width * D);
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t v = x / side, xx = x % side;
      const std::size_t src = v * N + y * side + xx;
      for (std::size_t c = 0; c < D; ++c)
        idx[(y * width + x) * D + c] = static_cast<std::int64_t>(src * D + c);
    }
  return MultiViewGrid{gather(stacked, {side, width, D}, std::move(idx)), side, V};
}

WindowLayout shifted_window_layout(std::size_t side, std::size_t views, const WindowConfig& cfg) {
  validate_windows(side, views, cfg);
  const std::size_t H = side, W = views * side, M = cfg.window, s = cfg.shift;
  WindowLayout layout;
  layout.window_len = M * M;
  layout.tokens.reserve(H * W);
  for (std::size_t wr = 0; wr < H / M; ++wr)
    for (std::size_t wc = 0; wc < W / M; ++wc)
      for (std::size_t a = 0; a < M; ++a)
        for (std::size_t b = 0; b < M; ++b) {
          // shifted[y][x] = original[(y + s) % H][(x + s) % W]
          const std::size_t oy = (wr * M + a + s) % H, ox = (wc * M + b + s) % W;
          layout.tokens.push_back(static_cast<std::int64_t>(oy * W + ox));
        }
  return layout;
}

Tensor shifted_window_mask(std::size_t side, std::size_t views, const WindowConfig& cfg) {
  validate_windows(side, views, cfg);
  if (cfg.shift == 0) return Tensor();
  const std::size_t H = side, W = views * side, M = cfg.window, s = cfg.shift, L = M * M;
  // Region ids in shifted coordinates: [0, n-M), [n-M, n-s), [n-s, n).
  auto region = [M, s](std::size_t pos, std::size_t n) -> std::size_t {
    if (pos < n - M) return 0;
    return pos < n - s ? 1 : 2;
  };
  const std::size_t nW = (H / M) * (W / M);
  std::vector<double> mask(nW * L * L, 0.0);
  std::vector<std::size_t> ids(L);
  std::size_t w = 0;
  for (std::size_t wr = 0; wr < H / M; ++wr)
    for (std::size_t wc = 0; wc < W / M; ++wc, ++w) {
      for (std::size_t a = 0; a < M; ++a)
        for (std::size_t b = 0; b < M; ++b) ids[a * M + b] = region(wr * M + a, H) * 3 + region(wc * M + b, W);
      for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j)
          if (ids[i] != ids[j]) mask[(w * L + i) * L + j] = kMaskedLogit;
    }
  return Tensor::from({nW, L, L}, std::move(mask));
}

std::vector<Tensor> window_partition(const MultiViewGrid& grid, const WindowConfig& cfg) {
  const WindowLayout layout = shifted_window_layout(grid.side, grid.views, WindowConfig{cfg.window, 0});
  const std::size_t D = grid.grid.dim(-1), L = layout.window_len;
  std::vector<Tensor> out;
  for (std::size_t w = 0; w < layout.count(); ++w) {
    std::vector<std::int64_t> idx(L * D);
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t c = 0; c < D; ++c)
        idx[i * D + c] = layout.tokens[w * L + i] * static_cast<std::int64_t>(D) + static_cast<std::int64_t>(c);
    out.push_back(gather(grid.grid, {L, D}, std::move(idx)));
  }
  return out;
}

MultiViewGrid window_merge(const std::vector<Tensor>& windows, std::size_t side, std::size_t views,
                           const WindowConfig& cfg) {
  const WindowLayout layout = shifted_window_layout(side, views, WindowConfig{cfg.window, 0});
  if (windows.size() != layout.count()) throw DimensionError("window_merge: wrong window count");
  const std::size_t D = windows.front().dim(-1), T = layout.tokens.size();
  const Tensor stacked = concat(windows, 0);  // [nW*L, D]
  std::vector<std::int64_t> idx(T * D);
  for (std::size_t i = 0; i < T; ++i) {
    const auto t = static_cast<std::size_t>(layout.tokens[i]);
    for (std::size_t c = 0; c < D; ++c) idx[t * D + c] = static_cast<std::int64_t>(i * D + c);
  }
  return MultiViewGrid{gather(stacked, {side, views * side, D}, std::move(idx)), side, views};
}

MultiViewGrid shifted_window_attention(const MultiViewGrid& grid, const WindowConfig& cfg, const AttentionWeights& w,
                                       std::size_t heads, AttentionCounter* counter) {
  const WindowLayout layout = shifted_window_layout(grid.side, grid.views, cfg);
  const Tensor mask = shifted_window_mask(grid.side, grid.views, cfg);
  const std::size_t D = grid.grid.dim(-1);
  const Tensor out = windowed_attention(grid.tokens(), w, heads, layout, mask,
                                        1.0 / std::sqrt(static_cast<double>(D / heads)), counter);
  return MultiViewGrid{reshape(out, grid.grid.shape()), grid.side, grid.views};
}

MultiViewGrid window_block(const MultiViewGrid& grid, const WindowConfig& cfg, const TransformerBlockParams& p,
                           AttentionCounter* counter) {
  const MultiViewGrid normed{layer_norm(grid.grid, p.ln1_gamma, p.ln1_beta), grid.side, grid.views};
  const Tensor h = add(grid.grid, shifted_window_attention(normed, cfg, p.attn, p.heads, counter).grid);
  const Tensor out = add(h, feed_forward(layer_norm(h, p.ln2_gamma, p.ln2_beta), p.ffn));
  return MultiViewGrid{out, grid.side, grid.views};
}

MfswfmParams MfswfmParams::create(ParamStore& store, const std::string& prefix, std::size_t views, std::size_t tokens,
                                  std::size_t dim, std::size_t heads, std::size_t window, Rng& rng) {
  MfswfmParams p;
  p.window = window;
  p.mvpos = store.add_range(prefix + ".mvpos", {views * tokens, dim}, 0.02, rng);
  p.regular = TransformerBlockParams::create(store, prefix + ".wmsa", dim, heads, 4, rng);
  p.shifted = TransformerBlockParams::create(store, prefix + ".swmsa", dim, heads, 4, rng);
  return p;
}

Tensor average_views(const MultiViewGrid& grid) {
  const std::size_t side = grid.side, V = grid.views, D = grid.grid.dim(-1), N = side * side, width = V * side;
  Tensor total;
  for (std::size_t v = 0; v < V; ++v) {
    std::vector<std::int64_t> idx(N * D);
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x)
        for (std::size_t c = 0; c < D; ++c)
          idx[(y * side + x) * D + c] = static_cast<std::int64_t>((y * width + v * side + x) * D + c);
    const Tensor view = gather(grid.grid, {N, D}, std::move(idx));
    total = total.defined() ? add(total, view) : view;
  }
  return V == 1 ? total : scale(total, 1.0 / static_cast<double>(V));
}

Tensor mfswfm(const std::vector<ViewTokenGrid>& views, const MfswfmParams& p, AttentionCounter* counter) {
  MultiViewGrid grid = concat_views(views, p.mvpos);
  validate_windows(grid.side, grid.views, WindowConfig::regular(p.window));
  grid = window_block(grid, WindowConfig::regular(p.window), p.regular, counter);
  grid = window_block(grid, WindowConfig::shifted(p.window), p.shifted, counter);
  return average_views(grid);
}

std::string FlopReport::to_json() const {
  nlohmann::ordered_json j;
  j["V"] = views;
  j["N"] = tokens;
  j["D"] = dim;
  j["M"] = window;
  j["msa_flops"] = msa_flops;
  j["wmsa_flops"] = wmsa_flops;
  return j.dump();
}

FlopReport flop_count(std::uint64_t views, std::uint64_t tokens, std::uint64_t dim, std::uint64_t window) {
  if (views == 0 || tokens == 0 || dim == 0 || window == 0) throw ConfigError("flop_count: arguments must be positive");
  const std::uint64_t vn = views * tokens;
  FlopReport r;
  r.views = views;
  r.tokens = tokens;
  r.dim = dim;
  r.window = window;
  r.msa_flops = 4 * vn * dim * dim + 2 * vn * vn * dim;
  r.wmsa_flops = 4 * vn * dim * dim + 2 * window * window * vn * dim;
  return r;
}

}  // namespace mrdf
