#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrdf/backbone.hpp"
#include "mrdf/embedding.hpp"

namespace mrdf {

// Views laid side by side along the width: [side, V*side, D].
struct MultiViewGrid {
  Tensor grid;
  std::size_t side = 0;
  std::size_t views = 0;

  std::size_t width() const { return views * side; }
  // Row-major flattening of the wide grid: [side * V*side, D].
  Tensor tokens() const;
};

struct WindowConfig {
  std::size_t window = 2;  // M, window side in tokens
  std::size_t shift = 0;   // 0 for W-MSA, M/2 for SW-MSA

  static WindowConfig regular(std::size_t m) { return {m, 0}; }
  static WindowConfig shifted(std::size_t m) { return {m, m / 2}; }
};

// Throws ConfigError unless side and V*side are multiples of M and the shift
// is 0 or M/2.
void validate_windows(std::size_t side, std::size_t views, const WindowConfig& cfg);

MultiViewGrid concat_views(const std::vector<ViewTokenGrid>& views, const Tensor& mvpos);

// Non-overlapping M x M tiles in row-major tile order, each [M*M, D].
std::vector<Tensor> window_partition(const MultiViewGrid& grid, const WindowConfig& cfg);
MultiViewGrid window_merge(const std::vector<Tensor>& windows, std::size_t side, std::size_t views,
                           const WindowConfig& cfg);

// Token ids (row-major over the wide grid) of each window after a cyclic
// shift by (-shift, -shift).
WindowLayout shifted_window_layout(std::size_t side, std::size_t views, const WindowConfig& cfg);
// Additive [n_windows, M*M, M*M] mask separating tokens that were not
// contiguous before the cyclic roll; undefined for shift 0. View seams are not
// masked, so shifted windows mix neighbouring views.
Tensor shifted_window_mask(std::size_t side, std::size_t views, const WindowConfig& cfg);

inline constexpr double kMaskedLogit = -1e9;

MultiViewGrid shifted_window_attention(const MultiViewGrid& grid, const WindowConfig& cfg, const AttentionWeights& w,
                                       std::size_t heads, AttentionCounter* counter = nullptr);

// x + (S)W-MSA(LN(x)), then + FFN(LN(.)).
MultiViewGrid window_block(const MultiViewGrid& grid, const WindowConfig& cfg, const TransformerBlockParams& p,
                           AttentionCounter* counter = nullptr);

struct MfswfmParams {
  Tensor mvpos;  // [V*N, D]
  TransformerBlockParams regular;
  TransformerBlockParams shifted;
  std::size_t window = 2;

  static MfswfmParams create(ParamStore& store, const std::string& prefix, std::size_t views, std::size_t tokens,
                             std::size_t dim, std::size_t heads, std::size_t window, Rng& rng);
};

// Split the wide grid back into views and average them: [N, D].
Tensor average_views(const MultiViewGrid& grid);

// concat -> W-MSA block -> SW-MSA block -> mean over views.
Tensor mfswfm(const std::vector<ViewTokenGrid>& views, const MfswfmParams& p, AttentionCounter* counter = nullptr);

struct FlopReport {
  std::uint64_t msa_flops = 0;
  std::uint64_t wmsa_flops = 0;
  std::uint64_t views = 0, tokens = 0, dim = 0, window = 0;

  std::string to_json() const;
};

// Attention cost with softmax omitted:
//   MSA   = 4(VN)D^2 + 2(VN)^2 D
//   W-MSA = 4(VN)D^2 + 2 M^2 (VN) D
FlopReport flop_count(std::uint64_t views, std::uint64_t tokens, std::uint64_t dim, std::uint64_t window);

}  // namespace mrdf
