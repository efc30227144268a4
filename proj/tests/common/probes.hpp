#pragma once

#include <set>
#include <utility>

#include "mrdf/mm_fusion.hpp"
#include "mrdf/ops.hpp"

namespace mrdf::probe {

// Input grid cells (y, x) whose tokens receive a nonzero gradient from output
// token `out` of the branch.
inline std::set<std::pair<std::size_t, std::size_t>> mswm_footprint(const MswmBranch& branch, std::size_t side,
                                                                    std::size_t dim, std::size_t out, Rng& rng) {
  std::vector<double> v(side * side * dim);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  const Tensor tokens = Tensor::from({side * side, dim}, std::move(v), true);
  const Tensor y = mswm(ModalStream{tokens, side, Modality::FFA}, branch);
  std::vector<double> w(y.numel(), 0.0);
  for (std::size_t c = 0; c < dim; ++c) w[out * dim + c] = rng.uniform(0.5, 1.5);
  sum(mul(y, Tensor::from(y.shape(), std::move(w)))).backward();
  std::set<std::pair<std::size_t, std::size_t>> cells;
  for (std::size_t t = 0; t < side * side; ++t)
    for (std::size_t c = 0; c < dim; ++c)
      if (tokens.grad()[t * dim + c] != 0.0) {
        cells.insert({t / side, t % side});
        break;
      }
  return cells;
}

// The stride-aligned square [oy*rf, oy*rf + rf) x [ox*rf, ox*rf + rf).
inline std::set<std::pair<std::size_t, std::size_t>> aligned_square(std::size_t oy, std::size_t ox, std::size_t rf) {
  std::set<std::pair<std::size_t, std::size_t>> cells;
  for (std::size_t y = oy * rf; y < (oy + 1) * rf; ++y)
    for (std::size_t x = ox * rf; x < (ox + 1) * rf; ++x) cells.insert({y, x});
  return cells;
}

}  // namespace mrdf::probe
