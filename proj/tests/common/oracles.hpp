#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace mrdf::oracle {

// Token (y, x) of an H x W grid lands at ((y - s) mod H, (x - s) mod W) after
// the cyclic roll. Two tokens may attend to each other iff they share an
// M x M window there and neither axis crosses the wrap-around seam of the roll.
inline bool shifted_window_allowed(std::size_t a, std::size_t b, std::size_t H, std::size_t W, std::size_t M,
                                   std::size_t s) {
  const std::size_t ay = (a / W + H - s) % H, ax = (a % W + W - s) % W;
  const std::size_t by = (b / W + H - s) % H, bx = (b % W + W - s) % W;
  if (ay / M != by / M || ax / M != bx / M) return false;
  const bool a_wrap_y = s > 0 && ay >= H - s, b_wrap_y = s > 0 && by >= H - s;
  const bool a_wrap_x = s > 0 && ax >= W - s, b_wrap_x = s > 0 && bx >= W - s;
  return a_wrap_y == b_wrap_y && a_wrap_x == b_wrap_x;
}

// Brute-force global multi-head attention over all T = H*W tokens with the
// -1e9 additive mask; weights are right-multiplied [D, D] row-major.
inline std::vector<double> masked_global_attention(const std::vector<double>& x, const std::vector<double>& wq,
                                                   const std::vector<double>& wk, const std::vector<double>& wv,
                                                   const std::vector<double>& wo, std::size_t D, std::size_t heads,
                                                   std::size_t H, std::size_t W, std::size_t M, std::size_t s) {
  const std::size_t T = H * W, dh = D / heads;
  auto project = [&](const std::vector<double>& w) {
    std::vector<double> out(T * D, 0.0);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < D; ++j) {
        long double acc = 0.0L;
        for (std::size_t i = 0; i < D; ++i) acc += static_cast<long double>(x[t * D + i]) * w[i * D + j];
        out[t * D + j] = static_cast<double>(acc);
      }
    return out;
  };
  const auto q = project(wq), k = project(wk), v = project(wv);
  const long double scale = 1.0L / std::sqrt(static_cast<long double>(dh));
  std::vector<double> ctx(T * D, 0.0);
  std::vector<long double> logits(T);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t a = 0; a < T; ++a) {
      long double mx = -INFINITY;
      for (std::size_t b = 0; b < T; ++b) {
        long double dot = 0.0L;
        for (std::size_t c = 0; c < dh; ++c)
          dot += static_cast<long double>(q[a * D + h * dh + c]) * k[b * D + h * dh + c];
        logits[b] = dot * scale + (shifted_window_allowed(a, b, H, W, M, s) ? 0.0L : -1e9L);
        mx = std::max(mx, logits[b]);
      }
      long double z = 0.0L;
      for (auto& l : logits) z += (l = std::exp(l - mx));
      for (std::size_t c = 0; c < dh; ++c) {
        long double acc = 0.0L;
        for (std::size_t b = 0; b < T; ++b) acc += logits[b] / z * v[b * D + h * dh + c];
        ctx[a * D + h * dh + c] = static_cast<double>(acc);
      }
    }
  std::vector<double> out(T * D, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < D; ++j) {
      long double acc = 0.0L;
      for (std::size_t i = 0; i < D; ++i) acc += static_cast<long double>(ctx[t * D + i]) * wo[i * D + j];
      out[t * D + j] = static_cast<double>(acc);
    }
  return out;
}

}  // namespace mrdf::oracle
