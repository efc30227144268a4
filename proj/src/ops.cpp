#include "mrdf/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "mrdf/error.hpp"

namespace mrdf {

namespace {

using detail::Node;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

// Gradient buffer of parent `i`, or nullptr if it does not need one.
double* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  return p.grad_buffer().data();
}

const std::vector<double>& parent_value(Node& self, std::size_t i) { return self.parents[i]->value; }

bool is_suffix(const Shape& full, const Shape& suffix) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

void check_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (!is_suffix(a.shape(), b.shape())) {
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) + " onto " +
                         shape_str(a.shape()));
  }
}

template <typename F>
Tensor unary(const Tensor& x, F&& f, std::function<void(Node&)> bw) {
  std::vector<double> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return detail::make_result(x.shape(), std::move(out), {x}, std::move(bw));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b, "add");
  const std::size_t nb = b.numel();
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i % nb];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [nb](Node& self) {
    const auto& g = self.grad;
    if (double* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (double* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  check_broadcast(a, b, "mul");
  const std::size_t nb = b.numel();
  std::vector<double> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i % nb];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [nb](Node& self) {
    const auto& g = self.grad;
    const auto& av = parent_value(self, 0);
    const auto& bv = parent_value(self, 1);
    if (double* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i % nb];
    }
    if (double* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(x, [factor](double v) { return v * factor; }, [factor](Node& self) {
    if (double* gx = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += factor * self.grad[i];
    }
  });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(x, [value](double v) { return v + value; }, [](Node& self) {
    if (double* gx = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    }
  });
}

namespace {

struct MatmulDims {
  std::size_t batch = 1;  // 1 when b is shared
  std::size_t m = 0, k = 0, n = 0;
  bool b_shared = false;
  Shape out_shape;
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b, bool b_transposed, const char* op) {
  auto fail = [&]() {
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  };
  if (a.ndim() < 2 || b.ndim() < 2) fail();
  MatmulDims d;
  d.m = a.dim(-2);
  d.k = a.dim(-1);
  const std::size_t bk = b_transposed ? b.dim(-1) : b.dim(-2);
  d.n = b_transposed ? b.dim(-2) : b.dim(-1);
  if (bk != d.k) fail();
  Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  if (b_batch.empty()) {
    d.b_shared = true;
    // Fold the batch into rows: one large GEMM.
    d.m *= shape_numel(a_batch);
    d.batch = 1;
  } else {
    if (a_batch != b_batch) fail();
    d.batch = shape_numel(a_batch);
  }
  d.out_shape = a_batch;
  d.out_shape.push_back(a.dim(-2));
  d.out_shape.push_back(d.n);
  return d;
}

Tensor matmul_impl(const Tensor& a, const Tensor& b, bool bt) {
  const MatmulDims d = matmul_dims(a, b, bt, bt ? "matmul_bt" : "matmul");
  std::vector<double> out(d.batch * d.m * d.n, 0.0);
  const std::size_t sa = d.m * d.k, sb = d.k * d.n, so = d.m * d.n;
  for (std::size_t p = 0; p < d.batch; ++p) {
    MapC A(a.data().data() + p * sa, d.m, d.k);
    Map C(out.data() + p * so, d.m, d.n);
    if (bt) {
      MapC B(b.data().data() + p * sb, d.n, d.k);
      C.noalias() = A * B.transpose();
    } else {
      MapC B(b.data().data() + p * sb, d.k, d.n);
      C.noalias() = A * B;
    }
  }
  return detail::make_result(d.out_shape, std::move(out), {a, b}, [d, bt, sa, sb, so](Node& self) {
    const auto& av = parent_value(self, 0);
    const auto& bv = parent_value(self, 1);
    double* ga = parent_grad(self, 0);
    double* gb = parent_grad(self, 1);
    for (std::size_t p = 0; p < d.batch; ++p) {
      MapC G(self.grad.data() + p * so, d.m, d.n);
      if (bt) {
        MapC B(bv.data() + p * sb, d.n, d.k);
        if (ga) Map(ga + p * sa, d.m, d.k).noalias() += G * B;
        if (gb) Map(gb + p * sb, d.n, d.k).noalias() += G.transpose() * MapC(av.data() + p * sa, d.m, d.k);
      } else {
        MapC B(bv.data() + p * sb, d.k, d.n);
        if (ga) Map(ga + p * sa, d.m, d.k).noalias() += G * B.transpose();
        if (gb) Map(gb + p * sb, d.k, d.n).noalias() += MapC(av.data() + p * sa, d.m, d.k).transpose() * G;
      }
    }
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) { return matmul_impl(a, b, false); }
Tensor matmul_bt(const Tensor& a, const Tensor& b) { return matmul_impl(a, b, true); }

Tensor transpose(const Tensor& x) {
  if (x.ndim() < 2) throw DimensionError("transpose needs at least 2 dims, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(-2), c = x.dim(-1), batch = x.numel() / (r * c);
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  std::vector<std::int64_t> idx(x.numel());
  for (std::size_t p = 0; p < batch; ++p)
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < r; ++j)
        idx[p * r * c + i * r + j] = static_cast<std::int64_t>(p * r * c + j * c + i);
  return gather(x, std::move(out_shape), std::move(idx));
}

Tensor softmax(const Tensor& x, int axis) {
  const auto nd = static_cast<int>(x.ndim());
  const int ax = axis < 0 ? axis + nd : axis;
  if (ax < 0 || ax >= nd) throw DimensionError("softmax axis out of range for " + shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  const std::size_t len = x.shape()[static_cast<std::size_t>(ax)];
  for (int i = 0; i < ax; ++i) outer *= x.shape()[static_cast<std::size_t>(i)];
  for (int i = ax + 1; i < nd; ++i) inner *= x.shape()[static_cast<std::size_t>(i)];

  auto in = x.data();
  for (double v : in) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
  }
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t q = 0; q < inner; ++q) {
      const std::size_t base = o * len * inner + q;
      double mx = in[base];
      for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, in[base + i * inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        const double e = std::exp(in[base + i * inner] - mx);
        out[base + i * inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < len; ++i) out[base + i * inner] /= total;
    }
  }
  return detail::make_result(x.shape(), std::move(out), {x}, [outer, inner, len](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& g = self.grad;
    const auto& y = self.value;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t q = 0; q < inner; ++q) {
        const std::size_t base = o * len * inner + q;
        double dot = 0.0;
        for (std::size_t i = 0; i < len; ++i) dot += g[base + i * inner] * y[base + i * inner];
        for (std::size_t i = 0; i < len; ++i) {
          const std::size_t k = base + i * inner;
          gx[k] += y[k] * (g[k] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.dim(-1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: affine params must be [" + std::to_string(d) + "], got " +
                         shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
  }
  const std::size_t rows = x.numel() / d;
  auto in = x.data();
  auto gm = gamma.data();
  auto bt = beta.data();
  std::vector<double> out(x.numel()), xhat(x.numel()), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      const std::size_t k = r * d + i;
      xhat[k] = (row[i] - mu) * rstd[r];
      out[k] = xhat[k] * gm[i] + bt[i];
    }
  }
  return detail::make_result(x.shape(), std::move(out), {x, gamma, beta},
                             [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
    const auto& g = self.grad;
    const auto& gm = parent_value(self, 1);
    double* gx = parent_grad(self, 0);
    double* gg = parent_grad(self, 1);
    double* gb = parent_grad(self, 2);
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t r = 0; r < rows; ++r) {
      double mean_dx = 0.0, mean_dx_xhat = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const std::size_t k = r * d + i;
        const double dxhat = g[k] * gm[i];
        mean_dx += dxhat;
        mean_dx_xhat += dxhat * xhat[k];
        if (gg) gg[i] += g[k] * xhat[k];
        if (gb) gb[i] += g[k];
      }
      if (!gx) continue;
      mean_dx *= inv_d;
      mean_dx_xhat *= inv_d;
      for (std::size_t i = 0; i < d; ++i) {
        const std::size_t k = r * d + i;
        gx[k] += rstd[r] * (g[k] * gm[i] - mean_dx - xhat[k] * mean_dx_xhat);
      }
    }
  });
}

Tensor gelu(const Tensor& x) {
  return unary(x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); }, [](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& xv = parent_value(self, 0);
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double v = xv[i];
      const double d = 0.5 * (1.0 + std::erf(v * M_SQRT1_2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      gx[i] += self.grad[i] * d;
    }
  });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      const double y = self.value[i];
      gx[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      const double y = self.value[i];
      gx[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw NumericError("log: non-positive input");
  }
  return unary(x, [](double v) { return std::log(v); }, [](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& xv = parent_value(self, 0);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += self.grad[i] / xv[i];
  });
}

Tensor clamp_min(const Tensor& x, double floor) {
  return unary(x, [floor](double v) { return std::max(v, floor); }, [floor](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& xv = parent_value(self, 0);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] >= floor) gx[i] += self.grad[i];
    }
  });
}

std::pair<std::size_t, std::size_t> conv2d_output_extent(std::size_t h, std::size_t w, std::size_t kh,
                                                         std::size_t kw, Conv2dOptions opts) {
  const auto [sh, sw] = opts.stride;
  const auto [ph, pw] = opts.padding;
  if (sh == 0 || sw == 0) throw ConfigError("conv2d: stride must be positive");
  if (h + 2 * ph < kh || w + 2 * pw < kw) {
    throw ConfigError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                      " larger than padded input " + std::to_string(h + 2 * ph) + "x" +
                      std::to_string(w + 2 * pw));
  }
  return {(h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1};
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dOptions opts) {
  if (x.ndim() != 4 || w.ndim() != 4 || x.dim(1) != w.dim(1)) {
    throw DimensionError("conv2d: incompatible input " + shape_str(x.shape()) + " and kernel " +
                         shape_str(w.shape()));
  }
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (bias.defined() && bias.shape() != Shape{O}) {
    throw DimensionError("conv2d: bias must be [" + std::to_string(O) + "], got " + shape_str(bias.shape()));
  }
  const auto [Ho, Wo] = conv2d_output_extent(H, W, kh, kw, opts);
  const auto [sh, sw] = opts.stride;
  const auto [ph, pw] = opts.padding;
  const std::size_t K = C * kh * kw, P = Ho * Wo;

  // im2col index table shared by forward and backward: -1 marks padding.
  std::vector<std::int64_t> col_index(K * P);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t u = 0; u < kh; ++u)
      for (std::size_t v = 0; v < kw; ++v) {
        const std::size_t row = (c * kh + u) * kw + v;
        for (std::size_t oy = 0; oy < Ho; ++oy)
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const auto iy = static_cast<std::int64_t>(oy * sh + u) - static_cast<std::int64_t>(ph);
            const auto ix = static_cast<std::int64_t>(ox * sw + v) - static_cast<std::int64_t>(pw);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::int64_t>(H) &&
                                ix < static_cast<std::int64_t>(W);
            col_index[row * P + oy * Wo + ox] =
                inside ? static_cast<std::int64_t>(c * H * W) + iy * static_cast<std::int64_t>(W) + ix : -1;
          }
      }

  auto xd = x.data();
  std::vector<double> out(B * O * P);
  std::vector<double> col(K * P);
  MapC Wm(w.data().data(), O, K);
  for (std::size_t b = 0; b < B; ++b) {
    const double* xb = xd.data() + b * C * H * W;
    for (std::size_t i = 0; i < K * P; ++i) col[i] = col_index[i] >= 0 ? xb[col_index[i]] : 0.0;
    Map Out(out.data() + b * O * P, O, P);
    Out.noalias() = Wm * MapC(col.data(), K, P);
    if (bias.defined()) {
      for (std::size_t o = 0; o < O; ++o) Out.row(o).array() += bias.data()[o];
    }
  }
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return detail::make_result(
      {B, O, Ho, Wo}, std::move(out), std::move(inputs),
      [B, C, H, W, O, K, P, col_index = std::move(col_index)](Node& self) {
        const auto& xv = parent_value(self, 0);
        const auto& wv = parent_value(self, 1);
        double* gx = parent_grad(self, 0);
        double* gw = parent_grad(self, 1);
        double* gbias = self.parents.size() > 2 ? parent_grad(self, 2) : nullptr;
        std::vector<double> col(K * P), dcol(K * P);
        MapC Wm(wv.data(), O, K);
        for (std::size_t b = 0; b < B; ++b) {
          MapC G(self.grad.data() + b * O * P, O, P);
          if (gbias) {
            for (std::size_t o = 0; o < O; ++o) gbias[o] += G.row(o).sum();
          }
          if (gw) {
            const double* xb = xv.data() + b * C * H * W;
            for (std::size_t i = 0; i < K * P; ++i) col[i] = col_index[i] >= 0 ? xb[col_index[i]] : 0.0;
            Map(gw, O, K).noalias() += G * MapC(col.data(), K, P).transpose();
          }
          if (gx) {
            Map(dcol.data(), K, P).noalias() = Wm.transpose() * G;
            double* gxb = gx + b * C * H * W;
            for (std::size_t i = 0; i < K * P; ++i) {
              if (col_index[i] >= 0) gxb[col_index[i]] += dcol[i];
            }
          }
        }
      });
}

Tensor gather(const Tensor& x, Shape out_shape, std::vector<std::int64_t> index) {
  if (shape_numel(out_shape) != index.size()) {
    throw DimensionError("gather: index count " + std::to_string(index.size()) + " does not fill " +
                         shape_str(out_shape));
  }
  const auto n = static_cast<std::int64_t>(x.numel());
  auto xd = x.data();
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto j = index[i];
    if (j >= n) throw DimensionError("gather: index out of range for " + shape_str(x.shape()));
    out[i] = j >= 0 ? xd[static_cast<std::size_t>(j)] : 0.0;
  }
  return detail::make_result(std::move(out_shape), std::move(out), {x}, [index = std::move(index)](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] >= 0) gx[index[i]] += self.grad[i];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return detail::make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.ndim() < 1 || begin >= end || end > x.dim(0)) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                         shape_str(x.shape()));
  }
  const std::size_t row = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = end - begin;
  std::vector<std::int64_t> idx((end - begin) * row);
  std::iota(idx.begin(), idx.end(), static_cast<std::int64_t>(begin * row));
  return gather(x, std::move(shape), std::move(idx));
}

Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t end) {
  const std::size_t c = x.dim(-1);
  if (begin >= end || end > c) {
    throw DimensionError("slice_last: [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / c, w = end - begin;
  Shape shape = x.shape();
  shape.back() = w;
  std::vector<std::int64_t> idx(rows * w);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < w; ++j) idx[r * w + j] = static_cast<std::int64_t>(r * c + begin + j);
  return gather(x, std::move(shape), std::move(idx));
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw UsageError("concat: no inputs");
  const auto nd = static_cast<int>(parts[0].ndim());
  const int ax = axis < 0 ? axis + nd : axis;
  if (ax < 0 || ax >= nd) throw DimensionError("concat: axis out of range");
  Shape out_shape = parts[0].shape();
  out_shape[static_cast<std::size_t>(ax)] = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = parts[0].shape();
    if (a.size() != b.size()) throw DimensionError("concat: rank mismatch");
    a[static_cast<std::size_t>(ax)] = b[static_cast<std::size_t>(ax)] = 0;
    if (a != b) throw DimensionError("concat: " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
    out_shape[static_cast<std::size_t>(ax)] += p.dim(ax);
  }
  std::size_t outer = 1;
  for (int i = 0; i < ax; ++i) outer *= out_shape[static_cast<std::size_t>(i)];
  std::vector<std::size_t> chunk(parts.size());
  std::size_t out_chunk = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    chunk[k] = parts[k].numel() / outer;
    out_chunk += chunk[k];
  }
  std::vector<double> out(outer * out_chunk);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pd = parts[k].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pd.data() + o * chunk[k], chunk[k], out.data() + o * out_chunk + offset);
    offset += chunk[k];
  }
  return detail::make_result(std::move(out_shape), std::move(out), parts, [outer, chunk, out_chunk](Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < chunk.size(); ++k) {
      if (double* gp = parent_grad(self, k)) {
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < chunk[k]; ++i) gp[o * chunk[k] + i] += self.grad[o * out_chunk + offset + i];
      }
      offset += chunk[k];
    }
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return detail::make_result({1}, {total}, {x}, [](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    const std::size_t n = self.parents[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean_rows(const Tensor& x) {
  if (x.ndim() < 2) throw DimensionError("mean_rows needs at least 2 dims, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), row = x.numel() / n;
  Shape shape(x.shape().begin() + 1, x.shape().end());
  std::vector<double> out(row, 0.0);
  auto xd = x.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < row; ++i) out[i] += xd[r * row + i];
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& v : out) v *= inv;
  return detail::make_result(std::move(shape), std::move(out), {x}, [n, row, inv](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t i = 0; i < row; ++i) gx[r * row + i] += self.grad[i] * inv;
  });
}

}  // namespace mrdf
