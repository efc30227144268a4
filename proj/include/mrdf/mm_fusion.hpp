#pragma once

#include <string>
#include <vector>

#include "mrdf/backbone.hpp"
#include "mrdf/embedding.hpp"
#include "mrdf/ops.hpp"

namespace mrdf {

struct ModalStream {
  Tensor tokens;  // [N, D]
  std::size_t side = 0;
  Modality modality = Modality::CFP;
};

enum class Branch { Large, Small };

struct ConvLayer {
  Tensor weight;  // [O, C, kh, kw]
  Tensor bias;    // [O]
  Conv2dOptions opts;
};

// One branch of a multi-scale window map: a stack of 2x2 stride-2 convs (or a
// single 1x1 conv when the branch keeps full resolution), GELU in between.
struct MswmBranch {
  std::vector<ConvLayer> convs;
  std::size_t rate = 2;
  Branch branch = Branch::Large;

  std::size_t downsample() const;
  std::size_t receptive_field() const { return downsample(); }

  static MswmBranch create(ParamStore& store, const std::string& prefix, std::size_t rate, Branch branch,
                           std::size_t dim, Rng& rng);
};

// Number of 2x2 stride-2 convs for a branch; 0 means a single 1x1 conv.
// r=8: 3/2, r=4: 2/1, r=2: 1/0. Throws ConfigError unless r is 8, 4 or 2.
std::size_t mswm_conv_count(std::size_t rate, Branch branch);

// Tokens -> side x side grid (zero padded bottom/right to a multiple of the
// branch downsample factor) -> conv stack -> tokens [N', D].
Tensor mswm(const ModalStream& y, const MswmBranch& branch);
std::size_t mswm_output_side(std::size_t side, const MswmBranch& branch);

// Local residual conv: 1x3 then 3x1 convs (shape preserving), weights shared
// by the heads of one branch.
struct LrclParams {
  Tensor w_row, b_row;  // [dh, dh, 1, 3]
  Tensor w_col, b_col;  // [dh, dh, 3, 1]

  static LrclParams create(ParamStore& store, const std::string& prefix, std::size_t head_dim, Rng& rng);
};

// values: [N', heads*dh] on a side' x side' grid; returns values + LRCL(values).
Tensor lrcl_residual(const Tensor& values, std::size_t side, std::size_t heads, const LrclParams& p);

struct McaParams {
  Tensor wq;                  // [D, D]; head i uses columns [i*dh, (i+1)*dh)
  Tensor wk_large, wv_large;  // [D, D/2]; heads [0, h/2)
  Tensor wk_small, wv_small;  // [D, D/2]; heads [h/2, h)
  Tensor wo;                  // [D, D]
  MswmBranch large, small;
  LrclParams lrcl_large, lrcl_small;
  std::size_t heads = 2;
  std::size_t rate = 8;

  static McaParams create(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t heads,
                          std::size_t rate, Rng& rng);
};

// Instrumentation for one mca() call.
struct McaTrace {
  std::vector<Branch> head_branch;
  // Identity of the MSWM output each head's keys/values were projected from.
  std::vector<const void*> head_source;
  const void* large_source = nullptr;
  const void* small_source = nullptr;
  std::vector<Tensor> attention;  // per head [N, N']
};

// Cross-attention: queries from x, keys/values from multi-scale maps of y.
// Logits are scaled by 1/sqrt(D).
Tensor mca(const ModalStream& x, const ModalStream& y, const McaParams& p, McaTrace* trace = nullptr);

struct MmcamDirection {
  Tensor ln_q_gamma, ln_q_beta;
  Tensor ln_kv_gamma, ln_kv_beta;
  McaParams mca;
  Tensor ln_ffn_gamma, ln_ffn_beta;
  FeedForwardParams ffn;

  static MmcamDirection create(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t heads,
                               std::size_t rate, Rng& rng);
};

struct MmcamParams {
  MmcamDirection x_from_y;
  MmcamDirection y_from_x;
  std::size_t rate = 8;

  static MmcamParams create(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t heads,
                            std::size_t rate, Rng& rng);
};

// Both directions read the stage inputs:
//   x' = x + MCA(LN(x), LN(y)); x' += FFN(LN(x'))   (and symmetrically for y)
std::pair<ModalStream, ModalStream> mmcam(const ModalStream& x, const ModalStream& y, const MmcamParams& p);

struct CfftParams {
  std::vector<MmcamParams> stages;

  static CfftParams create(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t heads,
                           const std::vector<std::size_t>& schedule, Rng& rng);
};

// Chained stages, then feature concatenation: [N, 2D]. `schedule` must match
// the stage rates exactly.
Tensor cfft(const ModalStream& cfp, const ModalStream& ffa, const CfftParams& p,
            const std::vector<std::size_t>& schedule = {8, 4, 2});

}  // namespace mrdf
