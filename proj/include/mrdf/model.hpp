#pragma once

#include <optional>
#include <vector>

#include "mrdf/backbone.hpp"
#include "mrdf/config.hpp"
#include "mrdf/data.hpp"
#include "mrdf/decoder.hpp"
#include "mrdf/mm_fusion.hpp"
#include "mrdf/mv_fusion.hpp"

namespace mrdf {

// The full network for one RunConfig: per-modality embeddings and shared
// backbones, multi-view fusion of the FFA views, cross-modal fusion, and the
// classification / report heads. Single-modality fusion settings build only
// the branch they use.
class Model {
 public:
  explicit Model(const RunConfig& cfg);

  const RunConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const Vocabulary& vocab() const { return vocab_; }

  // v_a: [1, D_f]
  Tensor features(const Tensor& cfp, const std::vector<Tensor>& ffa) const;
  Tensor class_probs(const Tensor& v_a) const;
  // Task loss for one sample; the report task uses the joint loss.
  Tensor loss(const SyntheticSample& s) const;
  Tensor loss_from_features(const Tensor& v_a, const Tensor& probs, const SyntheticSample& s,
                            bool include_report = true) const;
  GeneratedReport generate(const Tensor& v_a, Rng* sampler = nullptr) const;

  std::vector<std::vector<int>> encode_report(const std::vector<std::vector<std::string>>& sentences) const;

 private:
  RunConfig cfg_;
  ParamStore store_;
  Vocabulary vocab_;
  std::optional<EmbeddingParams> cfp_embed_, ffa_embed_;
  std::vector<TransformerBlockParams> cfp_blocks_, ffa_blocks_;
  std::optional<MfswfmParams> mv_;
  std::optional<CfftParams> cfft_;
  ClassifierParams cls_;
  std::optional<ReportDecoderParams> decoder_;
};

}  // namespace mrdf
