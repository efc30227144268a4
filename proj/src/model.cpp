#include "mrdf/model.hpp"

#include "mrdf/error.hpp"
#include "mrdf/ops.hpp"

namespace mrdf {

namespace {

std::vector<TransformerBlockParams> make_blocks(ParamStore& store, const std::string& prefix, const RunConfig& cfg,
                                                Rng& rng) {
  std::vector<TransformerBlockParams> blocks;
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    blocks.push_back(
        TransformerBlockParams::create(store, prefix + ".b" + std::to_string(i), cfg.embed_dim, cfg.heads, 4, rng));
  }
  return blocks;
}

// Registers every view's name for the shared backbone weights in one group.
void alias_views(ParamStore& store, const std::string& prefix, const std::string& modality, std::size_t views) {
  std::vector<std::string> shared;
  for (const auto& n : store.names())
    if (n.rfind(prefix + ".", 0) == 0) shared.push_back(n);
  for (std::size_t v = 1; v <= views; ++v)
    for (const auto& n : shared) {
      store.alias(modality + ".view" + std::to_string(v) + n.substr(prefix.size()), n, prefix);
    }
}

}  // namespace

Model::Model(const RunConfig& cfg) : cfg_(cfg), vocab_(report_words()) {
  cfg_.validate();
  Rng rng(derive_seed(cfg_.seed, 0));
  const PatchConfig pc = cfg_.patch();
  if (cfg_.fusion != Fusion::FfaOnly) {
    cfp_embed_ = EmbeddingParams::create(store_, "cfp.embed", pc, rng);
    cfp_blocks_ = make_blocks(store_, "cfp.backbone", cfg_, rng);
    alias_views(store_, "cfp.backbone", "cfp", 1);
  }
  if (cfg_.fusion != Fusion::CfpOnly) {
    ffa_embed_ = EmbeddingParams::create(store_, "ffa.embed", pc, rng);
    ffa_blocks_ = make_blocks(store_, "ffa.backbone", cfg_, rng);
    alias_views(store_, "ffa.backbone", "ffa", cfg_.views);
    mv_ = MfswfmParams::create(store_, "mfswfm", cfg_.views, pc.tokens(), cfg_.embed_dim, cfg_.heads, cfg_.window,
                               rng);
  }
  if (cfg_.fusion == Fusion::Full) {
    cfft_ = CfftParams::create(store_, "cfft", cfg_.embed_dim, cfg_.mca_heads, cfg_.schedule, rng);
  }
  cls_ = ClassifierParams::create(store_, "classifier", cfg_.classes, cfg_.feature_dim(), rng);
  if (cfg_.task == Task::Report) {
    decoder_ = ReportDecoderParams::create(store_, "decoder", cfg_.feature_dim(), vocab_.size(), cfg_.hidden, rng);
  }
}

Tensor Model::features(const Tensor& cfp, const std::vector<Tensor>& ffa) const {
  const PatchConfig pc = cfg_.patch();
  const std::size_t side = pc.side();
  Tensor cfp_tokens, ffa_tokens;
  if (cfp_embed_) {
    std::vector<ViewTokenGrid> v{embed_view(cfp, pc, cfp_embed_->proj, cfp_embed_->pos, 1, Modality::CFP)};
    cfp_tokens = run_backbone(v, cfp_blocks_).front().tokens;
  }
  if (ffa_embed_) {
    if (ffa.size() != cfg_.views) {
      throw DimensionError("model expects " + std::to_string(cfg_.views) + " FFA views, got " +
                           std::to_string(ffa.size()));
    }
    std::vector<ViewTokenGrid> views;
    for (std::size_t v = 0; v < ffa.size(); ++v)
      views.push_back(embed_view(ffa[v], pc, ffa_embed_->proj, ffa_embed_->pos, v + 1, Modality::FFA));
    ffa_tokens = mfswfm(run_backbone(views, ffa_blocks_), *mv_);
  }
  Tensor fused;
  switch (cfg_.fusion) {
    case Fusion::Full:
      fused = cfft(ModalStream{cfp_tokens, side, Modality::CFP}, ModalStream{ffa_tokens, side, Modality::FFA}, *cfft_,
                   cfg_.schedule);
      break;
    case Fusion::CfpOnly: fused = cfp_tokens; break;
    case Fusion::FfaOnly: fused = ffa_tokens; break;
  }
  return reshape(avg_pool_tokens(fused), {1, cfg_.feature_dim()});
}

Tensor Model::class_probs(const Tensor& v_a) const { return classify(v_a, cls_); }

std::vector<std::vector<int>> Model::encode_report(const std::vector<std::vector<std::string>>& sentences) const {
  std::vector<std::vector<int>> out;
  for (const auto& s : sentences) out.push_back(vocab_.encode(s));
  return out;
}

Tensor Model::loss(const SyntheticSample& s) const {
  const Tensor v_a = features(s.cfp, s.ffa);
  return loss_from_features(v_a, class_probs(v_a), s);
}

Tensor Model::loss_from_features(const Tensor& v_a, const Tensor& probs, const SyntheticSample& s,
                                 bool include_report) const {
  if (cfg_.task == Task::ClassifySingle) return ce_loss(probs, s.label);
  std::vector<double> truth(s.multi_hot.begin(), s.multi_hot.end());
  const Tensor cls = ce_loss(probs, truth);
  if (cfg_.task == Task::ClassifyMulti || !include_report) return cls;
  const ReportLosses rl = report_losses(v_a, *decoder_, vocab_, encode_report(s.report));
  return joint_loss(cls, rl.stop, rl.word);
}

GeneratedReport Model::generate(const Tensor& v_a, Rng* sampler) const {
  if (!decoder_) throw UsageError("report generation needs task = report");
  return generate_report(v_a, *decoder_, vocab_, ReportLimits{cfg_.max_sentences, cfg_.max_words}, sampler);
}

}  // namespace mrdf
