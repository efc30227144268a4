#include "mrdf/embedding.hpp"

#include "mrdf/error.hpp"
#include "mrdf/ops.hpp"

namespace mrdf {

const char* modality_name(Modality m) { return m == Modality::CFP ? "cfp" : "ffa"; }

void PatchConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || channels == 0 || embed_dim == 0) {
    throw ConfigError("patch geometry values must be positive");
  }
  if (image_size % patch_size != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) + " is not divisible by patch_size " +
                      std::to_string(patch_size));
  }
}

namespace {

// Flat index into [C, H, W] for every entry of the [N, P*P*C] patch matrix.
std::vector<std::int64_t> patch_index(const PatchConfig& cfg) {
  const std::size_t P = cfg.patch_size, H = cfg.image_size, C = cfg.channels, side = cfg.side();
  std::vector<std::int64_t> idx;
  idx.reserve(cfg.tokens() * cfg.patch_dim());
  for (std::size_t gy = 0; gy < side; ++gy)
    for (std::size_t gx = 0; gx < side; ++gx)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t py = 0; py < P; ++py)
          for (std::size_t px = 0; px < P; ++px)
            idx.push_back(static_cast<std::int64_t>((c * H + gy * P + py) * H + gx * P + px));
  return idx;
}

}  // namespace

Tensor patchify(const Tensor& image, const PatchConfig& cfg) {
  cfg.validate();
  const Shape expected{cfg.channels, cfg.image_size, cfg.image_size};
  if (image.shape() != expected) {
    throw DimensionError("patchify: image " + shape_str(image.shape()) + " does not match config " +
                         shape_str(expected));
  }
  return gather(image, {cfg.tokens(), cfg.patch_dim()}, patch_index(cfg));
}

Tensor unpatchify(const Tensor& patches, const PatchConfig& cfg) {
  cfg.validate();
  if (patches.shape() != Shape{cfg.tokens(), cfg.patch_dim()}) {
    throw DimensionError("unpatchify: unexpected shape " + shape_str(patches.shape()));
  }
  const auto forward = patch_index(cfg);
  std::vector<std::int64_t> inverse(forward.size());
  for (std::size_t i = 0; i < forward.size(); ++i) inverse[static_cast<std::size_t>(forward[i])] = static_cast<std::int64_t>(i);
  return gather(patches, {cfg.channels, cfg.image_size, cfg.image_size}, std::move(inverse));
}

ViewTokenGrid embed_view(const Tensor& image, const PatchConfig& cfg, const Tensor& proj, const Tensor& pos,
                         std::size_t view_index, Modality modality) {
  if (proj.shape() != Shape{cfg.patch_dim(), cfg.embed_dim}) {
    throw DimensionError("embed_view: projection " + shape_str(proj.shape()) + " does not match patch dim " +
                         std::to_string(cfg.patch_dim()) + " and embed dim " + std::to_string(cfg.embed_dim));
  }
  if (pos.shape() != Shape{cfg.tokens(), cfg.embed_dim}) {
    throw DimensionError("embed_view: position table " + shape_str(pos.shape()) + " must be [" +
                         std::to_string(cfg.tokens()) + "," + std::to_string(cfg.embed_dim) + "]");
  }
  Tensor tokens = add(matmul(patchify(image, cfg), proj), pos);
  return ViewTokenGrid{tokens, cfg.side(), view_index, modality};
}

EmbeddingParams EmbeddingParams::create(ParamStore& store, const std::string& prefix, const PatchConfig& cfg,
                                        Rng& rng) {
  EmbeddingParams p;
  p.proj = store.add_uniform(prefix + ".proj", {cfg.patch_dim(), cfg.embed_dim}, cfg.patch_dim(), rng);
  p.pos = store.add_range(prefix + ".pos", {cfg.tokens(), cfg.embed_dim}, 0.02, rng);
  return p;
}

}  // namespace mrdf
