#pragma once

#include <string>

#include "mrdf/params.hpp"
#include "mrdf/tensor.hpp"

namespace mrdf {

enum class Modality { CFP, FFA };

const char* modality_name(Modality m);

struct PatchConfig {
  std::size_t image_size = 32;  // H = W
  std::size_t patch_size = 8;
  std::size_t channels = 1;
  std::size_t embed_dim = 32;

  std::size_t side() const { return image_size / patch_size; }
  std::size_t tokens() const { return side() * side(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  // Throws ConfigError if H is not divisible by P.
  void validate() const;
};

// Per-view token embeddings laid out row-major over a side x side grid.
struct ViewTokenGrid {
  Tensor tokens;  // [N, D]
  std::size_t side = 0;
  std::size_t view_index = 1;  // 1-based
  Modality modality = Modality::CFP;
};

// [C, H, W] -> [N, P*P*C]. Patches are ordered row-major over the grid; each
// row flattens one patch channel-major, then row, then column.
Tensor patchify(const Tensor& image, const PatchConfig& cfg);
// Inverse of patchify.
Tensor unpatchify(const Tensor& patches, const PatchConfig& cfg);

// tokens = patchify(image) * proj + pos
ViewTokenGrid embed_view(const Tensor& image, const PatchConfig& cfg, const Tensor& proj, const Tensor& pos,
                         std::size_t view_index = 1, Modality modality = Modality::CFP);

// Patch projection and per-view position table for one modality. The
// position table is shared by every view of the modality.
struct EmbeddingParams {
  Tensor proj;  // [P*P*C, D]
  Tensor pos;   // [N, D]

  static EmbeddingParams create(ParamStore& store, const std::string& prefix, const PatchConfig& cfg, Rng& rng);
};

}  // namespace mrdf
