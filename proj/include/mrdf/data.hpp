#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mrdf/rng.hpp"
#include "mrdf/tensor.hpp"

namespace mrdf {

enum class LabelMode { Single, Multi };

// Planted lesion shapes. Every shape is symmetric under the dihedral group
// of the square, so flips and quarter turns leave labels intact.
enum class LesionKind : std::uint8_t { Plus = 0, Cross = 1, Ring = 2, Diamond = 3 };
inline constexpr std::size_t kLesionKinds = 4;

enum class Region : std::uint8_t { Central = 0, Peripheral = 1 };

struct DataConfig {
  std::size_t image_size = 32;
  std::size_t cell = 8;  // marker cell edge; equals the patch size
  std::size_t channels = 1;
  std::size_t views = 4;  // FFA views
  std::size_t classes = 4;
  LabelMode mode = LabelMode::Single;
  std::size_t marker_view = 3;  // 1-based FFA view carrying the ring
  double noise = 0.3;
  double distractor_prob = 0.5;
  bool erase_ffa_markers = false;

  std::size_t grid() const { return image_size / cell; }
  void validate() const;
};

struct Lesion {
  LesionKind kind = LesionKind::Plus;
  bool present = false;
  std::size_t view = 0;  // 0 = CFP, v = FFA view v (1-based)
  std::size_t cy = 0, cx = 0;
  Region region = Region::Central;
};

struct Distractor {
  std::size_t view = 0;
  std::size_t cy = 0, cx = 0;
};

// Everything the label and report depend on, drawn before rendering.
struct SampleParams {
  std::vector<Lesion> lesions;
  std::vector<Distractor> distractors;
};

struct SyntheticSample {
  Tensor cfp;               // [C, H, W]
  std::vector<Tensor> ffa;  // V x [C, H, W]
  std::size_t label = 0;    // single-label class id
  std::vector<std::uint8_t> multi_hot;
  std::vector<std::vector<std::string>> report;  // sentences, each ending in "."
  SampleParams params;
};

struct Dataset {
  DataConfig cfg;
  std::uint64_t seed = 0;
  std::vector<SyntheticSample> samples;
};

// Single mode: K must be 4; class = 2a + b where a is a plus in the CFP image
// and b is a ring in FFA view `marker_view`. Multi mode: lesion k of the
// first K kinds is present with probability 1/2.
SampleParams draw_params(const DataConfig& cfg, Rng& rng);
SyntheticSample render_sample(const SampleParams& params, const DataConfig& cfg, Rng& noise_rng);
std::size_t single_label(const SampleParams& params);
std::vector<std::uint8_t> multi_hot(const SampleParams& params, std::size_t classes);
std::vector<std::vector<std::string>> report_for(const SampleParams& params);

Dataset generate_dataset(std::uint64_t seed, std::size_t n_samples, const DataConfig& cfg);

// Fixed report vocabulary, reserved tokens excluded.
const std::vector<std::string>& report_words();
const char* lesion_name(LesionKind kind);

// Horizontal flip with probability 1/2, then a random quarter turn with
// probability 1/2; the same transform is applied to every image.
SyntheticSample augment(const SyntheticSample& s, Rng& rng);
Tensor flip_horizontal(const Tensor& image);
Tensor rotate90(const Tensor& image, std::size_t quarter_turns);

void save_dataset(const Dataset& d, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// FNV-1a over the serialized sample bytes.
std::uint64_t dataset_digest(const Dataset& d);

std::string label_mode_name(LabelMode m);
LabelMode parse_label_mode(const std::string& s);

}  // namespace mrdf
