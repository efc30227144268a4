#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mrdf/data.hpp"
#include "mrdf/embedding.hpp"

namespace mrdf {

enum class Task { ClassifySingle, ClassifyMulti, Report };
enum class Fusion { Full, CfpOnly, FfaOnly };

std::string task_name(Task t);
std::string fusion_name(Fusion f);

// Flat `key = value` run configuration. Lines starting with '#' are
// comments. Unknown keys are rejected.
struct RunConfig {
  Task task = Task::ClassifySingle;
  Fusion fusion = Fusion::Full;

  // geometry
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 1;
  std::size_t embed_dim = 32;
  std::size_t views = 4;
  std::size_t window = 2;
  std::size_t depth = 2;  // backbone blocks per modality
  std::size_t heads = 4;
  std::size_t mca_heads = 4;
  std::vector<std::size_t> schedule{8, 4, 2};
  std::size_t classes = 4;
  std::size_t hidden = 32;  // LSTM hidden size (= topic and word-embedding size)

  // optimisation
  double lr = 1e-4;
  std::size_t batch = 0;  // 0 picks 16 for classification, 8 for reports
  std::size_t epochs = 50;
  std::size_t plateau_patience = 5;
  double plateau_factor = 0.5;
  bool augment = true;

  // data
  std::uint64_t seed = 42;
  std::size_t train_samples = 512;
  std::size_t test_samples = 128;
  std::size_t marker_view = 3;
  double noise = 0.3;
  double distractor_prob = 0.5;
  std::string train_dir;  // empty: generate in memory
  std::string test_dir;

  // decoding
  std::size_t max_sentences = 10;
  std::size_t max_words = 20;

  std::size_t effective_batch() const;
  PatchConfig patch() const;
  DataConfig data() const;
  std::size_t feature_dim() const;

  // Throws ConfigError naming the violated constraint.
  void validate() const;

  void set(const std::string& key, const std::string& value);
  std::string to_text() const;
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
};

}  // namespace mrdf
