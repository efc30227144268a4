#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mrdf/metrics.hpp"
#include "mrdf/model.hpp"
#include "mrdf/params.hpp"

namespace mrdf {

enum class Split { Train, Test };

// Loads `train_dir` / `test_dir` when set, else generates the split from the
// run seed.
Dataset load_split(const RunConfig& cfg, Split split);

struct EvalReport {
  double loss = 0.0;
  ClassificationReport classification;
  std::optional<TextReport> text;
  std::size_t max_report_tokens = 0;

  std::string to_json() const;
};

EvalReport evaluate(const Model& model, const Dataset& data);

struct GeneratedItem {
  std::string candidate;
  std::string reference;
  std::size_t tokens = 0;
};
std::vector<GeneratedItem> generate_reports(const Model& model, const Dataset& data);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
  EvalReport test;

  std::string to_json() const;
};

struct TrainOptions {
  // Per-epoch evaluation on the test split.
  bool eval_each_epoch = true;
  // Called after each epoch with the JSON line.
  std::function<void(const std::string&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  double initial_loss = 0.0;  // mean train loss of the initial parameters, no augmentation
};

// Mini-batch Adam with plateau halving on the epoch train loss. Fully
// determined by the config seed.
TrainResult train(Model& model, const Dataset& train_set, const Dataset* test_set, const TrainOptions& opts = {});

// train verb: writes config.txt, metrics.jsonl, checkpoint.bin and final.json
// into `out`.
TrainResult run_training(const RunConfig& cfg, const std::filesystem::path& out,
                         std::function<void(const std::string&)> on_epoch = {});

double mean_loss(const Model& model, const Dataset& data);

}  // namespace mrdf
