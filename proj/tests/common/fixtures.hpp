#pragma once

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "mrdf/metrics.hpp"

namespace mrdf::fixture {

struct Outcome {
  std::string name;
  double got = 0.0;
  double expected = 0.0;
  bool pass() const { return std::abs(got - expected) <= 1e-9; }
};

inline nlohmann::json load(const std::string& file) {
  std::ifstream in(std::string(MRDF_FIXTURE_DIR) + "/" + file);
  return nlohmann::json::parse(in);
}

// Evaluates every text-metric fixture in metrics.json.
inline std::vector<Outcome> text_outcomes() {
  std::vector<Outcome> out;
  const auto doc = load("metrics.json");
  for (const auto& c : doc.at("text")) {
    std::vector<Tokens> cands;
    std::vector<std::vector<Tokens>> refs;
    for (const auto& s : c.at("candidates")) cands.push_back(split_tokens(s.get<std::string>()));
    for (const auto& set : c.at("references")) {
      refs.emplace_back();
      for (const auto& s : set) refs.back().push_back(split_tokens(s.get<std::string>()));
    }
    const std::string metric = c.at("metric");
    double got = 0.0;
    if (metric == "bleu") got = bleu(cands, refs, c.at("n").get<int>());
    else if (metric == "rouge_l") got = rouge_l(cands, refs);
    else if (metric == "cider") got = cider(cands, refs);
    out.push_back({c.at("name"), got, c.at("expected").get<double>()});
  }
  return out;
}

inline std::vector<Outcome> classification_outcomes() {
  std::vector<Outcome> out;
  const auto doc = load("metrics.json");
  for (const auto& c : doc.at("classification")) {
    const std::size_t K = c.at("classes");
    ClassificationReport r;
    if (c.at("mode") == "single") {
      r = classification_metrics(c.at("preds").get<std::vector<std::size_t>>(),
                                 c.at("truths").get<std::vector<std::size_t>>(), K);
    } else {
      r = classification_metrics(c.at("preds").get<std::vector<std::vector<std::uint8_t>>>(),
                                 c.at("truths").get<std::vector<std::vector<std::uint8_t>>>(), K);
    }
    const auto& e = c.at("expected");
    const std::string n = c.at("name");
    const std::pair<const char*, double> scalars[] = {{"acc", r.acc},
                                                      {"precision", r.precision},
                                                      {"recall", r.recall},
                                                      {"f1", r.f1},
                                                      {"macro_precision", r.macro_precision},
                                                      {"macro_recall", r.macro_recall},
                                                      {"macro_f1", r.macro_f1}};
    for (const auto& [key, got] : scalars) out.push_back({n + "." + key, got, e.at(key).get<double>()});
    for (std::size_t k = 0; k < K; ++k) {
      const std::string idx = "[" + std::to_string(k) + "]";
      out.push_back({n + ".precision" + idx, r.per_class.at(k).precision, e.at("per_class_precision").at(k)});
      out.push_back({n + ".recall" + idx, r.per_class.at(k).recall, e.at("per_class_recall").at(k)});
      out.push_back({n + ".f1" + idx, r.per_class.at(k).f1, e.at("per_class_f1").at(k)});
    }
  }
  return out;
}

}  // namespace mrdf::fixture
