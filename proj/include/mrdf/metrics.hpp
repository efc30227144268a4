#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace mrdf {

using Tokens = std::vector<std::string>;

Tokens split_tokens(const std::string& text);

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

// Zero-division convention: an undefined precision, recall or F1 counts as 0.
struct ClassificationReport {
  double acc = 0.0;  // exact match for multi-label
  double precision = 0.0, recall = 0.0, f1 = 0.0;  // micro
  double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
  std::vector<ClassScores> per_class;

  std::string to_json() const;
};

ClassificationReport classification_metrics(const std::vector<std::size_t>& preds,
                                            const std::vector<std::size_t>& truths, std::size_t classes);
ClassificationReport classification_metrics(const std::vector<std::vector<std::uint8_t>>& preds,
                                            const std::vector<std::vector<std::uint8_t>>& truths,
                                            std::size_t classes);

// Corpus BLEU-n with uniform weights over 1..n, clipped counts and a brevity
// penalty against the closest reference length (shorter wins ties). An empty
// candidate corpus scores 0; so does any zero n-gram precision.
double bleu(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references, int n);
double bleu(const Tokens& candidate, const std::vector<Tokens>& references, int n);

std::size_t lcs_length(const Tokens& a, const Tokens& b);

inline constexpr double kRougeBeta = 1.2;

// Sentence score uses the best precision and best recall over the references;
// the corpus score is the mean. Empty candidates score 0.
double rouge_l(const Tokens& candidate, const std::vector<Tokens>& references, double beta = kRougeBeta);
double rouge_l(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references,
               double beta = kRougeBeta);

// TF-IDF n-gram cosine averaged over n = 1..4 and over references, then over
// the corpus. Document frequency is counted over the reference sets, with
// idf = ln(|corpus| / max(1, df)).
double cider(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references);
std::vector<double> cider_per_item(const std::vector<Tokens>& candidates,
                                   const std::vector<std::vector<Tokens>>& references);

struct TextReport {
  std::array<double, 4> bleu{};
  double rouge_l = 0.0;
  double cider = 0.0;

  std::string to_json() const;
};

TextReport text_metrics(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references);

}  // namespace mrdf
