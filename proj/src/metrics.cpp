#include "mrdf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "mrdf/error.hpp"

namespace mrdf {

namespace {

using NgramCounts = std::map<std::string, std::size_t>;

NgramCounts ngrams(const Tokens& t, std::size_t n) {
  NgramCounts out;
  if (t.size() < n) return out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) {
    std::string key = t[i];
    for (std::size_t j = 1; j < n; ++j) key += '\x1f' + t[i + j];
    ++out[key];
  }
  return out;
}

double safe_div(double a, double b) { return b == 0.0 ? 0.0 : a / b; }

double f1_of(double p, double r) { return safe_div(2.0 * p * r, p + r); }

void check_corpus(std::size_t candidates, std::size_t references) {
  if (candidates != references) {
    throw DimensionError("metric: " + std::to_string(candidates) + " candidates but " + std::to_string(references) +
                         " reference sets");
  }
}

ClassificationReport finish(const std::vector<std::size_t>& tp, const std::vector<std::size_t>& fp,
                            const std::vector<std::size_t>& fn, double acc) {
  ClassificationReport r;
  r.acc = acc;
  std::size_t TP = 0, FP = 0, FN = 0;
  const std::size_t K = tp.size();
  for (std::size_t k = 0; k < K; ++k) {
    ClassScores s;
    s.precision = safe_div(static_cast<double>(tp[k]), static_cast<double>(tp[k] + fp[k]));
    s.recall = safe_div(static_cast<double>(tp[k]), static_cast<double>(tp[k] + fn[k]));
    s.f1 = f1_of(s.precision, s.recall);
    s.support = tp[k] + fn[k];
    r.macro_precision += s.precision / static_cast<double>(K);
    r.macro_recall += s.recall / static_cast<double>(K);
    r.macro_f1 += s.f1 / static_cast<double>(K);
    r.per_class.push_back(s);
    TP += tp[k];
    FP += fp[k];
    FN += fn[k];
  }
  r.precision = safe_div(static_cast<double>(TP), static_cast<double>(TP + FP));
  r.recall = safe_div(static_cast<double>(TP), static_cast<double>(TP + FN));
  r.f1 = f1_of(r.precision, r.recall);
  return r;
}

}  // namespace

Tokens split_tokens(const std::string& text) {
  std::istringstream is(text);
  Tokens out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

std::string ClassificationReport::to_json() const {
  nlohmann::ordered_json j;
  j["acc"] = acc;
  j["precision"] = precision;
  j["recall"] = recall;
  j["f1"] = f1;
  j["macro_precision"] = macro_precision;
  j["macro_recall"] = macro_recall;
  j["macro_f1"] = macro_f1;
  auto& pc = j["per_class"] = nlohmann::ordered_json::array();
  for (const auto& s : per_class)
    pc.push_back({{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support}});
  return j.dump();
}

ClassificationReport classification_metrics(const std::vector<std::size_t>& preds,
                                            const std::vector<std::size_t>& truths, std::size_t classes) {
  check_corpus(preds.size(), truths.size());
  if (classes == 0) throw ConfigError("classification_metrics: K must be positive");
  std::vector<std::size_t> tp(classes), fp(classes), fn(classes);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const std::size_t p = preds[i], t = truths[i];
    if (p >= classes || t >= classes) throw DimensionError("classification_metrics: class id out of range");
    if (p == t) {
      ++tp[p];
      ++correct;
    } else {
      ++fp[p];
      ++fn[t];
    }
  }
  return finish(tp, fp, fn, safe_div(static_cast<double>(correct), static_cast<double>(preds.size())));
}

ClassificationReport classification_metrics(const std::vector<std::vector<std::uint8_t>>& preds,
                                            const std::vector<std::vector<std::uint8_t>>& truths,
                                            std::size_t classes) {
  check_corpus(preds.size(), truths.size());
  if (classes == 0) throw ConfigError("classification_metrics: K must be positive");
  std::vector<std::size_t> tp(classes), fp(classes), fn(classes);
  std::size_t exact = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].size() != classes || truths[i].size() != classes) {
      throw DimensionError("classification_metrics: multi-hot vector length differs from K");
    }
    bool same = true;
    for (std::size_t k = 0; k < classes; ++k) {
      const bool p = preds[i][k] != 0, t = truths[i][k] != 0;
      if (p && t) ++tp[k];
      if (p && !t) ++fp[k];
      if (!p && t) ++fn[k];
      same = same && p == t;
    }
    if (same) ++exact;
  }
  return finish(tp, fp, fn, safe_div(static_cast<double>(exact), static_cast<double>(preds.size())));
}

double bleu(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references, int n) {
  check_corpus(candidates.size(), references.size());
  if (n < 1 || n > 4) throw ConfigError("bleu: n must be in 1..4, got " + std::to_string(n));
  std::vector<double> matched(static_cast<std::size_t>(n), 0.0), total(static_cast<std::size_t>(n), 0.0);
  double cand_len = 0.0, ref_len = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Tokens& c = candidates[i];
    if (references[i].empty()) throw UsageError("bleu: candidate without references");
    cand_len += static_cast<double>(c.size());
    std::size_t best = references[i].front().size();
    for (const auto& r : references[i]) {
      const auto d = [&](std::size_t len) { return len > c.size() ? len - c.size() : c.size() - len; };
      if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
    }
    ref_len += static_cast<double>(best);
    for (int k = 1; k <= n; ++k) {
      const NgramCounts cc = ngrams(c, static_cast<std::size_t>(k));
      NgramCounts max_ref;
      for (const auto& r : references[i])
        for (const auto& [g, cnt] : ngrams(r, static_cast<std::size_t>(k))) max_ref[g] = std::max(max_ref[g], cnt);
      for (const auto& [g, cnt] : cc) {
        auto it = max_ref.find(g);
        matched[static_cast<std::size_t>(k - 1)] += static_cast<double>(std::min(cnt, it == max_ref.end() ? 0 : it->second));
        total[static_cast<std::size_t>(k - 1)] += static_cast<double>(cnt);
      }
    }
  }
  if (cand_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (int k = 0; k < n; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    if (matched[kk] == 0.0) return 0.0;
    log_sum += std::log(matched[kk] / total[kk]);
  }
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return bp * std::exp(log_sum / n);
}

double bleu(const Tokens& candidate, const std::vector<Tokens>& references, int n) {
  return bleu(std::vector<Tokens>{candidate}, std::vector<std::vector<Tokens>>{references}, n);
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const Tokens& candidate, const std::vector<Tokens>& references, double beta) {
  if (candidate.empty() || references.empty()) return 0.0;
  double p = 0.0, r = 0.0;
  for (const auto& ref : references) {
    if (ref.empty()) continue;
    const auto lcs = static_cast<double>(lcs_length(candidate, ref));
    p = std::max(p, lcs / static_cast<double>(candidate.size()));
    r = std::max(r, lcs / static_cast<double>(ref.size()));
  }
  if (p == 0.0 || r == 0.0) return 0.0;
  const double b2 = beta * beta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

double rouge_l(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references,
               double beta) {
  check_corpus(candidates.size(), references.size());
  if (candidates.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) total += rouge_l(candidates[i], references[i], beta);
  return total / static_cast<double>(candidates.size());
}

std::vector<double> cider_per_item(const std::vector<Tokens>& candidates,
                                   const std::vector<std::vector<Tokens>>& references) {
  check_corpus(candidates.size(), references.size());
  const std::size_t I = candidates.size();
  std::vector<double> scores(I, 0.0);
  if (I == 0) return scores;
  const double log_corpus = std::log(static_cast<double>(I));
  for (std::size_t n = 1; n <= 4; ++n) {
    std::map<std::string, std::size_t> df;
    std::vector<std::vector<NgramCounts>> ref_counts(I);
    for (std::size_t i = 0; i < I; ++i) {
      std::map<std::string, bool> seen;
      for (const auto& r : references[i]) {
        ref_counts[i].push_back(ngrams(r, n));
        for (const auto& kv : ref_counts[i].back()) seen[kv.first] = true;
      }
      for (const auto& kv : seen) ++df[kv.first];
    }
    auto weigh = [&](const NgramCounts& counts) {
      std::map<std::string, double> v;
      for (const auto& [g, cnt] : counts) {
        auto it = df.find(g);
        const double d = it == df.end() ? 0.0 : static_cast<double>(it->second);
        v[g] = static_cast<double>(cnt) * (log_corpus - std::log(std::max(1.0, d)));
      }
      return v;
    };
    auto norm = [](const std::map<std::string, double>& v) {
      double s = 0.0;
      for (const auto& kv : v) s += kv.second * kv.second;
      return std::sqrt(s);
    };
    for (std::size_t i = 0; i < I; ++i) {
      if (ref_counts[i].empty()) continue;
      const auto c = weigh(ngrams(candidates[i], n));
      const double nc = norm(c);
      double acc = 0.0;
      for (const auto& rc : ref_counts[i]) {
        const auto r = weigh(rc);
        const double nr = norm(r);
        if (nc == 0.0 || nr == 0.0) continue;
        double dot = 0.0;
        for (const auto& [g, w] : c) {
          auto it = r.find(g);
          if (it != r.end()) dot += w * it->second;
        }
        acc += dot / (nc * nr);
      }
      scores[i] += acc / static_cast<double>(ref_counts[i].size()) / 4.0;
    }
  }
  return scores;
}

double cider(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references) {
  const auto s = cider_per_item(candidates, references);
  if (s.empty()) return 0.0;
  double total = 0.0;
  for (double v : s) total += v;
  return total / static_cast<double>(s.size());
}

std::string TextReport::to_json() const {
  nlohmann::ordered_json j;
  for (std::size_t n = 0; n < 4; ++n) j["bleu" + std::to_string(n + 1)] = bleu[n];
  j["rouge_l"] = rouge_l;
  j["cider"] = cider;
  return j.dump();
}

TextReport text_metrics(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references) {
  TextReport r;
  for (int n = 1; n <= 4; ++n) r.bleu[static_cast<std::size_t>(n - 1)] = bleu(candidates, references, n);
  r.rouge_l = rouge_l(candidates, references);
  r.cider = cider(candidates, references);
  return r;
}

}  // namespace mrdf
