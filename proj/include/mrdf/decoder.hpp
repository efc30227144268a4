#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mrdf/params.hpp"
#include "mrdf/rng.hpp"
#include "mrdf/tensor.hpp"

namespace mrdf {

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kStart = 1;
  static constexpr int kEnd = 2;
  static constexpr int kUnknown = 3;

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& words);

  int id(const std::string& word) const;
  const std::string& word(int id) const;
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  // Whitespace-joined; reserved ids are skipped.
  std::string decode(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

// Mean over the token axis: [N, D] -> [D].
Tensor avg_pool_tokens(const Tensor& fused);

struct ClassifierParams {
  Tensor w;  // [K, D_f]
  Tensor b;  // [K]

  std::size_t classes() const { return b.numel(); }
  static ClassifierParams create(ParamStore& store, const std::string& prefix, std::size_t classes,
                                 std::size_t feature_dim, Rng& rng);
};

// softmax(W v + b): [K]
Tensor classify(const Tensor& v_a, const ClassifierParams& p);
std::size_t predict_single(const Tensor& probs);
std::vector<std::uint8_t> predict_multi(const Tensor& probs, double threshold = 0.5);

inline constexpr double kProbFloor = 1e-12;

// -sum_k truth_k * ln(max(p_k, 1e-12))
Tensor ce_loss(const Tensor& probs, const std::vector<double>& truth);
// Same for a single target index.
Tensor ce_loss(const Tensor& probs, std::size_t target);

// Gate order in the stacked weights: input, forget, cell, output.
struct LstmLayerParams {
  Tensor w_ih;  // [in, 4H]
  Tensor w_hh;  // [H, 4H]
  Tensor b;     // [4H]

  std::size_t hidden() const { return w_hh.dim(0); }
  static LstmLayerParams create(ParamStore& store, const std::string& prefix, std::size_t input,
                                std::size_t hidden, Rng& rng);
};

// Per-layer hidden and cell rows, each [1, H].
struct LstmState {
  std::vector<Tensor> h;
  std::vector<Tensor> c;
};

// One time step through a stack of layers; returns the updated state (the
// output is state.h.back()).
LstmState lstm_step(const Tensor& input, const LstmState& state, const std::vector<LstmLayerParams>& layers);

struct SentenceParams {
  std::vector<LstmLayerParams> lstm;  // 2 layers
  Tensor w_h, b_h;                    // [H, D_t], [D_t]
  Tensor w_v, b_v;                    // [D_f, D_t], [D_t]
  Tensor w_stop, b_stop;              // [H, 2], [2]; index 0 = continue, 1 = end
  std::vector<Tensor> h0, c0;         // learnable initial state per layer, [1, H]

  std::size_t topic_dim() const { return b_h.numel(); }
  LstmState initial_state() const { return LstmState{h0, c0}; }
  static SentenceParams create(ParamStore& store, const std::string& prefix, std::size_t feature_dim,
                               std::size_t hidden, std::size_t topic_dim, Rng& rng);
};

struct SentenceStep {
  Tensor topic;      // [1, D_t]
  Tensor stop_prob;  // [2]
  LstmState state;
};

// h = LSTM(v_a ++ t_prev); t = tanh(W_h h + b_h + W_v v_a + b_v);
// stop = softmax(W_stop h + b_stop).
SentenceStep sentence_step(const Tensor& v_a, const Tensor& prev_topic, const LstmState& state,
                           const SentenceParams& p);

struct WordParams {
  LstmLayerParams lstm;
  Tensor embedding;     // [vocab, E]; E equals the topic dim
  Tensor w_out, b_out;  // [H, vocab], [vocab]
  Tensor h0, c0;        // [1, H]

  static WordParams create(ParamStore& store, const std::string& prefix, std::size_t vocab, std::size_t embed,
                           std::size_t hidden, Rng& rng);
};

struct WordDecode {
  std::vector<int> tokens;           // emitted ids, end token excluded
  std::vector<Tensor> distributions;  // one [vocab] per step
};

// Inputs are the topic, then the embeddings of targets[0..n-2]; returns one
// distribution per target.
WordDecode word_decode_teacher(const Tensor& topic, const WordParams& p, const Vocabulary& vocab,
                               const std::vector<int>& targets);
// Feeds back the argmax token (or a sample when `sampler` is given); stops at
// the end token or after max_words tokens.
WordDecode word_decode_greedy(const Tensor& topic, const WordParams& p, const Vocabulary& vocab,
                              std::size_t max_words, Rng* sampler = nullptr);

struct LossWeights {
  double classification = 1.0;
  double stop = 1.0;
  double word = 1.0;
};

Tensor joint_loss(const Tensor& cls_loss, const std::vector<Tensor>& stop_losses,
                  const std::vector<Tensor>& word_losses, const LossWeights& weights = {});

struct ReportDecoderParams {
  SentenceParams sentence;
  WordParams word;

  static ReportDecoderParams create(ParamStore& store, const std::string& prefix, std::size_t feature_dim,
                                    std::size_t vocab, std::size_t hidden, Rng& rng);
};

struct ReportLimits {
  std::size_t max_sentences = 10;
  std::size_t max_words = 20;
};

struct ReportLosses {
  std::vector<Tensor> stop;  // one per sentence
  std::vector<Tensor> word;  // one per word target
};

// Teacher-forced losses for a report given as sentences of token ids (no end
// token). Stop target is end exactly at the last sentence.
ReportLosses report_losses(const Tensor& v_a, const ReportDecoderParams& p, const Vocabulary& vocab,
                           const std::vector<std::vector<int>>& sentences);

struct GeneratedReport {
  std::vector<std::vector<int>> sentences;
  std::vector<double> stop_probs;  // P(end) after each sentence
  std::size_t token_count() const;
};

// Sentence loop ends when P(end) > 0.5 or max_sentences is reached.
GeneratedReport generate_report(const Tensor& v_a, const ReportDecoderParams& p, const Vocabulary& vocab,
                                const ReportLimits& limits, Rng* sampler = nullptr);

}  // namespace mrdf
