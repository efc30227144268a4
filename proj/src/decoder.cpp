#include "mrdf/decoder.hpp"

#include <algorithm>
#include <sstream>

#include "mrdf/error.hpp"
#include "mrdf/ops.hpp"

namespace mrdf {

namespace {

const std::vector<std::string>& reserved_words() {
  static const std::vector<std::string> words{"<pad>", "<start>", "<end>", "<unk>"};
  return words;
}

Tensor as_row(const Tensor& v) { return v.ndim() == 2 && v.dim(0) == 1 ? v : reshape(v, {1, v.numel()}); }

}  // namespace

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  for (const auto& w : reserved_words()) {
    ids_.emplace(w, static_cast<int>(words_.size()));
    words_.push_back(w);
  }
  for (const auto& w : words) {
    if (ids_.count(w)) continue;
    ids_.emplace(w, static_cast<int>(words_.size()));
    words_.push_back(w);
  }
}

int Vocabulary::id(const std::string& word) const {
  auto it = ids_.find(word);
  return it == ids_.end() ? kUnknown : it->second;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) return words_[kUnknown];
  return words_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::ostringstream os;
  bool first = true;
  for (int i : ids) {
    if (i == kPad || i == kStart || i == kEnd) continue;
    if (!first) os << ' ';
    os << word(i);
    first = false;
  }
  return os.str();
}

Tensor avg_pool_tokens(const Tensor& fused) {
  if (fused.ndim() != 2) throw DimensionError("avg_pool_tokens expects [N, D], got " + shape_str(fused.shape()));
  return mean_rows(fused);
}

ClassifierParams ClassifierParams::create(ParamStore& store, const std::string& prefix, std::size_t classes,
                                          std::size_t feature_dim, Rng& rng) {
  ClassifierParams p;
  p.w = store.add_uniform(prefix + ".w", {classes, feature_dim}, feature_dim, rng);
  p.b = store.add_constant(prefix + ".b", {classes}, 0.0);
  return p;
}

Tensor classify(const Tensor& v_a, const ClassifierParams& p) {
  const Tensor logits = add(matmul_bt(as_row(v_a), p.w), p.b);
  return reshape(softmax(logits, -1), {p.classes()});
}

std::size_t predict_single(const Tensor& probs) {
  auto d = probs.data();
  return static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
}

std::vector<std::uint8_t> predict_multi(const Tensor& probs, double threshold) {
  std::vector<std::uint8_t> out;
  for (double p : probs.data()) out.push_back(p > threshold ? 1 : 0);
  return out;
}

Tensor ce_loss(const Tensor& probs, const std::vector<double>& truth) {
  if (truth.size() != probs.numel()) {
    throw DimensionError("ce_loss: truth has " + std::to_string(truth.size()) + " entries for " +
                         shape_str(probs.shape()));
  }
  const Tensor t = Tensor::from(probs.shape(), truth);
  return scale(sum(mul(log(clamp_min(probs, kProbFloor)), t)), -1.0);
}

Tensor ce_loss(const Tensor& probs, std::size_t target) {
  if (target >= probs.numel()) throw DimensionError("ce_loss: target index out of range");
  const Tensor p = gather(probs, {1}, {static_cast<std::int64_t>(target)});
  return scale(log(clamp_min(p, kProbFloor)), -1.0);
}

LstmLayerParams LstmLayerParams::create(ParamStore& store, const std::string& prefix, std::size_t input,
                                        std::size_t hidden, Rng& rng) {
  LstmLayerParams p;
  p.w_ih = store.add_uniform(prefix + ".w_ih", {input, 4 * hidden}, input, rng);
  p.w_hh = store.add_uniform(prefix + ".w_hh", {hidden, 4 * hidden}, hidden, rng);
  std::vector<double> bias(4 * hidden, 0.0);
  // Forget gate starts open.
  std::fill(bias.begin() + static_cast<long>(hidden), bias.begin() + static_cast<long>(2 * hidden), 1.0);
  p.b = store.add(prefix + ".b", Tensor::from({4 * hidden}, std::move(bias)));
  return p;
}

LstmState lstm_step(const Tensor& input, const LstmState& state, const std::vector<LstmLayerParams>& layers) {
  if (state.h.size() != layers.size() || state.c.size() != layers.size()) {
    throw DimensionError("lstm_step: state has " + std::to_string(state.h.size()) + " layers, params " +
                         std::to_string(layers.size()));
  }
  LstmState next;
  Tensor x = as_row(input);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& p = layers[l];
    const std::size_t H = p.hidden();
    const Tensor gates = add(add(matmul(x, p.w_ih), matmul(state.h[l], p.w_hh)), p.b);
    const Tensor i = sigmoid(slice_last(gates, 0, H));
    const Tensor f = sigmoid(slice_last(gates, H, 2 * H));
    const Tensor g = tanh(slice_last(gates, 2 * H, 3 * H));
    const Tensor o = sigmoid(slice_last(gates, 3 * H, 4 * H));
    const Tensor c = add(mul(f, state.c[l]), mul(i, g));
    const Tensor h = mul(o, tanh(c));
    next.h.push_back(h);
    next.c.push_back(c);
    x = h;
  }
  return next;
}

SentenceParams SentenceParams::create(ParamStore& store, const std::string& prefix, std::size_t feature_dim,
                                      std::size_t hidden, std::size_t topic_dim, Rng& rng) {
  SentenceParams p;
  p.lstm.push_back(LstmLayerParams::create(store, prefix + ".lstm0", feature_dim + topic_dim, hidden, rng));
  p.lstm.push_back(LstmLayerParams::create(store, prefix + ".lstm1", hidden, hidden, rng));
  p.w_h = store.add_uniform(prefix + ".w_h", {hidden, topic_dim}, hidden, rng);
  p.b_h = store.add_constant(prefix + ".b_h", {topic_dim}, 0.0);
  p.w_v = store.add_uniform(prefix + ".w_v", {feature_dim, topic_dim}, feature_dim, rng);
  p.b_v = store.add_constant(prefix + ".b_v", {topic_dim}, 0.0);
  p.w_stop = store.add_uniform(prefix + ".w_stop", {hidden, 2}, hidden, rng);
  p.b_stop = store.add_constant(prefix + ".b_stop", {2}, 0.0);
  for (std::size_t l = 0; l < 2; ++l) {
    p.h0.push_back(store.add_range(prefix + ".h0." + std::to_string(l), {1, hidden}, 0.1, rng));
    p.c0.push_back(store.add_range(prefix + ".c0." + std::to_string(l), {1, hidden}, 0.1, rng));
  }
  return p;
}

SentenceStep sentence_step(const Tensor& v_a, const Tensor& prev_topic, const LstmState& state,
                           const SentenceParams& p) {
  const Tensor v = as_row(v_a);
  SentenceStep out;
  out.state = lstm_step(concat({v, as_row(prev_topic)}, -1), state, p.lstm);
  const Tensor& h = out.state.h.back();
  out.topic = tanh(add(add(matmul(h, p.w_h), p.b_h), add(matmul(v, p.w_v), p.b_v)));
  out.stop_prob = reshape(softmax(add(matmul(h, p.w_stop), p.b_stop), -1), {2});
  return out;
}

WordParams WordParams::create(ParamStore& store, const std::string& prefix, std::size_t vocab, std::size_t embed,
                              std::size_t hidden, Rng& rng) {
  WordParams p;
  p.lstm = LstmLayerParams::create(store, prefix + ".lstm", embed, hidden, rng);
  p.embedding = store.add_range(prefix + ".embedding", {vocab, embed}, 0.1, rng);
  p.w_out = store.add_uniform(prefix + ".w_out", {hidden, vocab}, hidden, rng);
  p.b_out = store.add_constant(prefix + ".b_out", {vocab}, 0.0);
  p.h0 = store.add_range(prefix + ".h0", {1, hidden}, 0.1, rng);
  p.c0 = store.add_range(prefix + ".c0", {1, hidden}, 0.1, rng);
  return p;
}

namespace {

Tensor embed_token(const WordParams& p, int token) {
  const std::size_t E = p.embedding.dim(1);
  std::vector<std::int64_t> idx(E);
  for (std::size_t j = 0; j < E; ++j) idx[j] = static_cast<std::int64_t>(static_cast<std::size_t>(token) * E + j);
  return gather(p.embedding, {1, E}, std::move(idx));
}

void check_vocab(const WordParams& p, const Vocabulary& vocab) {
  if (vocab.size() <= static_cast<std::size_t>(Vocabulary::kUnknown) + 1) {
    throw UsageError("word decoder: vocabulary has no words");
  }
  if (p.embedding.dim(0) != vocab.size()) {
    throw DimensionError("word decoder: embedding table has " + std::to_string(p.embedding.dim(0)) +
                         " rows for a vocabulary of " + std::to_string(vocab.size()));
  }
}

struct WordStepper {
  const WordParams& p;
  LstmState state;
  std::vector<LstmLayerParams> layers;

  explicit WordStepper(const WordParams& params) : p(params), state{{params.h0}, {params.c0}}, layers{params.lstm} {}

  Tensor step(const Tensor& input) {
    state = lstm_step(input, state, layers);
    return reshape(softmax(add(matmul(state.h.back(), p.w_out), p.b_out), -1), {p.b_out.numel()});
  }
};

}  // namespace

WordDecode word_decode_teacher(const Tensor& topic, const WordParams& p, const Vocabulary& vocab,
                               const std::vector<int>& targets) {
  check_vocab(p, vocab);
  WordDecode out;
  WordStepper stepper(p);
  Tensor input = as_row(topic);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    out.distributions.push_back(stepper.step(input));
    if (targets[t] != Vocabulary::kEnd) out.tokens.push_back(targets[t]);
    input = embed_token(p, targets[t]);
  }
  return out;
}

WordDecode word_decode_greedy(const Tensor& topic, const WordParams& p, const Vocabulary& vocab,
                              std::size_t max_words, Rng* sampler) {
  check_vocab(p, vocab);
  WordDecode out;
  WordStepper stepper(p);
  Tensor input = as_row(topic);
  for (std::size_t t = 0; t < max_words; ++t) {
    const Tensor dist = stepper.step(input);
    out.distributions.push_back(dist);
    int token = 0;
    if (sampler) {
      double u = sampler->uniform(), acc = 0.0;
      auto d = dist.data();
      token = static_cast<int>(d.size()) - 1;
      for (std::size_t k = 0; k < d.size(); ++k) {
        acc += d[k];
        if (u < acc) {
          token = static_cast<int>(k);
          break;
        }
      }
    } else {
      token = static_cast<int>(predict_single(dist));
    }
    if (token == Vocabulary::kEnd) break;
    out.tokens.push_back(token);
    input = embed_token(p, token);
  }
  return out;
}

Tensor joint_loss(const Tensor& cls_loss, const std::vector<Tensor>& stop_losses,
                  const std::vector<Tensor>& word_losses, const LossWeights& weights) {
  if (weights.classification < 0 || weights.stop < 0 || weights.word < 0) {
    throw ConfigError("loss weights must be non-negative");
  }
  Tensor total = scale(cls_loss, weights.classification);
  if (!stop_losses.empty()) total = add(total, scale(sum(concat(stop_losses, 0)), weights.stop));
  if (!word_losses.empty()) total = add(total, scale(sum(concat(word_losses, 0)), weights.word));
  return total;
}

ReportDecoderParams ReportDecoderParams::create(ParamStore& store, const std::string& prefix, std::size_t feature_dim,
                                                std::size_t vocab, std::size_t hidden, Rng& rng) {
  ReportDecoderParams p;
  p.sentence = SentenceParams::create(store, prefix + ".sentence", feature_dim, hidden, hidden, rng);
  p.word = WordParams::create(store, prefix + ".word", vocab, hidden, hidden, rng);
  return p;
}

ReportLosses report_losses(const Tensor& v_a, const ReportDecoderParams& p, const Vocabulary& vocab,
                           const std::vector<std::vector<int>>& sentences) {
  ReportLosses out;
  LstmState state = p.sentence.initial_state();
  Tensor topic = Tensor::zeros({1, p.sentence.topic_dim()});
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    SentenceStep step = sentence_step(v_a, topic, state, p.sentence);
    const bool last = s + 1 == sentences.size();
    out.stop.push_back(ce_loss(step.stop_prob, last ? 1 : 0));
    std::vector<int> targets = sentences[s];
    targets.push_back(Vocabulary::kEnd);
    const WordDecode words = word_decode_teacher(step.topic, p.word, vocab, targets);
    for (std::size_t t = 0; t < targets.size(); ++t) {
      out.word.push_back(ce_loss(words.distributions[t], static_cast<std::size_t>(targets[t])));
    }
    state = std::move(step.state);
    topic = step.topic;
  }
  return out;
}

std::size_t GeneratedReport::token_count() const {
  std::size_t n = 0;
  for (const auto& s : sentences) n += s.size();
  return n;
}

GeneratedReport generate_report(const Tensor& v_a, const ReportDecoderParams& p, const Vocabulary& vocab,
                                const ReportLimits& limits, Rng* sampler) {
  GeneratedReport out;
  LstmState state = p.sentence.initial_state();
  Tensor topic = Tensor::zeros({1, p.sentence.topic_dim()});
  for (std::size_t s = 0; s < limits.max_sentences; ++s) {
    SentenceStep step = sentence_step(v_a, topic, state, p.sentence);
    out.sentences.push_back(word_decode_greedy(step.topic, p.word, vocab, limits.max_words, sampler).tokens);
    const double p_end = step.stop_prob[1];
    out.stop_probs.push_back(p_end);
    if (p_end > 0.5) break;
    state = std::move(step.state);
    topic = step.topic;
  }
  return out;
}

}  // namespace mrdf
