#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mrdf/decoder.hpp"
#include "mrdf/error.hpp"
#include "mrdf/ops.hpp"

using namespace mrdf;
using namespace mrdf::test;

namespace {

void fill(Tensor t, double v) { std::fill(t.mutable_data().begin(), t.mutable_data().end(), v); }

long double sigm(long double x) { return 1.0L / (1.0L + std::exp(-x)); }

}  // namespace

TEST_CASE("avg_pool_tokens") {
  Rng rng(1);
  const Tensor one = random_tensor({1, 5}, rng);
  CHECK(to_vec(avg_pool_tokens(one)) == to_vec(one));
  const Tensor u = random_tensor({1, 5}, rng);
  const Tensor cancel = avg_pool_tokens(concat({u, scale(u, -1.0)}, 0));
  for (double v : cancel.data()) CHECK(v == 0.0);
  const Tensor x = random_tensor({7, 3}, rng);
  const Tensor m = avg_pool_tokens(x);
  for (std::size_t c = 0; c < 3; ++c) {
    long double s = 0.0L;
    for (std::size_t r = 0; r < 7; ++r) s += x[r * 3 + c];
    CHECK(std::abs(m[c] - static_cast<double>(s / 7.0L)) < 1e-15);
  }
  CHECK_THROWS_AS(avg_pool_tokens(Tensor::zeros({3})), DimensionError);
}

TEST_CASE("classify") {
  Rng rng(2);
  ParamStore store;
  auto p = ClassifierParams::create(store, "cls", 4, 6, rng);
  const Tensor v = random_tensor({6}, rng);
  fill(p.w, 0.0);
  const Tensor uniform = classify(v, p);
  for (double q : uniform.data()) CHECK(q == 0.25);
  p.b.mutable_data()[0] = 10.0;
  CHECK(predict_single(classify(v, p)) == 0);

  auto p3 = ClassifierParams::create(store, "cls3", 3, 6, rng);
  p3.b.mutable_data()[1] = 0.3;
  const Tensor probs = classify(v, p3);
  long double logits[3], z = 0.0L;
  for (std::size_t k = 0; k < 3; ++k) {
    logits[k] = p3.b[k];
    for (std::size_t j = 0; j < 6; ++j) logits[k] += static_cast<long double>(p3.w[k * 6 + j]) * v[j];
    z += std::exp(logits[k]);
  }
  for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(probs[k] - static_cast<double>(std::exp(logits[k]) / z)) < 1e-15);

  CHECK(predict_multi(Tensor::from({4}, {0.6, 0.5, 0.2, 0.51})) == std::vector<std::uint8_t>{1, 0, 0, 1});
}

TEST_CASE("ce_loss") {
  CHECK(ce_loss(Tensor::from({3}, {0, 1, 0}), std::vector<double>{0, 1, 0}).item() == 0.0);
  CHECK(ce_loss(Tensor::full({4}, 0.25), std::size_t{2}).item() == doctest::Approx(std::log(4.0)).epsilon(1e-15));

  Rng rng(3);
  const Tensor p = softmax(random_tensor({5}, rng, 2.0));
  const std::vector<double> truth{0, 1, 0, 1, 0};
  const long double ref = -(std::log(static_cast<long double>(p[1])) + std::log(static_cast<long double>(p[3])));
  CHECK(std::abs(ce_loss(p, truth).item() - static_cast<double>(ref)) < 1e-15);
  CHECK(ce_loss(p, std::size_t{3}).item() == ce_loss(p, std::vector<double>{0, 0, 0, 1, 0}).item());

  // clamp keeps zero probabilities finite
  CHECK(ce_loss(Tensor::from({2}, {1.0, 0.0}), std::size_t{1}).item() == doctest::Approx(-std::log(1e-12)));
  CHECK_THROWS_AS(ce_loss(p, std::vector<double>{1, 0}), DimensionError);
  CHECK_THROWS_AS(ce_loss(p, std::size_t{5}), DimensionError);
}

TEST_CASE("lstm cell matches the gate equations") {
  Rng rng(4);
  ParamStore store;
  const std::size_t I = 3, H = 4;
  const auto layer = LstmLayerParams::create(store, "l", I, H, rng);
  for (std::size_t j = H; j < 2 * H; ++j) CHECK(layer.b[j] == 1.0);
  const Tensor x = random_tensor({1, I}, rng);
  const LstmState s0{{random_tensor({1, H}, rng)}, {random_tensor({1, H}, rng)}};
  const LstmState s1 = lstm_step(x, s0, {layer});
  for (std::size_t j = 0; j < H; ++j) {
    long double g[4];
    for (std::size_t k = 0; k < 4; ++k) {
      const std::size_t col = k * H + j;
      g[k] = layer.b[col];
      for (std::size_t a = 0; a < I; ++a) g[k] += static_cast<long double>(x[a]) * layer.w_ih[a * 4 * H + col];
      for (std::size_t a = 0; a < H; ++a) g[k] += static_cast<long double>(s0.h[0][a]) * layer.w_hh[a * 4 * H + col];
    }
    const long double c = sigm(g[1]) * s0.c[0][j] + sigm(g[0]) * std::tanh(g[2]);
    const long double h = sigm(g[3]) * std::tanh(c);
    CHECK(std::abs(s1.c[0][j] - static_cast<double>(c)) < 1e-15);
    CHECK(std::abs(s1.h[0][j] - static_cast<double>(h)) < 1e-15);
  }
  CHECK_THROWS_AS(lstm_step(x, LstmState{}, {layer}), DimensionError);
}

TEST_CASE("sentence_step") {
  Rng rng(5);
  ParamStore store;
  const auto p = SentenceParams::create(store, "s", 6, 4, 4, rng);
  CHECK(p.lstm.size() == 2);
  const Tensor v = random_tensor({6}, rng);

  SUBCASE("topic stays inside (-1, 1) and follows the tanh sum") {
    const auto step = sentence_step(v, Tensor::zeros({1, 4}), p.initial_state(), p);
    const Tensor& h = step.state.h.back();
    for (std::size_t t = 0; t < 4; ++t) {
      long double a = p.b_h[t] + p.b_v[t];
      for (std::size_t j = 0; j < 4; ++j) a += static_cast<long double>(h[j]) * p.w_h[j * 4 + t];
      for (std::size_t j = 0; j < 6; ++j) a += static_cast<long double>(v[j]) * p.w_v[j * 4 + t];
      CHECK(std::abs(step.topic[t] - static_cast<double>(std::tanh(a))) < 1e-15);
      CHECK(std::abs(step.topic[t]) < 1.0);
    }
    CHECK(step.stop_prob[0] + step.stop_prob[1] == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("all weights zero") {
    for (auto& [name, t] : store.unique()) fill(t, 0.0);
    const auto step = sentence_step(v, random_tensor({1, 4}, rng), p.initial_state(), p);
    for (double t : step.topic.data()) CHECK(t == 0.0);
    CHECK(step.stop_prob[0] == 0.5);
    CHECK(step.stop_prob[1] == 0.5);
  }
}

TEST_CASE("word decoding") {
  Rng rng(6);
  const Vocabulary vocab({"a", "b", "c"});
  REQUIRE(vocab.size() == 7);
  const int a = vocab.id("a"), b = vocab.id("b"), c = vocab.id("c");
  CHECK(vocab.id("zebra") == Vocabulary::kUnknown);
  CHECK(vocab.decode({Vocabulary::kStart, a, c, Vocabulary::kEnd}) == "a c");

  ParamStore store;
  auto p = WordParams::create(store, "w", 7, 7, 7, rng);

  SUBCASE("teacher forcing returns one distribution per target") {
    const auto out = word_decode_teacher(random_tensor({1, 7}, rng), p, vocab, {a, b, Vocabulary::kEnd});
    CHECK(out.distributions.size() == 3);
    CHECK(out.tokens == std::vector<int>{a, b});
  }
  SUBCASE("end token first gives an empty sentence") {
    fill(p.w_out, 0.0);
    fill(p.b_out, 0.0);
    p.b_out.mutable_data()[Vocabulary::kEnd] = 5.0;
    const auto out = word_decode_greedy(random_tensor({1, 7}, rng), p, vocab, 20);
    CHECK(out.tokens.empty());
    CHECK(out.distributions.size() == 1);
  }
  SUBCASE("rigged logits reproduce a planted sequence") {
    // One-hot embeddings; the cell forgets and copies its input, so the
    // hidden state encodes the previous token and w_out is a transition table.
    for (auto& [name, t] : store.unique()) fill(t, 0.0);
    for (std::size_t k = 0; k < 7; ++k) {
      p.embedding.mutable_data()[k * 7 + k] = 1.0;
      p.lstm.w_ih.mutable_data()[k * 28 + 14 + k] = 5.0;  // cell candidate
    }
    for (std::size_t j = 0; j < 7; ++j) {
      p.lstm.b.mutable_data()[j] = 10.0;        // input gate open
      p.lstm.b.mutable_data()[7 + j] = -10.0;   // forget gate shut
      p.lstm.b.mutable_data()[21 + j] = 10.0;   // output gate open
    }
    const std::vector<std::pair<int, int>> planted{{Vocabulary::kStart, c}, {c, a}, {a, b}, {b, Vocabulary::kEnd}};
    for (auto [from, to] : planted) p.w_out.mutable_data()[from * 7 + to] = 10.0;
    Tensor topic = Tensor::zeros({1, 7});
    topic.mutable_data()[Vocabulary::kStart] = 1.0;
    CHECK(word_decode_greedy(topic, p, vocab, 20).tokens == std::vector<int>{c, a, b});
    CHECK(word_decode_greedy(topic, p, vocab, 2).tokens == std::vector<int>{c, a});

    // a self-loop never emits the end token and is cut at max_words
    p.w_out.mutable_data()[b * 7 + Vocabulary::kEnd] = 0.0;
    p.w_out.mutable_data()[b * 7 + b] = 10.0;
    CHECK(word_decode_greedy(topic, p, vocab, 20).tokens.size() == 20);
  }
  SUBCASE("seeded sampling is reproducible") {
    const Tensor topic = random_tensor({1, 7}, rng);
    Rng s1(9), s2(9);
    CHECK(word_decode_greedy(topic, p, vocab, 20, &s1).tokens == word_decode_greedy(topic, p, vocab, 20, &s2).tokens);
  }
  SUBCASE("vocabulary errors") {
    CHECK_THROWS_AS(word_decode_greedy(Tensor::zeros({1, 7}), p, Vocabulary(), 5), UsageError);
    CHECK_THROWS_AS(word_decode_greedy(Tensor::zeros({1, 7}), p, Vocabulary({"a"}), 5), DimensionError);
  }
}

TEST_CASE("joint_loss") {
  const Tensor cls = Tensor::scalar(0.7);
  const std::vector<Tensor> stop{Tensor::from({1}, {0.2}), Tensor::from({1}, {0.4})};
  const std::vector<Tensor> word{Tensor::from({1}, {1.5}), Tensor::from({1}, {0.25}), Tensor::from({1}, {2.0})};
  CHECK(joint_loss(cls, stop, word, {1.0, 0.0, 0.0}).item() == 0.7);
  CHECK(joint_loss(Tensor::scalar(0.0), {Tensor::zeros({1})}, {Tensor::zeros({1})}).item() == 0.0);
  CHECK(joint_loss(cls, stop, word).item() == doctest::Approx(0.7 + 0.6 + 3.75).epsilon(1e-15));
  CHECK(joint_loss(cls, stop, word, {2.0, 0.5, 3.0}).item() ==
        doctest::Approx(1.4 + 0.3 + 11.25).epsilon(1e-15));
  CHECK_THROWS_AS(joint_loss(cls, stop, word, {1.0, -1.0, 1.0}), ConfigError);
}

TEST_CASE("report losses and generation") {
  Rng rng(7);
  const Vocabulary vocab({"a", "b", "c", "."});
  ParamStore store;
  auto p = ReportDecoderParams::create(store, "dec", 6, vocab.size(), 8, rng);
  const Tensor v = random_tensor({1, 6}, rng);
  const std::vector<std::vector<int>> sentences{{4, 5, 7}, {6, 7}, {4, 7}};

  const auto losses = report_losses(v, p, vocab, sentences);
  CHECK(losses.stop.size() == 3);
  CHECK(losses.word.size() == 4 + 3 + 3);

  // stop targets: continue, continue, end
  LstmState st = p.sentence.initial_state();
  Tensor topic = Tensor::zeros({1, 8});
  for (std::size_t s = 0; s < 3; ++s) {
    const auto step = sentence_step(v, topic, st, p.sentence);
    CHECK(losses.stop[s].item() == -std::log(step.stop_prob[s == 2 ? 1 : 0]));
    st = step.state;
    topic = step.topic;
  }

  const auto report = generate_report(v, p, vocab, {10, 20});
  CHECK(report.sentences.size() <= 10);
  CHECK(report.token_count() <= 200);

  // a forced end fires after the first sentence
  fill(p.sentence.w_stop, 0.0);
  p.sentence.b_stop.mutable_data()[1] = 3.0;
  CHECK(generate_report(v, p, vocab, {10, 20}).sentences.size() == 1);
  // a forced continue runs to the sentence limit
  p.sentence.b_stop.mutable_data()[1] = -3.0;
  const auto capped = generate_report(v, p, vocab, {4, 5});
  CHECK(capped.sentences.size() == 4);
  for (const auto& s : capped.sentences) CHECK(s.size() <= 5);
}
