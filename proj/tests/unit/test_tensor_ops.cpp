#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "helpers.hpp"
#include "mrdf/error.hpp"
#include "mrdf/gradcheck.hpp"
#include "mrdf/ops.hpp"
#include "mrdf/params.hpp"

using namespace mrdf;
using namespace mrdf::test;

TEST_CASE("matmul hand oracle") {
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
  CHECK(to_vec(matmul(a, b)) == std::vector<double>{19, 22, 43, 50});

  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  CHECK(to_vec(matmul(eye, b)) == to_vec(b));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(e.code() == "E_DIMENSION");
  }
}

TEST_CASE("matmul batched and shared rhs agree with loops") {
  Rng rng(3);
  const Tensor a = random_tensor({2, 3, 4}, rng);
  const Tensor b = random_tensor({4, 5}, rng);
  const Tensor c = matmul(a, b);
  REQUIRE(c.shape() == Shape{2, 3, 5});
  const auto av = to_vec(a), bv = to_vec(b);
  for (std::size_t i = 0; i < 2; ++i) {
    const std::vector<double> ai(av.begin() + i * 12, av.begin() + (i + 1) * 12);
    const auto ref = naive_matmul(ai, bv, 3, 4, 5);
    for (std::size_t j = 0; j < 15; ++j) CHECK(c[i * 15 + j] == doctest::Approx(ref[j]).epsilon(1e-14));
  }
  const Tensor bt = matmul_bt(a, transpose(b));
  CHECK(max_abs_diff(bt, c) < 1e-14);
}

TEST_CASE("gradient of sum(A B) w.r.t. A is ones B^T") {
  Rng rng(7);
  Tensor a = random_tensor({3, 4}, rng, 1.0, true);
  const Tensor b = random_tensor({4, 2}, rng);
  sum(matmul(a, b)).backward();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) CHECK(a.grad()[i * 4 + k] == doctest::Approx(b[k * 2] + b[k * 2 + 1]));
}

TEST_CASE("softmax") {
  const Tensor u = softmax(Tensor::from({3}, {0, 0, 0}));
  for (double p : u.data()) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const Tensor big = softmax(Tensor::from({2}, {1000, 1000}));
  CHECK(big[0] == 0.5);
  CHECK(big[1] == 0.5);

  // exp-normalize in long double
  const Tensor s = softmax(Tensor::from({3}, {1, 2, 3}));
  long double z = 0.0L;
  for (int i = 1; i <= 3; ++i) z += std::exp(static_cast<long double>(i));
  for (int i = 0; i < 3; ++i) {
    const double ref = static_cast<double>(std::exp(static_cast<long double>(i + 1)) / z);
    CHECK(std::abs(s[i] - ref) < 1e-15);
  }

  Rng rng(11);
  const Tensor rows = softmax(random_tensor({6, 9}, rng, 20.0));
  for (std::size_t r = 0; r < 6; ++r) {
    double t = 0.0;
    for (std::size_t c = 0; c < 9; ++c) {
      CHECK(rows[r * 9 + c] > 0.0);
      t += rows[r * 9 + c];
    }
    CHECK(std::abs(t - 1.0) < 1e-12);
  }

  const Tensor cols = softmax(Tensor::from({2, 2}, {0, 1, 0, 1}), 0);
  CHECK(to_vec(cols) == std::vector<double>{0.5, 0.5, 0.5, 0.5});

  CHECK_THROWS_AS(softmax(Tensor::from({2}, {0.0, NAN})), NumericError);
  CHECK_THROWS_AS(softmax(Tensor::from({2}, {0.0, INFINITY})), NumericError);
}

TEST_CASE("layer_norm") {
  const Tensor ones = Tensor::full({4}, 1.0);
  const Tensor zeros = Tensor::zeros({4});
  const Tensor c = layer_norm(Tensor::full({2, 4}, 3.5), ones, zeros);
  for (double v : c.data()) CHECK(v == 0.0);

  Rng rng(5);
  const Tensor x = random_tensor({8}, rng, 2.0);
  const Tensor beta = random_tensor({8}, rng);
  const Tensor g0 = layer_norm(x, Tensor::zeros({8}), beta);
  CHECK(max_abs_diff(g0, beta) == 0.0);

  // two-pass mean / variance
  const Tensor gamma = random_tensor({8}, rng);
  const Tensor y = layer_norm(x, gamma, beta);
  double mu = 0.0;
  for (double v : x.data()) mu += v;
  mu /= 8.0;
  double var = 0.0;
  for (double v : x.data()) var += (v - mu) * (v - mu);
  var /= 8.0;
  for (std::size_t i = 0; i < 8; ++i) {
    const double ref = (x[i] - mu) / std::sqrt(var + 1e-5) * gamma[i] + beta[i];
    CHECK(std::abs(y[i] - ref) < 1e-14);
  }

  CHECK_THROWS_AS(layer_norm(x, Tensor::zeros({7}), beta), DimensionError);
}

TEST_CASE("conv2d") {
  Rng rng(2);
  const Tensor img = random_tensor({1, 1, 5, 5}, rng);
  const Tensor id = conv2d(img, Tensor::full({1, 1, 1, 1}, 1.0), Tensor());
  CHECK(to_vec(id) == to_vec(img));

  std::vector<double> ramp(16);
  for (std::size_t i = 0; i < 16; ++i) ramp[i] = static_cast<double>(i);
  Conv2dOptions s2;
  s2.stride = {2, 2};
  const Tensor blocks = conv2d(Tensor::from({1, 1, 4, 4}, ramp), Tensor::full({1, 1, 2, 2}, 1.0), Tensor(), s2);
  CHECK(blocks.shape() == Shape{1, 1, 2, 2});
  CHECK(to_vec(blocks) == std::vector<double>{10, 18, 42, 50});

  Conv2dOptions pad;
  pad.padding = {0, 1};
  CHECK(conv2d_output_extent(4, 4, 1, 3, pad) == std::pair<std::size_t, std::size_t>{4, 4});
  CHECK(conv2d_output_extent(7, 7, 2, 2, s2) == std::pair<std::size_t, std::size_t>{3, 3});

  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 3, 3}), Tensor()), ConfigError);
  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 1, 2, 2}), Tensor()), DimensionError);
}

TEST_CASE("conv2d gradient within 1e-5 of central differences") {
  GradcheckCase c{"conv2d_padded", "tensor-autodiff", [](Rng& rng) {
                    Tensor x = random_tensor({1, 2, 5, 5}, rng, 1.0, true);
                    Tensor w = random_tensor({3, 2, 3, 3}, rng, 1.0, true);
                    Tensor b = random_tensor({3}, rng, 1.0, true);
                    Conv2dOptions o;
                    o.stride = {2, 1};
                    o.padding = {1, 1};
                    return GradcheckProblem{{x, w, b}, [=] { return conv2d(x, w, b, o); }};
                  }};
  GradcheckOptions opts;
  opts.points = 40;
  opts.tolerance = 1e-5;
  const auto r = run_gradcheck(c, 99, opts);
  CHECK(r.points >= 40);
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("backward") {
  Tensor x = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  sum(x).backward();
  CHECK(to_vec(Tensor::from({3}, {x.grad()[0], x.grad()[1], x.grad()[2]})) == std::vector<double>{1, 1, 1});
  x.clear_grad();
  sum(mul(x, x)).backward();
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == 2.0 * x[i]);

  // repeated calls accumulate
  sum(x).backward();
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == 2.0 * x[i] + 1.0);

  const Tensor frozen = Tensor::from({3}, {1, 2, 3});
  x.clear_grad();
  sum(mul(x, frozen)).backward();
  CHECK_FALSE(frozen.has_grad());

  CHECK_THROWS_AS(mul(x, frozen).backward(), UsageError);
}

TEST_CASE("no-grad mode records nothing") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = mul(x, x);
  }
  CHECK_FALSE(y.requires_grad());
  CHECK(grad_enabled());
}

TEST_CASE("gather pads negative indices with zero") {
  const Tensor x = Tensor::from({3}, {4, 5, 6}, true);
  const Tensor g = gather(x, {2, 2}, {2, -1, 0, 2});
  CHECK(to_vec(g) == std::vector<double>{6, 0, 4, 6});
  sum(g).backward();
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 2.0);
  CHECK_THROWS_AS(gather(x, {1}, {3}), DimensionError);
}

TEST_CASE("composite MLP loss over 100 random parameters") {
  GradcheckCase c{"mlp", "tensor-autodiff", [](Rng& rng) {
                    Tensor w1 = random_tensor({6, 10}, rng, 0.5, true);
                    Tensor b1 = random_tensor({10}, rng, 0.5, true);
                    Tensor w2 = random_tensor({10, 4}, rng, 0.5, true);
                    Tensor b2 = random_tensor({4}, rng, 0.5, true);
                    const Tensor x = random_tensor({5, 6}, rng);
                    return GradcheckProblem{{w1, b1, w2, b2}, [=] {
                                              const Tensor h = gelu(add(matmul(x, w1), b1));
                                              return log(softmax(add(matmul(h, w2), b2)));
                                            }};
                  }};
  GradcheckOptions opts;
  opts.points = 100;
  const auto r = run_gradcheck(c, 1, opts);
  CHECK(r.points == 100);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParamStore store;
    Tensor p = store.add("p", Tensor::from({2}, {0.3, -0.7}, true));
    p.mutable_grad();  // allocates a zero buffer
    Adam adam(AdamOptions{0.1});
    adam.step(store);
    CHECK(to_vec(p) == std::vector<double>{0.3, -0.7});
  }
  SUBCASE("closed-form first step") {
    ParamStore store;
    Tensor p = store.add("p", Tensor::scalar(1.0, true));
    p.mutable_grad()[0] = 1.0;
    Adam adam(AdamOptions{0.1});
    adam.step(store);
    // m_hat = g, v_hat = g^2
    CHECK(p.item() == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
  }
  SUBCASE("missing gradient is a usage error") {
    ParamStore store;
    store.add("p", Tensor::scalar(1.0, true));
    Adam adam;
    CHECK_THROWS_AS(adam.step(store), UsageError);
  }
  SUBCASE("shared parameter gets one combined update") {
    ParamStore store;
    Tensor w = store.add("block1.w", Tensor::from({2}, {0.5, 0.5}, true));
    store.alias("block2.w", "block1.w", "shared");
    const Tensor x1 = Tensor::from({2}, {1.0, -3.0});
    const Tensor x2 = Tensor::from({2}, {2.0, 1.0});
    sum(add(mul(store.get("block1.w"), x1), mul(store.get("block2.w"), x2))).backward();
    // gradient-sum oracle: g = x1 + x2 = (3, -2)
    CHECK(w.grad()[0] == 3.0);
    CHECK(w.grad()[1] == -2.0);
    Adam adam(AdamOptions{0.01});
    adam.step(store);
    CHECK(w[0] == doctest::Approx(0.5 - 0.01 * 3.0 / (3.0 + 1e-8)).epsilon(1e-15));
    CHECK(w[1] == doctest::Approx(0.5 + 0.01 * 2.0 / (2.0 + 1e-8)).epsilon(1e-15));
  }
}

TEST_CASE("param store sharing and checkpoints") {
  Rng rng(4);
  ParamStore store;
  Tensor a = store.add_uniform("a", {3, 2}, 3, rng);
  store.alias("a_again", "a", "g");
  store.add_constant("b", {2}, 0.25);
  CHECK(store.names().size() == 3);
  CHECK(store.unique().size() == 2);
  CHECK(store.scalar_count() == 8);
  CHECK(store.groups().at("g").size() == 2);
  for (double v : a.data()) CHECK(std::abs(v) <= 1.0 / std::sqrt(3.0));

  a.mutable_data()[0] = 42.0;
  CHECK(store.get("a_again")[0] == 42.0);
  CHECK_THROWS_AS(store.add("a", Tensor::zeros({1})), UsageError);

  const auto path = std::filesystem::temp_directory_path() / "mrdf_unit_ckpt.bin";
  store.save(path);
  const std::vector<double> saved = to_vec(a);
  a.mutable_data()[1] = -1.0;
  store.load(path);
  CHECK(to_vec(a) == saved);

  ParamStore other;
  other.add_constant("a", {2, 3}, 0.0);
  other.add_constant("b", {2}, 0.0);
  CHECK_THROWS_AS(other.load(path), ConfigError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(store.load(path), IoError);
}

TEST_CASE("every registered gradient case passes") {
  const auto results = run_gradchecks(42);
  CHECK(results.size() == gradcheck_registry().size());
  for (const auto& r : results) {
    INFO(r.name);
    CHECK(r.points >= 20);
    CHECK(r.pass);
  }
}
