#include "mrdf/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <nlohmann/json.hpp>

#include "mrdf/backbone.hpp"
#include "mrdf/decoder.hpp"
#include "mrdf/embedding.hpp"
#include "mrdf/error.hpp"
#include "mrdf/mm_fusion.hpp"
#include "mrdf/mv_fusion.hpp"
#include "mrdf/ops.hpp"
#include "mrdf/params.hpp"

namespace mrdf {

namespace {

Tensor leaf(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), true);
}

std::vector<Tensor> with_params(std::vector<Tensor> inputs, const ParamStore& store) {
  for (const auto& [name, t] : store.unique()) inputs.push_back(t);
  return inputs;
}

GradcheckCase op(std::string name, std::function<GradcheckProblem(Rng&)> build) {
  return GradcheckCase{std::move(name), "tensor-autodiff", std::move(build)};
}

GradcheckCase mod(std::string name, std::string module, std::function<GradcheckProblem(Rng&)> build) {
  return GradcheckCase{std::move(name), std::move(module), std::move(build)};
}

std::vector<GradcheckCase> build_registry() {
  std::vector<GradcheckCase> r;
  r.push_back(op("add", [](Rng& g) {
    Tensor a = leaf({4, 6}, g), b = leaf({4, 6}, g);
    return GradcheckProblem{{a, b}, [=] { return add(a, b); }};
  }));
  r.push_back(op("add_broadcast", [](Rng& g) {
    Tensor a = leaf({3, 4, 5}, g), b = leaf({5}, g);
    return GradcheckProblem{{a, b}, [=] { return add(a, b); }};
  }));
  r.push_back(op("sub", [](Rng& g) {
    Tensor a = leaf({4, 6}, g), b = leaf({6}, g);
    return GradcheckProblem{{a, b}, [=] { return sub(a, b); }};
  }));
  r.push_back(op("mul", [](Rng& g) {
    Tensor a = leaf({4, 6}, g), b = leaf({4, 6}, g);
    return GradcheckProblem{{a, b}, [=] { return mul(a, b); }};
  }));
  r.push_back(op("mul_broadcast", [](Rng& g) {
    Tensor a = leaf({4, 6}, g), b = leaf({6}, g);
    return GradcheckProblem{{a, b}, [=] { return mul(a, b); }};
  }));
  r.push_back(op("scale", [](Rng& g) {
    Tensor a = leaf({5, 5}, g);
    return GradcheckProblem{{a}, [=] { return scale(a, -1.7); }};
  }));
  r.push_back(op("add_scalar", [](Rng& g) {
    Tensor a = leaf({5, 5}, g);
    return GradcheckProblem{{a}, [=] { return mul(add_scalar(a, 0.3), a); }};
  }));
  r.push_back(op("matmul", [](Rng& g) {
    Tensor a = leaf({4, 5}, g), b = leaf({5, 3}, g);
    return GradcheckProblem{{a, b}, [=] { return matmul(a, b); }};
  }));
  r.push_back(op("matmul_batched", [](Rng& g) {
    Tensor a = leaf({2, 3, 4}, g), b = leaf({2, 4, 5}, g);
    return GradcheckProblem{{a, b}, [=] { return matmul(a, b); }};
  }));
  r.push_back(op("matmul_shared_rhs", [](Rng& g) {
    Tensor a = leaf({2, 3, 4}, g), b = leaf({4, 5}, g);
    return GradcheckProblem{{a, b}, [=] { return matmul(a, b); }};
  }));
  r.push_back(op("matmul_bt", [](Rng& g) {
    Tensor a = leaf({2, 3, 4}, g), b = leaf({2, 5, 4}, g);
    return GradcheckProblem{{a, b}, [=] { return matmul_bt(a, b); }};
  }));
  r.push_back(op("matmul_bt_shared_rhs", [](Rng& g) {
    Tensor a = leaf({2, 3, 4}, g), b = leaf({5, 4}, g);
    return GradcheckProblem{{a, b}, [=] { return matmul_bt(a, b); }};
  }));
  r.push_back(op("transpose", [](Rng& g) {
    Tensor a = leaf({2, 3, 4}, g), b = leaf({2, 3, 4}, g);
    return GradcheckProblem{{a, b}, [=] { return matmul(transpose(a), b); }};
  }));
  r.push_back(op("softmax", [](Rng& g) {
    Tensor a = leaf({4, 6}, g, -3.0, 3.0);
    return GradcheckProblem{{a}, [=] { return softmax(a, -1); }};
  }));
  r.push_back(op("softmax_axis0", [](Rng& g) {
    Tensor a = leaf({5, 4}, g, -3.0, 3.0);
    return GradcheckProblem{{a}, [=] { return softmax(a, 0); }};
  }));
  r.push_back(op("layer_norm", [](Rng& g) {
    Tensor a = leaf({4, 6}, g, -2.0, 2.0), gam = leaf({6}, g), bet = leaf({6}, g);
    return GradcheckProblem{{a, gam, bet}, [=] { return layer_norm(a, gam, bet); }};
  }));
  r.push_back(op("gelu", [](Rng& g) {
    Tensor a = leaf({5, 5}, g, -3.0, 3.0);
    return GradcheckProblem{{a}, [=] { return gelu(a); }};
  }));
  r.push_back(op("tanh", [](Rng& g) {
    Tensor a = leaf({5, 5}, g, -2.0, 2.0);
    return GradcheckProblem{{a}, [=] { return tanh(a); }};
  }));
  r.push_back(op("sigmoid", [](Rng& g) {
    Tensor a = leaf({5, 5}, g, -3.0, 3.0);
    return GradcheckProblem{{a}, [=] { return sigmoid(a); }};
  }));
  r.push_back(op("log", [](Rng& g) {
    Tensor a = leaf({5, 5}, g, 0.2, 3.0);
    return GradcheckProblem{{a}, [=] { return log(a); }};
  }));
  r.push_back(op("clamp_min", [](Rng& g) {
    // Keep every coordinate at least 0.05 away from the kink.
    std::vector<double> v(25);
    for (auto& x : v) x = (g.bernoulli(0.5) ? 1.0 : -1.0) * g.uniform(0.05, 1.0);
    Tensor a = Tensor::from({5, 5}, std::move(v), true);
    return GradcheckProblem{{a}, [=] { return clamp_min(a, 0.0); }};
  }));
  r.push_back(op("conv2d", [](Rng& g) {
    Tensor x = leaf({2, 3, 5, 5}, g), w = leaf({4, 3, 3, 3}, g), b = leaf({4}, g);
    return GradcheckProblem{{x, w, b}, [=] { return conv2d(x, w, b, Conv2dOptions{{1, 1}, {1, 1}}); }};
  }));
  r.push_back(op("conv2d_strided", [](Rng& g) {
    Tensor x = leaf({1, 3, 6, 6}, g), w = leaf({2, 3, 2, 2}, g), b = leaf({2}, g);
    return GradcheckProblem{{x, w, b}, [=] { return conv2d(x, w, b, Conv2dOptions{{2, 2}, {0, 0}}); }};
  }));
  r.push_back(op("conv2d_row_col", [](Rng& g) {
    Tensor x = leaf({2, 3, 4, 4}, g), w1 = leaf({3, 3, 1, 3}, g), w2 = leaf({3, 3, 3, 1}, g);
    return GradcheckProblem{{x, w1, w2}, [=] {
                              return conv2d(conv2d(x, w1, Tensor(), Conv2dOptions{{1, 1}, {0, 1}}), w2, Tensor(),
                                            Conv2dOptions{{1, 1}, {1, 0}});
                            }};
  }));
  r.push_back(op("gather", [](Rng& g) {
    Tensor a = leaf({4, 5}, g);
    std::vector<std::int64_t> idx;
    for (int i = 0; i < 30; ++i) idx.push_back(static_cast<std::int64_t>(g.below(21)) - 1);  // some pads, repeats
    return GradcheckProblem{{a}, [=] { return gather(a, {5, 6}, idx); }};
  }));
  r.push_back(op("reshape", [](Rng& g) {
    Tensor a = leaf({4, 6}, g), b = leaf({3, 8}, g);
    return GradcheckProblem{{a, b}, [=] { return mul(reshape(a, {3, 8}), b); }};
  }));
  r.push_back(op("slice_rows", [](Rng& g) {
    Tensor a = leaf({6, 5}, g);
    return GradcheckProblem{{a}, [=] { return mul(slice_rows(a, 1, 4), slice_rows(a, 2, 5)); }};
  }));
  r.push_back(op("slice_last", [](Rng& g) {
    Tensor a = leaf({3, 2, 8}, g);
    return GradcheckProblem{{a}, [=] { return mul(slice_last(a, 0, 4), slice_last(a, 4, 8)); }};
  }));
  r.push_back(op("concat_rows", [](Rng& g) {
    Tensor a = leaf({2, 5}, g), b = leaf({3, 5}, g);
    return GradcheckProblem{{a, b}, [=] { return concat({a, b, a}, 0); }};
  }));
  r.push_back(op("concat_last", [](Rng& g) {
    Tensor a = leaf({3, 3}, g), b = leaf({3, 5}, g);
    return GradcheckProblem{{a, b}, [=] { return concat({a, b}, -1); }};
  }));
  r.push_back(op("sum", [](Rng& g) {
    Tensor a = leaf({4, 6}, g);
    return GradcheckProblem{{a}, [=] { return mul(sum(mul(a, a)), sum(a)); }};
  }));
  r.push_back(op("mean", [](Rng& g) {
    Tensor a = leaf({4, 6}, g);
    return GradcheckProblem{{a}, [=] { return mul(mean(mul(a, a)), mean(a)); }};
  }));
  r.push_back(op("mean_rows", [](Rng& g) {
    Tensor a = leaf({5, 6}, g);
    return GradcheckProblem{{a}, [=] { return mul(mean_rows(a), mean_rows(mul(a, a))); }};
  }));

  r.push_back(mod("embed_view", "embedding", [](Rng& g) {
    ParamStore s;
    const PatchConfig pc{8, 4, 2, 6};
    const EmbeddingParams p = EmbeddingParams::create(s, "e", pc, g);
    Tensor img = leaf({2, 8, 8}, g, 0.0, 1.0);
    return GradcheckProblem{with_params({img}, s), [=] { return embed_view(img, pc, p.proj, p.pos).tokens; }};
  }));
  r.push_back(mod("msa", "backbone", [](Rng& g) {
    ParamStore s;
    const auto p = TransformerBlockParams::create(s, "b", 8, 2, 2, g);
    Tensor x = leaf({6, 8}, g);
    return GradcheckProblem{{x, p.attn.wq, p.attn.wk, p.attn.wv, p.attn.wo}, [=] { return msa(x, p.attn, 2); }};
  }));
  r.push_back(mod("transformer_block", "backbone", [](Rng& g) {
    ParamStore s;
    const auto p = TransformerBlockParams::create(s, "b", 8, 2, 2, g);
    Tensor x = leaf({6, 8}, g);
    return GradcheckProblem{with_params({x}, s), [=] { return transformer_block(x, p); }};
  }));
  r.push_back(mod("w_msa", "mv-fusion", [](Rng& g) {
    ParamStore s;
    const auto p = TransformerBlockParams::create(s, "b", 8, 2, 2, g);
    Tensor x = leaf({4, 8, 8}, g);
    return GradcheckProblem{{x, p.attn.wq, p.attn.wk, p.attn.wv, p.attn.wo}, [=] {
                              return shifted_window_attention(MultiViewGrid{x, 4, 2}, WindowConfig::regular(2),
                                                              p.attn, 2, nullptr)
                                  .grid;
                            }};
  }));
  r.push_back(mod("sw_msa", "mv-fusion", [](Rng& g) {
    ParamStore s;
    const auto p = TransformerBlockParams::create(s, "b", 8, 2, 2, g);
    Tensor x = leaf({4, 8, 8}, g);
    return GradcheckProblem{{x, p.attn.wq, p.attn.wk, p.attn.wv, p.attn.wo}, [=] {
                              return shifted_window_attention(MultiViewGrid{x, 4, 2}, WindowConfig::shifted(2),
                                                              p.attn, 2, nullptr)
                                  .grid;
                            }};
  }));
  r.push_back(mod("mfswfm", "mv-fusion", [](Rng& g) {
    ParamStore s;
    const auto p = MfswfmParams::create(s, "m", 2, 16, 8, 2, 2, g);
    Tensor a = leaf({16, 8}, g), b = leaf({16, 8}, g);
    return GradcheckProblem{with_params({a, b}, s), [=] {
                              return mfswfm({ViewTokenGrid{a, 4, 1, Modality::FFA}, ViewTokenGrid{b, 4, 2, Modality::FFA}},
                                            p);
                            }};
  }));
  r.push_back(mod("mswm_r8_large", "mm-fusion", [](Rng& g) {
    ParamStore s;
    const auto b = MswmBranch::create(s, "w", 8, Branch::Large, 4, g);
    Tensor y = leaf({36, 4}, g);
    return GradcheckProblem{with_params({y}, s), [=] { return mswm(ModalStream{y, 6, Modality::FFA}, b); }};
  }));
  r.push_back(mod("mswm_r2_small", "mm-fusion", [](Rng& g) {
    ParamStore s;
    const auto b = MswmBranch::create(s, "w", 2, Branch::Small, 4, g);
    Tensor y = leaf({16, 4}, g);
    return GradcheckProblem{with_params({y}, s), [=] { return mswm(ModalStream{y, 4, Modality::FFA}, b); }};
  }));
  r.push_back(mod("lrcl", "mm-fusion", [](Rng& g) {
    ParamStore s;
    const auto p = LrclParams::create(s, "l", 3, g);
    Tensor v = leaf({9, 6}, g);
    return GradcheckProblem{with_params({v}, s), [=] { return lrcl_residual(v, 3, 2, p); }};
  }));
  r.push_back(mod("mca", "mm-fusion", [](Rng& g) {
    ParamStore s;
    const auto p = McaParams::create(s, "c", 8, 4, 4, g);
    Tensor x = leaf({16, 8}, g), y = leaf({16, 8}, g);
    return GradcheckProblem{with_params({x, y}, s), [=] {
                              return mca(ModalStream{x, 4, Modality::CFP}, ModalStream{y, 4, Modality::FFA}, p);
                            }};
  }));
  r.push_back(mod("mmcam", "mm-fusion", [](Rng& g) {
    ParamStore s;
    const auto p = MmcamParams::create(s, "m", 8, 2, 8, g);
    Tensor x = leaf({16, 8}, g), y = leaf({16, 8}, g);
    return GradcheckProblem{with_params({x, y}, s), [=] {
                              auto [a, b] = mmcam(ModalStream{x, 4, Modality::CFP}, ModalStream{y, 4, Modality::FFA}, p);
                              return concat({a.tokens, b.tokens}, -1);
                            }};
  }));
  r.push_back(mod("cfft", "mm-fusion", [](Rng& g) {
    ParamStore s;
    const auto p = CfftParams::create(s, "f", 8, 2, {8, 4, 2}, g);
    Tensor x = leaf({16, 8}, g), y = leaf({16, 8}, g);
    return GradcheckProblem{with_params({x, y}, s), [=] {
                              return cfft(ModalStream{x, 4, Modality::CFP}, ModalStream{y, 4, Modality::FFA}, p);
                            }};
  }));
  r.push_back(mod("classify_ce", "decoder", [](Rng& g) {
    ParamStore s;
    const auto p = ClassifierParams::create(s, "k", 4, 6, g);
    Tensor x = leaf({5, 6}, g);
    return GradcheckProblem{with_params({x}, s), [=] { return ce_loss(classify(avg_pool_tokens(x), p), 2); }};
  }));
  r.push_back(mod("ce_multi_hot", "decoder", [](Rng& g) {
    ParamStore s;
    const auto p = ClassifierParams::create(s, "k", 4, 6, g);
    Tensor x = leaf({1, 6}, g);
    return GradcheckProblem{with_params({x}, s),
                            [=] { return ce_loss(classify(x, p), std::vector<double>{1, 0, 1, 0}); }};
  }));
  r.push_back(mod("lstm_step", "decoder", [](Rng& g) {
    ParamStore s;
    std::vector<LstmLayerParams> layers{LstmLayerParams::create(s, "l0", 5, 4, g),
                                        LstmLayerParams::create(s, "l1", 4, 4, g)};
    Tensor x = leaf({1, 5}, g), h0 = leaf({1, 4}, g), c0 = leaf({1, 4}, g), h1 = leaf({1, 4}, g),
           c1 = leaf({1, 4}, g);
    return GradcheckProblem{with_params({x, h0, c0, h1, c1}, s), [=] {
                              LstmState st = lstm_step(x, LstmState{{h0, h1}, {c0, c1}}, layers);
                              st = lstm_step(x, st, layers);
                              return concat({st.h[0], st.h[1], st.c[1]}, -1);
                            }};
  }));
  r.push_back(mod("sentence_step", "decoder", [](Rng& g) {
    ParamStore s;
    const auto p = SentenceParams::create(s, "s", 6, 5, 4, g);
    Tensor v = leaf({1, 6}, g), t = leaf({1, 4}, g);
    return GradcheckProblem{with_params({v, t}, s), [=] {
                              const SentenceStep st = sentence_step(v, t, p.initial_state(), p);
                              return concat({st.topic, reshape(st.stop_prob, {1, 2})}, -1);
                            }};
  }));
  r.push_back(mod("report_losses", "decoder", [](Rng& g) {
    ParamStore s;
    const Vocabulary vocab({"w0", "w1", "w2", "w3"});
    const auto p = ReportDecoderParams::create(s, "d", 6, vocab.size(), 5, g);
    Tensor v = leaf({1, 6}, g);
    return GradcheckProblem{with_params({v}, s), [=] {
                              const ReportLosses rl = report_losses(v, p, vocab, {{4, 5}, {6}});
                              return joint_loss(Tensor::scalar(0.0), rl.stop, rl.word);
                            }};
  }));
  return r;
}

}  // namespace

std::string GradcheckResult::to_json() const {
  nlohmann::ordered_json j;
  j["case"] = name;
  j["module"] = module;
  j["points"] = points;
  j["max_rel_error"] = max_rel_error;
  j["seconds"] = seconds;
  j["pass"] = pass;
  return j.dump();
}

const std::vector<GradcheckCase>& gradcheck_registry() {
  static const std::vector<GradcheckCase> registry = build_registry();
  return registry;
}

GradcheckResult run_gradcheck(const GradcheckCase& c, std::uint64_t seed, const GradcheckOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(seed);
  GradcheckProblem prob = c.build(rng);
  for (const auto& t : prob.inputs)
    if (!t.requires_grad()) throw UsageError("gradcheck case " + c.name + ": input does not require grad");

  Tensor weights;
  {
    NoGradGuard guard;
    const Tensor out = prob.fn();
    std::vector<double> w(out.numel());
    for (auto& x : w) x = rng.uniform(-1.0, 1.0);
    weights = Tensor::from(out.shape(), std::move(w));
  }
  auto objective = [&] { return sum(mul(prob.fn(), weights)); };

  for (auto& t : prob.inputs) t.clear_grad();
  objective().backward();

  // Every input gets at least one probe; the rest are spread uniformly over
  // all coordinates.
  std::vector<std::pair<std::size_t, std::size_t>> probes;
  std::size_t total = 0;
  for (std::size_t k = 0; k < prob.inputs.size(); ++k) {
    probes.emplace_back(k, rng.below(prob.inputs[k].numel()));
    total += prob.inputs[k].numel();
  }
  const std::size_t want = std::max(opts.points, probes.size());
  while (probes.size() < want && probes.size() < total) {
    std::size_t flat = rng.below(total), k = 0;
    while (flat >= prob.inputs[k].numel()) flat -= prob.inputs[k++].numel();
    probes.emplace_back(k, flat);
  }

  GradcheckResult res;
  res.name = c.name;
  res.module = c.module;
  res.points = probes.size();
  NoGradGuard guard;
  for (const auto& [k, i] : probes) {
    Tensor& t = prob.inputs[k];
    const double analytic = t.has_grad() ? t.grad()[i] : 0.0;
    double& slot = t.mutable_data()[i];
    const double saved = slot;
    auto at = [&](double offset) {
      slot = saved + offset;
      return objective().item();
    };
    const double h = opts.step;
    // Fourth-order central stencil.
    const double numeric = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
    slot = saved;
    const double denom = std::max({std::abs(analytic), std::abs(numeric), opts.floor});
    res.max_rel_error = std::max(res.max_rel_error, std::abs(analytic - numeric) / denom);
  }
  res.pass = res.max_rel_error < opts.tolerance;
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

std::vector<GradcheckResult> run_gradchecks(std::uint64_t seed, const GradcheckOptions& opts,
                                            const std::string& filter) {
  std::vector<GradcheckResult> out;
  std::uint64_t stream = 0;
  for (const auto& c : gradcheck_registry()) {
    ++stream;
    if (!filter.empty() && c.name.find(filter) == std::string::npos && c.module != filter) continue;
    out.push_back(run_gradcheck(c, derive_seed(seed, stream), opts));
  }
  return out;
}

}  // namespace mrdf
