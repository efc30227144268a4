#include "mrdf/trainer.hpp"

#include <chrono>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>

#include "mrdf/error.hpp"
#include "mrdf/ops.hpp"

namespace mrdf {

namespace {

enum SeedStream : std::uint64_t { kInitStream = 0, kTrainData = 1, kTestData = 2, kTrainLoop = 3 };

std::string join_report(const std::vector<std::vector<std::string>>& sentences) {
  std::string out;
  for (const auto& s : sentences)
    for (const auto& w : s) out += (out.empty() ? "" : " ") + w;
  return out;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p);
  if (!os) throw IoError("cannot write " + p.string());
  os << text;
}

}  // namespace

Dataset load_split(const RunConfig& cfg, Split split) {
  const std::string& dir = split == Split::Train ? cfg.train_dir : cfg.test_dir;
  if (!dir.empty()) {
    Dataset d = load_dataset(dir);
    const DataConfig want = cfg.data();
    if (d.cfg.image_size != want.image_size || d.cfg.cell != want.cell || d.cfg.channels != want.channels ||
        d.cfg.views != want.views || d.cfg.classes != want.classes || d.cfg.mode != want.mode) {
      throw ConfigError("dataset at " + dir + " does not match the run geometry");
    }
    return d;
  }
  const std::size_t n = split == Split::Train ? cfg.train_samples : cfg.test_samples;
  if (n == 0) return Dataset{cfg.data(), 0, {}};
  return generate_dataset(derive_seed(cfg.seed, split == Split::Train ? kTrainData : kTestData), n, cfg.data());
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["loss"] = loss;
  j["classification"] = nlohmann::ordered_json::parse(classification.to_json());
  if (text) {
    j["text"] = nlohmann::ordered_json::parse(text->to_json());
    j["max_report_tokens"] = max_report_tokens;
  }
  return j.dump();
}

EvalReport evaluate(const Model& model, const Dataset& data) {
  NoGradGuard guard;
  const RunConfig& cfg = model.config();
  EvalReport r;
  std::vector<std::size_t> preds, truths;
  std::vector<std::vector<std::uint8_t>> mpreds, mtruths;
  std::vector<Tokens> candidates;
  std::vector<std::vector<Tokens>> references;
  for (const auto& s : data.samples) {
    const Tensor v_a = model.features(s.cfp, s.ffa);
    const Tensor probs = model.class_probs(v_a);
    r.loss += model.loss_from_features(v_a, probs, s, false).item();
    if (cfg.task == Task::ClassifySingle) {
      preds.push_back(predict_single(probs));
      truths.push_back(s.label);
    } else {
      mpreds.push_back(predict_multi(probs));
      mtruths.push_back(s.multi_hot);
    }
    if (cfg.task == Task::Report) {
      const GeneratedReport g = model.generate(v_a);
      r.max_report_tokens = std::max(r.max_report_tokens, g.token_count());
      Tokens cand;
      for (const auto& sent : g.sentences)
        for (int id : sent) cand.push_back(model.vocab().word(id));
      candidates.push_back(std::move(cand));
      references.push_back({split_tokens(join_report(s.report))});
    }
  }
  if (!data.samples.empty()) r.loss /= static_cast<double>(data.samples.size());
  r.classification = cfg.task == Task::ClassifySingle ? classification_metrics(preds, truths, cfg.classes)
                                                      : classification_metrics(mpreds, mtruths, cfg.classes);
  if (cfg.task == Task::Report) r.text = text_metrics(candidates, references);
  return r;
}

std::vector<GeneratedItem> generate_reports(const Model& model, const Dataset& data) {
  NoGradGuard guard;
  std::vector<GeneratedItem> out;
  for (const auto& s : data.samples) {
    const GeneratedReport g = model.generate(model.features(s.cfp, s.ffa));
    GeneratedItem item;
    std::vector<int> ids;
    for (const auto& sent : g.sentences) ids.insert(ids.end(), sent.begin(), sent.end());
    item.candidate = model.vocab().decode(ids);
    item.reference = join_report(s.report);
    item.tokens = g.token_count();
    out.push_back(std::move(item));
  }
  return out;
}

std::string EpochRecord::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["train_loss"] = train_loss;
  j["lr"] = lr;
  j["seconds"] = seconds;
  j["test"] = nlohmann::ordered_json::parse(test.to_json());
  return j.dump();
}

double mean_loss(const Model& model, const Dataset& data) {
  NoGradGuard guard;
  double total = 0.0;
  for (const auto& s : data.samples) total += model.loss(s).item();
  return data.samples.empty() ? 0.0 : total / static_cast<double>(data.samples.size());
}

TrainResult train(Model& model, const Dataset& train_set, const Dataset* test_set, const TrainOptions& opts) {
  const RunConfig& cfg = model.config();
  if (train_set.samples.empty()) throw UsageError("train: empty training set");
  TrainResult result;
  result.initial_loss = mean_loss(model, train_set);
  ParamStore& store = model.params();
  Adam adam(AdamOptions{cfg.lr});
  Rng rng(derive_seed(cfg.seed, kTrainLoop));
  std::vector<std::size_t> order(train_set.samples.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t B = cfg.effective_batch();
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = adam.lr();
    rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += B) {
      const std::size_t end = std::min(order.size(), start + B);
      store.clear_grads();
      for (std::size_t i = start; i < end; ++i) {
        const SyntheticSample& raw = train_set.samples[order[i]];
        const Tensor loss = cfg.augment ? model.loss(augment(raw, rng)) : model.loss(raw);
        total += loss.item();
        scale(loss, 1.0 / static_cast<double>(end - start)).backward();
      }
      adam.step(store);
    }
    rec.train_loss = total / static_cast<double>(order.size());
    if (rec.train_loss < best) {
      best = rec.train_loss;
      since_best = 0;
    } else if (++since_best >= cfg.plateau_patience && cfg.plateau_patience > 0) {
      adam.set_lr(adam.lr() * cfg.plateau_factor);
      since_best = 0;
    }
    if (opts.eval_each_epoch && test_set && !test_set->samples.empty()) rec.test = evaluate(model, *test_set);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (opts.on_epoch) opts.on_epoch(rec.to_json());
    result.history.push_back(std::move(rec));
  }
  store.clear_grads();
  return result;
}

TrainResult run_training(const RunConfig& cfg, const std::filesystem::path& out,
                         std::function<void(const std::string&)> on_epoch) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  write_text(out / "config.txt", cfg.to_text());
  const Dataset train_set = load_split(cfg, Split::Train);
  const Dataset test_set = load_split(cfg, Split::Test);
  Model model(cfg);
  std::ofstream metrics(out / "metrics.jsonl");
  if (!metrics) throw IoError("cannot write " + (out / "metrics.jsonl").string());
  TrainOptions opts;
  opts.on_epoch = [&](const std::string& line) {
    metrics << line << '\n';
    metrics.flush();
    if (on_epoch) on_epoch(line);
  };
  TrainResult result = train(model, train_set, &test_set, opts);
  model.params().save(out / "checkpoint.bin");
  nlohmann::ordered_json fin;
  fin["initial_loss"] = result.initial_loss;
  fin["epochs"] = result.history.size();
  fin["train"] = nlohmann::ordered_json::parse(evaluate(model, train_set).to_json());
  if (!test_set.samples.empty()) fin["test"] = nlohmann::ordered_json::parse(evaluate(model, test_set).to_json());
  write_text(out / "final.json", fin.dump(2) + "\n");
  return result;
}

}  // namespace mrdf
