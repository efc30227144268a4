// Command-line front end: train, eval, generate, flops, gradcheck, make-data.
#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "mrdf/config.hpp"
#include "mrdf/error.hpp"
#include "mrdf/gradcheck.hpp"
#include "mrdf/mv_fusion.hpp"
#include "mrdf/trainer.hpp"

namespace fs = std::filesystem;
using namespace mrdf;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out = "run";
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c, bool needs_config) {
  auto* opt = cmd->add_option("--config", c.config, "flat key = value run configuration");
  if (needs_config) opt->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "overrides the config seed")->each([&c](const std::string&) { c.seed_set = true; });
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
  cmd->add_option("--set", c.overrides, "extra key=value overrides, applied after the config file");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : RunConfig::load(c.config);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed_set) cfg.seed = c.seed;
  cfg.validate();
  return cfg;
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  if (!os) throw IoError("cannot write " + p.string());
  os << text;
}

Model load_model(const RunConfig& cfg, const std::string& checkpoint, const Common& c) {
  Model model(cfg);
  const fs::path ckpt = checkpoint.empty() ? fs::path(c.out) / "checkpoint.bin" : fs::path(checkpoint);
  model.params().load(ckpt);
  return model;
}

std::string one_line(std::string s) {
  for (auto& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

int exit_code(const std::string& code) {
  if (code == "E_USAGE") return 2;
  if (code == "E_CONFIG") return 3;
  if (code == "E_DIMENSION") return 4;
  if (code == "E_NUMERIC") return 5;
  if (code == "E_IO") return 6;
  if (code == "E_GRADCHECK") return 7;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal multi-view fundus fusion: training and verification tools"};
  app.require_subcommand(1);

  Common train_c, eval_c, gen_c, data_c, gc_c, flops_c;

  auto* train_cmd = app.add_subcommand("train", "train a model; writes checkpoint.bin and metrics.jsonl");
  add_common(train_cmd, train_c, true);

  std::string eval_ckpt, eval_split = "test";
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval_cmd, eval_c, true);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "defaults to <out>/checkpoint.bin");
  eval_cmd->add_option("--split", eval_split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();

  std::string gen_ckpt;
  std::size_t gen_limit = 0;
  auto* gen_cmd = app.add_subcommand("generate", "generate reports for the test split");
  add_common(gen_cmd, gen_c, true);
  gen_cmd->add_option("--checkpoint", gen_ckpt, "defaults to <out>/checkpoint.bin");
  gen_cmd->add_option("--limit", gen_limit, "only the first n samples (0 = all)");

  auto* data_cmd = app.add_subcommand("make-data", "write the train and test splits to <out>/train and <out>/test");
  add_common(data_cmd, data_c, false);

  std::string gc_filter;
  GradcheckOptions gc_opts;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of every registered op");
  add_common(gc_cmd, gc_c, false);
  gc_cmd->add_option("--filter", gc_filter, "case name substring or module name");
  gc_cmd->add_option("--points", gc_opts.points)->capture_default_str();
  gc_cmd->add_option("--tolerance", gc_opts.tolerance)->capture_default_str();

  std::uint64_t fv = 4, fn = 196, fd = 768, fm = 7;
  auto* flops_cmd = app.add_subcommand("flops", "attention FLOP counts for global and window attention");
  add_common(flops_cmd, flops_c, false);
  flops_cmd->add_option("-V,--views", fv)->capture_default_str();
  flops_cmd->add_option("-N,--tokens", fn)->capture_default_str();
  flops_cmd->add_option("-D,--dim", fd)->capture_default_str();
  flops_cmd->add_option("-M,--window", fm)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: E_USAGE: " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    if (*train_cmd) {
      const RunConfig cfg = resolve(train_c);
      run_training(cfg, train_c.out, [](const std::string& line) { std::cout << line << std::endl; });
    } else if (*eval_cmd) {
      const RunConfig cfg = resolve(eval_c);
      const Model model = load_model(cfg, eval_ckpt, eval_c);
      const Dataset data = load_split(cfg, eval_split == "train" ? Split::Train : Split::Test);
      const std::string report = evaluate(model, data).to_json();
      ensure_dir(eval_c.out);
      write_file(fs::path(eval_c.out) / ("eval_" + eval_split + ".json"), report + "\n");
      std::cout << report << std::endl;
    } else if (*gen_cmd) {
      const RunConfig cfg = resolve(gen_c);
      if (cfg.task != Task::Report) throw UsageError("generate needs task = report");
      const Model model = load_model(cfg, gen_ckpt, gen_c);
      Dataset data = load_split(cfg, Split::Test);
      if (gen_limit && data.samples.size() > gen_limit) data.samples.resize(gen_limit);
      ensure_dir(gen_c.out);
      std::ofstream os(fs::path(gen_c.out) / "reports.jsonl");
      std::size_t i = 0;
      for (const auto& item : generate_reports(model, data)) {
        nlohmann::ordered_json j;
        j["index"] = i++;
        j["report"] = item.candidate;
        j["reference"] = item.reference;
        j["tokens"] = item.tokens;
        os << j.dump() << '\n';
        std::cout << j.dump() << std::endl;
      }
    } else if (*data_cmd) {
      const RunConfig cfg = resolve(data_c);
      save_dataset(load_split(cfg, Split::Train), fs::path(data_c.out) / "train");
      save_dataset(load_split(cfg, Split::Test), fs::path(data_c.out) / "test");
      nlohmann::ordered_json j;
      j["train"] = (fs::path(data_c.out) / "train").string();
      j["test"] = (fs::path(data_c.out) / "test").string();
      j["train_samples"] = cfg.train_samples;
      j["test_samples"] = cfg.test_samples;
      std::cout << j.dump() << std::endl;
    } else if (*gc_cmd) {
      const std::uint64_t seed = gc_c.seed_set ? gc_c.seed : resolve(gc_c).seed;
      const auto results = run_gradchecks(seed, gc_opts, gc_filter);
      if (results.empty()) throw UsageError("no gradcheck case matches '" + gc_filter + "'");
      std::size_t failed = 0;
      double worst = 0.0;
      for (const auto& r : results) {
        std::cout << r.to_json() << std::endl;
        failed += r.pass ? 0 : 1;
        worst = std::max(worst, r.max_rel_error);
      }
      nlohmann::ordered_json j;
      j["cases"] = results.size();
      j["failed"] = failed;
      j["max_rel_error"] = worst;
      j["tolerance"] = gc_opts.tolerance;
      std::cout << j.dump() << std::endl;
      if (failed) throw Error("E_GRADCHECK", std::to_string(failed) + " gradcheck case(s) above tolerance");
    } else if (*flops_cmd) {
      std::cout << flop_count(fv, fn, fd, fm).to_json() << std::endl;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.code() << ": " << one_line(e.what()) << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: E_INTERNAL: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}
