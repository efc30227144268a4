#include "mrdf/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mrdf/error.hpp"

namespace mrdf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return static_cast<std::size_t>(x);
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("key '" + key + "' expects true/false, got '" + v + "'");
}

std::string fmt_double(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

}  // namespace

std::string task_name(Task t) {
  switch (t) {
    case Task::ClassifySingle: return "classify-single";
    case Task::ClassifyMulti: return "classify-multi";
    case Task::Report: return "report";
  }
  return "?";
}

std::string fusion_name(Fusion f) {
  switch (f) {
    case Fusion::Full: return "full";
    case Fusion::CfpOnly: return "cfp-only";
    case Fusion::FfaOnly: return "ffa-only";
  }
  return "?";
}

std::size_t RunConfig::effective_batch() const {
  if (batch != 0) return batch;
  return task == Task::Report ? 8 : 16;
}

PatchConfig RunConfig::patch() const { return PatchConfig{image_size, patch_size, channels, embed_dim}; }

DataConfig RunConfig::data() const {
  DataConfig d;
  d.image_size = image_size;
  d.cell = patch_size;
  d.channels = channels;
  d.views = views;
  d.classes = classes;
  d.mode = task == Task::ClassifySingle ? LabelMode::Single : LabelMode::Multi;
  d.marker_view = marker_view;
  d.noise = noise;
  d.distractor_prob = distractor_prob;
  return d;
}

std::size_t RunConfig::feature_dim() const { return fusion == Fusion::Full ? 2 * embed_dim : embed_dim; }

void RunConfig::validate() const {
  patch().validate();
  const std::size_t side = image_size / patch_size;
  if (window == 0 || side % window != 0) {
    throw ConfigError("token grid side " + std::to_string(side) + " (H/P) is not divisible by window size M=" +
                      std::to_string(window));
  }
  if (heads == 0 || embed_dim % heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by heads " + std::to_string(heads));
  }
  if (mca_heads == 0 || mca_heads % 2 != 0 || embed_dim % mca_heads != 0) {
    throw ConfigError("mca_heads must be even and divide embed_dim");
  }
  if (schedule.empty()) throw ConfigError("schedule must list at least one stage rate");
  for (auto r : schedule)
    if (r != 8 && r != 4 && r != 2) throw ConfigError("schedule rates must be 8, 4 or 2");
  if (depth == 0) throw ConfigError("depth must be at least 1");
  if (views == 0) throw ConfigError("views must be at least 1");
  if (task == Task::ClassifySingle && classes != 4) throw ConfigError("classify-single uses K=4 classes");
  if (task != Task::ClassifySingle && (classes < 1 || classes > kLesionKinds)) {
    throw ConfigError("multi-label tasks support K in 1..4");
  }
  if (task == Task::Report && fusion != Fusion::Full) {
    throw ConfigError("fusion ablations are only defined for classification tasks");
  }
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(plateau_factor > 0.0 && plateau_factor <= 1.0)) throw ConfigError("plateau_factor must be in (0, 1]");
  if (hidden == 0) throw ConfigError("hidden must be positive");
  if (max_sentences == 0 || max_words == 0) throw ConfigError("decoding limits must be positive");
  if (train_samples == 0) throw ConfigError("train_samples must be at least 1");
  data().validate();
}

void RunConfig::set(const std::string& key, const std::string& value) {
  static const std::map<std::string, std::function<void(RunConfig&, const std::string&, const std::string&)>> setters{
      {"task",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "classify-single") c.task = Task::ClassifySingle;
         else if (v == "classify-multi") c.task = Task::ClassifyMulti;
         else if (v == "report") c.task = Task::Report;
         else throw ConfigError("key '" + k + "': unknown task '" + v + "'");
       }},
      {"fusion",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "full") c.fusion = Fusion::Full;
         else if (v == "cfp-only") c.fusion = Fusion::CfpOnly;
         else if (v == "ffa-only") c.fusion = Fusion::FfaOnly;
         else throw ConfigError("key '" + k + "': unknown fusion '" + v + "'");
       }},
      {"image_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.image_size = parse_size(k, v); }},
      {"patch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.patch_size = parse_size(k, v); }},
      {"channels", [](RunConfig& c, const std::string& k, const std::string& v) { c.channels = parse_size(k, v); }},
      {"embed_dim", [](RunConfig& c, const std::string& k, const std::string& v) { c.embed_dim = parse_size(k, v); }},
      {"views", [](RunConfig& c, const std::string& k, const std::string& v) { c.views = parse_size(k, v); }},
      {"window", [](RunConfig& c, const std::string& k, const std::string& v) { c.window = parse_size(k, v); }},
      {"depth", [](RunConfig& c, const std::string& k, const std::string& v) { c.depth = parse_size(k, v); }},
      {"heads", [](RunConfig& c, const std::string& k, const std::string& v) { c.heads = parse_size(k, v); }},
      {"mca_heads", [](RunConfig& c, const std::string& k, const std::string& v) { c.mca_heads = parse_size(k, v); }},
      {"schedule",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.schedule.clear();
         std::stringstream ss(v);
         for (std::string part; std::getline(ss, part, ',');) c.schedule.push_back(parse_size(k, trim(part)));
       }},
      {"classes", [](RunConfig& c, const std::string& k, const std::string& v) { c.classes = parse_size(k, v); }},
      {"hidden", [](RunConfig& c, const std::string& k, const std::string& v) { c.hidden = parse_size(k, v); }},
      {"lr", [](RunConfig& c, const std::string& k, const std::string& v) { c.lr = parse_double(k, v); }},
      {"batch", [](RunConfig& c, const std::string& k, const std::string& v) { c.batch = parse_size(k, v); }},
      {"epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.epochs = parse_size(k, v); }},
      {"plateau_patience",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.plateau_patience = parse_size(k, v); }},
      {"plateau_factor",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.plateau_factor = parse_double(k, v); }},
      {"augment", [](RunConfig& c, const std::string& k, const std::string& v) { c.augment = parse_bool(k, v); }},
      {"seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_size(k, v); }},
      {"train_samples",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train_samples = parse_size(k, v); }},
      {"test_samples",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.test_samples = parse_size(k, v); }},
      {"marker_view", [](RunConfig& c, const std::string& k, const std::string& v) { c.marker_view = parse_size(k, v); }},
      {"noise", [](RunConfig& c, const std::string& k, const std::string& v) { c.noise = parse_double(k, v); }},
      {"distractor_prob",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.distractor_prob = parse_double(k, v); }},
      {"train_dir", [](RunConfig& c, const std::string&, const std::string& v) { c.train_dir = v; }},
      {"test_dir", [](RunConfig& c, const std::string&, const std::string& v) { c.test_dir = v; }},
      {"max_sentences",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.max_sentences = parse_size(k, v); }},
      {"max_words", [](RunConfig& c, const std::string& k, const std::string& v) { c.max_words = parse_size(k, v); }},
  };
  auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(*this, key, value);
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  std::string sched;
  for (std::size_t i = 0; i < schedule.size(); ++i) sched += (i ? "," : "") + std::to_string(schedule[i]);
  os << "task = " << task_name(task) << '\n'
     << "fusion = " << fusion_name(fusion) << '\n'
     << "image_size = " << image_size << '\n'
     << "patch_size = " << patch_size << '\n'
     << "channels = " << channels << '\n'
     << "embed_dim = " << embed_dim << '\n'
     << "views = " << views << '\n'
     << "window = " << window << '\n'
     << "depth = " << depth << '\n'
     << "heads = " << heads << '\n'
     << "mca_heads = " << mca_heads << '\n'
     << "schedule = " << sched << '\n'
     << "classes = " << classes << '\n'
     << "hidden = " << hidden << '\n'
     << "lr = " << fmt_double(lr) << '\n'
     << "batch = " << batch << '\n'
     << "epochs = " << epochs << '\n'
     << "plateau_patience = " << plateau_patience << '\n'
     << "plateau_factor = " << fmt_double(plateau_factor) << '\n'
     << "augment = " << (augment ? "true" : "false") << '\n'
     << "seed = " << seed << '\n'
     << "train_samples = " << train_samples << '\n'
     << "test_samples = " << test_samples << '\n'
     << "marker_view = " << marker_view << '\n'
     << "noise = " << fmt_double(noise) << '\n'
     << "distractor_prob = " << fmt_double(distractor_prob) << '\n'
     << "train_dir = " << train_dir << '\n'
     << "test_dir = " << test_dir << '\n'
     << "max_sentences = " << max_sentences << '\n'
     << "max_words = " << max_words << '\n';
  return os.str();
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream is(text);
  std::size_t lineno = 0;
  for (std::string line; std::getline(is, line);) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + " is not of the form key = value");
    }
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

}  // namespace mrdf
