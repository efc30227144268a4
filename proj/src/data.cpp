#include "mrdf/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>

#include "mrdf/error.hpp"

namespace mrdf {

namespace {

constexpr char kSampleMagic[8] = {'M', 'R', 'D', 'F', 'S', 'M', 'P', '1'};

// Pixel masks in cell-relative coordinates centred on the cell.
bool shape_pixel(LesionKind kind, std::size_t py, std::size_t px, std::size_t cell) {
  const double c = static_cast<double>(cell);
  const double u = std::abs((static_cast<double>(py) + 0.5) / c - 0.5);
  const double v = std::abs((static_cast<double>(px) + 0.5) / c - 0.5);
  const double tol = 1e-9;
  switch (kind) {
    case LesionKind::Plus:
      return std::max(u, v) < 0.375 + tol && std::min(u, v) < 0.125;
    case LesionKind::Cross:
      return std::max(u, v) < 0.375 + tol && std::abs(u - v) < 0.125 - tol;
    case LesionKind::Ring: {
      const double m = std::max(u, v);
      return m > 0.25 && m < 0.375 + tol;
    }
    case LesionKind::Diamond: {
      const double s = u + v;
      return s > 0.25 - tol && s < 0.375 + tol;
    }
  }
  return false;
}

bool square_pixel(std::size_t py, std::size_t px, std::size_t cell) {
  const double c = static_cast<double>(cell);
  const double u = std::abs((static_cast<double>(py) + 0.5) / c - 0.5);
  const double v = std::abs((static_cast<double>(px) + 0.5) / c - 0.5);
  return std::max(u, v) < 0.25;
}

Region region_of(std::size_t cy, std::size_t cx, std::size_t grid) {
  const std::size_t lo = grid / 4, hi = grid - grid / 4;
  return cy >= lo && cy < hi && cx >= lo && cx < hi ? Region::Central : Region::Peripheral;
}

struct Occupancy {
  std::size_t grid;
  std::vector<std::vector<bool>> used;  // per image (0 = CFP), grid*grid cells

  Occupancy(std::size_t g, std::size_t images) : grid(g), used(images, std::vector<bool>(g * g, false)) {}

  // Picks a free cell, preferring `want` region. Returns false if the image
  // is full.
  bool pick(std::size_t image, const Region* want, Rng& rng, std::size_t& cy, std::size_t& cx) {
    for (int pass = 0; pass < 2; ++pass) {
      std::vector<std::size_t> free;
      for (std::size_t i = 0; i < grid * grid; ++i) {
        if (used[image][i]) continue;
        if (pass == 0 && want && region_of(i / grid, i % grid, grid) != *want) continue;
        free.push_back(i);
      }
      if (free.empty()) continue;
      const std::size_t i = free[rng.below(free.size())];
      used[image][i] = true;
      cy = i / grid;
      cx = i % grid;
      return true;
    }
    return false;
  }
};

template <typename T>
void put(std::string& out, T v) {
  static_assert(std::endian::native == std::endian::little, "sample I/O assumes a little-endian host");
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw IoError("truncated sample file");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::string serialize_sample(const SyntheticSample& s) {
  std::string out(kSampleMagic, sizeof(kSampleMagic));
  const Shape& sh = s.cfp.shape();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(sh[0]));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(sh[1]));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(sh[2]));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.ffa.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.label));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.multi_hot.size()));
  for (auto b : s.multi_hot) put<std::uint8_t>(out, b);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.params.lesions.size()));
  for (const auto& l : s.params.lesions) {
    put<std::uint8_t>(out, static_cast<std::uint8_t>(l.kind));
    put<std::uint8_t>(out, l.present ? 1 : 0);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(l.region));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.view));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.cy));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.cx));
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.params.distractors.size()));
  for (const auto& d : s.params.distractors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(d.view));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(d.cy));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(d.cx));
  }
  auto images = [&](const Tensor& t) {
    for (double v : t.data()) put<double>(out, v);
  };
  images(s.cfp);
  for (const auto& f : s.ffa) images(f);
  return out;
}

SyntheticSample deserialize_sample(const std::string& in) {
  if (in.size() < sizeof(kSampleMagic) || std::memcmp(in.data(), kSampleMagic, sizeof(kSampleMagic)) != 0) {
    throw IoError("bad sample magic");
  }
  std::size_t pos = sizeof(kSampleMagic);
  SyntheticSample s;
  const std::size_t C = take<std::uint32_t>(in, pos), H = take<std::uint32_t>(in, pos),
                    W = take<std::uint32_t>(in, pos), V = take<std::uint32_t>(in, pos);
  s.label = take<std::uint32_t>(in, pos);
  const std::size_t K = take<std::uint32_t>(in, pos);
  for (std::size_t k = 0; k < K; ++k) s.multi_hot.push_back(take<std::uint8_t>(in, pos));
  const std::size_t nl = take<std::uint32_t>(in, pos);
  for (std::size_t i = 0; i < nl; ++i) {
    Lesion l;
    l.kind = static_cast<LesionKind>(take<std::uint8_t>(in, pos));
    l.present = take<std::uint8_t>(in, pos) != 0;
    l.region = static_cast<Region>(take<std::uint8_t>(in, pos));
    l.view = take<std::uint32_t>(in, pos);
    l.cy = take<std::uint32_t>(in, pos);
    l.cx = take<std::uint32_t>(in, pos);
    s.params.lesions.push_back(l);
  }
  const std::size_t nd = take<std::uint32_t>(in, pos);
  for (std::size_t i = 0; i < nd; ++i) {
    Distractor d;
    d.view = take<std::uint32_t>(in, pos);
    d.cy = take<std::uint32_t>(in, pos);
    d.cx = take<std::uint32_t>(in, pos);
    s.params.distractors.push_back(d);
  }
  auto image = [&]() {
    std::vector<double> v(C * H * W);
    for (auto& x : v) x = take<double>(in, pos);
    return Tensor::from({C, H, W}, std::move(v));
  };
  s.cfp = image();
  for (std::size_t v = 0; v < V; ++v) s.ffa.push_back(image());
  if (pos != in.size()) throw IoError("trailing bytes in sample file");
  s.report = report_for(s.params);
  return s;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

void DataConfig::validate() const {
  if (cell == 0 || image_size % cell != 0) {
    throw ConfigError("image size " + std::to_string(image_size) + " is not divisible by cell size " +
                      std::to_string(cell));
  }
  if (grid() < 4) throw ConfigError("data grid must be at least 4x4 cells");
  if (channels == 0) throw ConfigError("channels must be positive");
  if (views == 0) throw ConfigError("at least one FFA view is required");
  if (marker_view < 1 || marker_view > views) {
    throw ConfigError("marker view " + std::to_string(marker_view) + " outside 1.." + std::to_string(views));
  }
  if (mode == LabelMode::Single && classes != 4) throw ConfigError("single-label data requires K=4");
  if (mode == LabelMode::Multi && (classes < 1 || classes > kLesionKinds)) {
    throw ConfigError("multi-label data supports K in 1..4");
  }
  if (noise < 0.0 || noise >= 0.5) throw ConfigError("noise must be in [0, 0.5)");
  if (distractor_prob < 0.0 || distractor_prob > 1.0) throw ConfigError("distractor_prob must be in [0, 1]");
}

const char* lesion_name(LesionKind kind) {
  switch (kind) {
    case LesionKind::Plus: return "hemorrhage";
    case LesionKind::Cross: return "exudate";
    case LesionKind::Ring: return "leakage";
    case LesionKind::Diamond: return "microaneurysm";
  }
  return "?";
}

const std::vector<std::string>& report_words() {
  static const std::vector<std::string> words{
      "no",      "abnormality", "observed", "in",          "the",       "region",      ".",
      "central", "peripheral",  "hemorrhage", "exudate", "leakage", "microaneurysm"};
  return words;
}

std::string label_mode_name(LabelMode m) { return m == LabelMode::Single ? "single" : "multi"; }

LabelMode parse_label_mode(const std::string& s) {
  if (s == "single") return LabelMode::Single;
  if (s == "multi") return LabelMode::Multi;
  throw ConfigError("unknown label mode '" + s + "' (expected single or multi)");
}

SampleParams draw_params(const DataConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t g = cfg.grid();
  Occupancy occ(g, cfg.views + 1);
  SampleParams p;
  std::vector<std::pair<LesionKind, std::size_t>> plan;  // kind, view (views+1 = random FFA view)
  if (cfg.mode == LabelMode::Single) {
    plan = {{LesionKind::Plus, 0}, {LesionKind::Ring, cfg.marker_view}};
  } else {
    const std::vector<std::pair<LesionKind, std::size_t>> all{
        {LesionKind::Plus, 0}, {LesionKind::Cross, 0}, {LesionKind::Ring, cfg.marker_view},
        {LesionKind::Diamond, cfg.views + 1}};
    plan.assign(all.begin(), all.begin() + static_cast<long>(cfg.classes));
  }
  // Every lesion gets a location whether or not it is present, so the random
  // stream does not depend on the labels.
  for (const auto& [kind, view_spec] : plan) {
    Lesion l;
    l.kind = kind;
    l.present = rng.bernoulli(0.5);
    l.view = view_spec == cfg.views + 1 ? 1 + rng.below(cfg.views) : view_spec;
    l.region = rng.bernoulli(0.5) ? Region::Peripheral : Region::Central;
    if (!occ.pick(l.view, &l.region, rng, l.cy, l.cx)) throw ConfigError("grid too small for planted lesions");
    l.region = region_of(l.cy, l.cx, g);
    p.lesions.push_back(l);
  }
  for (std::size_t img = 0; img <= cfg.views; ++img) {
    if (!rng.bernoulli(cfg.distractor_prob)) continue;
    Distractor d;
    d.view = img;
    if (occ.pick(img, nullptr, rng, d.cy, d.cx)) p.distractors.push_back(d);
  }
  return p;
}

std::size_t single_label(const SampleParams& params) {
  if (params.lesions.size() != 2) throw UsageError("single_label: expected the two single-label markers");
  return 2 * (params.lesions[0].present ? 1 : 0) + (params.lesions[1].present ? 1 : 0);
}

std::vector<std::uint8_t> multi_hot(const SampleParams& params, std::size_t classes) {
  std::vector<std::uint8_t> out(classes, 0);
  for (std::size_t k = 0; k < classes && k < params.lesions.size(); ++k) out[k] = params.lesions[k].present ? 1 : 0;
  return out;
}

std::vector<std::vector<std::string>> report_for(const SampleParams& params) {
  std::vector<std::vector<std::string>> out;
  for (const auto& l : params.lesions) {
    if (!l.present) continue;
    out.push_back({lesion_name(l.kind), "observed", "in", "the",
                   l.region == Region::Central ? "central" : "peripheral", "region", "."});
  }
  if (out.empty()) out.push_back({"no", "abnormality", "observed", "."});
  return out;
}

SyntheticSample render_sample(const SampleParams& params, const DataConfig& cfg, Rng& noise_rng) {
  cfg.validate();
  const std::size_t C = cfg.channels, H = cfg.image_size, cell = cfg.cell;
  std::vector<std::vector<double>> img(cfg.views + 1, std::vector<double>(C * H * H));
  for (auto& im : img)
    for (auto& v : im) v = noise_rng.uniform(0.0, cfg.noise);
  auto paint = [&](std::size_t view, std::size_t cy, std::size_t cx, auto&& inside) {
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t py = 0; py < cell; ++py)
        for (std::size_t px = 0; px < cell; ++px) {
          if (!inside(py, px)) continue;
          double& v = img[view][(c * H + cy * cell + py) * H + cx * cell + px];
          v = 1.0 - v;  // reuses the background draw as foreground noise
        }
  };
  for (const auto& l : params.lesions) {
    if (!l.present) continue;
    if (cfg.erase_ffa_markers && l.view != 0) continue;
    paint(l.view, l.cy, l.cx, [&](std::size_t py, std::size_t px) { return shape_pixel(l.kind, py, px, cell); });
  }
  for (const auto& d : params.distractors)
    paint(d.view, d.cy, d.cx, [&](std::size_t py, std::size_t px) { return square_pixel(py, px, cell); });

  SyntheticSample s;
  s.params = params;
  s.cfp = Tensor::from({C, H, H}, std::move(img[0]));
  for (std::size_t v = 1; v <= cfg.views; ++v) s.ffa.push_back(Tensor::from({C, H, H}, std::move(img[v])));
  s.label = cfg.mode == LabelMode::Single ? single_label(params) : 0;
  s.multi_hot = multi_hot(params, cfg.mode == LabelMode::Single ? params.lesions.size() : cfg.classes);
  s.report = report_for(params);
  return s;
}

Dataset generate_dataset(std::uint64_t seed, std::size_t n_samples, const DataConfig& cfg) {
  if (n_samples == 0) throw ConfigError("n_samples must be at least 1");
  cfg.validate();
  Dataset d;
  d.cfg = cfg;
  d.seed = seed;
  Rng rng(seed);
  d.samples.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const SampleParams p = draw_params(cfg, rng);
    d.samples.push_back(render_sample(p, cfg, rng));
  }
  return d;
}

Tensor flip_horizontal(const Tensor& image) {
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  auto src = image.data();
  std::vector<double> out(src.size());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) out[(c * H + y) * W + x] = src[(c * H + y) * W + (W - 1 - x)];
  return Tensor::from(image.shape(), std::move(out));
}

Tensor rotate90(const Tensor& image, std::size_t quarter_turns) {
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (H != W) throw DimensionError("rotate90 expects square images");
  Tensor cur = image;
  for (std::size_t t = 0; t < quarter_turns % 4; ++t) {
    auto src = cur.data();
    std::vector<double> out(src.size());
    // Counter-clockwise: out[y][x] = in[x][W-1-y]
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) out[(c * H + y) * W + x] = src[(c * H + x) * W + (W - 1 - y)];
    cur = Tensor::from(image.shape(), std::move(out));
  }
  return cur;
}

SyntheticSample augment(const SyntheticSample& s, Rng& rng) {
  const bool flip = rng.bernoulli(0.5);
  const bool rotate = rng.bernoulli(0.5);
  const std::size_t turns = rotate ? 1 + rng.below(3) : 0;
  auto apply = [&](const Tensor& t) {
    Tensor out = flip ? flip_horizontal(t) : t;
    return turns ? rotate90(out, turns) : out;
  };
  SyntheticSample out = s;
  out.cfp = apply(s.cfp);
  for (auto& f : out.ffa) f = apply(f);
  return out;
}

void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "samples", ec);
  if (ec) throw IoError("cannot create " + (dir / "samples").string() + ": " + ec.message());
  nlohmann::ordered_json meta;
  meta["format"] = 1;
  meta["seed"] = d.seed;
  meta["n_samples"] = d.samples.size();
  meta["image_size"] = d.cfg.image_size;
  meta["cell"] = d.cfg.cell;
  meta["channels"] = d.cfg.channels;
  meta["views"] = d.cfg.views;
  meta["classes"] = d.cfg.classes;
  meta["mode"] = label_mode_name(d.cfg.mode);
  meta["marker_view"] = d.cfg.marker_view;
  meta["noise"] = d.cfg.noise;
  meta["distractor_prob"] = d.cfg.distractor_prob;
  meta["erase_ffa_markers"] = d.cfg.erase_ffa_markers;
  {
    std::ofstream os(dir / "meta.json");
    if (!os) throw IoError("cannot write " + (dir / "meta.json").string());
    os << meta.dump(2) << '\n';
  }
  std::ofstream reports(dir / "reports.txt");
  if (!reports) throw IoError("cannot write " + (dir / "reports.txt").string());
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    std::ostringstream name;
    name << std::setw(6) << std::setfill('0') << i << ".bin";
    std::ofstream os(dir / "samples" / name.str(), std::ios::binary);
    const std::string bytes = serialize_sample(d.samples[i]);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("cannot write sample " + name.str());
    bool first = true;
    for (const auto& sentence : d.samples[i].report)
      for (const auto& w : sentence) {
        reports << (first ? "" : " ") << w;
        first = false;
      }
    reports << '\n';
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(dir / "meta.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad meta.json: " + std::string(e.what()));
  }
  Dataset d;
  try {
    d.seed = meta.at("seed").get<std::uint64_t>();
    d.cfg.image_size = meta.at("image_size");
    d.cfg.cell = meta.at("cell");
    d.cfg.channels = meta.at("channels");
    d.cfg.views = meta.at("views");
    d.cfg.classes = meta.at("classes");
    d.cfg.mode = parse_label_mode(meta.at("mode").get<std::string>());
    d.cfg.marker_view = meta.at("marker_view");
    d.cfg.noise = meta.at("noise");
    d.cfg.distractor_prob = meta.at("distractor_prob");
    d.cfg.erase_ffa_markers = meta.at("erase_ffa_markers");
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad meta.json: " + std::string(e.what()));
  }
  d.cfg.validate();
  const std::size_t n = meta.at("n_samples");
  for (std::size_t i = 0; i < n; ++i) {
    std::ostringstream name;
    name << std::setw(6) << std::setfill('0') << i << ".bin";
    d.samples.push_back(deserialize_sample(read_file(dir / "samples" / name.str())));
    const auto& s = d.samples.back();
    if (s.ffa.size() != d.cfg.views || s.cfp.dim(1) != d.cfg.image_size) {
      throw IoError("sample " + name.str() + " does not match meta.json geometry");
    }
  }
  return d;
}

std::uint64_t dataset_digest(const Dataset& d) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& s : d.samples)
    for (unsigned char c : serialize_sample(s)) {
      h ^= c;
      h *= 1099511628211ULL;
    }
  return h;
}

}  // namespace mrdf
