#include "mrdf/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_set>

#include "mrdf/error.hpp"

namespace mrdf {

Tensor ParamStore::add(const std::string& name, Tensor tensor) {
  if (contains(name)) throw UsageError("duplicate parameter name '" + name + "'");
  tensor.set_requires_grad(true);
  names_.push_back(name);
  index_.emplace(name, tensor);
  return tensor;
}

Tensor ParamStore::add_uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng) {
  return add_range(name, std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

Tensor ParamStore::add_range(const std::string& name, Shape shape, double bound, Rng& rng) {
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = rng.uniform(-bound, bound);
  return add(name, Tensor::from(std::move(shape), std::move(values)));
}

Tensor ParamStore::add_constant(const std::string& name, Shape shape, double value) {
  return add(name, Tensor::full(std::move(shape), value));
}

void ParamStore::alias(const std::string& alias_name, const std::string& target, const std::string& group) {
  if (contains(alias_name)) throw UsageError("duplicate parameter name '" + alias_name + "'");
  Tensor t = get(target);
  names_.push_back(alias_name);
  index_.emplace(alias_name, t);
  auto& members = groups_[group];
  if (members.empty()) members.push_back(target);
  members.push_back(alias_name);
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::pair<std::string, Tensor>> ParamStore::unique() const {
  std::vector<std::pair<std::string, Tensor>> out;
  std::unordered_set<const detail::Node*> seen;
  for (const auto& name : names_) {
    const Tensor& t = index_.at(name);
    if (seen.insert(t.node().get()).second) out.emplace_back(name, t);
  }
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : unique()) n += t.numel();
  return n;
}

void ParamStore::clear_grads() {
  for (auto& [name, t] : index_) t.clear_grad();
}

// Checkpoint layout (all integers little-endian):
//   magic "MRDFCKPT" | u32 version=1 | u32 count
//   per entry: u32 name_len | name bytes | u32 ndim | u64 dims[ndim] | f64 values[numel]
namespace {

constexpr char kMagic[8] = {'M', 'R', 'D', 'F', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("truncated checkpoint");
  return v;
}

}  // namespace

void ParamStore::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof(kMagic));
  const auto entries = unique();
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.shape()) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

void ParamStore::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not a checkpoint file: " + path.string());
  }
  if (take<std::uint32_t>(is) != kVersion) throw IoError("unsupported checkpoint version");
  const auto count = take<std::uint32_t>(is);
  std::unordered_set<std::string> loaded;
  for (std::uint32_t e = 0; e < count; ++e) {
    std::string name(take<std::uint32_t>(is), '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name.size()))) throw IoError("truncated checkpoint");
    Shape shape(take<std::uint32_t>(is));
    for (auto& d : shape) d = take<std::uint64_t>(is);
    if (!contains(name)) throw ConfigError("checkpoint parameter '" + name + "' not present in model");
    Tensor t = get(name);
    if (t.shape() != shape) {
      throw ConfigError("checkpoint geometry mismatch for '" + name + "': file " + shape_str(shape) + ", model " +
                        shape_str(t.shape()));
    }
    auto dst = t.mutable_data();
    if (!is.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size() * sizeof(double)))) {
      throw IoError("truncated checkpoint");
    }
    loaded.insert(name);
  }
  for (const auto& [name, t] : unique()) {
    if (!loaded.count(name)) throw ConfigError("checkpoint is missing parameter '" + name + "'");
  }
}

void Adam::step(ParamStore& params) {
  const auto entries = params.unique();
  for (const auto& [name, t] : entries) {
    if (t.requires_grad() && !t.has_grad()) throw UsageError("adam_step: parameter '" + name + "' has no gradient");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (auto [name, t] : entries) {
    auto& [m, v] = moments_[t.node().get()];
    if (m.empty()) {
      m.assign(t.numel(), 0.0);
      v.assign(t.numel(), 0.0);
    }
    auto w = t.mutable_data();
    auto g = t.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g[i];
      v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
    }
  }
}

}  // namespace mrdf
