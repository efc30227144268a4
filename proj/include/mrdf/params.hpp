#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "mrdf/rng.hpp"
#include "mrdf/tensor.hpp"

namespace mrdf {

// Named trainable parameters. An alias registers an existing tensor under a
// second name; aliases in a sharing group reference the same storage.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor tensor);
  // Fan-in uniform: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Tensor add_uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng);
  Tensor add_range(const std::string& name, Shape shape, double bound, Rng& rng);
  Tensor add_constant(const std::string& name, Shape shape, double value);
  void alias(const std::string& alias_name, const std::string& target, const std::string& group);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor get(const std::string& name) const;
  // All names, including aliases, in registration order.
  const std::vector<std::string>& names() const { return names_; }
  const std::map<std::string, std::vector<std::string>>& groups() const { return groups_; }

  // Distinct storages in registration order, each listed once under its
  // first (canonical) name.
  std::vector<std::pair<std::string, Tensor>> unique() const;
  std::size_t scalar_count() const;

  void clear_grads();

  // Checkpoint I/O. Only canonical entries are written; aliases are rebuilt
  // by whoever constructs the model.
  void save(const std::filesystem::path& path) const;
  // Overwrites values of existing parameters; every stored name must exist
  // with the same shape and every canonical parameter must be present.
  void load(const std::filesystem::path& path);

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, Tensor> index_;
  std::map<std::string, std::vector<std::string>> groups_;
};

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Shared storage gets one update per step.
class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

  void set_lr(double lr) { opts_.lr = lr; }
  double lr() const { return opts_.lr; }
  long steps() const { return t_; }

  // Throws UsageError if a trainable parameter has no gradient.
  void step(ParamStore& params);

 private:
  AdamOptions opts_;
  long t_ = 0;
  std::unordered_map<const detail::Node*, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

}  // namespace mrdf
