#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mrdf/rng.hpp"
#include "mrdf/tensor.hpp"

namespace mrdf {

// A differentiable function of leaf tensors. `inputs` must all require grad.
struct GradcheckProblem {
  std::vector<Tensor> inputs;
  std::function<Tensor()> fn;
};

struct GradcheckCase {
  std::string name;
  std::string module;
  std::function<GradcheckProblem(Rng&)> build;
};

struct GradcheckOptions {
  std::size_t points = 24;  // probed coordinates per case, spread over all inputs
  double step = 1e-3;
  double tolerance = 1e-4;
  // Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

struct GradcheckResult {
  std::string name;
  std::string module;
  std::size_t points = 0;
  double max_rel_error = 0.0;
  double seconds = 0.0;
  bool pass = false;

  std::string to_json() const;
};

// Every differentiable op and module composition in the library.
const std::vector<GradcheckCase>& gradcheck_registry();

// Reduces fn() to a scalar with a fixed random weighting, back-propagates,
// and compares each probed coordinate with a fourth-order central
// difference (f(x-2h), f(x-h), f(x+h), f(x+2h)).
GradcheckResult run_gradcheck(const GradcheckCase& c, std::uint64_t seed, const GradcheckOptions& opts = {});
std::vector<GradcheckResult> run_gradchecks(std::uint64_t seed, const GradcheckOptions& opts = {},
                                            const std::string& filter = "");

}  // namespace mrdf
