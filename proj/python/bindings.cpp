#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>

#include "mrdf/config.hpp"
#include "mrdf/data.hpp"
#include "mrdf/error.hpp"
#include "mrdf/gradcheck.hpp"
#include "mrdf/metrics.hpp"
#include "mrdf/mv_fusion.hpp"
#include "mrdf/trainer.hpp"

namespace py = pybind11;
using namespace mrdf;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

RunConfig config_from(const py::dict& overrides) {
  RunConfig cfg;
  for (auto item : overrides) cfg.set(py::str(item.first), py::str(item.second));
  cfg.validate();
  return cfg;
}

py::dict sample_dict(const SyntheticSample& s) {
  py::dict d;
  d["cfp"] = to_array(s.cfp);
  py::list ffa;
  for (const auto& f : s.ffa) ffa.append(to_array(f));
  d["ffa"] = ffa;
  d["label"] = s.label;
  d["multi_hot"] = s.multi_hot;
  d["report"] = s.report;
  return d;
}

}  // namespace

PYBIND11_MODULE(_mrdf, m) {
  m.doc() = "Multi-modal multi-view fundus fusion core";

  static py::exception<Error> error(m, "MrdfError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, (e.code() + ": " + e.what()).c_str());
    }
  });

  m.def("flop_count", [](std::uint64_t V, std::uint64_t N, std::uint64_t D, std::uint64_t M) {
    const FlopReport r = flop_count(V, N, D, M);
    py::dict d;
    d["msa_flops"] = r.msa_flops;
    d["wmsa_flops"] = r.wmsa_flops;
    return d;
  }, py::arg("views"), py::arg("tokens"), py::arg("dim"), py::arg("window"));

  m.def("sw_msa", [](const Array& grid, const Array& wq, const Array& wk, const Array& wv, const Array& wo,
                     std::size_t heads, std::size_t views, std::size_t window, std::size_t shift) {
    const Tensor x = to_tensor(grid);
    if (x.ndim() != 3) throw DimensionError("sw_msa expects a [side, V*side, D] grid");
    const AttentionWeights w{to_tensor(wq), to_tensor(wk), to_tensor(wv), to_tensor(wo)};
    AttentionCounter counter;
    const MultiViewGrid out =
        shifted_window_attention(MultiViewGrid{x, x.dim(0), views}, WindowConfig{window, shift}, w, heads, &counter);
    return py::make_tuple(to_array(out.grid), counter.score_mults);
  }, py::arg("grid"), py::arg("wq"), py::arg("wk"), py::arg("wv"), py::arg("wo"), py::arg("heads"),
     py::arg("views"), py::arg("window"), py::arg("shift") = 0,
     "Window attention over a multi-view grid; returns (output, score multiply count).");

  m.def("shifted_window_mask", [](std::size_t side, std::size_t views, std::size_t window, std::size_t shift) {
    const Tensor t = shifted_window_mask(side, views, WindowConfig{window, shift});
    return t.defined() ? py::object(to_array(t)) : py::object(py::none());
  });

  m.def("bleu", [](const std::vector<Tokens>& c, const std::vector<std::vector<Tokens>>& r, int n) {
    return bleu(c, r, n);
  }, py::arg("candidates"), py::arg("references"), py::arg("n"));
  m.def("rouge_l", [](const std::vector<Tokens>& c, const std::vector<std::vector<Tokens>>& r) {
    return rouge_l(c, r);
  });
  m.def("cider", &cider);
  m.def("classification_metrics", [](const std::vector<std::size_t>& preds, const std::vector<std::size_t>& truths,
                                     std::size_t classes) {
    return py::module_::import("json").attr("loads")(classification_metrics(preds, truths, classes).to_json());
  });

  m.def("generate_dataset", [](std::uint64_t seed, std::size_t n, const py::dict& overrides) {
    const RunConfig cfg = config_from(overrides);
    py::list out;
    const Dataset d = generate_dataset(seed, n, cfg.data());
    for (const auto& s : d.samples) out.append(sample_dict(s));
    return out;
  }, py::arg("seed"), py::arg("n"), py::arg("config") = py::dict());

  m.def("config_text", [](const py::dict& overrides) { return config_from(overrides).to_text(); },
        py::arg("config") = py::dict());

  m.def("train", [](const py::dict& overrides, const std::string& out) {
    const RunConfig cfg = config_from(overrides);
    TrainResult r;
    {
      py::gil_scoped_release release;
      r = run_training(cfg, out);
    }
    py::list losses;
    for (const auto& e : r.history) losses.append(e.train_loss);
    return py::make_tuple(r.initial_loss, losses);
  }, py::arg("config"), py::arg("out"));

  m.def("evaluate", [](const py::dict& overrides, const std::string& checkpoint, const std::string& split) {
    const RunConfig cfg = config_from(overrides);
    Model model(cfg);
    model.params().load(checkpoint);
    const std::string report = evaluate(model, load_split(cfg, split == "train" ? Split::Train : Split::Test)).to_json();
    return py::module_::import("json").attr("loads")(report);
  }, py::arg("config"), py::arg("checkpoint"), py::arg("split") = "test");

  m.def("gradcheck", [](std::uint64_t seed, const std::string& filter) {
    py::list out;
    for (const auto& r : run_gradchecks(seed, {}, filter))
      out.append(py::module_::import("json").attr("loads")(r.to_json()));
    return out;
  }, py::arg("seed") = 0, py::arg("filter") = "");
}
