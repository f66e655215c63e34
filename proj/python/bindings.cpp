#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "physiofuse/config.hpp"
#include "physiofuse/gradcheck.hpp"
#include "physiofuse/protocol.hpp"

namespace py = pybind11;
using namespace physiofuse;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor<double> to_tensor(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-D array [channels, time]");
  std::vector<double> v(a.data(), a.data() + a.size());
  return Tensor<double>::from({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))},
                              std::move(v));
}

Array to_array(const Tensor<double>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Json to_json_value(const py::handle& obj) {
  return Json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::object from_json_value(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

/// Double-precision single-modality model for interactive use.
class PyModel {
 public:
  PyModel(const py::dict& config, std::uint64_t seed) : model_(make_config(config), seed) {}
  explicit PyModel(SingleModalityModel<double> m) : model_(std::move(m)) {}

  static ModelConfig make_config(const py::dict& config) {
    Json j = to_json_value(config);
    const Modality m = parse_modality(j.value("modality", std::string("eeg")));
    return model_config_from_json(j, ModelConfig::defaults(m));
  }

  double classify(const Array& segment) {
    model_.set_mode(ModelMode::kFinetune);
    NoGradGuard g;
    return model_.forward_classify(to_tensor(segment), {}).logit.item();
  }
  Array reconstruct(const Array& segment) {
    model_.set_mode(ModelMode::kPretrain);
    NoGradGuard g;
    return to_array(model_.forward_pretrain(to_tensor(segment), {}));
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : model_.parameters()) n += p.numel();
    return n;
  }
  std::vector<std::string> parameter_names() const {
    std::vector<std::string> out;
    for (const auto& [name, p] : model_.parameters()) out.push_back(name);
    return out;
  }
  std::uint64_t hash() const { return parameter_hash(model_.parameters()); }
  void save(const std::filesystem::path& p) const { save_checkpoint(model_, p); }
  py::object config() const { return from_json_value(to_json(model_.config())); }

 private:
  SingleModalityModel<double> model_;
};

}  // namespace

PYBIND11_MODULE(_physiofuse, m) {
  m.doc() = "ECG/EEG emotion recognition core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_RuntimeError);
  py::register_exception<LoadError>(m, "LoadError", PyExc_IOError);

  m.def("receptive_field", &receptive_field, py::arg("kernels"), py::arg("strides"));

  m.def(
      "butterworth",
      [](const std::string& kind, double low_hz, double high_hz, int order, double sample_rate) {
        const FilterKind k = kind == "lowpass" ? FilterKind::kLowpass : FilterKind::kBandpass;
        if (kind != "lowpass" && kind != "bandpass") throw ConfigError("kind must be lowpass or bandpass");
        const IirFilter f = design_butterworth(FilterSpec{k, low_hz, high_hz, order}, sample_rate);
        py::list sections;
        for (const auto& s : f.sections) sections.append(py::make_tuple(s.b0, s.b1, s.b2, 1.0, s.a1, s.a2));
        return sections;
      },
      py::arg("kind"), py::arg("low_hz"), py::arg("high_hz"), py::arg("order"), py::arg("sample_rate"),
      "Second-order sections (b0, b1, b2, a0, a1, a2) of a digital Butterworth filter.");

  m.def(
      "filter_signal",
      [](const std::string& preset, const Array& x, double sample_rate) {
        const auto spec = filter_preset(preset);
        SignalRecord r;
        r.channels = static_cast<std::size_t>(x.shape(0));
        r.samples.assign(x.data(), x.data() + x.size());
        r.sample_rate = sample_rate;
        if (spec) r = apply_filter(design_butterworth(*spec, sample_rate), r);
        Array out({x.shape(0), x.shape(1)});
        std::copy(r.samples.begin(), r.samples.end(), out.mutable_data());
        return out;
      },
      py::arg("preset"), py::arg("x"), py::arg("sample_rate"));

  m.def(
      "sample_mask",
      [](std::size_t length, std::size_t span, double ratio, std::uint64_t seed) {
        Rng rng(seed);
        const MaskPlan plan = sample_mask(length, span, ratio, rng);
        py::array_t<bool> out(static_cast<py::ssize_t>(length));
        for (std::size_t i = 0; i < length; ++i) out.mutable_data()[i] = plan.mask[i];
        return out;
      },
      py::arg("length"), py::arg("span") = 10, py::arg("ratio") = 0.15, py::arg("seed") = 0);

  m.def(
      "make_folds",
      [](std::size_t n, std::size_t k, std::uint64_t seed) {
        py::list out;
        for (const auto& f : make_folds(n, k, seed).folds) {
          py::dict d;
          d["train"] = f.train;
          d["validation"] = f.validation;
          d["test"] = f.test;
          out.append(d);
        }
        return out;
      },
      py::arg("n"), py::arg("k") = 10, py::arg("seed") = 0);

  m.def(
      "confusion_metrics",
      [](const std::vector<int>& labels, const std::vector<int>& predictions) {
        const ConfusionCounts c = confusion(labels, predictions);
        py::dict d;
        d["tp"] = c.tp;
        d["fp"] = c.fp;
        d["tn"] = c.tn;
        d["fn"] = c.fn;
        d["accuracy"] = accuracy(c);
        d["f1"] = macro_f1(c);
        d["balanced_accuracy"] = balanced_accuracy(c);
        return d;
      },
      py::arg("labels"), py::arg("predictions"));

  m.def("t_quantile", &student_t_quantile, py::arg("p"), py::arg("dof"));
  m.def(
      "t_interval",
      [](const std::vector<double>& v, double level) {
        const Interval i = t_confidence_interval(v, level);
        return py::make_tuple(i.mean, i.half_width);
      },
      py::arg("values"), py::arg("level") = 0.95);

  m.def(
      "generate_synthetic",
      [](const std::filesystem::path& out_dir, std::uint64_t seed, const py::dict& spec) {
        const SyntheticSpec s = synthetic_spec_from_json(to_json_value(spec));
        return generate_synthetic(s, seed, out_dir).entries.size();
      },
      py::arg("out_dir"), py::arg("seed") = 0, py::arg("spec") = py::dict(),
      "Writes a synthetic dataset and returns the number of trials.");

  m.def(
      "gradcheck",
      [](std::size_t length) {
        const auto r = run_gradcheck_suite(tiny_model_config(Modality::kEcg), tiny_model_config(Modality::kEeg), length);
        py::dict d;
        for (const auto& e : r.entries) d[py::str(e.name)] = e.max_rel_error;
        return d;
      },
      py::arg("length") = 16, "Maximum relative error per checked op, layer and model.");

  m.def(
      "evaluate",
      [](const std::filesystem::path& config_path, py::object seed, std::size_t jobs) {
        RunConfig c = load_run_config(config_path);
        if (!seed.is_none()) c.eval.seed = seed.cast<std::uint64_t>();
        ProtocolResult result;
        {
          py::gil_scoped_release release;
          result = run_cross_validation(load_manifest(c.manifest), c, ProtocolOptions{jobs, std::nullopt, {}});
        }
        py::list rows;
        for (const auto& r : result.report.rows) {
          py::dict d;
          d["fold"] = r.fold;
          d["model"] = r.model;
          d["target"] = r.target;
          d["metric"] = r.metric;
          d["value"] = r.value;
          rows.append(d);
        }
        return rows;
      },
      py::arg("config"), py::arg("seed") = py::none(), py::arg("jobs") = 1,
      "Runs the cross-validation protocol and returns the per-fold report rows.");

  py::class_<PyModel>(m, "Model")
      .def(py::init<const py::dict&, std::uint64_t>(), py::arg("config") = py::dict(), py::arg("seed") = 0)
      .def_static(
          "load", [](const std::filesystem::path& p) { return PyModel(load_checkpoint<double>(p)); }, py::arg("path"))
      .def("classify", &PyModel::classify, py::arg("segment"), "Emotion logit for a [channels, time] segment.")
      .def("reconstruct", &PyModel::reconstruct, py::arg("segment"), "Masked-value predictions [time, channels].")
      .def("save", &PyModel::save, py::arg("path"))
      .def_property_readonly("parameter_count", &PyModel::parameter_count)
      .def_property_readonly("parameter_names", &PyModel::parameter_names)
      .def_property_readonly("parameter_hash", &PyModel::hash)
      .def_property_readonly("config", &PyModel::config);
}
