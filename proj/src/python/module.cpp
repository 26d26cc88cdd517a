#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstdio>
#include <optional>

#include "cccnet/config.hpp"
#include "cccnet/error.hpp"
#include "cccnet/eval.hpp"
#include "cccnet/ops.hpp"
#include "cccnet/phase1.hpp"
#include "cccnet/pipeline.hpp"
#include "cccnet/synth.hpp"
#include "cccnet/training.hpp"

namespace py = pybind11;
using namespace cccnet;

namespace {

using FloatArray = py::array_t<Scalar, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from_data(std::move(shape), std::vector<Scalar>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  FloatArray out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::array_t<float> map_array(const DensityMap& m) {
  py::array_t<float> out({static_cast<py::ssize_t>(m.height), static_cast<py::ssize_t>(m.width)});
  std::copy(m.cells.begin(), m.cells.end(), out.mutable_data());
  return out;
}

// (x, y) or (x, y, "sitting" | "standing"); two-element entries count as standing.
std::vector<PersonAnnotation> persons_from(const py::sequence& seq) {
  std::vector<PersonAnnotation> out;
  for (const auto& item : seq) {
    const auto t = item.cast<py::sequence>();
    if (t.size() < 2 || t.size() > 3) throw InvalidArgument("persons must be (x, y[, category])");
    PersonAnnotation p;
    p.head = {t[0].cast<double>(), t[1].cast<double>()};
    if (t.size() == 3) p.category = parse_category(t[2].cast<std::string>());
    out.push_back(p);
  }
  return out;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

py::dict scene_dict(const SceneSample& s) {
  py::list persons, keypoints;
  for (const auto& a : s.annotations) {
    persons.append(py::make_tuple(a.head.x, a.head.y, std::string(category_name(a.category))));
  }
  for (const auto& r : s.keypoints) {
    py::list joints;
    for (const auto& j : r.joints) joints.append(py::make_tuple(j.x, j.y, j.confidence));
    py::dict rec;
    rec["joints"] = joints;
    rec["person"] = r.person;
    rec["label"] = r.label ? py::cast(std::string(category_name(*r.label))) : py::none();
    keypoints.append(rec);
  }
  py::dict d;
  d["id"] = s.id;
  d["image"] = to_array(s.image);
  d["persons"] = persons;
  d["keypoints"] = keypoints;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Categorized crowd counting: density maps, three-phase training and evaluation";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base);
  py::register_exception<FormatError>(m, "FormatError", base);
  py::register_exception<InvariantError>(m, "InvariantError", base);
  py::register_exception<MissingArtifactError>(m, "MissingArtifactError", base);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", base);
  py::register_exception<IoError>(m, "IoError", base);

  py::class_<PipelineConfig>(m, "Config")
      .def(py::init<>())
      .def_static("from_text", [](const std::string& text) { return parse_config(text); })
      .def_static("load", [](const std::filesystem::path& p) { return load_config(p); })
      .def("to_text", [](const PipelineConfig& c) { return config_to_text(c); })
      .def("validate", &PipelineConfig::validate)
      .def_readwrite("seed", &PipelineConfig::seed)
      .def_readwrite("scenes", &PipelineConfig::scenes)
      .def_readwrite("refine_margin", &PipelineConfig::refine_margin)
      .def_readwrite("density_threshold", &PipelineConfig::density_threshold);

  m.def(
      "render_density",
      [](const py::sequence& persons, std::size_t height, std::size_t width) {
        return map_array(render_density(persons_from(persons), height, width));
      },
      py::arg("persons"), py::arg("height"), py::arg("width"),
      "Quarter-resolution density map with one unit-mass kernel per head.");
  m.def(
      "render_category_maps",
      [](const py::sequence& persons, std::size_t height, std::size_t width) {
        const CategoryMaps c = render_category_maps(persons_from(persons), height, width);
        return py::make_tuple(map_array(c.sitting), map_array(c.standing));
      },
      py::arg("persons"), py::arg("height"), py::arg("width"),
      "(sitting, standing) maps sharing one set of adaptive sigmas.");
  m.def(
      "count",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
        double s = 0.0;
        for (py::ssize_t i = 0; i < a.size(); ++i) s += a.data()[i];
        return s;
      },
      py::arg("density"), "64-bit accumulated sum of a density map.");

  m.def(
      "weighted_mse",
      [](const FloatArray& pred, const FloatArray& gt, double sigma, std::size_t n) {
        return static_cast<double>(weighted_mse(to_tensor(pred), to_tensor(gt), sigma, n).item());
      },
      py::arg("pred"), py::arg("gt"), py::arg("sigma"), py::arg("n") = 1);
  m.def(
      "conv2d",
      [](const FloatArray& input, const FloatArray& weight, const FloatArray& bias,
         std::size_t padding) {
        return to_array(conv2d(to_tensor(input), to_tensor(weight), to_tensor(bias), padding));
      },
      py::arg("input"), py::arg("weight"), py::arg("bias"), py::arg("padding") = 0,
      "Stride-1 convolution: C x H x W input, O x C x k x k weight.");
  m.def(
      "maxpool2", [](const FloatArray& input) { return to_array(maxpool2(to_tensor(input))); },
      py::arg("input"));
  m.def(
      "sample_weight",
      [](const std::vector<double>& confidences) {
        if (confidences.size() != kJointCount) throw InvalidArgument("expected 17 confidences");
        KeypointRecord r;
        for (std::size_t j = 0; j < kJointCount; ++j) r.joints[j].confidence = confidences[j];
        return sample_weight(r);
      },
      py::arg("confidences"), "W = 2 * upper-body confidence sum + lower-body sum.");

  m.def(
      "saddle_monitor",
      [](const std::vector<double>& history, std::size_t window, double rel_threshold) {
        return saddle_monitor(history, window, rel_threshold) == SaddleState::Escape;
      },
      py::arg("history"), py::arg("window") = 15, py::arg("rel_threshold") = 1e-4,
      "True when the recent loss window is flat enough to escape.");
  py::class_<LearningRateController>(m, "LearningRateController")
      .def(py::init([](double base_lr, std::size_t window, double escape_lr, double rel_threshold,
                       std::size_t escape_epochs) {
             SaddleConfig s;
             s.enabled = true;
             s.window = window;
             s.escape_lr = escape_lr;
             s.rel_threshold = rel_threshold;
             s.escape_epochs = escape_epochs;
             return LearningRateController(base_lr, s);
           }),
           py::arg("base_lr"), py::arg("window") = 15, py::arg("escape_lr") = 5e-4,
           py::arg("rel_threshold") = 1e-4, py::arg("escape_epochs") = 5)
      .def("observe", &LearningRateController::observe, py::arg("epoch_loss"))
      .def_property_readonly("current_lr", &LearningRateController::current_lr)
      .def_property_readonly("escaping", &LearningRateController::escaping);

  m.def(
      "generate_scene",
      [](const PipelineConfig& cfg, std::uint64_t seed, const std::string& id) {
        std::mt19937_64 rng(seed);
        return scene_dict(generate_scene(cfg.scene, rng, id));
      },
      py::arg("config"), py::arg("seed"), py::arg("id") = "scene");
  m.def(
      "generate_corpus",
      [](const std::filesystem::path& dir, std::size_t scenes, const PipelineConfig& cfg,
         std::optional<std::uint64_t> seed) {
        generate_corpus(dir, scenes, cfg.scene, seed.value_or(cfg.seed));
        return hex64(directory_checksum(dir));
      },
      py::arg("out"), py::arg("scenes"), py::arg("config"), py::arg("seed") = py::none(),
      "Writes a corpus directory and returns its checksum.");
  m.def(
      "directory_checksum",
      [](const std::filesystem::path& dir) { return hex64(directory_checksum(dir)); },
      py::arg("path"));

  m.def(
      "train_phase",
      [](const std::string& phase, const std::filesystem::path& data_dir,
         const std::filesystem::path& model_dir, const PipelineConfig& cfg, bool resume,
         std::optional<std::size_t> stop_at) {
        const Phase p = parse_phase(phase);
        RunOptions opts;
        opts.resume = resume;
        if (stop_at) opts.stop_at = *stop_at;
        PhaseResult r;
        {
          py::gil_scoped_release release;
          const Dataset data = Dataset::load(data_dir, cfg.kernel);
          r = run_phase(p, data, cfg, model_dir, opts);
        }
        py::dict d;
        d["complete"] = r.complete;
        d["artifacts"] = r.artifacts;
        d["epochs"] = r.log.size();
        return d;
      },
      py::arg("phase"), py::arg("data"), py::arg("models"), py::arg("config"),
      py::arg("resume") = false, py::arg("stop_at") = py::none(),
      "Trains one phase ('1', '2', '3-pre', '3-joint') and writes its checkpoints.");
  m.def(
      "infer",
      [](const std::filesystem::path& model_dir, const FloatArray& image, const PipelineConfig& cfg,
         const std::optional<std::filesystem::path>& keypoints) {
        const ModelBundle models = load_bundle(model_dir, cfg);
        std::vector<KeypointRecord> kps;
        if (keypoints) kps = read_keypoints(*keypoints).persons;
        Tensor img = to_tensor(image);
        if (image.ndim() == 2) {
          img = Tensor::from_data({1, img.dim(0), img.dim(1)},
                                  std::vector<Scalar>(img.data().begin(), img.data().end()));
        }
        const Inference r = infer(models, img, kps, cfg);
        py::dict d;
        d["sitting"] = r.sit();
        d["standing"] = r.stand();
        d["crowd"] = count(r.crowd);
        d["sdbc_sitting"] = r.sdbc_sit();
        d["sdbc_standing"] = r.sdbc_stand();
        d["final_sit"] = map_array(r.final_sit);
        d["final_stand"] = map_array(r.final_stand);
        d["crowd_map"] = map_array(r.crowd);
        return d;
      },
      py::arg("models"), py::arg("image"), py::arg("config"), py::arg("keypoints") = py::none(),
      "Three-phase forward pass on one image (H x W or 1 x H x W).");
  m.def(
      "evaluate",
      [](const std::filesystem::path& model_dir, const std::filesystem::path& data_dir,
         const PipelineConfig& cfg) {
        std::string json;
        {
          py::gil_scoped_release release;
          const ModelBundle models = load_bundle(model_dir, cfg);
          const Dataset data = Dataset::load(data_dir, cfg.kernel);
          json = reports_to_json(evaluate(models, data, cfg));
        }
        return json;
      },
      py::arg("models"), py::arg("data"), py::arg("config"),
      "SDBC and full-pipeline reports on the test split, as JSON text.");
}
