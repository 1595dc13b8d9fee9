#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "recon_ood/checkpoint.hpp"
#include "recon_ood/diffusion.hpp"
#include "recon_ood/digest.hpp"
#include "recon_ood/encoder.hpp"
#include "recon_ood/errors.hpp"
#include "recon_ood/harness.hpp"
#include "recon_ood/metrics.hpp"
#include "recon_ood/synth_data.hpp"

namespace py = pybind11;
using namespace recon_ood;

namespace {

py::array_t<float> to_array(const ImageGrid& img) {
  py::array_t<float> out({kImageSide, kImageSide});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

ImageGrid from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  if (a.size() != kImagePixels) throw DimensionError("expected 256 pixels, got " + std::to_string(a.size()));
  return ImageGrid::from_span(std::span<const float>(a.data(), kImagePixels));
}

RunConfig config_from(const std::string& json_text) {
  return RunConfig::from_json(nlohmann::json::parse(json_text));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Reconstruction-based OOD detection core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<MissingStageError>(m, "MissingStageError", PyExc_RuntimeError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<TrainingFailure>(m, "TrainingFailure", PyExc_RuntimeError);

  m.attr("CLASS_NAMES") = std::vector<std::string>(kClassNames.begin(), kClassNames.end());
  m.attr("OOD_FAMILIES") = std::vector<std::string>(kOodFamilies.begin(), kOodFamilies.end());

  m.def("render_class", [](int class_id, std::uint64_t seed) { return to_array(render_class(class_id, seed)); },
        py::arg("class_id"), py::arg("seed"));
  m.def("render_ood", [](const std::string& family, std::uint64_t seed) { return to_array(render_ood(family, seed)); },
        py::arg("family"), py::arg("seed"));

  py::class_<NoiseSchedule>(m, "NoiseSchedule")
      .def(py::init([](int steps, double b0, double b1) { return make_schedule(steps, b0, b1); }),
           py::arg("steps") = 100, py::arg("beta_start") = 1e-4, py::arg("beta_end") = 0.02)
      .def_property_readonly("steps", &NoiseSchedule::steps)
      .def("beta", &NoiseSchedule::beta)
      .def("alpha_bar", &NoiseSchedule::alpha_bar);

  m.def(
      "forward_noise",
      [](const NoiseSchedule& sched, const py::array_t<float, py::array::c_style | py::array::forcecast>& z0, int s,
         const py::array_t<float, py::array::c_style | py::array::forcecast>& eps) {
        if (z0.size() != eps.size() || z0.size() == 0) throw DimensionError("z0 and eps must have equal non-zero size");
        const auto n = static_cast<std::size_t>(z0.size());
        Tensor a({n}), e({n});
        std::copy(z0.data(), z0.data() + n, a.data().begin());
        std::copy(eps.data(), eps.data() + n, e.data().begin());
        const auto z = forward_noise(sched, a, s, e);
        return py::array_t<float>(std::vector<py::ssize_t>{static_cast<py::ssize_t>(n)}, z.data().data());
      },
      py::arg("schedule"), py::arg("z0"), py::arg("s"), py::arg("eps"));

  m.def("auroc", [](std::vector<double> id, std::vector<double> ood) { return auroc(id, ood); });
  m.def(
      "fpr_at_tpr",
      [](std::vector<double> id, std::vector<double> ood, double tpr) { return fpr_at_tpr(id, ood, tpr); },
      py::arg("id_scores"), py::arg("ood_scores"), py::arg("tpr_target") = 0.95);
  m.def("pr_curve", [](std::vector<double> id, std::vector<double> ood) {
    std::vector<std::tuple<double, double, double>> out;
    for (const auto& p : pr_curve(id, ood)) out.emplace_back(p.threshold, p.recall, p.precision);
    return out;
  });
  m.def("calibrate_threshold", [](std::vector<double> errors) { return calibrate_threshold(errors).tau; });
  m.def("is_ood", [](double error, double tau) {
    return classify(error, Threshold{tau, 1, 0}) == Decision::out_of_distribution;
  });

  py::class_<Encoder>(m, "Encoder")
      .def_static("load", [](const std::filesystem::path& p) { return Encoder::from_checkpoint(load_checkpoint(p)); })
      .def_property_readonly("embed_dim", &Encoder::embed_dim)
      .def_property_readonly("temperature", &Encoder::temperature)
      .def("encode_image",
           [](const Encoder& e, const py::array_t<float, py::array::c_style | py::array::forcecast>& img) {
             return e.encode_image(from_array(img)).values;
           })
      .def("zero_shot_classify",
           [](const Encoder& e, const py::array_t<float, py::array::c_style | py::array::forcecast>& img) {
             return e.zero_shot_classify(from_array(img)).class_id;
           });

  m.def("sha256_hex", [](const py::bytes& b) { return sha256_hex(std::string(b)); });

  m.def("default_config_json", [] { return RunConfig{}.to_json().dump(); });
  m.def("normalize_config_json", [](const std::string& text) { return config_from(text).to_json().dump(); });
  m.def("config_digest", [](const std::string& text) { return config_from(text).digest(); });
  m.def("run_dir", [](const std::string& text) { return config_from(text).run_dir(); });

  auto stage = [](StageSummary (*fn)(const RunConfig&)) {
    return [fn](const std::string& text) {
      const auto c = config_from(text);
      py::gil_scoped_release release;
      return fn(c).outputs;
    };
  };
  m.def("gen_data", stage(&cmd_gen_data), py::arg("config_json"));
  m.def("train", stage(&cmd_train), py::arg("config_json"));
  m.def("evaluate", stage(&cmd_evaluate), py::arg("config_json"));
  m.def("run_all", stage(&cmd_all), py::arg("config_json"));
  m.def(
      "report", [](const std::filesystem::path& report_json, const std::filesystem::path& out_dir) {
        return cmd_report(report_json, out_dir).outputs;
      },
      py::arg("report_json"), py::arg("out_dir"));
}
