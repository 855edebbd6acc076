#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "opcap/checkpoint.hpp"
#include "opcap/cli.hpp"
#include "opcap/config.hpp"
#include "opcap/image.hpp"
#include "opcap/metrics.hpp"
#include "opcap/world.hpp"

namespace py = pybind11;

namespace {

opcap::Image to_image(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& array) {
  if (array.ndim() != 3 || array.shape(2) != 3) throw opcap::ShapeError("expected an H x W x 3 uint8 array");
  opcap::Image image(static_cast<int>(array.shape(1)), static_cast<int>(array.shape(0)));
  std::copy(array.data(), array.data() + array.size(), image.rgb.begin());
  return image;
}

py::array_t<std::uint8_t> to_array(const opcap::Image& image) {
  py::array_t<std::uint8_t> array({image.height, image.width, 3});
  std::copy(image.rgb.begin(), image.rgb.end(), array.mutable_data());
  return array;
}

opcap::SearchStrategy strategy_for(int beam) {
  if (beam < 1) throw opcap::ConfigError("beam width must be at least 1");
  return beam == 1 ? opcap::SearchStrategy::greedy() : opcap::SearchStrategy::beam(beam);
}

class Captioner {
 public:
  explicit Captioner(const std::filesystem::path& checkpoint) : state_(opcap::load_checkpoint(checkpoint)) {}

  std::string caption(const opcap::Image& a, const opcap::Image& b, int beam) const {
    if (a.width != b.width || a.height != b.height) throw opcap::ShapeError("the two images differ in size");
    std::vector<int> ids;
    {
      py::gil_scoped_release release;
      ids = state_.model.caption(a, b, strategy_for(beam));
    }
    return opcap::detokenize(ids, state_.vocab);
  }

  const opcap::TrainState& state() const { return state_; }

 private:
  opcap::TrainState state_;
};

}  // namespace

PYBIND11_MODULE(_opcap, m) {
  m.doc() = "Change captioning with a scene-graph auxiliary head.";

  auto error = py::register_exception<opcap::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<opcap::LoadError>(m, "LoadError", error);
  py::register_exception<opcap::ConfigError>(m, "ConfigError", error);
  py::register_exception<opcap::ShapeError>(m, "ShapeError", error);
  py::register_exception<opcap::TrainingError>(m, "TrainingError", error);

  m.def("normalize_caption", [](const std::string& text) { return opcap::normalize_caption(text); }, py::arg("text"));
  m.def("bleu", &opcap::bleu, py::arg("hypothesis"), py::arg("references"), py::arg("max_n") = 4);
  m.def("corpus_bleu", &opcap::corpus_bleu, py::arg("hypotheses"), py::arg("references"), py::arg("max_n") = 4);
  m.def("rouge_l", py::overload_cast<const opcap::Tokens&, const std::vector<opcap::Tokens>&, double>(&opcap::rouge_l),
        py::arg("hypothesis"), py::arg("references"), py::arg("beta") = 1.2);
  m.def(
      "cider",
      [](const std::vector<opcap::Tokens>& hypotheses, const std::vector<std::vector<opcap::Tokens>>& references) {
        const auto r = opcap::cider(hypotheses, references);
        return py::make_tuple(r.score, r.per_sample);
      },
      py::arg("hypotheses"), py::arg("references"), "Corpus score and per-sample scores.");

  m.def("default_config_json", [] { return std::string(opcap::default_config_text()); });
  m.def(
      "resolve_config_json",
      [](const std::string& text) { return opcap::config_to_json(opcap::config_from_json(nlohmann::json::parse(text))).dump(); },
      py::arg("text"), "Merges a partial config onto the defaults, validates it and returns the full config.");

  m.def(
      "render_sample",
      [](std::size_t index, std::uint64_t seed, int resolution) {
        opcap::world::GeneratorConfig config;
        config.seed = seed;
        config.resolution = resolution;
        const auto sample = opcap::world::generate_sample(config, index);
        return py::make_tuple(to_array(opcap::world::render(sample.before, resolution)),
                              to_array(opcap::world::render(sample.after, resolution)), sample.record.caption);
      },
      py::arg("index"), py::arg("seed") = 1, py::arg("resolution") = 64,
      "Before image, after image and caption of one generated sample.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = opcap::run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command line tool in-process; returns (exit code, stdout, stderr).");

  py::class_<Captioner>(m, "Captioner")
      .def(py::init<const std::filesystem::path&>(), py::arg("checkpoint"))
      .def(
          "caption",
          [](const Captioner& c, const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a,
             const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& b,
             int beam) { return c.caption(to_image(a), to_image(b), beam); },
          py::arg("image_a"), py::arg("image_b"), py::arg("beam") = 1)
      .def(
          "caption_files",
          [](const Captioner& c, const std::filesystem::path& a, const std::filesystem::path& b, int beam) {
            return c.caption(opcap::read_png(a), opcap::read_png(b), beam);
          },
          py::arg("image_a"), py::arg("image_b"), py::arg("beam") = 1)
      .def_property_readonly("epoch", [](const Captioner& c) { return c.state().epoch; })
      .def_property_readonly("vocabulary", [](const Captioner& c) { return c.state().vocab.tokens(); })
      .def_property_readonly("config_json", [](const Captioner& c) { return opcap::config_to_json(c.state().config).dump(); });
}
