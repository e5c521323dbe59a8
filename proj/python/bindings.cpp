#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dgppu/config.hpp"
#include "dgppu/error.hpp"
#include "dgppu/filter.hpp"
#include "dgppu/graph.hpp"
#include "dgppu/inversion.hpp"
#include "dgppu/io.hpp"
#include "dgppu/model.hpp"
#include "dgppu/phantom.hpp"
#include "dgppu/sampling.hpp"

namespace py = pybind11;
using namespace dgppu;

namespace {

using IndexArray = py::array_t<std::int64_t>;

Position position_arg(const std::string& name) {
  if (auto p = parse_position(name)) return *p;
  fail(ErrorKind::InvalidInput, "unknown position '" + name + "'");
}

VoteRule rule_arg(const std::string& name) {
  if (auto r = parse_vote_rule(name)) return *r;
  fail(ErrorKind::InvalidInput, "unknown vote rule '" + name + "'");
}

IndexArray graph_array(const KnnGraph& g) {
  IndexArray out({g.n, g.k});
  auto view = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t r = 0; r < g.k; ++r) view(i, r) = g.row(i)[r];
  return out;
}

py::array_t<std::uint8_t> label_array(const std::vector<BoneLabel>& labels) {
  py::array_t<std::uint8_t> out(labels.size());
  auto view = out.mutable_unchecked<1>();
  for (std::size_t i = 0; i < labels.size(); ++i) view(i) = static_cast<std::uint8_t>(code(labels[i]));
  return out;
}

std::vector<BoneLabel> labels_arg(const py::array_t<std::int64_t, py::array::forcecast>& codes) {
  std::vector<BoneLabel> out;
  const auto view = codes.unchecked<1>();
  for (py::ssize_t i = 0; i < view.shape(0); ++i) {
    const auto l = label_from_code(static_cast<int>(view(i)));
    if (!l) fail(ErrorKind::InvalidInput, "label codes must be 0, 1 or 2");
    out.push_back(*l);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_dgppu, m) {
  m.doc() = "Dynamic-graph post-processing for labeled ultrasound bone point clouds";

  static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const std::string message = std::string(to_string(e.kind())) + ": " + e.what();
      py::set_error(error, message.c_str());
    }
  });

  py::class_<LabeledCloud>(m, "Cloud")
      .def_property_readonly("source", [](const LabeledCloud& c) { return c.source; })
      .def("__len__", &LabeledCloud::size)
      .def_property_readonly("xyz", [](const LabeledCloud& c) { return c.coordinates(); })
      .def_property_readonly("labels", [](const LabeledCloud& c) {
        std::vector<BoneLabel> l;
        for (const auto& p : c.points) l.push_back(p.label);
        return label_array(l);
      })
      .def_property_readonly("is_artifact", [](const LabeledCloud& c) {
        std::vector<bool> out;
        for (const auto& p : c.points) out.push_back(p.is_artifact);
        return out;
      })
      .def_property_readonly("frames", [](const LabeledCloud& c) {
        std::vector<int> out;
        for (const auto& p : c.points) out.push_back(p.provenance.frame_index);
        return out;
      })
      .def("save", [](const LabeledCloud& c, const std::filesystem::path& path) { save_cloud(path, c); },
           py::arg("path"));

  m.def("load_cloud", &load_cloud, py::arg("path"), "Read a .ply or columnar text cloud.");

  m.def(
      "phantom",
      [](const std::string& position, bool partial, std::uint64_t seed, int frame_count) {
        PhantomConfig cfg;
        cfg.position = position_arg(position);
        cfg.kind = partial ? ScanKind::Partial : ScanKind::Thorough;
        cfg.frame_count = frame_count;
        return build_cloud(gen_phantom(cfg, seed));
      },
      py::arg("position") = "P0", py::arg("partial") = false, py::arg("seed") = 0,
      py::arg("frame_count") = PhantomConfig{}.frame_count,
      "Synthetic knee scan with ground-truth labels and artifact flags.");

  m.def(
      "knn_graph", [](const Matrix& x, std::size_t k) { return graph_array(knn_graph(x, k)); },
      py::arg("points"), py::arg("k"), "Exact k nearest neighbours, self excluded, ties to the lower index.");

  m.def(
      "flag_batch",
      [](const py::array_t<std::int64_t, py::array::forcecast>& labels, const Matrix& points, std::size_t k) {
        const auto flags = flag_batch(labels_arg(labels), knn_graph(points, k));
        return std::vector<bool>(flags.begin(), flags.end());
      },
      py::arg("labels"), py::arg("points"), py::arg("k"),
      "True where some neighbour carries a different label.");

  m.def("min_class_guarantee", &min_class_guarantee, py::arg("p"), py::arg("n_points"), py::arg("k"),
        py::arg("batches"), "Probability that every batch draws at least k minority points.");
  m.def("solve_minority_fraction", &solve_minority_fraction, py::arg("target"), py::arg("n_points"),
        py::arg("k"), py::arg("batches"));

  py::class_<Network>(m, "Network")
      .def_static(
          "init",
          [](std::uint64_t seed, std::vector<std::size_t> widths, std::size_t head_hidden, std::size_t k) {
            Architecture a;
            a.edge_widths = std::move(widths);
            a.head_hidden = head_hidden;
            a.k = k;
            return Network::init(a, seed);
          },
          py::arg("seed") = 0, py::arg("edge_widths") = Architecture{}.edge_widths,
          py::arg("head_hidden") = Architecture{}.head_hidden, py::arg("k") = Architecture{}.k)
      .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p); }, py::arg("path"))
      .def("save", [](const Network& n, const std::filesystem::path& p) { save_checkpoint(p, n, {}); },
           py::arg("path"))
      .def_property_readonly("k", [](const Network& n) { return n.arch.k; })
      .def_property_readonly("parameter_count", [](const Network& n) { return n.params.flatten().size(); })
      .def("logits", [](const Network& n, const Matrix& x) { return forward(n, x).logits; }, py::arg("points"))
      .def(
          "predict",
          [](const Network& n, const Matrix& x) {
            const auto p = predict(n, normalize(x).coords);
            return py::make_tuple(label_array(p.labels), p.probabilities);
          },
          py::arg("points"), "Normalizes the batch, then returns (labels, probabilities).")
      .def("__eq__", [](const Network& a, const Network& b) { return a == b; });

  m.def(
      "filter_cloud",
      [](const LabeledCloud& cloud, const Network& net, std::size_t n_clouds, std::size_t n_points,
         const std::string& rule, std::uint64_t seed, std::size_t threads) {
        FilterConfig cfg;
        cfg.k = net.arch.k;
        cfg.n_clouds = n_clouds;
        cfg.n_points = n_points;
        cfg.vote_rule = rule_arg(rule);
        cfg.seed = seed;
        cfg.threads = threads;
        cfg.record_batches = false;
        auto r = [&] {
          py::gil_scoped_release release;
          return filter_cloud(cloud, net, cfg);
        }();
        py::dict out;
        out["retained"] = r.report.retained;
        out["deleted"] = r.report.deleted;
        out["residual_points"] = r.report.residual_points;
        out["report"] = report_to_string(r.report);
        return out;
      },
      py::arg("cloud"), py::arg("network"), py::arg("n_clouds") = FilterConfig{}.n_clouds,
      py::arg("n_points") = FilterConfig{}.n_points, py::arg("rule") = "majority", py::arg("seed") = 0,
      py::arg("threads") = 1, "Flags and deletes points whose neighbourhood mixes predicted bones.");

  m.def(
      "frame_precision",
      [](const std::filesystem::path& overlay_dir) {
        const auto set = load_overlays(overlay_dir);
        const auto s = frame_precision(set.overlays, set.position);
        py::dict out;
        out["position"] = std::string(to_string(s.position));
        out["frames_with_deletions"] = s.frames_with_deletions;
        out["ok_frames"] = s.ok_frames;
        out["precision"] = s.precision ? py::cast(*s.precision) : py::none();
        return out;
      },
      py::arg("overlay_dir"));

  m.def("default_config", [] { return config_to_string(CliConfig{}); }, "Default pipeline config as JSON.");
}
