#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "affdesk/config.hpp"
#include "affdesk/extract.hpp"
#include "affdesk/geometry.hpp"
#include "affdesk/learn.hpp"
#include "affdesk/model.hpp"
#include "affdesk/pipeline.hpp"
#include "affdesk/world.hpp"

namespace py = pybind11;
using namespace aff;

namespace {

Image to_image(const py::array_t<double, py::array::c_style |
                                             py::array::forcecast>& arr) {
  if (arr.ndim() != 2) throw ShapeMismatch("expected a 2D array");
  Image img(static_cast<int>(arr.shape(1)), static_cast<int>(arr.shape(0)));
  const double* p = arr.data();
  std::copy(p, p + img.size(), img.data.begin());
  return img;
}

py::array_t<double> from_image(const Image& img) {
  py::array_t<double> arr({img.height, img.width});
  std::copy(img.data.begin(), img.data.end(), arr.mutable_data());
  return arr;
}

std::vector<Point2> to_points(
    const py::array_t<double, py::array::c_style | py::array::forcecast>&
        arr) {
  if (arr.ndim() != 2 || arr.shape(1) != 2)
    throw ShapeMismatch("expected an Nx2 array");
  std::vector<Point2> out(arr.shape(0));
  const double* p = arr.data();
  for (py::ssize_t i = 0; i < arr.shape(0); ++i)
    out[i] = {p[2 * i], p[2 * i + 1]};
  return out;
}

py::array_t<double> from_points(const std::vector<Point2>& pts) {
  py::array_t<double> arr(
      {static_cast<py::ssize_t>(pts.size()), py::ssize_t(2)});
  double* p = arr.mutable_data();
  for (size_t i = 0; i < pts.size(); ++i) {
    p[2 * i] = pts[i].x;
    p[2 * i + 1] = pts[i].y;
  }
  return arr;
}

py::array_t<double> from_matrix(const std::array<double, 9>& m) {
  py::array_t<double> arr({py::ssize_t(3), py::ssize_t(3)});
  std::copy(m.begin(), m.end(), arr.mutable_data());
  return arr;
}

Homography to_homography(const py::array_t<double, py::array::c_style |
                                                       py::array::forcecast>&
                             arr) {
  if (arr.ndim() != 2 || arr.shape(0) != 3 || arr.shape(1) != 3)
    throw ShapeMismatch("expected a 3x3 array");
  std::array<double, 9> m;
  std::copy(arr.data(), arr.data() + 9, m.begin());
  return Homography::from_matrix(m);
}

RunConfig config_from_text(const std::string& text) {
  return text.empty() ? RunConfig{} : parse_run_config(text);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "visual affordance pipeline core";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<SchemaError>(m, "SchemaError");
  py::register_exception<IoError>(m, "IoError");

  m.def(
      "estimate_homography",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>&
             src,
         const py::array_t<double, py::array::c_style | py::array::forcecast>&
             dst) {
        const auto s = to_points(src), d = to_points(dst);
        if (s.size() != d.size())
          throw ShapeMismatch("src and dst must have equal length");
        std::vector<std::pair<Point2, Point2>> pairs;
        for (size_t i = 0; i < s.size(); ++i) pairs.push_back({s[i], d[i]});
        return from_matrix(estimate_homography(pairs).matrix());
      },
      py::arg("src"), py::arg("dst"),
      "least-squares homography from Nx2 point correspondences");

  m.def(
      "apply_homography",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>&
             h,
         const py::array_t<double, py::array::c_style | py::array::forcecast>&
             pts) {
        const Homography hom = to_homography(h);
        std::vector<Point2> out;
        for (const Point2& p : to_points(pts))
          out.push_back(apply_homography(hom, p));
        return from_points(out);
      },
      py::arg("matrix"), py::arg("points"));

  m.def(
      "fit_gmm",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>&
             points,
         int k, double fixed_std, int max_iters, double tol,
         std::uint64_t seed) {
        const GmmFit fit =
            fit_gmm_em(to_points(points), k, fixed_std, max_iters, tol, seed);
        py::dict out;
        out["means"] = from_points(fit.gmm.means);
        out["weights"] = py::cast(fit.gmm.weights);
        out["fixed_std"] = fit.gmm.fixed_std;
        out["log_likelihood"] = py::cast(fit.log_likelihood);
        return out;
      },
      py::arg("points"), py::arg("k"), py::arg("fixed_std"),
      py::arg("max_iters") = 100, py::arg("tol") = 1e-8, py::arg("seed") = 0,
      "EM fit with fixed isotropic std; returns means, weights and the "
      "log-likelihood trace");

  m.def(
      "spatial_softmax",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>&
             img,
         double temperature) {
        const SoftmaxResult r = spatial_softmax(to_image(img), temperature);
        return py::make_tuple(from_image(r.probabilities),
                              py::make_tuple(r.expected.x, r.expected.y));
      },
      py::arg("image"), py::arg("temperature") = 1.0);

  m.def(
      "savgol_smooth",
      [](const std::vector<double>& signal, int window, int polyorder) {
        return savgol_smooth(signal, window, polyorder);
      },
      py::arg("signal"), py::arg("window") = 7, py::arg("polyorder") = 3);

  m.def("detect_contact_time", &detect_contact_time, py::arg("flags"),
        py::arg("window") = 7, py::arg("polyorder") = 3,
        py::arg("threshold") = 0.75);

  m.def("default_config",
        []() { return serialize_run_config(RunConfig{}); });

  m.def(
      "normalize_config",
      [](const std::string& text) {
        return serialize_run_config(parse_run_config(text));
      },
      py::arg("text"), "parse + re-serialize (validates and orders keys)");

  m.def(
      "render_scene",
      [](const std::string& config_text) {
        const RunConfig cfg = config_from_text(config_text);
        Rng rng(cfg.seed);
        const Scene scene = make_scene(cfg.world, rng);
        return from_image(render(scene, CameraPose{}));
      },
      py::arg("config") = std::string(),
      "render the reset scene for a config");

  m.def(
      "gen_data",
      [](const std::string& config_text) { cmd_gen_data(config_from_text(config_text)); },
      py::arg("config") = std::string());

  m.def(
      "extract",
      [](const std::string& config_text) {
        const ExtractCounts c = cmd_extract(config_from_text(config_text));
        py::dict out;
        out["extracted"] = c.extracted;
        out["no_contact"] = c.no_contact;
        out["out_of_frame"] = c.out_of_frame;
        return out;
      },
      py::arg("config") = std::string());

  m.def(
      "train",
      [](const std::string& config_text) { cmd_train(config_from_text(config_text)); },
      py::arg("config") = std::string());

  m.def(
      "paradigm",
      [](const std::string& config_text, const std::string& mode,
         const std::string& goal) {
        std::optional<GoalSpec> g;
        if (!goal.empty()) {
          const size_t colon = goal.find(':');
          if (colon == std::string::npos)
            throw ConfigError("goal must be OBJECT:THRESHOLD");
          GoalSpec spec;
          spec.object = goal.substr(0, colon);
          spec.fraction = std::stod(goal.substr(colon + 1));
          g = spec;
        }
        cmd_paradigm(config_from_text(config_text), mode, g);
      },
      py::arg("config") = std::string(), py::arg("mode") = "imitate",
      py::arg("goal") = std::string());

  m.def(
      "report",
      [](const std::string& config_text) { cmd_report(config_from_text(config_text)); },
      py::arg("config") = std::string());

  m.def(
      "predict",
      [](const std::string& checkpoint, const py::array_t<
             double, py::array::c_style | py::array::forcecast>& image,
         int n_queries, std::uint64_t seed) {
        const ModelParams params = load_checkpoint(checkpoint);
        Rng rng(seed);
        const InferResult r =
            infer_full(params, to_image(image), n_queries, rng);
        py::dict out;
        out["means"] = from_points(r.contact.means);
        out["weights"] = py::cast(r.contact.weights);
        out["waypoints"] = from_points(r.waypoints);
        return out;
      },
      py::arg("checkpoint"), py::arg("image"), py::arg("n_queries") = 10,
      py::arg("seed") = 0,
      "full-image affordance inference from a checkpoint");
}
