#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "mmat/attacks.hpp"
#include "mmat/cli.hpp"
#include "mmat/data.hpp"
#include "mmat/errors.hpp"
#include "mmat/evaluation.hpp"
#include "mmat/nets.hpp"
#include "mmat/strategy.hpp"
#include "mmat/training.hpp"

namespace py = pybind11;
using namespace mmat;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

grad::Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-d array");
  const auto n = static_cast<std::size_t>(a.shape(0));
  const auto d = static_cast<std::size_t>(a.shape(1));
  return grad::Tensor({n, d}, std::vector<double>(a.data(), a.data() + n * d));
}

Array to_array(const grad::Tensor& t) {
  Array out({t.rows(), t.cols()});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Dataset make_dataset(const Array& x, const std::vector<std::size_t>& y, std::size_t classes,
                     bool box01, double base_epsilon) {
  Dataset d;
  d.examples = to_tensor(x);
  d.labels = y;
  d.classes = classes;
  d.domain = box01 ? Domain::kBox01 : Domain::kUnconstrained;
  d.base_epsilon = base_epsilon;
  d.validate();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Moderate-margin adversarial training core";
  m.attr("version") = kArtifactVersion;

  py::register_exception<Error>(m, "MmatError", PyExc_RuntimeError);

  py::class_<Network>(m, "Network")
      .def_static("mlp", [](std::vector<std::size_t> sizes, std::uint64_t seed) {
        return Network::mlp(sizes, seed);
      }, py::arg("sizes"), py::arg("seed"))
      .def_property_readonly("input_dim", &Network::input_dim)
      .def_property_readonly("class_count", &Network::class_count)
      .def("logits", [](const Network& n, const Array& x) {
        grad::NoGradGuard g;
        return to_array(n.logits(to_tensor(x)));
      })
      .def("predict", [](const Network& n, const Array& x) { return predict(n, to_tensor(x)); })
      .def("same_parameters", &Network::same_parameters);

  py::class_<Dataset>(m, "Dataset")
      .def(py::init(&make_dataset), py::arg("x"), py::arg("y"), py::arg("classes") = 2,
           py::arg("box01") = false, py::arg("base_epsilon") = 0.1)
      .def_property_readonly("x", [](const Dataset& d) { return to_array(d.examples); })
      .def_readonly("y", &Dataset::labels)
      .def_readonly("classes", &Dataset::classes)
      .def_readonly("base_epsilon", &Dataset::base_epsilon)
      .def_readonly("warnings", &Dataset::warnings)
      .def("__len__", &Dataset::size);

  m.def("gen_rings", [](std::size_t n, std::vector<double> radii, double noise, std::uint64_t seed) {
    return gen_rings(n, radii, noise, seed);
  }, py::arg("n_per_class"), py::arg("radii"), py::arg("noise"), py::arg("seed"));
  m.def("gen_rings", [](std::size_t n, std::vector<double> radii, std::vector<double> noise,
                        std::uint64_t seed) {
    return gen_rings(n, radii, std::span<const double>(noise), seed);
  }, py::arg("n_per_class"), py::arg("radii"), py::arg("noise"), py::arg("seed"));
  m.def("gen_gaussians", [](std::size_t n, std::vector<std::pair<double, double>> centers, double sigma,
                            std::uint64_t seed) {
    std::vector<Point2> pts;
    for (auto [a, b] : centers) pts.push_back({a, b});
    return gen_gaussians(n, pts, sigma, seed);
  }, py::arg("n_per_class"), py::arg("centers"), py::arg("sigma"), py::arg("seed"));

  m.def("fgsm", [](const Network& n, const Array& x, std::vector<std::size_t> y, double eps, bool box01) {
    return to_array(fgsm(n, to_tensor(x), y, eps, box01));
  }, py::arg("net"), py::arg("x"), py::arg("y"), py::arg("epsilon"), py::arg("box01") = false);

  m.def("pgd", [](const Network& n, const Array& x, std::vector<std::size_t> y, std::vector<double> budgets,
                  std::vector<double> steps, int iterations, bool random_start, std::uint64_t seed,
                  bool box01, const std::string& loss) {
    PgdOptions o{iterations, random_start, seed, box01, loss_kind_from_string(loss)};
    return to_array(pgd(n, to_tensor(x), y, budgets, steps, o));
  }, py::arg("net"), py::arg("x"), py::arg("y"), py::arg("budgets"), py::arg("steps"),
     py::arg("iterations") = 20, py::arg("random_start") = false, py::arg("seed") = 0,
     py::arg("box01") = false, py::arg("loss") = "ce");

  m.def("deepfool_margin", [](const Network& n, std::vector<double> x, const std::string& space) {
    DeepFoolOptions o;
    o.space = space == "logit" ? DeepFoolSpace::kLogit : DeepFoolSpace::kProbability;
    const MarginEstimate e = deepfool_margin(n, x, o);
    return e.found ? py::object(py::float_(e.margin)) : py::object(py::none());
  }, py::arg("net"), py::arg("x"), py::arg("space") = "logit");

  m.def("grade_by_margin", [](std::vector<double> margins, std::pair<double, double> fractions) {
    std::vector<IndexedValue> v;
    for (std::size_t i = 0; i < margins.size(); ++i) v.push_back({i, margins[i]});
    const GradeTable t = grade_by_margin(v, {fractions.first, fractions.second});
    std::vector<std::string> grades;
    std::vector<double> eps;
    for (const auto& e : t.entries) {
      grades.emplace_back(to_string(e.grade));
      eps.push_back(e.eps);
    }
    return py::make_tuple(grades, eps, t.threshold_low, t.threshold_high);
  }, py::arg("margins"), py::arg("fractions") = std::pair{0.4, 0.7});

  m.def("grade_by_zmax", [](std::vector<double> z, double z1, double z2, std::array<double, 3> budgets) {
    std::vector<IndexedValue> v;
    for (std::size_t i = 0; i < z.size(); ++i) v.push_back({i, z[i]});
    const GradeTable t = grade_by_zmax(v, z1, z2, budgets);
    std::vector<std::string> grades;
    std::vector<double> eps;
    for (const auto& e : t.entries) {
      grades.emplace_back(to_string(e.grade));
      eps.push_back(e.eps);
    }
    return py::make_tuple(grades, eps);
  }, py::arg("zmax"), py::arg("z1") = 2.0, py::arg("z2") = 6.0,
     py::arg("budgets") = std::array<double, 3>{5.0 / 255, 10.0 / 255, 15.0 / 255});

  m.def("train", [](const Dataset& data, std::vector<std::size_t> hidden, const std::string& method,
                    double epsilon, int epochs, std::uint64_t seed, bool robust_metrics) {
    TrainConfig c;
    c.method = method_from_string(method);
    c.sat_epsilon = epsilon;
    c.epochs = epochs;
    c.seed = seed;
    c.robust_metrics = robust_metrics;
    c.milestones = {{epochs * 3 / 4, 0.1}, {epochs * 9 / 10, 0.1}};
    std::vector<std::size_t> sizes{data.dim()};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(data.classes);
    py::gil_scoped_release release;
    return train(c, data, Network::mlp(sizes, seed)).final_network;
  }, py::arg("data"), py::arg("hidden") = std::vector<std::size_t>{32, 32},
     py::arg("method") = "natural", py::arg("epsilon") = 0.0, py::arg("epochs") = 40,
     py::arg("seed") = 0, py::arg("robust_metrics") = false);

  m.def("natural_accuracy", [](const Network& n, const Dataset& d) { return natural_accuracy(n, d).value(); });
  m.def("robust_accuracy", [](const Network& n, const Dataset& d, double eps, std::uint64_t seed) {
    return robust_accuracy(n, d, AttackSpec::pgd20(eps, seed, d.box01())).value();
  }, py::arg("net"), py::arg("data"), py::arg("epsilon"), py::arg("seed") = 0);

  m.def("save_checkpoint", [](const std::string& path, const Network& n, const std::string& method) {
    save_checkpoint(path, {n, method, 0, "", n.seed()});
  }, py::arg("path"), py::arg("net"), py::arg("method") = "natural");
  m.def("load_checkpoint", [](const std::string& path) { return load_checkpoint(path).network; });

  m.def("run_cli", [](std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return py::make_tuple(code, out.str(), err.str());
  });
}
