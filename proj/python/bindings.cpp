#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "bfl/config.hpp"
#include "bfl/eval.hpp"
#include "bfl/experiments.hpp"
#include "bfl/federation.hpp"
#include "bfl/geometry.hpp"
#include "bfl/report.hpp"
#include "bfl/variopt.hpp"

namespace py = pybind11;
using namespace bfl;

namespace {

Lambda to_lambda(const py::object& v) {
  if (py::isinstance<py::str>(v)) return Lambda::parse(v.cast<std::string>());
  return Lambda(v.cast<double>());
}

// Configs cross the boundary as JSON text so Python sees plain dicts.
py::object to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}
nlohmann::json from_py(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bayesian federated learning with posterior aggregation and projection";

  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DegenerateSample>(m, "DegenerateSample", PyExc_ValueError);

  py::class_<DiagGaussian>(m, "DiagGaussian")
      .def(py::init<Vector, Vector>(), py::arg("mean"), py::arg("var"))
      .def_property_readonly("mean", &DiagGaussian::mean)
      .def_property_readonly("var", &DiagGaussian::var)
      .def_property_readonly("dim", &DiagGaussian::dim)
      .def("__eq__", [](const DiagGaussian& a, const DiagGaussian& b) { return a == b; })
      .def("__repr__", [](const DiagGaussian& g) {
        return "DiagGaussian(dim=" + std::to_string(g.dim()) + ")";
      });

  m.def(
      "divergence",
      [](const std::string& d, const DiagGaussian& q, const DiagGaussian& p) {
        return divergence(parse_divergence(d), q, p);
      },
      py::arg("kind"), py::arg("q"), py::arg("p"), "D(q || p) for kind KL, RKL or W2SQ.");

  m.def(
      "aggregate",
      [](const std::string& method, const std::vector<DiagGaussian>& posteriors,
         const std::vector<double>& weights) {
        return aggregate(parse_aggregation(method), posteriors, weights);
      },
      py::arg("method"), py::arg("posteriors"), py::arg("weights"));

  m.def(
      "project",
      [](const std::string& d, const DiagGaussian& global, const DiagGaussian& local,
         const py::object& lambda) {
        return project(parse_divergence(d), global, local, to_lambda(lambda));
      },
      py::arg("kind"), py::arg("global_posterior"), py::arg("local_posterior"), py::arg("lam"),
      "lam may be a float or the string 'inf'.");

  m.def(
      "posterior_from_hessian",
      [](const Vector& mean, const Vector& hess, std::int64_t ess, double weight_decay) {
        IvonHyper h;
        h.ess = ess;
        h.weight_decay = weight_decay;
        h.validate();
        IvonState s{mean, hess, Vector::Zero(mean.size()), h, 0};
        return posterior_of(s);
      },
      py::arg("mean"), py::arg("hess"), py::arg("ess"), py::arg("weight_decay"));
  m.def("hessian_of", &hessian_of, py::arg("posterior"), py::arg("ess"),
        py::arg("weight_decay"));

  m.def(
      "wilcoxon",
      [](const std::vector<double>& x, const std::vector<double>& y, const std::string& method) {
        const auto mth = method == "exact"    ? WilcoxonMethod::Exact
                         : method == "normal" ? WilcoxonMethod::Normal
                                              : WilcoxonMethod::Auto;
        const auto r = wilcoxon_signed_rank(x, y, mth);
        py::dict out;
        out["statistic"] = r.statistic;
        out["w_plus"] = r.w_plus;
        out["w_minus"] = r.w_minus;
        out["p"] = r.p_two_sided;
        out["n"] = r.n_effective;
        out["exact"] = r.exact;
        return out;
      },
      py::arg("x"), py::arg("y"), py::arg("method") = "auto");

  m.def(
      "compare_aggregations",
      [](const std::vector<std::pair<std::string, std::vector<double>>>& scores) {
        py::list out;
        for (const auto& p : compare_aggregations(scores)) {
          out.append(py::make_tuple(p.method_a, p.method_b,
                                    p.p ? py::object(py::float_(*p.p)) : py::none()));
        }
        return out;
      },
      py::arg("scores"), "Lower-triangular (a, b, p) triples; p is None when degenerate.");

  m.def("default_config", [] { return to_py(config_to_json(ExperimentConfig{})); });

  m.def(
      "run_experiment",
      [](const py::object& config, std::uint64_t seed) {
        const auto cfg = config_from_json(from_py(config));
        cfg.validate();
        ExperimentReport rep;
        {
          py::gil_scoped_release release;
          rep = run_experiment(cfg, seed);
        }
        return to_py(report_json(rep));
      },
      py::arg("config"), py::arg("seed"));

  m.def(
      "validate_geometry",
      [](int instances, std::uint64_t seed) {
        ValidationOptions opt;
        opt.instances = instances;
        opt.seed = seed;
        const auto v = validate_geometry(opt);
        py::list out;
        for (const auto& r : v.results) {
          py::dict d;
          d["property"] = r.name;
          d["passed"] = r.passed;
          d["checked"] = r.checked;
          d["worst"] = r.worst;
          d["counterexample"] = r.counterexample;
          out.append(d);
        }
        return out;
      },
      py::arg("instances") = 20, py::arg("seed") = 0);
}
