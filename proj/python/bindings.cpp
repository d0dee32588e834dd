#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fssl/config.hpp"
#include "fssl/core.hpp"
#include "fssl/defenses.hpp"
#include "fssl/error.hpp"
#include "fssl/federation.hpp"
#include "fssl/gradcheck.hpp"
#include "fssl/run_io.hpp"

namespace py = pybind11;
using namespace fssl;

namespace {

ExperimentConfig parse(const std::string& text, const std::vector<std::string>& overrides) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, true, true);
  for (const auto& o : overrides) apply_override(j, o);
  return config_from_json(j);
}

}  // namespace

PYBIND11_MODULE(_fssl, m) {
  m.doc() = "Federated self-supervised backdoor simulator";

  py::register_exception<fssl::Error>(m, "FsslError", PyExc_RuntimeError);

  m.def("load_config", [](const std::string& path) { return to_json(load_config(path)).dump(); }, py::arg("path"),
        "Loads, validates and fills defaults; returns the resolved config as JSON text.");

  m.def("default_config", [] { return to_json(ExperimentConfig{}).dump(); });

  m.def(
      "run",
      [](const std::string& config_json, const std::vector<std::string>& overrides, std::size_t threads) {
        const ExperimentConfig cfg = parse(config_json, overrides);
        ExperimentResult r;
        {
          py::gil_scoped_release release;
          r = run_experiment(cfg, threads);
        }
        return py::make_tuple(metrics_csv(r.metrics), summary_json(r).dump());
      },
      py::arg("config_json"), py::arg("overrides") = std::vector<std::string>{}, py::arg("threads") = 1,
      "Runs one experiment; returns (metrics CSV, summary JSON).");

  m.def(
      "gradcheck",
      [](std::size_t instances, std::uint64_t seed) {
        GradCheckOptions o;
        o.instances = instances;
        o.seed = seed;
        py::list out;
        for (const auto& g : run_gradcheck(o).groups) {
          out.append(py::make_tuple(g.name, g.instances, g.max_rel_error, g.passed));
        }
        return out;
      },
      py::arg("instances") = 100, py::arg("seed") = 7);

  m.def("cosine_sim", [](const Vector& a, const Vector& b) { return cosine_sim(normalize(a), normalize(b)); });
  m.def("krum", [](const std::vector<Vector>& u, std::size_t f) { return krum(u, f); }, py::arg("updates"),
        py::arg("f"));
  m.def("foolsgold", [](const std::vector<Vector>& h) { return foolsgold(h); }, py::arg("history"));
  m.def(
      "dirichlet_chi2",
      [](const std::vector<ClassId>& labels, std::size_t clients, double alpha, std::size_t classes,
         std::uint64_t seed) {
        RngStream rng(seed, 0);
        return heterogeneity_chi2(dirichlet_partition(labels, clients, alpha, rng), labels, classes);
      },
      py::arg("labels"), py::arg("clients"), py::arg("alpha"), py::arg("classes"), py::arg("seed") = 0);
}
