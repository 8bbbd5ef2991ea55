#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "graphdyn/config.hpp"
#include "graphdyn/dataset.hpp"
#include "graphdyn/errors.hpp"
#include "graphdyn/eval.hpp"
#include "graphdyn/expr.hpp"
#include "graphdyn/pipeline.hpp"

namespace py = pybind11;
using namespace graphdyn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  Array a({rows, cols});
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

Array adjacency(const Graph& g) {
  const auto d = g.dense();
  return to_array(std::vector<double>(d.begin(), d.end()), g.size(), g.size());
}

Graph graph_from(const Array& a) {
  if (a.ndim() != 2 || a.shape(0) != a.shape(1)) throw ShapeError("adjacency must be a square matrix");
  const auto n = static_cast<std::size_t>(a.shape(0));
  return Graph(n, std::vector<double>(a.data(), a.data() + n * n));
}

std::vector<double> vec(const Array& a) { return std::vector<double>(a.data(), a.data() + a.size()); }

Trajectory trajectory_from(const Array& times, const Array& states) {
  if (states.ndim() != 2 || times.ndim() != 1 || states.shape(0) != times.shape(0)) {
    throw ShapeError("states must be (samples, nodes) with one time per sample");
  }
  Trajectory t;
  t.times = vec(times);
  t.nodes = static_cast<std::size_t>(states.shape(1));
  t.states = vec(states);
  return t;
}

py::tuple trajectory_out(const Trajectory& t) {
  return py::make_tuple(to_array(t.times, 1, t.length()).attr("reshape")(-1), to_array(t.states, t.length(), t.nodes));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Graph KAN-ODE training and Spline-Wise symbolic regression.";

  static py::exception<Error> base(m, "Error");
  static py::exception<ConfigError> config_error(m, "ConfigError", base.ptr());
  static py::exception<StageDependencyError> stage_error(m, "StageDependencyError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      config_error(e.what());
    } catch (const StageDependencyError& e) {
      stage_error(e.what());
    } catch (const Error& e) {
      base(e.what());
    }
  });

  py::class_<Expr>(m, "Expr")
      .def(py::init([](const std::string& text) { return parse_expr(text); }), py::arg("text"))
      .def("complexity", [](const Expr& e) { return complexity(e); })
      .def("expand", [](const Expr& e) { return expand(e); })
      .def("constants", [](const Expr& e) { return constants(e); })
      .def(
          "evaluate",
          [](const Expr& e, double x_i, std::optional<double> x_j) {
            const double s[] = {x_i};
            if (!x_j) return eval_expr(e, s);
            const double nb[] = {*x_j};
            return eval_expr(e, s, nb);
          },
          py::arg("x_i"), py::arg("x_j") = std::nullopt)
      .def("__str__", [](const Expr& e) { return format_expr(e); })
      .def("__repr__", [](const Expr& e) { return "Expr('" + format_expr(e) + "')"; })
      .def("__eq__", [](const Expr& a, const Expr& b) { return a == b; });

  m.def("ba_graph", [](std::size_t n, std::size_t k, std::uint64_t seed) { return adjacency(gen_ba(n, k, seed)); },
        py::arg("n"), py::arg("m"), py::arg("seed"), "Barabasi-Albert adjacency matrix.");
  m.def(
      "ws_graph",
      [](std::size_t n, std::size_t k, double p, std::uint64_t seed) { return adjacency(gen_ws(n, k, p, seed)); },
      py::arg("n"), py::arg("k"), py::arg("p"), py::arg("seed"), "Watts-Strogatz adjacency matrix.");
  m.def("er_graph", [](std::size_t n, double p, std::uint64_t seed) { return adjacency(gen_er(n, p, seed)); },
        py::arg("n"), py::arg("p"), py::arg("seed"), "Erdos-Renyi adjacency matrix.");

  m.def(
      "simulate",
      [](const std::string& kind, const Array& adj, const Array& x0, double t0, double t1, std::size_t samples,
         std::optional<std::vector<double>> params) {
        DynSpec spec = DynSpec::defaults(dyn_from_name(kind));
        if (params) spec.params = *params;
        spec.validate();
        const Graph g = graph_from(adj);
        py::gil_scoped_release nogil;
        const Trajectory t = integrate(ground_truth_rhs(spec), g, vec(x0), 1, t0, t1, samples);
        py::gil_scoped_acquire gil;
        return trajectory_out(t);
      },
      py::arg("kind"), py::arg("adjacency"), py::arg("x0"), py::arg("t0"), py::arg("t1"), py::arg("samples"),
      py::arg("params") = std::nullopt,
      "Integrates a reference system; returns (times, states) with states shaped (samples, nodes).");

  m.def(
      "stencil",
      [](const Array& times, const Array& states) {
        const DerivativeSeries d = stencil_derivatives(trajectory_from(times, states));
        return py::make_tuple(to_array(d.times, 1, d.length()).attr("reshape")(-1),
                              to_array(d.derivs, d.length(), d.nodes));
      },
      py::arg("times"), py::arg("states"), "Five-point derivatives at the interior samples.");

  m.def(
      "mae_traj",
      [](const Array& times, const Array& truth, const Array& predicted) {
        return mae_traj(trajectory_from(times, truth), trajectory_from(times, predicted));
      },
      py::arg("times"), py::arg("truth"), py::arg("predicted"));

  m.def(
      "rollout",
      [](const std::string& self_term, const std::string& interaction_term, const Array& adj, const Array& x0,
         double t0, double t1, std::size_t samples) {
        const SymbolicModel model{parse_expr(self_term), parse_expr(interaction_term)};
        const Graph g = graph_from(adj);
        const RolloutResult r = rollout(model, g, vec(x0), t0, t1, samples);
        py::dict out;
        out["diverged"] = r.diverged;
        out["divergence_time"] = r.divergence_time;
        if (!r.diverged) {
          const py::tuple tr = trajectory_out(r.predicted);
          out["times"] = tr[0];
          out["states"] = tr[1];
        }
        return out;
      },
      py::arg("self_term"), py::arg("interaction_term"), py::arg("adjacency"), py::arg("x0"), py::arg("t0"),
      py::arg("t1"), py::arg("samples"), "Integrates x_i' = H(x_i) + sum_j A_ij G(x_i, x_j).");

  m.def(
      "config_hash", [](const std::string& path) { return RunConfig::load(path).hash(); }, py::arg("config"));

  m.def(
      "run_stage",
      [](const std::string& stage, const std::string& config, std::optional<std::uint64_t> seed,
         std::optional<std::string> out) {
        RunConfig cfg = RunConfig::load(config);
        if (seed) cfg.seed = *seed;
        if (out) cfg.output = *out;
        const Stage s = stage_from_name(stage);
        StageResult r;
        {
          py::gil_scoped_release nogil;
          r = run_stage(s, cfg);
        }
        py::dict d;
        d["stage"] = std::string(stage_name(r.stage));
        d["files"] = r.files;
        d["notes"] = r.notes;
        d["output"] = cfg.output.string();
        d["config_hash"] = cfg.hash();
        return d;
      },
      py::arg("stage"), py::arg("config"), py::arg("seed") = std::nullopt, py::arg("out") = std::nullopt,
      "Runs one pipeline stage, as `graphdyn <stage>` does.");
}
