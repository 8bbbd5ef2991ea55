#include "graphdyn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "graphdyn/errors.hpp"
#include "graphdyn/textio.hpp"

namespace graphdyn {

template <class Net>
RhsFn neural_rhs(const GraphOdeModel<Net>& model) {
  auto m = std::make_shared<const GraphOdeModel<Net>>(model);
  return [m](const Graph& g, std::span<const double> x, std::span<double> dx) {
    const EdgeList edges(g);
    const std::vector<double> out = predict_derivative(*m, x, edges);
    if (out.size() != dx.size()) throw ShapeError("neural right-hand side has wrong size");
    std::copy(out.begin(), out.end(), dx.begin());
  };
}

RolloutResult rollout(const RhsFn& rhs, const Graph& graph, std::span<const double> x0, std::size_t features,
                      double t0, double t1, std::size_t n_samples, const IntegratorOptions& opts) {
  if (!(t1 > t0)) throw ParamError("rollout needs t1 > t0");
  // Out-of-domain evaluation becomes a non-finite derivative, which the
  // integrator reports as divergence.
  const RhsFn guarded = [&rhs](const Graph& g, std::span<const double> x, std::span<double> dx) {
    try {
      rhs(g, x, dx);
    } catch (const DomainError&) {
      std::fill(dx.begin(), dx.end(), std::numeric_limits<double>::quiet_NaN());
    }
  };
  RolloutResult r;
  try {
    r.predicted = integrate(guarded, graph, x0, features, t0, t1, n_samples, opts);
  } catch (const DivergenceError& e) {
    r.diverged = true;
    r.divergence_time = e.last_valid_time();
    r.predicted = Trajectory{};
  }
  return r;
}

RolloutResult rollout(const SymbolicModel& model, const Graph& graph, std::span<const double> x0, double t0,
                      double t1, std::size_t n_samples, const IntegratorOptions& opts) {
  return rollout(symbolic_rhs(model), graph, x0, 1, t0, t1, n_samples, opts);
}

template <class Net>
RolloutResult rollout(const GraphOdeModel<Net>& model, const Graph& graph, std::span<const double> x0, double t0,
                      double t1, std::size_t n_samples, const IntegratorOptions& opts) {
  return rollout(neural_rhs(model), graph, x0, model.features(), t0, t1, n_samples, opts);
}

double mae_traj(const Trajectory& truth, const Trajectory& predicted, MaeNorm norm) {
  if (truth.length() != predicted.length() || truth.nodes != predicted.nodes ||
      truth.features != predicted.features || truth.states.size() != predicted.states.size()) {
    throw ShapeError("trajectories are not aligned");
  }
  const std::size_t S = truth.length();
  if (S < 2) throw ShapeError("trajectory error needs at least 2 samples");
  for (std::size_t t = 0; t < S; ++t) {
    if (truth.times[t] != predicted.times[t]) throw ShapeError("trajectories use different sampling grids");
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < truth.states.size(); ++k) sum += std::abs(truth.states[k] - predicted.states[k]);
  const double N = static_cast<double>(truth.nodes);
  const double denom = norm == MaeNorm::Printed ? N * static_cast<double>(S - 1) : N * static_cast<double>(S);
  return sum / denom;
}

RolloutResult rollout_against(const RhsFn& rhs, const Trajectory& truth, const Graph& graph,
                              const IntegratorOptions& opts, MaeNorm norm) {
  if (truth.length() < 2) throw ShapeError("reference trajectory needs at least 2 samples");
  if (graph.size() != truth.nodes) throw ShapeError("graph and trajectory disagree on node count");
  RolloutResult r = rollout(rhs, graph, truth.at(0), truth.features, truth.times.front(), truth.times.back(),
                            truth.length(), opts);
  if (!r.diverged) r.mae_traj = mae_traj(truth, r.predicted, norm);
  return r;
}

RolloutResult rollout_against(const SymbolicModel& model, const Trajectory& truth, const Graph& graph,
                              const IntegratorOptions& opts, MaeNorm norm) {
  return rollout_against(symbolic_rhs(model), truth, graph, opts, norm);
}

double mae_eul(const RhsFn& rhs, const Trajectory& truth, const Graph& graph) {
  if (truth.length() < 2) throw ShapeError("Euler error needs at least 2 samples");
  if (graph.size() != truth.nodes) throw ShapeError("graph and trajectory disagree on node count");
  truth.validate();
  const std::size_t stride = truth.stride();
  std::vector<double> dx(stride);
  double sum = 0.0;
  for (std::size_t t = 0; t + 1 < truth.length(); ++t) {
    const double h = truth.times[t + 1] - truth.times[t];
    const auto x = truth.at(t), next = truth.at(t + 1);
    rhs(graph, x, dx);
    for (std::size_t k = 0; k < stride; ++k) sum += std::abs(next[k] - (x[k] + h * dx[k]));
  }
  return sum / static_cast<double>((truth.length() - 1) * stride);
}

double mae_eul(const SymbolicModel& model, const Trajectory& truth, const Graph& graph) {
  return mae_eul(symbolic_rhs(model), truth, graph);
}

OodSelection ood_select(std::span<const SymbolicModel> candidates, const Graph& graph, const Trajectory& truth,
                        const IntegratorOptions& opts) {
  if (candidates.empty()) throw ParamError("ood_select: no candidates");
  OodSelection sel;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    RankedCandidate rc;
    rc.index = k;
    rc.formula = format_model(candidates[k], kExactPrecision);
    rc.complexity = complexity(candidates[k]);
    const RolloutResult r = rollout_against(candidates[k], truth, graph, opts);
    rc.diverged = r.diverged;
    rc.divergence_time = r.divergence_time;
    rc.mae_traj = r.mae_traj;
    sel.ranking.push_back(std::move(rc));
  }
  std::stable_sort(sel.ranking.begin(), sel.ranking.end(), [](const RankedCandidate& a, const RankedCandidate& b) {
    if (a.diverged != b.diverged) return !a.diverged;
    if (a.diverged) {
      const double ta = a.divergence_time.value_or(-1.0), tb = b.divergence_time.value_or(-1.0);
      if (ta != tb) return ta > tb;
    } else if (a.mae_traj != b.mae_traj) {
      return a.mae_traj < b.mae_traj;
    }
    if (a.complexity != b.complexity) return a.complexity < b.complexity;
    return a.formula < b.formula;
  });
  sel.best = sel.ranking.front().index;
  sel.all_diverged = sel.ranking.front().diverged;
  return sel;
}

void write_ranking_csv(const std::filesystem::path& path, const OodSelection& sel, const std::string& config_hash) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "config_hash,rank,candidate,formula,complexity,mae_traj,diverged,divergence_time,selected,all_diverged\n";
  for (std::size_t r = 0; r < sel.ranking.size(); ++r) {
    const RankedCandidate& c = sel.ranking[r];
    os << csv_field(config_hash) << ',' << r << ',' << c.index << ',' << csv_field(c.formula) << ',' << c.complexity
       << ',' << (c.diverged ? "" : format_double(c.mae_traj)) << ',' << (c.diverged ? 1 : 0) << ','
       << (c.divergence_time ? format_double(*c.divergence_time) : "") << ',' << (c.index == sel.best ? 1 : 0) << ','
       << (sel.all_diverged ? 1 : 0) << '\n';
  }
  if (!os) throw IoError("failed writing " + path.string());
}

void write_eval_report(const std::filesystem::path& path, std::span<const EvalRow> rows,
                       const std::string& config_hash) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "config_hash,candidate,formula,complexity,graph,mae_traj,mae_eul,diverged,divergence_time\n";
  for (const EvalRow& r : rows) {
    os << csv_field(config_hash) << ',' << csv_field(r.candidate) << ',' << csv_field(r.formula) << ','
       << r.complexity << ',' << csv_field(r.graph) << ',' << (r.diverged ? "" : format_double(r.mae_traj)) << ','
       << format_double(r.mae_eul) << ',' << (r.diverged ? 1 : 0) << ','
       << (r.divergence_time ? format_double(*r.divergence_time) : "") << '\n';
  }
  if (!os) throw IoError("failed writing " + path.string());
}

template RhsFn neural_rhs(const GraphOdeModel<KanNet>&);
template RhsFn neural_rhs(const GraphOdeModel<MlpNet>&);
template RolloutResult rollout(const GraphOdeModel<KanNet>&, const Graph&, std::span<const double>, double, double,
                               std::size_t, const IntegratorOptions&);
template RolloutResult rollout(const GraphOdeModel<MlpNet>&, const Graph&, std::span<const double>, double, double,
                               std::size_t, const IntegratorOptions&);

}  // namespace graphdyn
