#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "graphdyn/dynamics.hpp"
#include "graphdyn/expr.hpp"
#include "graphdyn/graph.hpp"
#include "graphdyn/model.hpp"
#include "graphdyn/trajectory.hpp"

namespace graphdyn {

/// Denominator of the trajectory error: `Printed` divides the sum over S
/// samples by N (S - 1), `PerSample` by N S.
enum class MaeNorm { Printed, PerSample };

struct RolloutResult {
  Trajectory predicted;
  bool diverged = false;
  std::optional<double> divergence_time;
  /// Set by rollout_against(); NaN otherwise and for diverged rollouts.
  double mae_traj = std::numeric_limits<double>::quiet_NaN();
};

/// Right-hand side of a neural surrogate.
template <class Net>
RhsFn neural_rhs(const GraphOdeModel<Net>& model);

/// Autoregressive integration of the model from x0 on [t0, t1]. A
/// DivergenceError or a domain violation marks the result diverged and leaves
/// the predicted trajectory empty.
RolloutResult rollout(const RhsFn& rhs, const Graph& graph, std::span<const double> x0, std::size_t features,
                      double t0, double t1, std::size_t n_samples, const IntegratorOptions& opts = {});
RolloutResult rollout(const SymbolicModel& model, const Graph& graph, std::span<const double> x0, double t0,
                      double t1, std::size_t n_samples, const IntegratorOptions& opts = {});
template <class Net>
RolloutResult rollout(const GraphOdeModel<Net>& model, const Graph& graph, std::span<const double> x0, double t0,
                      double t1, std::size_t n_samples, const IntegratorOptions& opts = {});

/// Sum over samples and nodes of |x_i(t) - x^_i(t)| (1-norm over features)
/// divided per `norm`. Throws ShapeError when the grids differ.
double mae_traj(const Trajectory& truth, const Trajectory& predicted, MaeNorm norm = MaeNorm::Printed);

/// Same as the rollout of `truth`'s first sample, scored against `truth`.
RolloutResult rollout_against(const RhsFn& rhs, const Trajectory& truth, const Graph& graph,
                              const IntegratorOptions& opts = {}, MaeNorm norm = MaeNorm::Printed);
RolloutResult rollout_against(const SymbolicModel& model, const Trajectory& truth, const Graph& graph,
                              const IntegratorOptions& opts = {}, MaeNorm norm = MaeNorm::Printed);

/// One explicit Euler step from every ground-truth sample, averaged over all
/// steps, nodes and features. Throws ShapeError for fewer than 2 samples.
double mae_eul(const RhsFn& rhs, const Trajectory& truth, const Graph& graph);
double mae_eul(const SymbolicModel& model, const Trajectory& truth, const Graph& graph);

struct RankedCandidate {
  std::size_t index = 0;
  std::string formula;
  std::size_t complexity = 0;
  double mae_traj = 0.0;
  bool diverged = false;
  std::optional<double> divergence_time;
};

struct OodSelection {
  std::size_t best = 0;
  /// Best first: finite errors ascending, then diverged by latest divergence.
  std::vector<RankedCandidate> ranking;
  /// Every candidate diverged; the pick is the one that lasted longest.
  bool all_diverged = false;
};

/// Rolls out each candidate from the validation trajectory's first sample and
/// ranks by trajectory error. Ties break on complexity, then formula text, so
/// the result does not depend on candidate order. Throws ParamError if empty.
OodSelection ood_select(std::span<const SymbolicModel> candidates, const Graph& graph, const Trajectory& truth,
                        const IntegratorOptions& opts = {});

void write_ranking_csv(const std::filesystem::path& path, const OodSelection& sel, const std::string& config_hash = "");

struct EvalRow {
  std::string candidate;
  std::string formula;
  std::size_t complexity = 0;
  std::string graph;
  double mae_traj = 0.0;
  double mae_eul = 0.0;
  bool diverged = false;
  std::optional<double> divergence_time;
};

void write_eval_report(const std::filesystem::path& path, std::span<const EvalRow> rows,
                       const std::string& config_hash = "");

}  // namespace graphdyn
