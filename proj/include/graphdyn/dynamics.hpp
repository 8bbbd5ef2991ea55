#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "graphdyn/expr.hpp"
#include "graphdyn/graph.hpp"
#include "graphdyn/trajectory.hpp"

namespace graphdyn {

enum class DynKind { Kur, Epid, Bio, Pop };

std::string_view dyn_name(DynKind k);
/// Accepts "KUR", "EPID", "BIO", "POP" (case-insensitive); throws ParamError.
DynKind dyn_from_name(std::string_view name);

/// One of the four synthetic systems with its parameters, in the order
/// KUR (omega, K), EPID (mu, beta), BIO (alpha, delta, kappa), POP (r, b, sigma, a).
struct DynSpec {
  DynKind kind = DynKind::Kur;
  std::vector<double> params;

  static DynSpec defaults(DynKind kind);
  static const std::vector<std::string>& param_names(DynKind kind);
  double param(std::string_view name) const;
  /// Throws ParamError on a wrong parameter count or non-finite value.
  void validate() const;

  friend bool operator==(const DynSpec&, const DynSpec&) = default;
};

/// Right-hand side: (graph, state[node][feature], out derivative).
using RhsFn = std::function<void(const Graph&, std::span<const double>, std::span<double>)>;

RhsFn ground_truth_rhs(const DynSpec& spec);
/// The same law as an (H, G) pair. POP requires integer b and a.
SymbolicModel ground_truth_model(const DynSpec& spec);
/// Right-hand side of x_i' = H(x_i) + sum_j A_ij G(x_i, x_j) for scalar node states.
RhsFn symbolic_rhs(const SymbolicModel& model);

struct IntegratorOptions {
  double abs_tol = 1e-12;
  double rel_tol = 1e-12;
  double divergence_cap = 1e9;
  /// Forces constant steps of this size (the last one may be shorter).
  std::optional<double> fixed_step;
  std::size_t max_steps = 50'000'000;
};

/// Dormand-Prince 5(4) with dense output sampled at n_samples regular times
/// including both endpoints. Throws DivergenceError carrying the last accepted
/// time when a state exceeds the cap, becomes non-finite, or the step underflows.
Trajectory integrate(const RhsFn& rhs, const Graph& graph, std::span<const double> x0,
                     std::size_t features, double t_start, double t_end, std::size_t n_samples,
                     const IntegratorOptions& opts = {});

}  // namespace graphdyn
