#include "graphdyn/dynamics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "graphdyn/errors.hpp"

namespace graphdyn {

std::string_view dyn_name(DynKind k) {
  switch (k) {
    case DynKind::Kur: return "KUR";
    case DynKind::Epid: return "EPID";
    case DynKind::Bio: return "BIO";
    case DynKind::Pop: return "POP";
  }
  return "?";
}

DynKind dyn_from_name(std::string_view name) {
  std::string up(name);
  for (char& c : up) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (DynKind k : {DynKind::Kur, DynKind::Epid, DynKind::Bio, DynKind::Pop}) {
    if (dyn_name(k) == up) return k;
  }
  throw ParamError("unknown dynamics '" + std::string(name) + "'");
}

DynSpec DynSpec::defaults(DynKind kind) {
  switch (kind) {
    case DynKind::Kur: return {kind, {2.0, 0.5}};
    case DynKind::Epid: return {kind, {0.5, 0.5}};
    case DynKind::Bio: return {kind, {1.0, 0.5, 0.5}};
    case DynKind::Pop: return {kind, {0.5, 1.0, 0.2, 3.0}};
  }
  return {};
}

const std::vector<std::string>& DynSpec::param_names(DynKind kind) {
  static const std::vector<std::string> kur{"omega", "K"}, epid{"mu", "beta"},
      bio{"alpha", "delta", "kappa"}, pop{"r", "b", "sigma", "a"};
  switch (kind) {
    case DynKind::Kur: return kur;
    case DynKind::Epid: return epid;
    case DynKind::Bio: return bio;
    case DynKind::Pop: return pop;
  }
  return kur;
}

double DynSpec::param(std::string_view name) const {
  const auto& names = param_names(kind);
  for (std::size_t k = 0; k < names.size() && k < params.size(); ++k) {
    if (names[k] == name) return params[k];
  }
  throw ParamError("dynamics " + std::string(dyn_name(kind)) + " has no parameter '" +
                   std::string(name) + "'");
}

void DynSpec::validate() const {
  if (params.size() != param_names(kind).size()) {
    throw ParamError(std::string(dyn_name(kind)) + " expects " +
                     std::to_string(param_names(kind).size()) + " parameters");
  }
  for (double p : params) {
    if (!std::isfinite(p)) throw ParamError("dynamics parameters must be finite");
  }
}

namespace {

double real_power(double x, double e) {
  if (e == std::round(e) && std::abs(e) < 64) {
    const int n = static_cast<int>(e);
    double r = 1.0;
    for (int k = 0; k < std::abs(n); ++k) r *= x;
    return n < 0 ? 1.0 / r : r;
  }
  return std::pow(x, e);
}

void check_shape(const Graph& g, std::span<const double> x, std::span<double> dx) {
  if (x.size() != g.size() || dx.size() != g.size()) {
    throw ShapeError("state has " + std::to_string(x.size()) + " entries for a graph of " +
                     std::to_string(g.size()) + " nodes");
  }
}

}  // namespace

RhsFn ground_truth_rhs(const DynSpec& spec) {
  spec.validate();
  const auto p = spec.params;
  switch (spec.kind) {
    case DynKind::Kur:
      return [p](const Graph& g, std::span<const double> x, std::span<double> dx) {
        check_shape(g, x, dx);
        for (std::size_t i = 0; i < g.size(); ++i) {
          double s = 0.0;
          const auto nb = g.neighbors(i);
          const auto w = g.weights(i);
          for (std::size_t k = 0; k < nb.size(); ++k) s += w[k] * std::sin(x[nb[k]] - x[i]);
          dx[i] = p[0] + p[1] * s;
        }
      };
    case DynKind::Epid:
      return [p](const Graph& g, std::span<const double> x, std::span<double> dx) {
        check_shape(g, x, dx);
        for (std::size_t i = 0; i < g.size(); ++i) {
          double s = 0.0;
          const auto nb = g.neighbors(i);
          const auto w = g.weights(i);
          for (std::size_t k = 0; k < nb.size(); ++k) s += w[k] * (1.0 - x[i]) * x[nb[k]];
          dx[i] = -p[0] * x[i] + p[1] * s;
        }
      };
    case DynKind::Bio:
      return [p](const Graph& g, std::span<const double> x, std::span<double> dx) {
        check_shape(g, x, dx);
        for (std::size_t i = 0; i < g.size(); ++i) {
          double s = 0.0;
          const auto nb = g.neighbors(i);
          const auto w = g.weights(i);
          for (std::size_t k = 0; k < nb.size(); ++k) s += w[k] * x[i] * x[nb[k]];
          dx[i] = p[0] - p[1] * x[i] - p[2] * s;
        }
      };
    case DynKind::Pop:
      return [p](const Graph& g, std::span<const double> x, std::span<double> dx) {
        check_shape(g, x, dx);
        for (std::size_t i = 0; i < g.size(); ++i) {
          double s = 0.0;
          const auto nb = g.neighbors(i);
          const auto w = g.weights(i);
          for (std::size_t k = 0; k < nb.size(); ++k) s += w[k] * real_power(x[nb[k]], p[3]);
          dx[i] = -p[0] * real_power(x[i], p[1]) + p[2] * s;
        }
      };
  }
  return {};
}

SymbolicModel ground_truth_model(const DynSpec& spec) {
  spec.validate();
  const auto& p = spec.params;
  const Expr xi = Expr::self(), xj = Expr::neighbor();
  auto c = [](double v) { return Expr::constant(v); };
  auto ipow = [](const Expr& base, double e) {
    if (e != std::round(e) || e == 0.0 || std::abs(e) > Expr::kMaxExponent) {
      throw ParamError("symbolic POP law needs an integer exponent in [-6, 6]");
    }
    return e == 1.0 ? base : Expr::pow(base, static_cast<int>(e));
  };
  switch (spec.kind) {
    case DynKind::Kur:
      return {c(p[0]), c(p[1]) * Expr::unary(Primitive::Sin, xj - xi)};
    case DynKind::Epid:
      return {c(-p[0]) * xi, c(p[1]) * (c(1.0) - xi) * xj};
    case DynKind::Bio:
      return {c(p[0]) - c(p[1]) * xi, c(-p[2]) * xi * xj};
    case DynKind::Pop:
      return {c(-p[0]) * ipow(xi, p[1]), c(p[2]) * ipow(xj, p[3])};
  }
  return {};
}

RhsFn symbolic_rhs(const SymbolicModel& model) {
  if (model.self_term.max_self_feature().value_or(0) > 0 ||
      model.interaction_term.max_self_feature().value_or(0) > 0 ||
      model.interaction_term.max_neighbor_feature().value_or(0) > 0 || model.self_term.has_neighbor()) {
    throw ShapeError("symbolic_rhs supports scalar node states with neighbor terms only in G");
  }
  auto h = std::make_shared<CompiledExpr>(model.self_term);
  auto gexpr = std::make_shared<CompiledExpr>(model.interaction_term);
  const bool has_g = !model.interaction_term.is_zero();
  return [h, gexpr, has_g](const Graph& g, std::span<const double> x, std::span<double> dx) {
    check_shape(g, x, dx);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::span<const double> xi = x.subspan(i, 1);
      double s = h->eval(xi);
      if (has_g) {
        const auto nb = g.neighbors(i);
        const auto w = g.weights(i);
        for (std::size_t k = 0; k < nb.size(); ++k) s += w[k] * gexpr->eval(xi, x.subspan(nb[k], 1));
      }
      dx[i] = s;
    }
  };
}

// ---------------------------------------------------------------------------
// Dormand-Prince 5(4)

namespace {

constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                 a76 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;
constexpr double d1 = -12715105075.0 / 11282082432, d3 = 87487479700.0 / 32700410799,
                 d4 = -10690763975.0 / 1880347072, d5 = 701980252875.0 / 199316789632,
                 d6 = -1453857185.0 / 822651844, d7 = 69997945.0 / 29380423;

double rms_norm(std::span<const double> v, std::span<const double> scale) {
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double r = v[i] / scale[i];
    s += r * r;
  }
  return v.empty() ? 0.0 : std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

Trajectory integrate(const RhsFn& rhs, const Graph& graph, std::span<const double> x0,
                     std::size_t features, double t_start, double t_end, std::size_t n_samples,
                     const IntegratorOptions& opts) {
  if (!(t_end > t_start)) throw ParamError("integrate requires t_end > t_start");
  if (n_samples < 2) throw ParamError("integrate requires at least 2 samples");
  if (!(opts.abs_tol > 0.0) || !(opts.rel_tol > 0.0)) throw ParamError("tolerances must be positive");
  if (opts.fixed_step && !(*opts.fixed_step > 0.0)) throw ParamError("fixed step must be positive");
  if (features == 0 || x0.size() != graph.size() * features) {
    throw ShapeError("initial state has " + std::to_string(x0.size()) + " entries, expected " +
                     std::to_string(graph.size() * features));
  }
  const std::size_t m = x0.size();

  Trajectory traj;
  traj.times = sample_times(t_start, t_end, n_samples);
  traj.nodes = graph.size();
  traj.features = features;
  traj.states.resize(n_samples * m);

  std::vector<double> y(x0.begin(), x0.end()), y1(m), tmp(m), err(m), sc(m);
  std::vector<double> k1(m), k2(m), k3(m), k4(m), k5(m), k6(m), k7(m);
  for (double v : y) {
    if (!std::isfinite(v)) throw DivergenceError("initial state is not finite", t_start);
  }
  std::copy(y.begin(), y.end(), traj.states.begin());
  std::size_t next_sample = 1;

  const double span = t_end - t_start;
  double t = t_start;
  rhs(graph, y, k1);

  auto scale = [&](std::span<const double> a, std::span<const double> b) {
    for (std::size_t i = 0; i < m; ++i) {
      sc[i] = opts.abs_tol + opts.rel_tol * std::max(std::abs(a[i]), std::abs(b[i]));
    }
  };

  double h;
  if (opts.fixed_step) {
    h = *opts.fixed_step;
  } else {
    scale(y, y);
    const double dn0 = rms_norm(y, sc), dn1 = rms_norm(k1, sc);
    double h0 = (dn0 < 1e-5 || dn1 < 1e-5) ? 1e-6 : 0.01 * dn0 / dn1;
    h0 = std::min(h0, span);
    for (std::size_t i = 0; i < m; ++i) tmp[i] = y[i] + h0 * k1[i];
    rhs(graph, tmp, k2);
    for (std::size_t i = 0; i < m; ++i) err[i] = k2[i] - k1[i];
    const double dn2 = rms_norm(err, sc) / h0;
    const double dmax = std::max(dn1, dn2);
    const double h1 = dmax <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dmax, 0.2);
    h = std::min({100 * h0, h1, span});
  }

  constexpr double safety = 0.9, beta = 0.04, expo1 = 0.2 - beta * 0.75;
  constexpr double grow_max = 10.0, shrink_min = 0.2;
  double facold = 1e-4;
  bool last_rejected = false;
  std::size_t steps = 0;

  auto stage = [&](std::vector<double>& out, auto&& combine) {
    for (std::size_t i = 0; i < m; ++i) tmp[i] = y[i] + h * combine(i);
    rhs(graph, tmp, out);
  };

  while (next_sample < n_samples) {
    if (++steps > opts.max_steps) throw DivergenceError("step budget exhausted", t);
    bool final_step = false;
    if (t + h >= t_end || (t_end - (t + h)) <= 1e-12 * span) {
      h = t_end - t;
      final_step = true;
    }
    if (!(h > std::abs(t) * 16 * std::numeric_limits<double>::epsilon()) || h < 1e-300) {
      throw DivergenceError("step size underflow at t=" + std::to_string(t), t);
    }

    stage(k2, [&](std::size_t i) { return a21 * k1[i]; });
    stage(k3, [&](std::size_t i) { return a31 * k1[i] + a32 * k2[i]; });
    stage(k4, [&](std::size_t i) { return a41 * k1[i] + a42 * k2[i] + a43 * k3[i]; });
    stage(k5, [&](std::size_t i) { return a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]; });
    stage(k6, [&](std::size_t i) {
      return a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i];
    });
    for (std::size_t i = 0; i < m; ++i) {
      y1[i] = y[i] + h * (a71 * k1[i] + a73 * k3[i] + a74 * k4[i] + a75 * k5[i] + a76 * k6[i]);
    }
    bool finite = std::all_of(y1.begin(), y1.end(), [](double v) { return std::isfinite(v); });
    if (finite) rhs(graph, y1, k7);

    double errn = 0.0;
    if (!opts.fixed_step) {
      if (finite) {
        for (std::size_t i = 0; i < m; ++i) {
          err[i] = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
        }
        scale(y, y1);
        errn = rms_norm(err, sc);
      }
      if (!finite || !std::isfinite(errn)) {
        h *= shrink_min;
        last_rejected = true;
        continue;
      }
      if (errn > 1.0) {
        const double fac11 = std::pow(errn, expo1);
        h /= std::min(1.0 / shrink_min, fac11 / safety);
        last_rejected = true;
        continue;
      }
    } else if (!finite) {
      throw DivergenceError("state became non-finite", t);
    }

    // accepted: emit samples in (t, t + h]
    const double t_new = final_step ? t_end : t + h;
    while (next_sample < n_samples && traj.times[next_sample] <= t_new) {
      auto out = traj.at(next_sample);
      const double ts = traj.times[next_sample];
      if (ts == t_new) {
        std::copy(y1.begin(), y1.end(), out.begin());
      } else {
        const double theta = (ts - t) / h, theta1 = 1.0 - theta;
        for (std::size_t i = 0; i < m; ++i) {
          const double ydiff = y1[i] - y[i];
          const double bspl = h * k1[i] - ydiff;
          const double r4 = ydiff - h * k7[i] - bspl;
          const double r5 =
              h * (d1 * k1[i] + d3 * k3[i] + d4 * k4[i] + d5 * k5[i] + d6 * k6[i] + d7 * k7[i]);
          out[i] = y[i] + theta * (ydiff + theta1 * (bspl + theta * (r4 + theta1 * r5)));
        }
      }
      ++next_sample;
    }
    for (std::size_t i = 0; i < m; ++i) {
      if (!(std::abs(y1[i]) <= opts.divergence_cap)) {
        throw DivergenceError("state magnitude exceeded " + std::to_string(opts.divergence_cap), t);
      }
    }
    t = t_new;
    y.swap(y1);
    k1.swap(k7);

    if (!opts.fixed_step) {
      const double fac11 = std::pow(errn, expo1);
      double fac = fac11 / std::pow(facold, beta);
      fac = std::clamp(fac / safety, 1.0 / grow_max, 1.0 / shrink_min);
      double hnew = h / fac;
      if (last_rejected) hnew = std::min(hnew, h);
      facold = std::max(errn, 1e-4);
      last_rejected = false;
      h = hnew;
    }
  }
  return traj;
}

}  // namespace graphdyn
