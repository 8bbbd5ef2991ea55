#include "graphdyn/sr.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "graphdyn/errors.hpp"
#include "graphdyn/textio.hpp"

namespace graphdyn {

namespace {

constexpr double kTinyMse = 1e-300;

double int_pow(double x, int n) {
  double r = 1.0;
  for (int k = 0; k < n; ++k) r *= x;
  return r;
}

double wrap_phase(double c) {
  const double two_pi = 2.0 * std::numbers::pi;
  c = std::fmod(c, two_pi);
  if (c > std::numbers::pi) c -= two_pi;
  if (c <= -std::numbers::pi) c += two_pi;
  return c;
}

double sgn(double v) { return v < 0.0 ? -1.0 : 1.0; }

}  // namespace

CandidateFn CandidateFn::identity() {
  CandidateFn f;
  f.name_ = "x";
  f.shape_ = Shape::Identity;
  f.ops_ = 0;
  return f;
}

CandidateFn CandidateFn::power(int exponent) {
  if (exponent < 2 || exponent > Expr::kMaxExponent) throw ParamError("library power must be in [2, 6]");
  CandidateFn f;
  f.name_ = "x^" + std::to_string(exponent);
  f.shape_ = Shape::Power;
  f.exponent_ = exponent;
  f.ops_ = 1;
  return f;
}

CandidateFn CandidateFn::unary(Primitive p) {
  CandidateFn f;
  f.name_ = std::string(primitive_name(p));
  f.shape_ = Shape::Unary;
  f.prim_ = p;
  f.ops_ = 1;
  return f;
}

CandidateFn CandidateFn::from_name(std::string_view name) {
  if (name == "x") return identity();
  if (name.size() == 3 && name.substr(0, 2) == "x^" && name[2] >= '2' && name[2] <= '6') return power(name[2] - '0');
  if (name == "1/x") return unary(Primitive::Reciprocal);
  if (auto p = primitive_from_name(name)) return unary(*p);
  throw ParamError("unknown library function '" + std::string(name) + "'");
}

bool CandidateFn::defined(double u) const {
  if (!std::isfinite(u)) return false;
  if (shape_ != Shape::Unary) return true;
  switch (prim_) {
    case Primitive::Log:
    case Primitive::Sqrt: return u > 0.0;
    case Primitive::Reciprocal: return u != 0.0;
    case Primitive::Exp: return u < 700.0;
    default: return true;
  }
}

double CandidateFn::value(double u) const {
  switch (shape_) {
    case Shape::Identity: return u;
    case Shape::Power: return int_pow(u, exponent_);
    case Shape::Unary: return apply_primitive(prim_, u);
  }
  return 0.0;
}

double CandidateFn::derivative(double u) const {
  switch (shape_) {
    case Shape::Identity: return 1.0;
    case Shape::Power: return exponent_ * int_pow(u, exponent_ - 1);
    case Shape::Unary: return primitive_derivative(prim_, u);
  }
  return 0.0;
}

Expr CandidateFn::apply(Expr arg) const {
  switch (shape_) {
    case Shape::Identity: return arg;
    case Shape::Power: return Expr::pow(std::move(arg), exponent_);
    case Shape::Unary: return Expr::unary(prim_, std::move(arg));
  }
  return arg;
}

std::array<double, 4> CandidateFn::canonical(const std::array<double, 4>& theta) const {
  auto [a, b, c, d] = theta;
  if (shape_ == Shape::Identity) return {a * b, 1.0, 0.0, a * c + d};
  if (b == 0.0) return theta;
  if (shape_ == Shape::Power) return {a * int_pow(b, exponent_), 1.0, c / b, d};
  switch (prim_) {
    case Primitive::Reciprocal: return {a / b, 1.0, c / b, d};
    case Primitive::Exp: return {a * std::exp(c), b, 0.0, d};
    case Primitive::Log: return {a, sgn(b), c / std::abs(b), d + a * std::log(std::abs(b))};
    case Primitive::Sqrt: return {a * std::sqrt(std::abs(b)), sgn(b), c / std::abs(b), d};
    case Primitive::Sin:
      if (b < 0.0) a = -a, b = -b, c = -c;
      if (a < 0.0) a = -a, c += std::numbers::pi;
      return {a, b, wrap_phase(c), d};
    case Primitive::Cos:
      if (b < 0.0) b = -b, c = -c;
      if (a < 0.0) a = -a, c += std::numbers::pi;
      return {a, b, wrap_phase(c), d};
    case Primitive::Tanh:
      if (b < 0.0) a = -a, b = -b, c = -c;
      return {a, b, c, d};
    case Primitive::Sigmoid:
      if (b < 0.0) d += a, a = -a, b = -b, c = -c;
      return {a, b, c, d};
  }
  return theta;
}

std::vector<CandidateFn> default_library() {
  return {CandidateFn::identity(),
          CandidateFn::power(2),
          CandidateFn::power(3),
          CandidateFn::unary(Primitive::Sin),
          CandidateFn::unary(Primitive::Tanh),
          CandidateFn::unary(Primitive::Exp),
          CandidateFn::unary(Primitive::Log),
          CandidateFn::unary(Primitive::Reciprocal),
          CandidateFn::unary(Primitive::Sqrt),
          CandidateFn::unary(Primitive::Sigmoid)};
}

std::vector<CandidateFn> library_from_names(std::span<const std::string> names) {
  std::vector<CandidateFn> lib;
  for (const auto& n : names) {
    CandidateFn f = CandidateFn::from_name(n);
    if (std::find(lib.begin(), lib.end(), f) != lib.end()) throw ParamError("duplicate library function '" + n + "'");
    lib.push_back(std::move(f));
  }
  if (lib.empty()) throw ParamError("empty function library");
  return lib;
}

std::string SplineId::label() const {
  return std::to_string(layer) + ":" + std::to_string(out) + ":" + std::to_string(in);
}

SplineSample sample_spline(const KanNet& net, const KanNet::Tape& tape, const SplineId& id) {
  if (id.layer >= net.layer_count() || id.out >= net.layer_out(id.layer) || id.in >= net.layer_in(id.layer)) {
    throw IndexError("spline " + id.label() + " does not exist");
  }
  if (!net.active(id.layer, id.out, id.in)) throw EmptySample("spline " + id.label() + " is masked");
  if (tape.rows == 0 || tape.phi.size() <= id.layer) throw EmptySample("tape holds no rows");
  const std::size_t din = net.layer_in(id.layer), dout = net.layer_out(id.layer);
  SplineSample s;
  s.x.resize(tape.rows);
  s.y.resize(tape.rows);
  for (std::size_t r = 0; r < tape.rows; ++r) {
    s.x[r] = tape.acts[id.layer][r * din + id.in];
    s.y[r] = tape.phi[id.layer][(r * dout + id.out) * din + id.in];
  }
  return s;
}

namespace {

struct LmProblem {
  std::span<const double> x, y;
  const CandidateFn& f;

  // Sum of squared residuals; nullopt when f leaves its domain.
  std::optional<double> cost(const std::array<double, 4>& t) const {
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double u = t[1] * x[k] + t[2];
      if (!f.defined(u)) return std::nullopt;
      const double r = y[k] - t[0] * f.value(u) - t[3];
      s += r * r;
    }
    if (!std::isfinite(s)) return std::nullopt;
    return s;
  }

  // Linear least squares for (a, d) with (b, c) fixed.
  std::optional<std::array<double, 4>> start(double b, double c) const {
    const std::size_t n = x.size();
    double mf = 0.0, my = 0.0;
    std::vector<double> fv(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double u = b * x[k] + c;
      if (!f.defined(u)) return std::nullopt;
      fv[k] = f.value(u);
      mf += fv[k];
      my += y[k];
    }
    mf /= n;
    my /= n;
    double sff = 0.0, sfy = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      sff += (fv[k] - mf) * (fv[k] - mf);
      sfy += (fv[k] - mf) * (y[k] - my);
    }
    const double a = sff > 1e-300 ? sfy / sff : 0.0;
    std::array<double, 4> t{a, b, c, my - a * mf};
    if (!std::all_of(t.begin(), t.end(), [](double v) { return std::isfinite(v); })) return std::nullopt;
    return t;
  }

  std::pair<std::array<double, 4>, double> solve(std::array<double, 4> t, double c0) const {
    using Mat4 = Eigen::Matrix4d;
    using Vec4 = Eigen::Vector4d;
    double cost_now = c0, lambda = 1e-3;
    for (int it = 0; it < 500; ++it) {
      Mat4 A = Mat4::Zero();
      Vec4 g = Vec4::Zero();
      for (std::size_t k = 0; k < x.size(); ++k) {
        const double u = t[1] * x[k] + t[2];
        const double fu = f.value(u), du = t[0] * f.derivative(u);
        const Vec4 j(fu, du * x[k], du, 1.0);
        const double r = y[k] - t[0] * fu - t[3];
        A.noalias() += j * j.transpose();
        g += j * r;
      }
      const double floor = 1e-12 * std::max(1.0, A.diagonal().maxCoeff());
      bool accepted = false;
      double gain = 0.0, step = 0.0;
      while (lambda < 1e16) {
        Mat4 M = A;
        for (int q = 0; q < 4; ++q) M(q, q) += lambda * std::max(A(q, q), floor);
        const Vec4 delta = M.ldlt().solve(g);
        std::array<double, 4> trial = t;
        for (int q = 0; q < 4; ++q) trial[q] += delta[q];
        const auto c = cost(trial);
        if (c && *c < cost_now) {
          gain = cost_now - *c;
          step = delta.norm();
          t = trial;
          cost_now = *c;
          lambda = std::max(lambda / 3.0, 1e-15);
          accepted = true;
          break;
        }
        lambda *= 4.0;
      }
      if (!accepted) break;
      const double tnorm = std::sqrt(t[0] * t[0] + t[1] * t[1] + t[2] * t[2] + t[3] * t[3]);
      if (gain <= 1e-16 * cost_now || step <= 1e-13 * (tnorm + 1e-13)) break;
    }
    return {t, cost_now};
  }
};

}  // namespace

AffineFit affine_fit(std::span<const double> x, std::span<const double> y, const CandidateFn& f) {
  if (x.size() != y.size()) throw ShapeError("affine_fit: x and y differ in length");
  if (x.size() < 8) throw ShapeError("affine_fit needs at least 8 points");
  const LmProblem prob{x, y, f};
  AffineFit best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (double b : {2.0, -2.0, 1.0, -1.0, 0.5, -0.5}) {
    for (double c : {-2.0, 0.0, 2.0}) {
      const auto t0 = prob.start(b, c);
      if (!t0) continue;
      const auto c0 = prob.cost(*t0);
      if (!c0) continue;
      auto [t, cost] = prob.solve(*t0, *c0);
      if (!std::isfinite(cost)) continue;
      ++best.starts_converged;
      if (cost < best_cost) {
        best_cost = cost;
        best.theta = t;
      }
    }
  }
  if (best.starts_converged == 0) throw FitFailure("no start of " + f.name() + " stays in its domain");
  best.theta = f.canonical(best.theta);
  const auto c = prob.cost(best.theta);
  best.mse = (c ? *c : best_cost) / static_cast<double>(x.size());
  return best;
}

Expr affine_expr(const CandidateFn& f, const std::array<double, 4>& theta, const Expr& arg) {
  const auto [a, b, c, d] = theta;
  Expr u = b == 1.0 ? arg : Expr::constant(b) * arg;
  if (c != 0.0) u = u + Expr::constant(c);
  Expr v = a == 0.0 ? Expr::constant(0.0) : a == 1.0 ? f.apply(u) : Expr::constant(a) * f.apply(u);
  if (d != 0.0) v = v + Expr::constant(d);
  return fold_constants(v);
}

FitCandidate make_candidate(const SplineId& id, const CandidateFn& f, std::array<double, 4> theta,
                            std::span<const double> x, std::span<const double> y, double eps) {
  for (double& v : theta) {
    if (std::abs(v) < eps) v = 0.0;
  }
  FitCandidate fc;
  fc.spline = id;
  fc.fn = f;
  fc.theta = theta;
  double s = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    double pred = theta[3];
    if (theta[0] != 0.0) {
      const double u = theta[1] * x[k] + theta[2];
      if (!f.defined(u)) throw FitFailure(f.name() + " leaves its domain after coefficient pruning");
      pred += theta[0] * f.value(u);
    }
    s += (y[k] - pred) * (y[k] - pred);
  }
  fc.mse = x.empty() ? 0.0 : s / static_cast<double>(x.size());
  if (!std::isfinite(fc.mse)) throw FitFailure(f.name() + " fit is not finite");
  fc.expr = affine_expr(f, theta);
  fc.complexity = complexity(fc.expr);
  fc.log_loss = std::log(std::max(fc.mse, kTinyMse));
  return fc;
}

std::size_t select_per_gamma(std::span<const FitCandidate> candidates, double gamma) {
  if (candidates.empty()) throw ParamError("select_per_gamma: no candidates");
  std::size_t best = 0;
  auto loss = [&](const FitCandidate& c) { return c.mse + gamma * static_cast<double>(c.complexity); };
  for (std::size_t k = 1; k < candidates.size(); ++k) {
    const FitCandidate &c = candidates[k], &b = candidates[best];
    const double lc = loss(c), lb = loss(b);
    if (lc < lb || (lc == lb && (c.complexity < b.complexity || (c.complexity == b.complexity && c.mse < b.mse)))) {
      best = k;
    }
  }
  return best;
}

std::string_view selection_mode_name(SelectionMode m) { return m == SelectionMode::Score ? "score" : "logloss"; }

SelectionMode selection_mode_from_name(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (s == "score") return SelectionMode::Score;
  if (s == "logloss" || s == "log_loss") return SelectionMode::LogLoss;
  throw ParamError("unknown selection mode '" + std::string(name) + "'");
}

std::vector<FitCandidate> pareto_front(std::span<const FitCandidate> winners) {
  std::vector<FitCandidate> front;
  for (const auto& w : winners) {
    auto same = std::find_if(front.begin(), front.end(),
                             [&](const FitCandidate& f) { return f.complexity == w.complexity; });
    if (same == front.end()) {
      front.push_back(w);
    } else if (w.mse < same->mse || (w.mse == same->mse && w.fn.name() < same->fn.name())) {
      *same = w;
    }
  }
  std::sort(front.begin(), front.end(),
            [](const FitCandidate& a, const FitCandidate& b) { return a.complexity < b.complexity; });
  return front;
}

FitCandidate pareto_select(std::span<const FitCandidate> winners, SelectionMode mode) {
  if (winners.empty()) throw ParamError("pareto_select: no candidates");
  const auto front = pareto_front(winners);
  std::size_t best = 0;
  if (mode == SelectionMode::LogLoss) {
    for (std::size_t k = 1; k < front.size(); ++k) {
      if (front[k].log_loss < front[best].log_loss) best = k;
    }
    return front[best];
  }
  double best_score = 0.0;
  for (std::size_t k = 1; k < front.size(); ++k) {
    const double dc = static_cast<double>(front[k].complexity - front[k - 1].complexity);
    const double score = -(front[k].log_loss - front[k - 1].log_loss) / dc;
    if (score > best_score) {
      best_score = score;
      best = k;
    }
  }
  return front[best];
}

FitCandidate polynomial_fallback(const SplineId& id, std::span<const double> x, std::span<const double> y,
                                 double eps) {
  const std::size_t n = x.size();
  if (n < 4) throw ShapeError("cubic fallback needs at least 4 points");
  Eigen::MatrixXd V(n, 4);
  Eigen::VectorXd Y(n);
  for (std::size_t k = 0; k < n; ++k) {
    V(k, 0) = 1.0;
    V(k, 1) = x[k];
    V(k, 2) = x[k] * x[k];
    V(k, 3) = x[k] * x[k] * x[k];
    Y[k] = y[k];
  }
  Eigen::Vector4d c = V.colPivHouseholderQr().solve(Y);
  for (int q = 0; q < 4; ++q) {
    if (!std::isfinite(c[q]) || std::abs(c[q]) < eps) c[q] = 0.0;
  }
  FitCandidate fc;
  fc.spline = id;
  fc.fallback = true;
  fc.theta = {c[0], c[1], c[2], c[3]};
  const Expr xv = Expr::self(0);
  Expr e = Expr::constant(c[3]) * Expr::pow(xv, 3) + Expr::constant(c[2]) * Expr::pow(xv, 2) +
           Expr::constant(c[1]) * xv + Expr::constant(c[0]);
  fc.expr = prune_constants(e, std::max(eps, std::numeric_limits<double>::min()));
  const Eigen::VectorXd r = Y - V * c;
  fc.mse = r.squaredNorm() / static_cast<double>(n);
  fc.complexity = complexity(fc.expr);
  fc.log_loss = std::log(std::max(fc.mse, kTinyMse));
  return fc;
}

void SwConfig::validate() const {
  if (gammas.empty()) throw ConfigError("gammas", "must not be empty");
  for (double g : gammas) {
    if (!(g >= 0.0) || !std::isfinite(g)) throw ConfigError("gammas", "values must be finite and nonnegative");
  }
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon", "must be finite and nonnegative");
  if (!(rho >= 0.0)) throw ConfigError("rho", "must be nonnegative");
  if (!(degraded_r2 <= 1.0)) throw ConfigError("degraded_r2", "must be at most 1");
  try {
    if (!library.empty()) library_from_names(library);
  } catch (const ParamError& e) {
    throw ConfigError("library", e.what());
  }
}

std::string SwConfig::summary() const {
  std::ostringstream os;
  os << "epsilon=" << format_double(epsilon) << " rho=" << format_double(rho)
     << " mode=" << selection_mode_name(mode);
  return os.str();
}

bool SwResult::degraded() const {
  return std::any_of(splines.begin(), splines.end(), [](const SplineReport& r) { return r.degraded || r.selected.fallback; });
}

namespace {

struct RawFit {
  CandidateFn fn;
  std::optional<AffineFit> fit;
  std::string failure;
};

struct FittedSpline {
  SplineId id;
  SplineSample sample;
  std::vector<RawFit> fits;
};

std::vector<RawFit> fit_library(const SplineSample& s, const std::vector<CandidateFn>& lib) {
  std::vector<RawFit> out;
  for (const auto& f : lib) {
    RawFit r{f, std::nullopt, {}};
    try {
      r.fit = affine_fit(s.x, s.y, f);
    } catch (const FitFailure& e) {
      r.failure = e.what();
    }
    out.push_back(std::move(r));
  }
  return out;
}

SplineReport select_spline(const FittedSpline& fs, const SwConfig& cfg) {
  const SplineSample& s = fs.sample;
  SplineReport rep;
  rep.spline = fs.id;
  for (const auto& r : fs.fits) {
    if (!r.fit) {
      rep.failures.emplace_back(r.fn.name(), r.failure);
      continue;
    }
    try {
      rep.candidates.push_back(make_candidate(fs.id, r.fn, r.fit->theta, s.x, s.y, cfg.epsilon));
    } catch (const FitFailure& e) {
      rep.failures.emplace_back(r.fn.name(), e.what());
    }
  }
  if (rep.candidates.empty()) {
    rep.candidates.push_back(polynomial_fallback(fs.id, s.x, s.y, cfg.epsilon));
    rep.gamma_winners.assign(cfg.gammas.size(), 0);
    rep.selected = rep.candidates.front();
  } else {
    std::vector<FitCandidate> winners;
    for (double g : cfg.gammas) {
      const std::size_t w = select_per_gamma(rep.candidates, g);
      rep.gamma_winners.push_back(w);
      winners.push_back(rep.candidates[w]);
    }
    rep.selected = pareto_select(winners, cfg.mode);
    for (std::size_t k = 0; k < rep.candidates.size(); ++k) {
      if (rep.candidates[k].fn == rep.selected.fn) rep.selected_index = k;
    }
  }
  double mean = 0.0;
  for (double v : s.y) mean += v;
  mean /= static_cast<double>(s.y.size());
  double var = 0.0;
  for (double v : s.y) var += (v - mean) * (v - mean);
  var /= static_cast<double>(s.y.size());
  rep.r2 = var > 1e-14 ? 1.0 - rep.selected.mse / var : 1.0;
  rep.degraded = rep.r2 < cfg.degraded_r2;
  return rep;
}

struct PrunedFits {
  KanNet pruned;
  std::vector<FittedSpline> splines;
  std::vector<std::string> warnings;
};

PrunedFits prune_and_fit(const KanNet& net, std::span<const double> X, std::size_t rows, const SwConfig& cfg) {
  const std::size_t din = net.input_dim();
  const std::vector<CandidateFn> lib = cfg.library.empty() ? default_library() : library_from_names(cfg.library);
  PrunedFits pf;
  pf.pruned = rows > 0 ? prune(net, cfg.rho, X, rows, &pf.warnings) : net;

  std::vector<double> Xs;
  std::size_t rs = rows;
  if (cfg.max_samples > 0 && rows > cfg.max_samples) {
    rs = cfg.max_samples;
    Xs.reserve(rs * din);
    for (std::size_t k = 0; k < rs; ++k) {
      const std::size_t r = k * rows / rs;
      Xs.insert(Xs.end(), X.begin() + static_cast<std::ptrdiff_t>(r * din),
                X.begin() + static_cast<std::ptrdiff_t>((r + 1) * din));
    }
  } else {
    Xs.assign(X.begin(), X.end());
  }
  KanNet::Tape tape;
  std::vector<double> out(rs * net.output_dim());
  pf.pruned.forward(Xs, rs, tape, out);

  for (std::size_t l = 0; l < pf.pruned.layer_count(); ++l) {
    for (std::size_t j = 0; j < pf.pruned.layer_out(l); ++j) {
      for (std::size_t i = 0; i < pf.pruned.layer_in(l); ++i) {
        if (!pf.pruned.active(l, j, i)) continue;
        FittedSpline fs{{l, j, i}, sample_spline(pf.pruned, tape, {l, j, i}), {}};
        fs.fits = fit_library(fs.sample, lib);
        pf.splines.push_back(std::move(fs));
      }
    }
  }
  return pf;
}

SwResult select_and_compose(const PrunedFits& pf, const SwConfig& cfg, std::span<const Expr> inputs) {
  SwResult res;
  res.pruned = pf.pruned;
  res.warnings = pf.warnings;
  for (const auto& fs : pf.splines) res.splines.push_back(select_spline(fs, cfg));
  std::vector<Expr> in;
  if (inputs.empty()) {
    for (std::size_t k = 0; k < pf.pruned.input_dim(); ++k) in.push_back(Expr::self(k));
  } else {
    in.assign(inputs.begin(), inputs.end());
  }
  const double eps = std::max(cfg.epsilon, std::numeric_limits<double>::min());
  for (const Expr& e : compose_network(res.pruned, res.splines, in)) {
    res.outputs.push_back(prune_constants(expand(e), eps));
  }
  return res;
}

bool same_fits(const SwConfig& a, const SwConfig& b) {
  return a.rho == b.rho && a.max_samples == b.max_samples && a.library == b.library;
}

}  // namespace

std::vector<Expr> compose_network(const KanNet& net, std::span<const SplineReport> splines,
                                  std::span<const Expr> inputs) {
  if (inputs.size() != net.input_dim()) throw ShapeError("compose_network: one input expression per network input");
  std::vector<Expr> cur(inputs.begin(), inputs.end());
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const std::size_t din = net.layer_in(l), dout = net.layer_out(l);
    const std::size_t half = (din + 1) / 2;
    std::vector<Expr> nxt(dout);
    for (std::size_t j = 0; j < dout; ++j) {
      Expr first = Expr::constant(0.0), second = Expr::constant(0.0);
      for (std::size_t i = 0; i < din; ++i) {
        if (!net.active(l, j, i)) continue;
        const SplineId id{l, j, i};
        auto it = std::find_if(splines.begin(), splines.end(), [&](const SplineReport& r) { return r.spline == id; });
        if (it == splines.end()) throw ShapeError("no fit for active spline " + id.label());
        const Expr term = substitute_self(it->selected.expr, 0, cur[i]);
        Expr& acc = (i < half || net.node_kind(l, j) == NodeKind::Additive || din == 1) ? first : second;
        acc = acc + term;
      }
      if (net.node_kind(l, j) == NodeKind::Multiplicative && din > 1) {
        nxt[j] = fold_constants(first * second);
      } else {
        nxt[j] = fold_constants(first);
      }
    }
    cur = std::move(nxt);
  }
  return cur;
}

std::vector<SwResult> spline_wise_regress_grid(const KanNet& net, std::span<const double> X, std::size_t rows,
                                               std::span<const SwConfig> cfgs, std::span<const Expr> inputs) {
  if (X.size() != rows * net.input_dim()) throw ShapeError("spline_wise_regress: input has wrong size");
  if (!inputs.empty() && inputs.size() != net.input_dim()) {
    throw ShapeError("spline_wise_regress: one input expression per network input");
  }
  for (const auto& c : cfgs) c.validate();
  std::vector<SwResult> out(cfgs.size());
  std::vector<bool> done(cfgs.size(), false);
  for (std::size_t k = 0; k < cfgs.size(); ++k) {
    if (done[k]) continue;
    const PrunedFits pf = prune_and_fit(net, X, rows, cfgs[k]);
    for (std::size_t m = k; m < cfgs.size(); ++m) {
      if (done[m] || !same_fits(cfgs[k], cfgs[m])) continue;
      out[m] = select_and_compose(pf, cfgs[m], inputs);
      done[m] = true;
    }
  }
  return out;
}

SwResult spline_wise_regress(const KanNet& net, std::span<const double> X, std::size_t rows, const SwConfig& cfg,
                             std::span<const Expr> inputs) {
  return std::move(spline_wise_regress_grid(net, X, rows, std::span<const SwConfig>(&cfg, 1), inputs).front());
}

std::vector<Distillation> distill_grid(const GraphOdeModel<KanNet>& model, const TrainingData& data,
                                       std::span<const SwConfig> cfgs) {
  if (data.features != 1 || model.features() != 1) throw ShapeError("symbolic distillation needs scalar node states");
  const std::size_t n = data.nodes;
  const EdgeList edges(data.graph);
  std::vector<double> xh, xg;
  xh.reserve(data.train.size() * n);
  xg.reserve(data.train.size() * edges.size() * 2);
  for (std::size_t s : data.train) {
    const double* st = data.states.data() + s * data.stride();
    xh.insert(xh.end(), st, st + n);
    for (std::size_t e = 0; e < edges.size(); ++e) {
      xg.push_back(st[edges.target[e]]);
      xg.push_back(st[edges.source[e]]);
    }
  }
  const Expr xi = Expr::self(0), xj = Expr::neighbor(0);
  const std::vector<Expr> h_in{xi}, g_in{xi, xj};
  std::vector<SwResult> h = spline_wise_regress_grid(model.h, xh, xh.size(), cfgs, h_in);
  std::vector<SwResult> g = spline_wise_regress_grid(model.g, xg, xg.size() / 2, cfgs, g_in);
  std::vector<Distillation> out(cfgs.size());
  for (std::size_t k = 0; k < cfgs.size(); ++k) {
    out[k].h = std::move(h[k]);
    out[k].g = std::move(g[k]);
    out[k].model.self_term = out[k].h.outputs.at(0);
    out[k].model.interaction_term = out[k].g.outputs.at(0);
  }
  return out;
}

Distillation distill(const GraphOdeModel<KanNet>& model, const TrainingData& data, const SwConfig& cfg) {
  return std::move(distill_grid(model, data, std::span<const SwConfig>(&cfg, 1)).front());
}

void write_fit_report(const std::filesystem::path& path, std::string_view net_name,
                      std::span<const SplineReport> splines, std::span<const double> gammas,
                      const std::string& config_hash, bool append) {
  const bool header = !append || !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream os(path, append ? std::ios::app : std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  if (header) {
    os << "config_hash,net,spline,function,status,a,b,c,d,mse,complexity,gamma_wins,selected,fallback,r2,degraded,"
          "expr\n";
  }
  for (const auto& rep : splines) {
    for (std::size_t k = 0; k < rep.candidates.size(); ++k) {
      const FitCandidate& c = rep.candidates[k];
      std::string wins;
      for (std::size_t g = 0; g < rep.gamma_winners.size() && g < gammas.size(); ++g) {
        if (rep.gamma_winners[g] != k) continue;
        if (!wins.empty()) wins += ';';
        wins += format_double(gammas[g]);
      }
      const bool sel = k == rep.selected_index;
      os << csv_field(config_hash) << ',' << csv_field(net_name) << ',' << rep.spline.label() << ','
         << (c.fallback ? "poly3" : csv_field(c.fn.name())) << ",ok";
      for (double v : c.theta) os << ',' << format_double(v);
      os << ',' << format_double(c.mse) << ',' << c.complexity << ',' << csv_field(wins) << ',' << (sel ? 1 : 0)
         << ',' << (c.fallback ? 1 : 0) << ',' << (sel ? format_double(rep.r2) : "") << ','
         << (sel && rep.degraded ? 1 : 0) << ',' << csv_field(format_expr(c.expr)) << '\n';
    }
    for (const auto& [name, why] : rep.failures) {
      os << csv_field(config_hash) << ',' << csv_field(net_name) << ',' << rep.spline.label() << ','
         << csv_field(name) << ",failed,,,,,,,,0,0,,0," << csv_field(why) << '\n';
    }
  }
  if (!os) throw IoError("failed writing " + path.string());
}

namespace {

struct FinetuneLoss {
  const TrainingData& data;
  std::span<const std::size_t> samples, nodes;
  std::size_t nh = 0;

  // MAE and its gradient with respect to [H constants | G constants].
  double operator()(const SymbolicModel& m, std::vector<double>& grad) const {
    const CompiledExpr h(m.self_term), g(m.interaction_term);
    const std::size_t nc = h.constant_count() + g.constant_count();
    grad.assign(nc, 0.0);
    std::vector<double> gh(h.constant_count()), gg(g.constant_count()), acc(nc);
    double total = 0.0;
    const std::size_t stride = data.stride();
    for (std::size_t s : samples) {
      const double* st = data.states.data() + s * stride;
      const double* tg = data.targets.data() + s * stride;
      for (std::size_t i : nodes) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const std::span<const double> xi(st + i, 1);
        double pred = h.eval_constant_gradient(xi, {}, gh);
        std::copy(gh.begin(), gh.end(), acc.begin());
        const auto nb = data.graph.neighbors(i);
        const auto w = data.graph.weights(i);
        for (std::size_t q = 0; q < nb.size(); ++q) {
          pred += w[q] * g.eval_constant_gradient(xi, std::span<const double>(st + nb[q], 1), gg);
          for (std::size_t c = 0; c < gg.size(); ++c) acc[h.constant_count() + c] += w[q] * gg[c];
        }
        const double r = pred - tg[i];
        total += std::abs(r);
        const double sg = r > 0.0 ? 1.0 : r < 0.0 ? -1.0 : 0.0;
        for (std::size_t c = 0; c < nc; ++c) grad[c] += sg * acc[c];
      }
    }
    const double count = static_cast<double>(samples.size() * nodes.size());
    for (double& v : grad) v /= count;
    return total / count;
  }
};

SymbolicModel with_model_constants(const SymbolicModel& m, std::span<const double> theta, std::size_t nh) {
  return {with_constants(m.self_term, theta.subspan(0, nh)), with_constants(m.interaction_term, theta.subspan(nh))};
}

}  // namespace

FinetuneResult finetune_constants(const SymbolicModel& model, const TrainingData& data,
                                  std::span<const std::size_t> samples, std::span<const std::size_t> nodes,
                                  const FinetuneConfig& cfg) {
  if (data.features != 1) throw ShapeError("fine-tuning needs scalar node states");
  if (samples.empty() || nodes.empty()) throw EmptySample("fine-tuning needs samples and nodes");
  for (std::size_t i : nodes) {
    if (i >= data.nodes) throw IndexError("node " + std::to_string(i) + " out of range");
  }
  const std::vector<double> ch = constants(model.self_term), cg = constants(model.interaction_term);
  std::vector<double> theta(ch);
  theta.insert(theta.end(), cg.begin(), cg.end());
  const FinetuneLoss loss{data, samples, nodes, ch.size()};

  FinetuneResult res;
  res.model = model;
  std::vector<double> grad, trial_grad;
  double cur;
  try {
    cur = loss(model, grad);
  } catch (const DomainError& e) {
    throw NonFiniteLoss(std::string("initial model leaves its domain: ") + e.what(), 0);
  }
  if (!std::isfinite(cur)) throw NonFiniteLoss("initial fine-tuning loss is not finite", 0);
  res.initial_mae = cur;
  double lr = cfg.learning_rate;
  std::vector<double> trial(theta.size());
  for (std::size_t it = 0; it < cfg.max_iterations && lr > cfg.min_step && !theta.empty(); ++it) {
    res.iterations = it + 1;
    for (std::size_t c = 0; c < theta.size(); ++c) trial[c] = theta[c] - lr * grad[c];
    const SymbolicModel cand = with_model_constants(model, trial, ch.size());
    double next;
    try {
      next = loss(cand, trial_grad);
    } catch (const DomainError& e) {
      res.log.push_back("iteration " + std::to_string(it) + ": step rejected (" + e.what() + "), step halved to " +
                        format_double(lr / 2.0));
      lr /= 2.0;
      continue;
    }
    if (!std::isfinite(next) || next >= cur) {
      lr /= 2.0;
      continue;
    }
    theta = trial;
    grad = trial_grad;
    cur = next;
    res.model = cand;
    lr *= 1.2;
  }
  res.final_mae = cur;
  return res;
}

}  // namespace graphdyn
