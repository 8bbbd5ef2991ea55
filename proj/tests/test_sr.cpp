#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>

#include "doctest.h"
#include "graphdyn/errors.hpp"
#include "graphdyn/sr.hpp"

using namespace graphdyn;

namespace {

// Least-squares spline coefficients for g on the grid, with the silu branch off.
void set_spline(KanNet& net, std::size_t l, std::size_t j, std::size_t i, const std::function<double(double)>& g) {
  const SplineGrid& grid = net.grid();
  const std::size_t nb = grid.basis_count(), m = 400;
  Eigen::MatrixXd B(m, nb);
  Eigen::VectorXd y(m);
  for (std::size_t r = 0; r < m; ++r) {
    const double x = grid.lo + (grid.hi - grid.lo) * static_cast<double>(r) / (m - 1);
    const auto b = grid.full_basis(x);
    for (std::size_t q = 0; q < nb; ++q) B(r, q) = b[q];
    y[r] = g(x);
  }
  const Eigen::VectorXd c = B.colPivHouseholderQr().solve(y);
  auto p = net.edge_params(l, j, i);
  for (std::size_t q = 0; q < nb; ++q) p[q] = c[q];
  p[nb] = 0.0;
  p[nb + 1] = 1.0;
}

void zero_spline(KanNet& net, std::size_t l, std::size_t j, std::size_t i) {
  for (double& v : net.edge_params(l, j, i)) v = 0.0;
}

struct Planted {
  const char* name;
  std::array<double, 4> theta;
};

const std::vector<Planted>& planted() {
  static const std::vector<Planted> p = {
      {"x", {1.7, 1, 0, -0.2}},          {"x^2", {0.8, 1, 0.4, -0.3}},        {"x^3", {-0.6, 1, 0.5, 0.2}},
      {"sin", {1.7, 0.9, 0.3, -0.2}},    {"tanh", {1.2, 0.8, -0.4, 0.5}},     {"exp", {0.7, 0.6, 0, -0.5}},
      {"log", {1.3, 1, 3.5, -0.4}},      {"reciprocal", {2.0, 1, 4.0, 0.3}}, {"sqrt", {1.1, 1, 3.5, 0.1}},
      {"sigmoid", {2.0, 1.5, 0.5, -1.0}}};
  return p;
}

SplineSample planted_sample(const CandidateFn& f, const std::array<double, 4>& t, double noise, std::uint64_t seed) {
  SplineSample s;
  for (int k = 0; k < 400; ++k) {
    const double x = -3.0 + 6.0 * k / 399.0;
    s.x.push_back(x);
    s.y.push_back(t[0] * f.value(t[1] * x + t[2]) + t[3]);
  }
  double m = 0.0, v = 0.0;
  for (double y : s.y) m += y;
  m /= s.y.size();
  for (double y : s.y) v += (y - m) * (y - m);
  const double sd = std::sqrt(v / s.y.size());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, noise * sd);
  if (noise > 0) {
    for (double& y : s.y) y += n(rng);
  }
  return s;
}

FitCandidate cand(const char* fn, double mse, std::size_t c) {
  FitCandidate f;
  f.fn = CandidateFn::from_name(fn);
  f.mse = mse;
  f.complexity = c;
  f.log_loss = std::log(mse);
  return f;
}

}  // namespace

TEST_CASE("library and canonical forms") {
  const auto lib = default_library();
  CHECK(lib.size() == 10);
  CHECK(CandidateFn::from_name("x").ops() == 0);
  for (const auto& f : lib) {
    if (f.name() != "x") CHECK(f.ops() == 1);
  }
  CHECK(CandidateFn::from_name("1/x") == CandidateFn::unary(Primitive::Reciprocal));
  CHECK_THROWS_AS(CandidateFn::from_name("gamma"), ParamError);
  const std::vector<std::string> dup{"sin", "sin"};
  CHECK_THROWS_AS(library_from_names(dup), ParamError);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (const auto& f : lib) {
    for (int trial = 0; trial < 20; ++trial) {
      std::array<double, 4> t{u(rng), u(rng), u(rng), u(rng)};
      if (std::abs(t[1]) < 0.1) t[1] = 0.7;
      const auto c = f.canonical(t);
      const auto cc = f.canonical(c);
      for (int q = 0; q < 4; ++q) CHECK(cc[q] == doctest::Approx(c[q]).epsilon(1e-12));
      for (double x : {-0.9, -0.3, 0.2, 0.8}) {
        const double ua = t[1] * x + t[2], ub = c[1] * x + c[2];
        if (!f.defined(ua) || !f.defined(ub)) continue;
        const double va = t[0] * f.value(ua) + t[3], vb = c[0] * f.value(ub) + c[3];
        CHECK(vb == doctest::Approx(va).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("affine_fit recovers a planted sine") {
  const auto f = CandidateFn::unary(Primitive::Sin);
  const auto s = planted_sample(f, {1.7, 0.9, 0.3, -0.2}, 0.0, 0);
  const AffineFit fit = affine_fit(s.x, s.y, f);
  CHECK(fit.mse < 1e-8);
  const double expect[4] = {1.7, 0.9, 0.3, -0.2};
  for (int q = 0; q < 4; ++q) CHECK(std::abs(fit.theta[q] - expect[q]) < 1e-3);
}

TEST_CASE("affine_fit on constant data and domain failures") {
  std::vector<double> x, y;
  for (int k = 0; k < 50; ++k) {
    x.push_back(-3.0 + 6.0 * k / 49.0);
    y.push_back(5.0);
  }
  const AffineFit fit = affine_fit(x, y, CandidateFn::unary(Primitive::Sin));
  CHECK((std::abs(fit.theta[0]) < 1e-6 || std::abs(fit.theta[1]) < 1e-6));
  CHECK(fit.mse < 1e-10);
  CHECK(fit.theta[3] + fit.theta[0] * std::sin(fit.theta[2]) == doctest::Approx(5.0));

  std::vector<double> wide;
  for (int k = 0; k < 50; ++k) wide.push_back(-10.0 + 20.0 * k / 49.0);
  CHECK_THROWS_AS(affine_fit(wide, y, CandidateFn::unary(Primitive::Log)), FitFailure);
  CHECK_THROWS_AS(affine_fit(std::vector<double>(5, 1.0), std::vector<double>(5, 1.0), CandidateFn::identity()),
                  ShapeError);
}

TEST_CASE("affine_fit recovers every library primitive") {
  for (const auto& p : planted()) {
    CAPTURE(p.name);
    const auto f = CandidateFn::from_name(p.name);
    const auto clean = planted_sample(f, p.theta, 0.0, 0);
    const AffineFit fit = affine_fit(clean.x, clean.y, f);
    CHECK(fit.mse < 1e-8);
    for (int q = 0; q < 4; ++q) CHECK(std::abs(fit.theta[q] - p.theta[q]) < 1e-3);

    const auto noisy = planted_sample(f, p.theta, 0.01, 11);
    const AffineFit nf = affine_fit(noisy.x, noisy.y, f);
    for (int q = 0; q < 4; ++q) CHECK(std::abs(nf.theta[q] - p.theta[q]) < 0.02 * std::max(1.0, std::abs(p.theta[q])));
  }
}

TEST_CASE("candidate expressions and epsilon pruning") {
  const auto sinf = CandidateFn::unary(Primitive::Sin);
  CHECK(format_expr(affine_expr(sinf, {0.5, 1.0, 0.0, 0.0})) == "0.5*sin(x_i0)");
  CHECK(affine_expr(CandidateFn::identity(), {0.0, 1.0, 0.0, 3.0}).is_const());

  std::vector<double> x, y;
  for (int k = 0; k < 100; ++k) {
    x.push_back(-2.0 + 4.0 * k / 99.0);
    y.push_back(0.5 * std::sin(x.back() + 0.004) + 0.003);
  }
  const auto full = make_candidate({}, sinf, {0.5, 1.0, 0.004, 0.003}, x, y, 0.0);
  const auto pruned = make_candidate({}, sinf, {0.5, 1.0, 0.004, 0.003}, x, y, 0.01);
  CHECK(full.mse < 1e-25);
  CHECK(pruned.theta[2] == 0.0);
  CHECK(pruned.theta[3] == 0.0);
  CHECK(pruned.complexity < full.complexity);
  CHECK(pruned.complexity == 2);

  // Dropping outer coefficients moves every prediction by at most
  // sum |c| * max |term|, so the root mean square error cannot grow by more.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> small(-0.02, 0.02), big(0.5, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::array<double, 4> t{small(rng), big(rng), 0.3, small(rng)};
    std::vector<double> yy;
    for (double v : x) yy.push_back(std::tanh(v) + 0.01 * std::sin(7 * v));
    const auto f = CandidateFn::unary(Primitive::Tanh);
    const auto a = make_candidate({}, f, t, x, yy, 0.0);
    const auto b = make_candidate({}, f, t, x, yy, 0.05);
    double bound = 0.0, maxterm = 0.0;
    for (double v : x) maxterm = std::max(maxterm, std::abs(f.value(t[1] * v + t[2])));
    if (b.theta[0] == 0.0) bound += std::abs(t[0]) * maxterm;
    if (b.theta[3] == 0.0) bound += std::abs(t[3]);
    CHECK(std::sqrt(b.mse) <= std::sqrt(a.mse) + bound + 1e-12);
  }
}

TEST_CASE("select_per_gamma") {
  const std::vector<FitCandidate> c{cand("x", 0.1, 1), cand("sin", 0.01, 10)};
  CHECK(select_per_gamma(c, 0.001) == 1);
  CHECK(select_per_gamma(c, 0.1) == 0);
  CHECK(select_per_gamma(c, 0.0) == 1);
  const std::vector<FitCandidate> tie{cand("sin", 0.2, 2), cand("x", 0.1, 3), cand("tanh", 0.2, 2)};
  CHECK(select_per_gamma(tie, 0.1) == 0);
  CHECK_THROWS_AS(select_per_gamma(std::vector<FitCandidate>{}, 0.1), ParamError);
}

TEST_CASE("pareto_select") {
  const std::vector<FitCandidate> one{cand("sin", 0.3, 4)};
  CHECK(pareto_select(one).fn.name() == "sin");

  const std::vector<FitCandidate> front{cand("x", 1e-1, 1), cand("sin", 1e-6, 3), cand("tanh", 0.9e-6, 9)};
  CHECK(pareto_select(front).complexity == 3);
  CHECK(pareto_select(front, SelectionMode::LogLoss).complexity == 9);

  const std::vector<FitCandidate> same{cand("sin", 0.2, 3), cand("tanh", 0.1, 3)};
  const auto f = pareto_front(same);
  REQUIRE(f.size() == 1);
  CHECK(f[0].fn.name() == "tanh");

  // Duplicates and reordering leave the choice unchanged.
  std::vector<FitCandidate> shuffled{front[2], front[0], front[1], front[1], front[0]};
  CHECK(pareto_select(shuffled).fn.name() == "sin");

  CHECK(selection_mode_from_name("LogLoss") == SelectionMode::LogLoss);
  CHECK_THROWS_AS(selection_mode_from_name("best"), ParamError);
}

TEST_CASE("pareto knee on synthetic fronts") {
  std::mt19937_64 rng(2024);
  const char* names[] = {"x", "x^2", "x^3", "sin", "tanh", "exp", "log", "reciprocal", "sqrt", "sigmoid"};
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 3 + rng() % 5;
    const std::size_t knee = 1 + rng() % (m - 1);
    std::uniform_real_distribution<double> gentle(0.01, 0.5), steep(2.0, 10.0);
    std::vector<FitCandidate> winners;
    std::size_t c = 1 + rng() % 3;
    double logmse = std::log(0.5);
    for (std::size_t k = 0; k < m; ++k) {
      if (k > 0) {
        const std::size_t dc = 1 + rng() % 4;
        c += dc;
        logmse -= (k == knee ? steep(rng) : gentle(rng)) * static_cast<double>(dc);
      }
      winners.push_back(cand(names[k], std::exp(logmse), c));
    }
    const std::size_t knee_c = winners[knee].complexity;
    std::shuffle(winners.begin(), winners.end(), rng);
    winners.push_back(winners.front());
    CHECK(pareto_select(winners).complexity == knee_c);
  }
}

TEST_CASE("sample_spline reads the tape") {
  KanNet net(KanConfig{{1, 1}, 5, 3, -3.0, 3.0, true}, 1);
  const std::vector<double> X{0.0, 1.0, 2.0};
  KanNet::Tape tape;
  std::vector<double> out(3);
  net.forward(X, 3, tape, out);
  const auto s = sample_spline(net, tape, {0, 0, 0});
  CHECK(s.x == X);
  for (int k = 0; k < 3; ++k) CHECK(s.y[k] == net.edge_eval(0, 0, 0, X[k]));

  KanNet deep(KanConfig{{2, 3, 1}, 5, 3, -3.0, 3.0, true}, 2);
  const std::vector<double> X2{0.1, -0.4, 0.7, 0.3, -1.2, 0.9};
  std::vector<double> o2(3);
  deep.forward(X2, 3, tape, o2);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto s2 = sample_spline(deep, tape, {1, 0, i});
    for (std::size_t r = 0; r < 3; ++r) CHECK(s2.x[r] == tape.acts[1][r * 3 + i]);
  }
  deep.set_active(1, 0, 2, false);
  CHECK_THROWS_AS(sample_spline(deep, tape, {1, 0, 2}), EmptySample);
  CHECK_THROWS_AS(sample_spline(deep, tape, {2, 0, 0}), IndexError);
}

TEST_CASE("spline_wise_regress recovers a hand-built sine spline") {
  KanNet net(KanConfig{{2, 1}, 20, 3, -3.0, 3.0, true}, 1);
  set_spline(net, 0, 0, 0, [](double x) { return 0.5 * std::sin(x); });
  zero_spline(net, 0, 0, 1);
  std::vector<double> X;
  for (int k = 0; k < 300; ++k) {
    X.push_back(-3.0 + 6.0 * k / 299.0);
    X.push_back(std::cos(k * 0.1));
  }
  SwConfig cfg;
  const SwResult r = spline_wise_regress(net, X, 300, cfg);
  REQUIRE(r.splines.size() == 1);
  const FitCandidate& sel = r.splines[0].selected;
  CHECK(sel.fn.name() == "sin");
  CHECK(std::abs(sel.theta[0] - 0.5) < 1e-3);
  CHECK(std::abs(sel.theta[1] - 1.0) < 1e-3);
  CHECK(sel.theta[2] == 0.0);
  CHECK(sel.theta[3] == 0.0);
  CHECK_FALSE(r.pruned.active(0, 0, 1));
  REQUIRE(r.outputs.size() == 1);
  CHECK(r.outputs[0].kind() == Expr::Kind::Mul);
  CHECK_FALSE(r.degraded());
  const double xs[2] = {0.7, 0.0};
  CHECK(eval_expr(r.outputs[0], xs) == doctest::Approx(0.5 * std::sin(0.7)).epsilon(1e-3));
}

TEST_CASE("fully pruned net distills to zero") {
  KanNet net(KanConfig{{2, 2, 1}, 5, 3, -3.0, 3.0, true}, 4);
  for (double& p : net.params()) p = 0.0;
  std::vector<double> X;
  for (int k = 0; k < 40; ++k) {
    X.push_back(std::sin(k));
    X.push_back(std::cos(k));
  }
  const SwResult r = spline_wise_regress(net, X, 40, SwConfig{});
  CHECK(r.splines.empty());
  REQUIRE(r.outputs.size() == 1);
  CHECK(r.outputs[0].is_zero());
  CHECK_FALSE(r.warnings.empty());
}

TEST_CASE("distill reconstructs additive and multiplicative structure") {
  TrainConfig tc;
  tc.range = 3.0;
  tc.grid = 10;
  tc.h_hidden = {};
  tc.g_hidden = {2};
  auto model = make_model<KanNet>(tc, 1);
  set_spline(model.h, 0, 0, 0, [](double x) { return 1.0 - 0.5 * x; });
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t i = 0; i < 2; ++i) zero_spline(model.g, 0, j, i);
  }
  // Hidden node 1 is multiplicative: x_i * x_j.
  set_spline(model.g, 0, 1, 0, [](double x) { return x; });
  set_spline(model.g, 0, 1, 1, [](double x) { return x; });
  zero_spline(model.g, 1, 0, 0);
  set_spline(model.g, 1, 0, 1, [](double x) { return -0.5 * x; });

  Dataset ds;
  ds.graph = gen_ba(12, 2, 3);
  ds.traj.nodes = 12;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.6);
  for (int t = 0; t < 30; ++t) {
    ds.traj.times.push_back(0.1 * t);
    for (int i = 0; i < 12; ++i) ds.traj.states.push_back(u(rng));
  }
  ds.split = make_split(30, 1.0, 0.0);
  const TrainingData data = make_training_data(ds);

  const Distillation d = distill(model, data, SwConfig{});
  const Expr h = d.model.self_term, g = d.model.interaction_term;
  CAPTURE(format_model(d.model));
  CHECK_FALSE(d.degraded());
  // H = 1 - 0.5 x_i and G = -0.5 x_i x_j up to spline approximation error.
  for (double xi : {0.2, 1.1, 1.5}) {
    for (double xj : {0.4, 1.3}) {
      const double s[1] = {xi}, n[1] = {xj};
      CHECK(std::abs(eval_expr(h, s) - (1.0 - 0.5 * xi)) < 1e-3);
      CHECK(std::abs(eval_expr(g, s, n) - (-0.5 * xi * xj)) < 1e-3);
    }
  }
  CHECK(complexity(h) <= 3);
  CHECK(g.has_neighbor());
}

TEST_CASE("reconstruction stays close to the pruned network") {
  KanNet net(KanConfig{{2, 2, 1}, 10, 3, -2.0, 2.0, true}, 6);
  set_spline(net, 0, 0, 0, [](double x) { return std::sin(x); });
  set_spline(net, 0, 0, 1, [](double x) { return 0.3 * x * x; });
  set_spline(net, 0, 1, 0, [](double x) { return std::tanh(x); });
  set_spline(net, 0, 1, 1, [](double x) { return 0.5 * x + 0.2; });
  set_spline(net, 1, 0, 0, [](double x) { return 0.8 * x; });
  set_spline(net, 1, 0, 1, [](double x) { return std::exp(0.3 * x); });
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  std::vector<double> X(2000);
  for (double& v : X) v = u(rng);
  const SwResult r = spline_wise_regress(net, X, 1000, SwConfig{});
  double worst = 0.0;
  for (std::size_t k = 0; k < 1000; ++k) {
    const std::span<const double> x(X.data() + 2 * k, 2);
    worst = std::max(worst, std::abs(eval_expr(r.outputs[0], x) - r.pruned.forward(x)[0]));
  }
  CHECK(worst < 0.05);
}

TEST_CASE("fit report lists every candidate") {
  KanNet net(KanConfig{{1, 1}, 10, 3, -3.0, 3.0, true}, 1);
  set_spline(net, 0, 0, 0, [](double x) { return std::tanh(x); });
  std::vector<double> X;
  for (int k = 0; k < 100; ++k) X.push_back(-2.5 + 5.0 * k / 99.0);
  SwConfig cfg;
  const SwResult r = spline_wise_regress(net, X, 100, cfg);
  const auto path = std::filesystem::temp_directory_path() / "graphdyn_fit_report.csv";
  write_fit_report(path, "H", r.splines, cfg.gammas, "abc");
  write_fit_report(path, "G", r.splines, cfg.gammas, "abc", true);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line.rfind("config_hash,net,spline,function,status", 0) == 0);
  std::size_t rows = 0, selected = 0;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(line.rfind("abc,", 0) == 0);
    if (line.find(",1,0,") != std::string::npos) ++selected;
  }
  CHECK(rows == 2 * (r.splines[0].candidates.size() + r.splines[0].failures.size()));
  CHECK(selected >= 2);
  std::filesystem::remove(path);
}

TEST_CASE("finetune_constants") {
  Dataset ds;
  ds.graph = Graph(4);
  ds.traj.nodes = 4;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (int t = 0; t < 20; ++t) {
    ds.traj.times.push_back(0.1 * t);
    for (int i = 0; i < 4; ++i) ds.traj.states.push_back(u(rng));
  }
  ds.split = make_split(20, 1.0, 0.0);
  TrainingData data = make_training_data(ds);
  for (std::size_t k = 0; k < data.states.size(); ++k) data.targets[k] = 0.7 * data.states[k];
  const std::vector<std::size_t> nodes{0, 1, 2, 3};

  SymbolicModel m{Expr::constant(1.0) * Expr::self(0), Expr::constant(0.0)};
  const auto r = finetune_constants(m, data, data.train, nodes);
  CHECK(std::abs(constants(r.model.self_term)[0] - 0.7) < 1e-3);
  CHECK(r.final_mae < r.initial_mae);
  CHECK(with_constants(r.model.self_term, constants(m.self_term)) == m.self_term);

  SymbolicModel exact{Expr::constant(0.7) * Expr::self(0), Expr::constant(0.0)};
  const auto r2 = finetune_constants(exact, data, data.train, nodes);
  CHECK(std::abs(constants(r2.model.self_term)[0] - 0.7) < 1e-3);

  // Targets log(x): the optimum c = 0 sits next to the domain edge c = -min x.
  for (std::size_t k = 0; k < data.states.size(); ++k) data.targets[k] = std::log(data.states[k]);
  SymbolicModel lg{Expr::unary(Primitive::Log, Expr::self(0) + Expr::constant(0.5)), Expr::constant(0.0)};
  FinetuneConfig fc;
  fc.learning_rate = 5.0;
  const auto r3 = finetune_constants(lg, data, data.train, nodes, fc);
  CHECK_FALSE(r3.log.empty());
  CHECK(r3.final_mae < r3.initial_mae);
  CHECK(std::abs(constants(r3.model.self_term).back()) < 0.05);

  SymbolicModel bad{Expr::unary(Primitive::Log, Expr::self(0) - Expr::constant(5.0)), Expr::constant(0.0)};
  CHECK_THROWS_AS(finetune_constants(bad, data, data.train, nodes), NonFiniteLoss);
}
