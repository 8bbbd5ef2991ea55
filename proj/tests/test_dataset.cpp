#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "doctest.h"
#include "graphdyn/dataset.hpp"
#include "graphdyn/errors.hpp"

using namespace graphdyn;

namespace {

Trajectory sampled(std::size_t nodes, std::size_t T, double t0, double t1, auto&& f) {
  Trajectory tr;
  tr.nodes = nodes;
  tr.times = sample_times(t0, t1, T);
  tr.states.resize(T * nodes);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < nodes; ++i) tr.states[t * nodes + i] = f(tr.times[t], i);
  return tr;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "graphdyn_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<double> uniform(std::size_t n, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace

TEST_CASE("stencil: exact for quartics and accurate for sine") {
  const auto quartic = sampled(1, 5, 0.8, 1.2, [](double t, std::size_t) { return t * t * t * t; });
  const auto d = stencil_derivatives(quartic);
  REQUIRE(d.length() == 1);
  CHECK(d.times[0] == quartic.times[2]);
  CHECK(std::abs(d.derivs[0] - 4.0) < 1e-10);

  const auto s = sampled(1, 5, -0.02, 0.02, [](double t, std::size_t) { return std::sin(t); });
  CHECK(std::abs(stencil_derivatives(s).derivs[0] - 1.0) < 1e-8);

  const auto c = sampled(3, 9, 0, 1, [](double, std::size_t i) { return 1.5 + i; });
  for (double v : stencil_derivatives(c).derivs) CHECK(v == 0.0);

  const auto short_tr = sampled(1, 4, 0, 1, [](double t, std::size_t) { return t; });
  CHECK_THROWS_AS(stencil_derivatives(short_tr), ShapeError);
}

TEST_CASE("stencil: alignment and linearity") {
  const auto x = sampled(2, 40, 0, 2, [](double t, std::size_t i) { return std::cos(t + i); });
  const auto y = sampled(2, 40, 0, 2, [](double t, std::size_t i) { return t * t * (i + 1); });
  auto z = x;
  for (std::size_t k = 0; k < z.states.size(); ++k) z.states[k] = 2.5 * x.states[k] - 0.75 * y.states[k];
  const auto dx = stencil_derivatives(x), dy = stencil_derivatives(y), dz = stencil_derivatives(z);
  CHECK(dz.length() == 36);
  CHECK(dz.times.front() == x.times[2]);
  CHECK(dz.times.back() == x.times[37]);
  for (std::size_t k = 0; k < dz.derivs.size(); ++k) {
    CHECK(dz.derivs[k] == doctest::Approx(2.5 * dx.derivs[k] - 0.75 * dy.derivs[k]).epsilon(1e-12));
  }
}

TEST_CASE("stencil matches the true right-hand side on synthetic data") {
  struct Case {
    DynKind kind;
    double lo, hi, t1;
  };
  const Graph g = gen_ba(70, 3, 42);
  for (const Case& c : {Case{DynKind::Kur, 0, 2 * std::numbers::pi, 1}, Case{DynKind::Epid, 0, 1, 2},
                        Case{DynKind::Bio, 0, 1, 1}, Case{DynKind::Pop, -1, 1, 10}}) {
    const auto rhs = ground_truth_rhs(DynSpec::defaults(c.kind));
    Trajectory tr;
    for (std::uint64_t seed = 1;; ++seed) {
      try {
        tr = integrate(rhs, g, uniform(70, c.lo, c.hi, seed), 1, 0.0, c.t1, 2000);
        break;
      } catch (const DivergenceError&) {
        REQUIRE(seed < 10);
      }
    }
    const auto d = stencil_derivatives(tr);
    std::vector<double> truth(70);
    double worst = 0;
    for (std::size_t t = 0; t < d.length(); ++t) {
      rhs(g, tr.at(t + 2), truth);
      for (std::size_t i = 0; i < 70; ++i) worst = std::max(worst, std::abs(truth[i] - d.at(t)[i]));
    }
    INFO(dyn_name(c.kind));
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("noise: sentinel, SNR and determinism") {
  const auto tr = sampled(3, 2000, 0, 20, [](double t, std::size_t i) { return std::sqrt(2.0) * std::sin(t + i); });
  const auto same = add_noise(tr, INFINITY, 1);
  CHECK(same.states == tr.states);
  CHECK_THROWS_AS(add_noise(tr, NAN, 1), ParamError);

  const auto noisy = add_noise(tr, 20.0, 7);
  CHECK(noisy.states == add_noise(tr, 20.0, 7).states);
  const auto other = add_noise(tr, 20.0, 8);
  CHECK(other.states != noisy.states);
  for (std::size_t i = 0; i < 3; ++i) {
    double ps = 0, mean = 0, pn = 0, pn2 = 0;
    for (std::size_t t = 0; t < 2000; ++t) mean += tr.states[t * 3 + i] / 2000;
    for (std::size_t t = 0; t < 2000; ++t) {
      const std::size_t k = t * 3 + i;
      ps += std::pow(tr.states[k] - mean, 2);
      pn += std::pow(noisy.states[k] - tr.states[k], 2);
      pn2 += std::pow(other.states[k] - tr.states[k], 2);
    }
    CHECK(std::abs(10 * std::log10(ps / pn) - 20.0) < 0.5);
    CHECK(std::abs(pn / pn2 - 1) < 0.15);
  }
}

TEST_CASE("noise: constant channels are left alone with a warning") {
  auto tr = sampled(2, 50, 0, 1, [](double t, std::size_t i) { return i == 0 ? 3.0 : t; });
  std::vector<std::string> warnings;
  const auto out = add_noise(tr, 50, 3, &warnings);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("node 0") != std::string::npos);
  for (std::size_t t = 0; t < 50; ++t) {
    CHECK(out.states[t * 2] == 3.0);
    CHECK(out.states[t * 2 + 1] != tr.states[t * 2 + 1]);
  }
}

TEST_CASE("split ranges") {
  const Split s = make_split(2000, 0.8, 0.2);
  CHECK(s.train == IndexRange{0, 1600});
  CHECK(s.val == IndexRange{1600, 2000});
  CHECK(s.test.empty());
  const Split e = make_split(1000, 0.8, 0.1);
  CHECK(e.train.size() == 800);
  CHECK(e.val.size() == 100);
  CHECK(e.test == IndexRange{900, 1000});
  for (std::size_t n = 1; n < 60; ++n) {
    const Split r = make_split(n, 0.8, 0.1);
    CHECK(r.train.begin == 0);
    CHECK(r.train.end == r.val.begin);
    CHECK(r.val.end == r.test.begin);
    CHECK(r.test.end == n);
  }
  CHECK_THROWS_AS(make_split(10, 0.8, 0.3), ParamError);
  CHECK_THROWS_AS(make_split(10, -0.1, 0.3), ParamError);
}

TEST_CASE("scaler") {
  auto tr = sampled(2, 11, 0, 1, [](double t, std::size_t) { return 10 * t; });
  tr.states.back() = 50;  // outside the training range
  const Scaler s = fit_scaler(tr, {0, 10});
  CHECK(s.min[0] == 0.0);
  CHECK(s.max[0] == 9.0);
  const Scaler mid = fit_scaler(sampled(1, 11, 0, 1, [](double t, std::size_t) { return 10 * t; }), {0, 11});
  CHECK(mid.apply(5.0, 0) == 0.0);
  CHECK(mid.apply(0.0, 0) == -1.0);
  CHECK(mid.apply(10.0, 0) == 1.0);
  CHECK(s.apply(50.0, 0) > 1.0);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-100, 100);
  for (int k = 0; k < 100; ++k) {
    const double x = u(rng);
    CHECK(std::abs(mid.invert(mid.apply(x, 0), 0) - x) < 1e-12);
  }
  const auto back = s.invert(s.apply(tr));
  for (std::size_t k = 0; k < tr.states.size(); ++k) CHECK(std::abs(back.states[k] - tr.states[k]) < 1e-12);

  auto two = sampled(2, 6, 0, 1, [](double t, std::size_t) { return t; });
  two.features = 2;
  two.nodes = 1;
  for (std::size_t t = 0; t < 6; ++t) two.states[t * 2 + 1] = 100 + 3 * t;
  const Scaler f2 = fit_scaler(two, {0, 6});
  CHECK(f2.min == std::vector<double>{0, 100});
  CHECK(f2.max == std::vector<double>{1, 115});

  const auto flat = sampled(1, 6, 0, 1, [](double, std::size_t) { return 2.0; });
  CHECK_THROWS_AS(fit_scaler(flat, {0, 6}), DegenerateFeature);
  CHECK_THROWS_AS(fit_scaler(tr, {3, 3}), ParamError);
}

TEST_CASE("dataset save and load round trip") {
  Dataset ds;
  ds.graph = gen_ba(20, 3, 2);
  ds.traj = integrate(ground_truth_rhs(DynSpec::defaults(DynKind::Kur)), ds.graph,
                      uniform(20, 0, 2 * std::numbers::pi, 3), 1, 0.0, 1.0, 300);
  ds.traj.graph_ref = "ba-20-3-seed2";
  ds.split = make_split(300, 0.8, 0.2);
  ds.derivs = stencil_derivatives(ds.traj);
  ds.metadata = R"({"dynamics":"KUR","seed":3})";
  const auto dir = temp_dir("kur");
  save_dataset(dir, ds);
  const Dataset back = load_dataset(dir);
  CHECK(back.traj.states == ds.traj.states);
  CHECK(back.traj.times == ds.traj.times);
  CHECK(back.traj.graph_ref == ds.traj.graph_ref);
  CHECK(back.graph == ds.graph);
  CHECK(back.split == ds.split);
  REQUIRE(back.derivs.has_value());
  CHECK(back.derivs->derivs == ds.derivs->derivs);
  CHECK(back.derivs->times == ds.derivs->times);
  CHECK(back.metadata == R"({"dynamics":"KUR","seed":3})");

  // Truncate the state file.
  {
    std::ifstream in(dir / "states.csv");
    std::string all((std::istreambuf_iterator<char>(in)), {});
    std::ofstream out(dir / "states.csv");
    out << all.substr(0, all.size() / 2);
  }
  CHECK_THROWS_AS(load_dataset(dir), FormatError);
  {
    std::ofstream out(dir / "states.csv");
    out << "1,2\n";
  }
  try {
    load_dataset(dir);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.line() == 1);
  }
  CHECK_THROWS_AS(load_dataset(temp_dir("empty")), IoError);
}

TEST_CASE("empirical CSV ingestion") {
  const auto dir = temp_dir("empirical");
  {
    std::ofstream csv(dir / "traffic.csv");
    csv << "a,b,c\n1,2,3\n4,5,6\n7,8,9.5\n10,11,12\n";
    std::ofstream edges(dir / "traffic.edges");
    edges << "n=3\n0 1 120\n1 2 35.5\n";
  }
  const Dataset ds = load_empirical(dir / "traffic.csv", dir / "traffic.edges", 0.5);
  CHECK(ds.traj.nodes == 3);
  CHECK(ds.traj.length() == 4);
  CHECK(ds.traj.states == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9.5, 10, 11, 12});
  CHECK(ds.traj.times == std::vector<double>{0, 0.5, 1.0, 1.5});
  CHECK(ds.graph(1, 0) == 120);
  CHECK(ds.graph(2, 1) == 35.5);
  CHECK(ds.split.test.end == 4);

  {
    std::ofstream csv(dir / "bad.csv");
    csv << "1,2,3\n4,5\n";
  }
  try {
    load_empirical(dir / "bad.csv", dir / "traffic.edges", 0.5);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.line() == 2);
  }
}
