#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "graphdyn/errors.hpp"
#include "graphdyn/kan.hpp"

using namespace graphdyn;

namespace {

// Textbook recursive Cox-de Boor on the explicit extended knot vector.
double cox_de_boor(const std::vector<double>& t, std::size_t i, int k, double x) {
  if (k == 0) return (t[i] <= x && x < t[i + 1]) ? 1.0 : 0.0;
  double a = 0.0, b = 0.0;
  if (t[i + k] != t[i]) a = (x - t[i]) / (t[i + k] - t[i]) * cox_de_boor(t, i, k - 1, x);
  if (t[i + k + 1] != t[i + 1]) b = (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * cox_de_boor(t, i + 1, k - 1, x);
  return a + b;
}

std::vector<double> knots(const SplineGrid& g) {
  std::vector<double> t;
  for (int m = 0; m <= g.intervals + 2 * g.degree; ++m) t.push_back(g.lo + (m - g.degree) * g.step());
  return t;
}

Spline random_spline(std::mt19937_64& rng, int G, int k) {
  std::normal_distribution<double> n(0.0, 1.0);
  Spline s{SplineGrid{-3.0, 3.0, G, k}, {}, n(rng), n(rng)};
  for (std::size_t m = 0; m < s.grid.basis_count(); ++m) s.coeffs.push_back(n(rng));
  return s;
}

KanNet random_net(std::vector<std::size_t> widths, int G, int k, std::uint64_t seed) {
  KanNet net(KanConfig{widths, G, k, -2.0, 2.0, true}, seed);
  std::mt19937_64 rng(seed + 99);
  std::normal_distribution<double> n(0.0, 0.5);
  for (double& p : net.params()) p += n(rng);
  return net;
}

// Evaluates the network directly from per-edge splines and masks.
std::vector<double> reference_forward(const KanNet& net, std::vector<double> x) {
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const std::size_t din = net.layer_in(l), dout = net.layer_out(l);
    std::vector<double> y(dout, 0.0);
    for (std::size_t j = 0; j < dout; ++j) {
      std::vector<double> phi(din);
      for (std::size_t i = 0; i < din; ++i) phi[i] = net.active(l, j, i) ? net.edge_spline(l, j, i).eval(x[i]) : 0.0;
      if (net.node_kind(l, j) == NodeKind::Multiplicative && din > 1) {
        double a = 0, b = 0;
        for (std::size_t i = 0; i < din; ++i) (i < (din + 1) / 2 ? a : b) += phi[i];
        y[j] = a * b;
      } else {
        for (double p : phi) y[j] += p;
      }
    }
    x = y;
  }
  return x;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-7}); }

}  // namespace

TEST_CASE("B-spline basis matches Cox-de Boor and sums to one") {
  std::mt19937_64 rng(1);
  for (int G = 5; G <= 20; ++G) {
    for (int k = 1; k <= 3; ++k) {
      const SplineGrid g{-10.0, 10.0, G, k};
      const auto t = knots(g);
      std::uniform_real_distribution<double> u(g.lo, g.hi);
      for (int s = 0; s < 1000; ++s) {
        const double x = u(rng);
        const auto b = g.full_basis(x);
        REQUIRE(b.size() == static_cast<std::size_t>(G + k));
        double sum = 0;
        for (double v : b) sum += v;
        CHECK(std::abs(sum - 1.0) < 1e-10);
        if (s % 50 == 0) {
          for (std::size_t m = 0; m < b.size(); ++m) CHECK(std::abs(b[m] - cox_de_boor(t, m, k, x)) < 1e-12);
        }
      }
      const auto end = g.full_basis(g.hi);
      double sum = 0;
      for (double v : end) sum += v;
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("spline special cases") {
  Spline s{SplineGrid{-10, 10, 7, 3}, std::vector<double>(10, 0.37), 0.0, 2.0};
  for (double x : {-9.9, -3.3, 0.0, 4.2, 9.99}) CHECK(s.eval(x) == doctest::Approx(0.74).epsilon(1e-12));

  Spline r{SplineGrid{-10, 10, 5, 3}, std::vector<double>(8, 1.0), 1.0, 0.0};
  CHECK(r.eval(0.0) == 0.0);
  CHECK(r.eval(1.5) == doctest::Approx(1.5 / (1 + std::exp(-1.5))));

  std::mt19937_64 rng(3);
  Spline c = random_spline(rng, 6, 3);
  const double edge = c.w_s * [&] {
    Spline only = c;
    only.w_b = 0;
    return only.eval(3.0) / c.w_s;
  }();
  CHECK(c.eval(7.5) == doctest::Approx(c.w_b * silu(7.5) + edge).epsilon(1e-13));
  CHECK(c.grad_x(7.5) == doctest::Approx(c.w_b * silu_grad(7.5)).epsilon(1e-13));
}

TEST_CASE("spline derivatives against finite differences") {
  std::mt19937_64 rng(5);
  for (int k = 1; k <= 3; ++k) {
    for (int trial = 0; trial < 5; ++trial) {
      const Spline s = random_spline(rng, 5 + 3 * trial, k);
      std::uniform_real_distribution<double> u(s.grid.lo, s.grid.hi);
      const double h = 1e-5;
      int checked = 0;
      while (checked < 100) {
        const double x = u(rng);
        // Lower-order splines have kinks at knots.
        const double cell = (x - s.grid.lo) / s.grid.step();
        if (k < 3 && std::abs(cell - std::round(cell)) < 1e-3) continue;
        // Fourth-order central difference keeps truncation below roundoff.
        const double fd = (-s.eval(x + 2 * h) + 8 * s.eval(x + h) - 8 * s.eval(x - h) + s.eval(x - 2 * h)) / (12 * h);
        INFO("k=" << k << " x=" << x);
        CHECK(rel_err(s.grad_x(x), fd) < 1e-6);
        ++checked;
      }
      const double x = u(rng);
      const auto g = s.grad_params(x);
      for (std::size_t m = 0; m < g.size(); ++m) {
        Spline p = s, q = s;
        double* pp = m < s.coeffs.size() ? &p.coeffs[m] : (m == s.coeffs.size() ? &p.w_b : &p.w_s);
        double* qq = m < s.coeffs.size() ? &q.coeffs[m] : (m == s.coeffs.size() ? &q.w_b : &q.w_s);
        *pp += h;
        *qq -= h;
        CHECK(std::abs(g[m] - (p.eval(x) - q.eval(x)) / (2 * h)) < 1e-8);
      }
    }
  }
}

TEST_CASE("KAN construction and parameter count") {
  const KanNet net(KanConfig{{2, 3, 1}, 8, 3}, 4);
  CHECK(net.edge_count() == 9);
  CHECK(net.parameter_count() == 9 * (8 + 3 + 2));
  CHECK(net.node_kind(0, 0) == NodeKind::Additive);
  CHECK(net.node_kind(0, 1) == NodeKind::Additive);
  CHECK(net.node_kind(0, 2) == NodeKind::Multiplicative);
  CHECK(net.node_kind(1, 0) == NodeKind::Additive);
  const auto p = net.edge_params(0, 2, 1);
  CHECK(p[11] == 1.0);
  CHECK(p[12] == 1.0);
  double sq = 0;
  for (std::size_t e = 0; e < 9; ++e)
    for (std::size_t m = 0; m < 11; ++m) sq += std::pow(net.params()[e * 13 + m], 2);
  CHECK(std::sqrt(sq / 99) == doctest::Approx(0.1 / std::sqrt(11.0)).epsilon(0.25));
  CHECK_THROWS_AS(KanNet(KanConfig{{2, 3, 1}, 8, 4}, 1), ParamError);
  CHECK_THROWS_AS(KanNet(KanConfig{{2}, 8, 3}, 1), ParamError);
  CHECK_THROWS_AS(net.edge_params(0, 3, 0), IndexError);
}

TEST_CASE("KAN forward semantics") {
  KanNet one(KanConfig{{1, 1}, 5, 3}, 2);
  CHECK(one.forward(std::vector<double>{0.7})[0] == one.edge_spline(0, 0, 0).eval(0.7));

  // Identity splines fitted by least squares on the basis.
  KanNet two(KanConfig{{2, 2}, 20, 3, -2.0, 2.0}, 3);
  const SplineGrid& g = two.grid();
  const std::size_t nb = g.basis_count();
  std::vector<double> ata(nb * nb, 0.0), atb(nb, 0.0);
  for (int s = 0; s <= 400; ++s) {
    const double x = -2.0 + 4.0 * s / 400;
    const auto b = g.full_basis(x);
    for (std::size_t r = 0; r < nb; ++r) {
      atb[r] += b[r] * x;
      for (std::size_t c = 0; c < nb; ++c) ata[r * nb + c] += b[r] * b[c];
    }
  }
  // Gauss-Jordan on the small normal system.
  for (std::size_t c = 0; c < nb; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < nb; ++r)
      if (std::abs(ata[r * nb + c]) > std::abs(ata[piv * nb + c])) piv = r;
    for (std::size_t k = 0; k < nb; ++k) std::swap(ata[c * nb + k], ata[piv * nb + k]);
    std::swap(atb[c], atb[piv]);
    for (std::size_t r = 0; r < nb; ++r) {
      if (r == c) continue;
      const double f = ata[r * nb + c] / ata[c * nb + c];
      for (std::size_t k = 0; k < nb; ++k) ata[r * nb + k] -= f * ata[c * nb + k];
      atb[r] -= f * atb[c];
    }
  }
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t i = 0; i < 2; ++i) {
      auto p = two.edge_params(0, j, i);
      for (std::size_t m = 0; m < nb; ++m) p[m] = atb[m] / ata[m * nb + m];
      p[nb] = 0.0;
      p[nb + 1] = 1.0;
    }
  }
  for (double x1 : {-1.5, -0.3, 0.8}) {
    for (double x2 : {-1.1, 0.4, 1.7}) {
      const auto y = two.forward(std::vector<double>{x1, x2});
      CHECK(y[0] == doctest::Approx(x1 + x2).epsilon(1e-9));
      CHECK(std::abs(y[1] - x1 * x2) < 1e-9);
    }
  }

  KanNet dead = random_net({3, 4, 2}, 6, 2, 8);
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t j = 0; j < dead.layer_out(l); ++j)
      for (std::size_t i = 0; i < dead.layer_in(l); ++i) dead.set_active(l, j, i, false);
  for (double v : dead.forward(std::vector<double>{0.3, -1, 2})) CHECK(v == 0.0);
  CHECK(dead.active_edge_count() == 0);

  KanNet nomult(KanConfig{{2, 4, 1}, 5, 3, -10, 10, false}, 1);
  for (std::size_t j = 0; j < 4; ++j) CHECK(nomult.node_kind(0, j) == NodeKind::Additive);
}

TEST_CASE("KAN batch forward agrees with the reference and is deterministic") {
  KanNet net = random_net({3, 5, 4, 2}, 7, 3, 11);
  net.set_active(0, 4, 1, false);
  net.set_active(1, 3, 0, false);
  net.set_active(2, 1, 2, false);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-2.5, 2.5);
  std::vector<double> X(40 * 3);
  for (auto& v : X) v = u(rng);
  KanNet::Tape tape;
  std::vector<double> out(40 * 2), again(40 * 2);
  net.forward(X, 40, tape, out);
  net.forward(X, 40, tape, again);
  CHECK(out == again);
  for (std::size_t s = 0; s < 40; ++s) {
    const auto ref = reference_forward(net, {X[s * 3], X[s * 3 + 1], X[s * 3 + 2]});
    CHECK(out[s * 2] == doctest::Approx(ref[0]).epsilon(1e-13));
    CHECK(out[s * 2 + 1] == doctest::Approx(ref[1]).epsilon(1e-13));
  }
  CHECK_THROWS_AS(net.forward(std::vector<double>{1, 2}), ShapeError);
}

TEST_CASE("KAN backward against finite differences") {
  const std::vector<std::vector<std::size_t>> archs{{1, 1}, {2, 1}, {2, 2, 1}, {1, 3, 1}, {2, 4, 1},
                                                     {3, 3, 2}, {2, 5, 3, 1}, {4, 2, 2}, {2, 6, 1}, {1, 2, 2, 1}};
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-2.2, 2.2);
  int arch_index = 0;
  for (const auto& w : archs) {
    const int k = 1 + arch_index % 3;
    KanNet net = random_net(w, 5 + arch_index, k, 100 + arch_index);
    if (net.edge_count() > 2) net.set_active(0, 0, net.layer_in(0) - 1, false);
    const std::size_t rows = 6;
    std::vector<double> X(rows * net.input_dim()), coef(rows * net.output_dim());
    for (auto& v : X) v = u(rng);
    for (auto& v : coef) v = u(rng);
    auto loss = [&](const KanNet& n) {
      KanNet::Tape t;
      std::vector<double> y(coef.size());
      n.forward(X, rows, t, y);
      double s = 0;
      for (std::size_t q = 0; q < y.size(); ++q) s += coef[q] * y[q];
      return s;
    };
    KanNet::Tape tape;
    std::vector<double> y(coef.size()), grad(net.parameter_count(), 0.0), dX(X.size());
    net.forward(X, rows, tape, y);
    net.backward(tape, coef, grad, dX);

    std::uniform_int_distribution<std::size_t> pick(0, net.parameter_count() - 1);
    const double h = 1e-6;
    for (int q = 0; q < 50; ++q) {
      const std::size_t p = pick(rng);
      KanNet a = net, b = net;
      a.params()[p] += h;
      b.params()[p] -= h;
      const double fd = (loss(a) - loss(b)) / (2 * h);
      INFO("arch " << arch_index << " param " << p);
      CHECK(rel_err(grad[p], fd) < 1e-4);
    }
    for (std::size_t q = 0; q < X.size(); ++q) {
      const double keep = X[q];
      X[q] = keep + h;
      const double lp = loss(net);
      X[q] = keep - h;
      const double lm = loss(net);
      X[q] = keep;
      CHECK(rel_err(dX[q], (lp - lm) / (2 * h)) < 1e-4);
    }
    if (net.edge_count() > 2) {
      const std::size_t i = net.layer_in(0) - 1;
      for (double gv : [&] {
             const auto p = net.edge_params(0, 0, i);
             const std::size_t off = static_cast<std::size_t>(p.data() - net.params().data());
             return std::vector<double>(grad.begin() + off, grad.begin() + off + p.size());
           }()) {
        CHECK(gv == 0.0);
      }
    }
    ++arch_index;
  }
}

TEST_CASE("KAN coefficient gradient equals the weighted basis") {
  KanNet net(KanConfig{{1, 1}, 6, 3}, 5);
  net.params()[10] = 1.7;  // w_s
  KanNet::Tape tape;
  std::vector<double> y(1), grad(net.parameter_count(), 0.0);
  net.forward(std::vector<double>{1.3}, 1, tape, y);
  net.backward(tape, std::vector<double>{1.0}, grad);
  const auto b = net.grid().full_basis(1.3);
  for (std::size_t m = 0; m < b.size(); ++m) CHECK(grad[m] == doctest::Approx(1.7 * b[m]).epsilon(1e-14));
}

TEST_CASE("L1 norms and entropy") {
  CHECK(layer_entropy(std::vector<double>(6, 0.3)) == doctest::Approx(std::log(6.0)));
  CHECK(layer_entropy(std::vector<double>{0, 0, 2.5, 0}) == 0.0);
  CHECK(layer_entropy(std::vector<double>(4, 0.0)) == 0.0);
  CHECK(layer_l1(std::vector<double>(4, 0.0)) == 0.0);
  CHECK(layer_l1(std::vector<double>{0.5, 1.5}) == 2.0);

  KanNet net = random_net({2, 3, 1}, 5, 3, 7);
  std::vector<double> X{0.1, -0.4, 1.2, 0.9, -1.7, 0.3};
  KanNet::Tape tape;
  std::vector<double> y(3);
  net.forward(X, 3, tape, y);
  const auto n0 = net.edge_l1(tape, 0);
  REQUIRE(n0.size() == 6);
  for (std::size_t j = 0; j < 3; ++j) {
    for (std::size_t i = 0; i < 2; ++i) {
      double m = 0;
      for (std::size_t s = 0; s < 3; ++s) m += std::abs(net.edge_spline(0, j, i).eval(X[s * 2 + i]));
      CHECK(n0[j * 2 + i] == doctest::Approx(m / 3).epsilon(1e-13));
    }
  }
  const auto r = net.input_ranges(tape, 0);
  CHECK(r[0].first == -1.7);
  CHECK(r[0].second == 1.2);
}

TEST_CASE("sparsity penalty gradient against finite differences") {
  for (int trial = 0; trial < 4; ++trial) {
    KanNet net = random_net(trial % 2 ? std::vector<std::size_t>{2, 3, 1} : std::vector<std::size_t>{1, 4, 2}, 6,
                            1 + trial % 3, 30 + trial);
    net.set_active(0, 1, 0, false);
    const Penalty pen{0.3, 0.7, 0.4, 0.0};
    std::mt19937_64 rng(trial);
    std::uniform_real_distribution<double> u(-2, 2);
    const std::size_t rows = 8;
    std::vector<double> X(rows * net.input_dim());
    for (auto& v : X) v = u(rng);
    auto value = [&](const KanNet& n) {
      KanNet::Tape t;
      std::vector<double> y(rows * n.output_dim());
      n.forward(X, rows, t, y);
      return n.penalty(t, pen);
    };
    KanNet::Tape tape;
    std::vector<double> y(rows * net.output_dim()), grad(net.parameter_count(), 0.0);
    net.forward(X, rows, tape, y);
    const double v = net.penalty(tape, pen);
    double expect = 0;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      const auto n = net.edge_l1(tape, l);
      expect += 0.3 * (0.7 * layer_l1(n) + 0.4 * layer_entropy(n));
    }
    CHECK(v == doctest::Approx(expect).epsilon(1e-14));
    net.backward(tape, std::vector<double>(y.size(), 0.0), grad);
    const double h = 1e-6;
    for (std::size_t p = 0; p < net.parameter_count(); p += 3) {
      KanNet a = net, b = net;
      a.params()[p] += h;
      b.params()[p] -= h;
      CHECK(rel_err(grad[p], (value(a) - value(b)) / (2 * h)) < 1e-4);
    }
  }
}

TEST_CASE("pruning") {
  KanNet net = random_net({2, 4, 1}, 5, 3, 13);
  std::vector<double> X(50 * 2);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-2, 2);
  for (auto& v : X) v = u(rng);

  CHECK(prune(net, 0.0, X, 50) == net);
  std::vector<std::string> warnings;
  const KanNet all = prune(net, INFINITY, X, 50, &warnings);
  CHECK(all.active_edge_count() == 0);
  CHECK(warnings.size() == 2);
  CHECK(warnings[0].find("ShapeWarning") != std::string::npos);
  CHECK_THROWS_AS(prune(net, -1.0, X, 50), ParamError);

  // Silence one edge and one hidden node.
  auto quiet = [&](std::size_t l, std::size_t j, std::size_t i) {
    auto p = net.edge_params(l, j, i);
    for (auto& v : p) v *= 1e-4;
  };
  quiet(0, 0, 1);
  quiet(0, 3, 0);
  quiet(0, 3, 1);
  quiet(1, 0, 3);
  const KanNet pruned = prune(net, 1e-2, X, 50);
  CHECK_FALSE(pruned.active(0, 0, 1));
  CHECK_FALSE(pruned.active(0, 3, 0));
  CHECK_FALSE(pruned.active(1, 0, 3));
  CHECK(pruned.active(0, 0, 0));
  CHECK(pruned.active(1, 0, 0));
  CHECK(pruned.active_edge_count() == 12 - 4);

  // A pruned net evaluates as the original with masked outputs forced to zero.
  for (std::size_t s = 0; s < 50; ++s) {
    const std::vector<double> x{X[2 * s], X[2 * s + 1]};
    CHECK(pruned.forward(x)[0] == reference_forward(pruned, x)[0]);
  }
}

TEST_CASE("KAN checkpoint round trip") {
  KanNet net = random_net({2, 3, 1}, 9, 2, 17);
  net.set_active(0, 2, 1, false);
  const auto path = std::filesystem::temp_directory_path() / "graphdyn_kan.json";
  net.save(path);
  const KanNet back = KanNet::load(path);
  CHECK(back == net);
  CHECK(back.forward(std::vector<double>{0.3, -0.2}) == net.forward(std::vector<double>{0.3, -0.2}));
  CHECK_THROWS_AS(KanNet::from_json("{\"format\":\"graphdyn-kan\"}"), FormatError);
  CHECK_THROWS_AS(KanNet::from_json("not json"), FormatError);
}
