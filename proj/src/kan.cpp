#include "graphdyn/kan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "graphdyn/errors.hpp"
#include "json.hpp"

namespace graphdyn {

namespace {

constexpr int kMaxDegree = 5;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

double silu(double x) { return x * sigmoid(x); }

double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

// ---------------------------------------------------------------------------
// SplineGrid

void SplineGrid::validate() const {
  if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) throw ParamError("spline range needs lo < hi");
  if (intervals < 1) throw ParamError("spline grid needs at least one interval");
  if (degree < 0 || degree > kMaxDegree) throw ParamError("spline degree must lie in [0, 5]");
}

namespace {

// Locates the cell of clamp(x) and the local coordinate u in [0, 1].
inline std::size_t locate(const SplineGrid& g, double x, double& u, bool& inside) {
  inside = x >= g.lo && x <= g.hi;
  const double xc = std::isnan(x) ? g.lo : std::clamp(x, g.lo, g.hi);
  const double t = (xc - g.lo) / g.step();
  double cell = std::floor(t);
  if (cell > g.intervals - 1) cell = g.intervals - 1;
  if (cell < 0) cell = 0;
  u = t - cell;
  return static_cast<std::size_t>(cell);
}

// Uniform-knot Cox-de Boor triangle; left/right distances are in cell units so
// every denominator is the current degree.
inline void uniform_basis(double u, int degree, double* n) {
  double left[kMaxDegree + 1], right[kMaxDegree + 1];
  n[0] = 1.0;
  for (int j = 1; j <= degree; ++j) {
    left[j] = u + j - 1;
    right[j] = j - u;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = n[r] / j;
      n[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    n[j] = saved;
  }
}

}  // namespace

std::size_t SplineGrid::basis(double x, double* b) const {
  double u;
  bool inside;
  const std::size_t s = locate(*this, x, u, inside);
  uniform_basis(u, degree, b);
  return s;
}

std::size_t SplineGrid::basis_with_derivative(double x, double* b, double* db) const {
  double u;
  bool inside;
  const std::size_t s = locate(*this, x, u, inside);
  if (degree == 0 || !inside) {
    uniform_basis(u, degree, b);
    std::fill(db, db + degree + 1, 0.0);
    return s;
  }
  double lower[kMaxDegree + 1];
  uniform_basis(u, degree - 1, lower);
  uniform_basis(u, degree, b);
  const double inv_h = 1.0 / step();
  for (int r = 0; r <= degree; ++r) {
    const double a = r >= 1 ? lower[r - 1] : 0.0;
    const double c = r <= degree - 1 ? lower[r] : 0.0;
    db[r] = (a - c) * inv_h;
  }
  return s;
}

std::vector<double> SplineGrid::full_basis(double x) const {
  std::vector<double> out(basis_count(), 0.0);
  double b[kMaxDegree + 1];
  const std::size_t s = basis(x, b);
  for (int r = 0; r <= degree; ++r) out[s + r] = b[r];
  return out;
}

// ---------------------------------------------------------------------------
// Spline

double Spline::eval(double x) const {
  double b[kMaxDegree + 1];
  const std::size_t s = grid.basis(x, b);
  double acc = 0.0;
  for (int r = 0; r <= grid.degree; ++r) acc += coeffs[s + r] * b[r];
  return w_b * silu(x) + w_s * acc;
}

double Spline::grad_x(double x) const {
  double b[kMaxDegree + 1], db[kMaxDegree + 1];
  const std::size_t s = grid.basis_with_derivative(x, b, db);
  double acc = 0.0;
  for (int r = 0; r <= grid.degree; ++r) acc += coeffs[s + r] * db[r];
  return w_b * silu_grad(x) + w_s * acc;
}

std::vector<double> Spline::grad_params(double x) const {
  std::vector<double> g(coeffs.size() + 2, 0.0);
  double b[kMaxDegree + 1];
  const std::size_t s = grid.basis(x, b);
  double acc = 0.0;
  for (int r = 0; r <= grid.degree; ++r) {
    g[s + r] = w_s * b[r];
    acc += coeffs[s + r] * b[r];
  }
  g[coeffs.size()] = silu(x);
  g[coeffs.size() + 1] = acc;
  return g;
}

// ---------------------------------------------------------------------------
// KanNet

void KanConfig::validate() const {
  if (widths.size() < 2) throw ParamError("a KAN needs at least one layer");
  for (auto w : widths) {
    if (w == 0) throw ParamError("KAN layer widths must be positive");
  }
  if (grid < 1) throw ParamError("KAN grid size must be positive");
  if (degree < 1 || degree > 3) throw ParamError("KAN spline order must lie in [1, 3]");
  if (!(range_lo < range_hi)) throw ParamError("KAN range needs lo < hi");
}

KanNet::KanNet(const KanConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  build();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.1 / std::sqrt(static_cast<double>(grid_.basis_count())));
  const std::size_t nb = grid_.basis_count();
  for (std::size_t e = 0; e < mask_.size(); ++e) {
    double* p = params_.data() + e * edge_param_count();
    for (std::size_t m = 0; m < nb; ++m) p[m] = normal(rng);
    p[nb] = 1.0;
    p[nb + 1] = 1.0;
  }
}

void KanNet::build() {
  grid_ = SplineGrid{cfg_.range_lo, cfg_.range_hi, cfg_.grid, cfg_.degree};
  layer_edge_offset_.assign(1, 0);
  for (std::size_t l = 0; l < layer_count(); ++l) {
    layer_edge_offset_.push_back(layer_edge_offset_.back() + layer_in(l) * layer_out(l));
  }
  mask_.assign(layer_edge_offset_.back(), 1);
  params_.assign(mask_.size() * edge_param_count(), 0.0);
}

NodeKind KanNet::node_kind(std::size_t l, std::size_t j) const {
  if (!cfg_.multiplicative) return NodeKind::Additive;
  const std::size_t additive = (layer_out(l) + 1) / 2;
  return j < additive ? NodeKind::Additive : NodeKind::Multiplicative;
}

std::size_t KanNet::edge_count() const { return mask_.size(); }

std::size_t KanNet::active_edge_count() const {
  return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), 1));
}

std::size_t KanNet::edge_index(std::size_t l, std::size_t j, std::size_t i) const {
  if (l >= layer_count() || j >= layer_out(l) || i >= layer_in(l)) throw IndexError("KAN edge index out of range");
  return layer_edge_offset_[l] + j * layer_in(l) + i;
}

std::span<double> KanNet::edge_params(std::size_t l, std::size_t j, std::size_t i) {
  return std::span<double>(params_).subspan(edge_index(l, j, i) * edge_param_count(), edge_param_count());
}

std::span<const double> KanNet::edge_params(std::size_t l, std::size_t j, std::size_t i) const {
  return std::span<const double>(params_).subspan(edge_index(l, j, i) * edge_param_count(), edge_param_count());
}

Spline KanNet::edge_spline(std::size_t l, std::size_t j, std::size_t i) const {
  const auto p = edge_params(l, j, i);
  const std::size_t nb = grid_.basis_count();
  return Spline{grid_, std::vector<double>(p.begin(), p.begin() + nb), p[nb], p[nb + 1]};
}

double KanNet::edge_eval(std::size_t l, std::size_t j, std::size_t i, double x) const {
  if (!active(l, j, i)) return 0.0;
  return edge_spline(l, j, i).eval(x);
}

bool KanNet::active(std::size_t l, std::size_t j, std::size_t i) const { return mask_[edge_index(l, j, i)] != 0; }

void KanNet::set_active(std::size_t l, std::size_t j, std::size_t i, bool on) {
  mask_[edge_index(l, j, i)] = on ? 1 : 0;
}

void KanNet::forward(std::span<const double> X, std::size_t rows, Tape& tape, std::span<double> out,
                     std::mt19937_64*) const {
  const std::size_t L = layer_count();
  if (X.size() != rows * input_dim()) throw ShapeError("KAN input has wrong size");
  if (out.size() != rows * output_dim()) throw ShapeError("KAN output buffer has wrong size");
  tape.rows = rows;
  tape.acts.resize(L + 1);
  tape.phi.resize(L);
  tape.reg.clear();
  tape.acts[0].assign(X.begin(), X.end());
  const std::size_t nb = grid_.basis_count(), ep = edge_param_count();
  const int k = grid_.degree;
  double b[kMaxDegree + 1];

  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t din = layer_in(l), dout = layer_out(l);
    const std::vector<double>& in = tape.acts[l];
    std::vector<double>& phi = tape.phi[l];
    std::vector<double>& nxt = tape.acts[l + 1];
    phi.assign(rows * dout * din, 0.0);
    nxt.assign(rows * dout, 0.0);
    const double* P = params_.data() + layer_edge_offset_[l] * ep;
    const unsigned char* M = mask_.data() + layer_edge_offset_[l];
    const std::size_t half = (din + 1) / 2;

    for (std::size_t s = 0; s < rows; ++s) {
      double* ph = phi.data() + s * dout * din;
      for (std::size_t i = 0; i < din; ++i) {
        const double x = in[s * din + i];
        const std::size_t first = grid_.basis(x, b);
        const double res = silu(x);
        for (std::size_t j = 0; j < dout; ++j) {
          const std::size_t e = j * din + i;
          if (!M[e]) continue;
          const double* p = P + e * ep;
          double acc = 0.0;
          for (int r = 0; r <= k; ++r) acc += p[first + r] * b[r];
          ph[e] = p[nb] * res + p[nb + 1] * acc;
        }
      }
      double* o = nxt.data() + s * dout;
      for (std::size_t j = 0; j < dout; ++j) {
        const double* row = ph + j * din;
        if (node_kind(l, j) == NodeKind::Multiplicative && din > 1) {
          double a = 0.0, c = 0.0;
          for (std::size_t i = 0; i < half; ++i) a += row[i];
          for (std::size_t i = half; i < din; ++i) c += row[i];
          o[j] = a * c;
        } else {
          double a = 0.0;
          for (std::size_t i = 0; i < din; ++i) a += row[i];
          o[j] = a;
        }
      }
    }
  }
  std::copy(tape.acts[L].begin(), tape.acts[L].end(), out.begin());
}

std::vector<double> KanNet::forward(std::span<const double> x) const {
  Tape tape;
  std::vector<double> out(output_dim());
  forward(x, 1, tape, out);
  return out;
}

void KanNet::backward(const Tape& tape, std::span<const double> dout_span, std::span<double> grad,
                      std::span<double> dX) const {
  const std::size_t L = layer_count(), rows = tape.rows;
  if (grad.size() != params_.size()) throw ShapeError("KAN gradient buffer has wrong size");
  if (dout_span.size() != rows * output_dim()) throw ShapeError("KAN output gradient has wrong size");
  const std::size_t nb = grid_.basis_count(), ep = edge_param_count();
  const int k = grid_.degree;
  const bool have_reg = tape.reg.size() == L;
  double b[kMaxDegree + 1], db[kMaxDegree + 1];

  std::vector<double> dcur(dout_span.begin(), dout_span.end()), dprev, dphi;
  for (std::size_t l = L; l-- > 0;) {
    const std::size_t din = layer_in(l), dout = layer_out(l);
    const std::vector<double>& in = tape.acts[l];
    const std::vector<double>& phi = tape.phi[l];
    const double* P = params_.data() + layer_edge_offset_[l] * ep;
    double* Gp = grad.data() + layer_edge_offset_[l] * ep;
    const unsigned char* M = mask_.data() + layer_edge_offset_[l];
    const std::size_t half = (din + 1) / 2;
    const bool need_dx = l > 0 || !dX.empty();
    dprev.assign(need_dx ? rows * din : 0, 0.0);
    dphi.assign(dout * din, 0.0);

    for (std::size_t s = 0; s < rows; ++s) {
      const double* ph = phi.data() + s * dout * din;
      const double* g = dcur.data() + s * dout;
      for (std::size_t j = 0; j < dout; ++j) {
        double* d = dphi.data() + j * din;
        const double* row = ph + j * din;
        if (node_kind(l, j) == NodeKind::Multiplicative && din > 1) {
          double a = 0.0, c = 0.0;
          for (std::size_t i = 0; i < half; ++i) a += row[i];
          for (std::size_t i = half; i < din; ++i) c += row[i];
          for (std::size_t i = 0; i < half; ++i) d[i] = g[j] * c;
          for (std::size_t i = half; i < din; ++i) d[i] = g[j] * a;
        } else {
          for (std::size_t i = 0; i < din; ++i) d[i] = g[j];
        }
      }
      if (have_reg) {
        const std::vector<double>& rg = tape.reg[l];
        for (std::size_t e = 0; e < dout * din; ++e) {
          if (ph[e] > 0) dphi[e] += rg[e];
          else if (ph[e] < 0) dphi[e] -= rg[e];
        }
      }
      for (std::size_t i = 0; i < din; ++i) {
        const double x = in[s * din + i];
        const std::size_t first = need_dx ? grid_.basis_with_derivative(x, b, db) : grid_.basis(x, b);
        const double res = silu(x);
        const double res_grad = need_dx ? silu_grad(x) : 0.0;
        double dxi = 0.0;
        for (std::size_t j = 0; j < dout; ++j) {
          const std::size_t e = j * din + i;
          const double gphi = dphi[e];
          if (!M[e] || gphi == 0.0) continue;
          const double* p = P + e * ep;
          double* gp = Gp + e * ep;
          const double ws = p[nb + 1];
          double acc = 0.0, dacc = 0.0;
          for (int r = 0; r <= k; ++r) {
            acc += p[first + r] * b[r];
            gp[first + r] += gphi * ws * b[r];
          }
          gp[nb] += gphi * res;
          gp[nb + 1] += gphi * acc;
          if (need_dx) {
            for (int r = 0; r <= k; ++r) dacc += p[first + r] * db[r];
            dxi += gphi * (p[nb] * res_grad + ws * dacc);
          }
        }
        if (need_dx) dprev[s * din + i] = dxi;
      }
    }
    dcur.swap(dprev);
  }
  if (!dX.empty()) {
    if (dX.size() != dcur.size()) throw ShapeError("KAN input gradient buffer has wrong size");
    std::copy(dcur.begin(), dcur.end(), dX.begin());
  }
}

std::vector<double> KanNet::edge_l1(const Tape& tape, std::size_t l) const {
  const std::size_t E = layer_in(l) * layer_out(l);
  std::vector<double> norms(E, 0.0);
  if (tape.rows == 0) return norms;
  const std::vector<double>& phi = tape.phi[l];
  for (std::size_t s = 0; s < tape.rows; ++s) {
    const double* ph = phi.data() + s * E;
    for (std::size_t e = 0; e < E; ++e) norms[e] += std::abs(ph[e]);
  }
  for (auto& v : norms) v /= static_cast<double>(tape.rows);
  return norms;
}

std::vector<std::pair<double, double>> KanNet::input_ranges(const Tape& tape, std::size_t l) const {
  const std::size_t din = layer_in(l);
  std::vector<std::pair<double, double>> r(din, {INFINITY, -INFINITY});
  for (std::size_t s = 0; s < tape.rows; ++s) {
    for (std::size_t i = 0; i < din; ++i) {
      const double x = tape.acts[l][s * din + i];
      r[i].first = std::min(r[i].first, x);
      r[i].second = std::max(r[i].second, x);
    }
  }
  return r;
}

double layer_l1(std::span<const double> edge_norms) {
  double s = 0.0;
  for (double v : edge_norms) s += v;
  return s;
}

double layer_entropy(std::span<const double> edge_norms) {
  const double total = layer_l1(edge_norms);
  if (!(total > 0.0)) return 0.0;
  double h = 0.0;
  for (double v : edge_norms) {
    if (v > 0.0) {
      const double p = v / total;
      h -= p * std::log(p);
    }
  }
  return h;
}

double KanNet::penalty(Tape& tape, const Penalty& pen) const {
  const std::size_t L = layer_count();
  tape.reg.assign(L, {});
  if (pen.lambda == 0.0 || tape.rows == 0) {
    for (std::size_t l = 0; l < L; ++l) tape.reg[l].assign(layer_in(l) * layer_out(l), 0.0);
    return 0.0;
  }
  const double inv_rows = 1.0 / static_cast<double>(tape.rows);
  double value = 0.0;
  for (std::size_t l = 0; l < L; ++l) {
    const auto norms = edge_l1(tape, l);
    const double total = layer_l1(norms);
    const double ent = layer_entropy(norms);
    value += pen.lambda * (pen.mu1 * total + pen.mu2 * ent);
    auto& rg = tape.reg[l];
    rg.assign(norms.size(), 0.0);
    for (std::size_t e = 0; e < norms.size(); ++e) {
      double d = pen.mu1;
      if (total > 0.0 && norms[e] > 0.0) d += pen.mu2 * (-(std::log(norms[e] / total) + ent) / total);
      rg[e] = pen.lambda * d * inv_rows;
    }
  }
  return value;
}

// ---------------------------------------------------------------------------
// Serialization

std::string KanNet::to_json() const {
  nlohmann::json j;
  j["format"] = "graphdyn-kan";
  j["version"] = 1;
  j["widths"] = cfg_.widths;
  j["grid"] = cfg_.grid;
  j["degree"] = cfg_.degree;
  j["range"] = {cfg_.range_lo, cfg_.range_hi};
  j["multiplicative"] = cfg_.multiplicative;
  std::vector<int> kinds;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    for (std::size_t n = 0; n < layer_out(l); ++n) kinds.push_back(node_kind(l, n) == NodeKind::Multiplicative);
  }
  j["node_kinds"] = kinds;
  j["mask"] = std::vector<int>(mask_.begin(), mask_.end());
  j["params"] = params_;
  return j.dump();
}

KanNet KanNet::from_json(const std::string& text) {
  KanNet net;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "graphdyn-kan") throw FormatError("not a KAN checkpoint", 0);
    net.cfg_.widths = j.at("widths").get<std::vector<std::size_t>>();
    net.cfg_.grid = j.at("grid").get<int>();
    net.cfg_.degree = j.at("degree").get<int>();
    net.cfg_.range_lo = j.at("range").at(0).get<double>();
    net.cfg_.range_hi = j.at("range").at(1).get<double>();
    net.cfg_.multiplicative = j.at("multiplicative").get<bool>();
    net.cfg_.validate();
    net.build();
    const auto mask = j.at("mask").get<std::vector<int>>();
    const auto params = j.at("params").get<std::vector<double>>();
    if (mask.size() != net.mask_.size() || params.size() != net.params_.size()) {
      throw FormatError("KAN checkpoint sizes do not match its shape", 0);
    }
    for (std::size_t e = 0; e < mask.size(); ++e) net.mask_[e] = mask[e] ? 1 : 0;
    net.params_ = params;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("KAN checkpoint: ") + e.what(), 0);
  } catch (const ParamError& e) {
    throw FormatError(std::string("KAN checkpoint: ") + e.what(), 0);
  }
  return net;
}

void KanNet::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json() << '\n';
  if (!out) throw IoError("error writing " + path.string());
}

KanNet KanNet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

bool operator==(const KanNet& a, const KanNet& b) {
  return a.cfg_.widths == b.cfg_.widths && a.cfg_.grid == b.cfg_.grid && a.cfg_.degree == b.cfg_.degree &&
         a.cfg_.range_lo == b.cfg_.range_lo && a.cfg_.range_hi == b.cfg_.range_hi &&
         a.cfg_.multiplicative == b.cfg_.multiplicative && a.mask_ == b.mask_ && a.params_ == b.params_;
}

// ---------------------------------------------------------------------------
// Pruning

KanNet prune(const KanNet& net, double rho, std::span<const double> calibration, std::size_t rows,
             std::vector<std::string>* warnings) {
  if (std::isnan(rho) || rho < 0.0) throw ParamError("pruning threshold must be non-negative");
  KanNet out = net;
  if (rho == 0.0) return out;
  KanNet::Tape tape;
  std::vector<double> y(rows * net.output_dim());
  net.forward(calibration, rows, tape, y);
  const std::size_t L = net.layer_count();
  std::vector<std::vector<double>> norms(L);
  for (std::size_t l = 0; l < L; ++l) norms[l] = net.edge_l1(tape, l);

  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t din = net.layer_in(l), dout = net.layer_out(l);
    for (std::size_t j = 0; j < dout; ++j) {
      for (std::size_t i = 0; i < din; ++i) {
        if (norms[l][j * din + i] < rho) out.set_active(l, j, i, false);
      }
    }
  }
  // Hidden node n of layer l sits between layer l-1 (incoming) and l (outgoing).
  for (std::size_t l = 1; l < L; ++l) {
    const std::size_t width = net.layer_in(l);
    for (std::size_t n = 0; n < width; ++n) {
      double max_in = 0.0, max_out = 0.0;
      const std::size_t pin = net.layer_in(l - 1), nout = net.layer_out(l);
      for (std::size_t i = 0; i < pin; ++i) max_in = std::max(max_in, norms[l - 1][n * pin + i]);
      for (std::size_t j = 0; j < nout; ++j) max_out = std::max(max_out, norms[l][j * width + n]);
      if (max_in < rho && max_out < rho) {
        for (std::size_t i = 0; i < pin; ++i) out.set_active(l - 1, n, i, false);
        for (std::size_t j = 0; j < nout; ++j) out.set_active(l, j, n, false);
      }
    }
  }
  // Edges that can no longer reach the output are masked too: those entering a
  // node with no active outgoing edge, and those entering a product with an
  // empty factor.
  for (std::size_t l = L; l-- > 0;) {
    const std::size_t din = out.layer_in(l), dout = out.layer_out(l);
    const std::size_t half = (din + 1) / 2;
    for (std::size_t j = 0; j < dout; ++j) {
      bool dead = false;
      if (l + 1 < L) {
        dead = true;
        for (std::size_t k = 0; k < out.layer_out(l + 1) && dead; ++k) dead = !out.active(l + 1, k, j);
      }
      if (!dead && out.node_kind(l, j) == NodeKind::Multiplicative && din > 1) {
        bool first = false, second = false;
        for (std::size_t i = 0; i < din; ++i) (i < half ? first : second) |= out.active(l, j, i);
        dead = !first || !second;
      }
      if (dead) {
        for (std::size_t i = 0; i < din; ++i) out.set_active(l, j, i, false);
      }
    }
  }
  if (warnings) {
    for (std::size_t l = 0; l < L; ++l) {
      bool any = false;
      for (std::size_t j = 0; j < out.layer_out(l) && !any; ++j)
        for (std::size_t i = 0; i < out.layer_in(l) && !any; ++i) any = out.active(l, j, i);
      if (!any) warnings->push_back("ShapeWarning: layer " + std::to_string(l) + " has no active edges after pruning");
    }
  }
  return out;
}

}  // namespace graphdyn
