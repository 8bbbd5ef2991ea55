#include "graphdyn/mlp.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "graphdyn/errors.hpp"
#include "json.hpp"

namespace graphdyn {

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Softplus: return "softplus";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

Activation activation_from_name(std::string_view name) {
  if (name == "relu") return Activation::Relu;
  if (name == "softplus") return Activation::Softplus;
  if (name == "tanh") return Activation::Tanh;
  throw ParamError("unknown activation '" + std::string(name) + "'");
}

void MlpConfig::validate() const {
  if (widths.size() < 2) throw ParamError("an MLP needs at least one layer");
  for (auto w : widths) {
    if (w == 0) throw ParamError("MLP layer widths must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ParamError("dropout must lie in [0, 1)");
}

namespace {

inline double act(Activation a, double z) {
  switch (a) {
    case Activation::Relu: return z > 0 ? z : 0.0;
    case Activation::Softplus: return z > 30 ? z : std::log1p(std::exp(z));
    case Activation::Tanh: return std::tanh(z);
  }
  return z;
}

inline double act_grad(Activation a, double z) {
  switch (a) {
    case Activation::Relu: return z > 0 ? 1.0 : 0.0;
    case Activation::Softplus: return 1.0 / (1.0 + std::exp(-z));
    case Activation::Tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

}  // namespace

MlpNet::MlpNet(const MlpConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  build();
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const std::size_t din = cfg_.widths[l], dout = cfg_.widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(din));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t k = offset_[l]; k < offset_[l] + dout * din + dout; ++k) params_[k] = u(rng);
  }
}

void MlpNet::build() {
  offset_.assign(1, 0);
  for (std::size_t l = 0; l < layer_count(); ++l) {
    offset_.push_back(offset_.back() + cfg_.widths[l + 1] * (cfg_.widths[l] + 1));
  }
  params_.assign(offset_.back(), 0.0);
}

void MlpNet::forward(std::span<const double> X, std::size_t rows, Tape& tape, std::span<double> out,
                     std::mt19937_64* train_rng) const {
  const std::size_t L = layer_count();
  if (X.size() != rows * input_dim()) throw ShapeError("MLP input has wrong size");
  if (out.size() != rows * output_dim()) throw ShapeError("MLP output buffer has wrong size");
  tape.rows = rows;
  tape.acts.resize(L + 1);
  tape.pre.resize(L);
  tape.drop.assign(L, {});
  tape.weight_decay = 0.0;
  tape.acts[0].assign(X.begin(), X.end());
  const bool use_dropout = train_rng && cfg_.dropout > 0.0;
  std::bernoulli_distribution keep(1.0 - cfg_.dropout);
  const double scale = use_dropout ? 1.0 / (1.0 - cfg_.dropout) : 1.0;

  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t din = cfg_.widths[l], dout = cfg_.widths[l + 1];
    const double* W = params_.data() + offset_[l];
    const double* b = W + dout * din;
    const std::vector<double>& in = tape.acts[l];
    std::vector<double>& z = tape.pre[l];
    std::vector<double>& a = tape.acts[l + 1];
    z.assign(rows * dout, 0.0);
    a.assign(rows * dout, 0.0);
    const bool hidden = l + 1 < L;
    if (hidden && use_dropout) tape.drop[l].assign(rows * dout, 0.0);
    for (std::size_t s = 0; s < rows; ++s) {
      const double* x = in.data() + s * din;
      for (std::size_t j = 0; j < dout; ++j) {
        double acc = b[j];
        const double* w = W + j * din;
        for (std::size_t i = 0; i < din; ++i) acc += w[i] * x[i];
        const std::size_t k = s * dout + j;
        z[k] = acc;
        if (!hidden) {
          a[k] = acc;
        } else {
          double v = act(cfg_.activation, acc);
          if (use_dropout) {
            const double m = keep(*train_rng) ? scale : 0.0;
            tape.drop[l][k] = m;
            v *= m;
          }
          a[k] = v;
        }
      }
    }
  }
  std::copy(tape.acts[L].begin(), tape.acts[L].end(), out.begin());
}

std::vector<double> MlpNet::forward(std::span<const double> x) const {
  Tape tape;
  std::vector<double> out(output_dim());
  forward(x, 1, tape, out);
  return out;
}

void MlpNet::backward(const Tape& tape, std::span<const double> dout_span, std::span<double> grad,
                      std::span<double> dX) const {
  const std::size_t L = layer_count(), rows = tape.rows;
  if (grad.size() != params_.size()) throw ShapeError("MLP gradient buffer has wrong size");
  if (dout_span.size() != rows * output_dim()) throw ShapeError("MLP output gradient has wrong size");
  std::vector<double> dz(dout_span.begin(), dout_span.end()), dprev;
  for (std::size_t l = L; l-- > 0;) {
    const std::size_t din = cfg_.widths[l], dout = cfg_.widths[l + 1];
    const double* W = params_.data() + offset_[l];
    double* gW = grad.data() + offset_[l];
    double* gb = gW + dout * din;
    const std::vector<double>& in = tape.acts[l];
    const bool need_dx = l > 0 || !dX.empty();
    dprev.assign(need_dx ? rows * din : 0, 0.0);
    for (std::size_t s = 0; s < rows; ++s) {
      const double* x = in.data() + s * din;
      for (std::size_t j = 0; j < dout; ++j) {
        const double g = dz[s * dout + j];
        if (g == 0.0) continue;
        gb[j] += g;
        double* gw = gW + j * din;
        for (std::size_t i = 0; i < din; ++i) gw[i] += g * x[i];
        if (need_dx) {
          const double* w = W + j * din;
          for (std::size_t i = 0; i < din; ++i) dprev[s * din + i] += g * w[i];
        }
      }
    }
    if (l > 0) {
      // Through the previous layer's activation and dropout.
      const std::vector<double>& zprev = tape.pre[l - 1];
      const std::vector<double>& drop = tape.drop[l - 1];
      for (std::size_t k = 0; k < dprev.size(); ++k) {
        double d = dprev[k] * act_grad(cfg_.activation, zprev[k]);
        if (!drop.empty()) d *= drop[k];
        dprev[k] = d;
      }
    }
    dz.swap(dprev);
  }
  if (tape.weight_decay != 0.0) {
    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t n = cfg_.widths[l + 1] * cfg_.widths[l];
      for (std::size_t k = offset_[l]; k < offset_[l] + n; ++k) grad[k] += 2.0 * tape.weight_decay * params_[k];
    }
  }
  if (!dX.empty()) {
    if (dX.size() != dz.size()) throw ShapeError("MLP input gradient buffer has wrong size");
    std::copy(dz.begin(), dz.end(), dX.begin());
  }
}

double MlpNet::penalty(Tape& tape, const Penalty& p) const {
  tape.weight_decay = p.weight_decay;
  if (p.weight_decay == 0.0) return 0.0;
  double s = 0.0;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const std::size_t n = cfg_.widths[l + 1] * cfg_.widths[l];
    for (std::size_t k = offset_[l]; k < offset_[l] + n; ++k) s += params_[k] * params_[k];
  }
  return p.weight_decay * s;
}

std::string MlpNet::to_json() const {
  nlohmann::json j;
  j["format"] = "graphdyn-mlp";
  j["version"] = 1;
  j["widths"] = cfg_.widths;
  j["activation"] = std::string(activation_name(cfg_.activation));
  j["dropout"] = cfg_.dropout;
  j["params"] = params_;
  return j.dump();
}

MlpNet MlpNet::from_json(const std::string& text) {
  MlpNet net;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "graphdyn-mlp") throw FormatError("not an MLP checkpoint", 0);
    net.cfg_.widths = j.at("widths").get<std::vector<std::size_t>>();
    net.cfg_.activation = activation_from_name(j.at("activation").get<std::string>());
    net.cfg_.dropout = j.at("dropout").get<double>();
    net.cfg_.validate();
    net.build();
    auto params = j.at("params").get<std::vector<double>>();
    if (params.size() != net.params_.size()) throw FormatError("MLP checkpoint size does not match its shape", 0);
    net.params_ = std::move(params);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("MLP checkpoint: ") + e.what(), 0);
  } catch (const ParamError& e) {
    throw FormatError(std::string("MLP checkpoint: ") + e.what(), 0);
  }
  return net;
}

void MlpNet::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json() << '\n';
}

MlpNet MlpNet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace graphdyn
