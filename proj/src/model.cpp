#include "graphdyn/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "graphdyn/errors.hpp"
#include "graphdyn/seeds.hpp"
#include "graphdyn/textio.hpp"
#include "json.hpp"

namespace graphdyn {

std::string_view backend_name(Backend b) { return b == Backend::Kan ? "kan" : "mlp"; }

Backend backend_from_name(std::string_view name) {
  if (name == "kan" || name == "KAN") return Backend::Kan;
  if (name == "mlp" || name == "MLP") return Backend::Mlp;
  throw ParamError("unknown backend '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate", "must be >= 0");
  if (batch_size == 0) throw ConfigError("batch_size", "must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("lambda", "must be >= 0");
  if (!(mu1 >= 0.0)) throw ConfigError("mu1", "must be >= 0");
  if (!(mu2 >= 0.0)) throw ConfigError("mu2", "must be >= 0");
  if (backend == Backend::Kan) {
    if (grid < 1) throw ConfigError("grid", "must be positive");
    if (degree < 1 || degree > 3) throw ConfigError("degree", "must lie in [1, 3]");
    if (!(range > 0.0)) throw ConfigError("range", "must be positive");
    for (auto w : h_hidden) {
      if (w == 0) throw ConfigError("h_hidden", "widths must be positive");
    }
    for (auto w : g_hidden) {
      if (w == 0) throw ConfigError("g_hidden", "widths must be positive");
    }
  } else {
    for (auto w : mlp_hidden) {
      if (w == 0) throw ConfigError("mlp_hidden", "widths must be positive");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout", "must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be >= 0");
  }
}

namespace {

std::string widths_text(const std::vector<std::size_t>& w) {
  std::string s;
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (k) s += 'x';
    s += std::to_string(w[k]);
  }
  return s.empty() ? "none" : s;
}

}  // namespace

std::string TrainConfig::summary() const {
  std::ostringstream os;
  os << "backend=" << backend_name(backend) << " lr=" << format_double(learning_rate) << " batch=" << batch_size
     << " epochs=" << epochs << " seed=" << seed;
  if (backend == Backend::Kan) {
    os << " grid=" << grid << " degree=" << degree << " h_hidden=" << widths_text(h_hidden)
       << " g_hidden=" << widths_text(g_hidden) << " lambda=" << format_double(lambda)
       << " mu1=" << format_double(mu1) << " mu2=" << format_double(mu2) << " mult=" << (multiplicative ? 1 : 0);
  } else {
    os << " hidden=" << widths_text(mlp_hidden) << " act=" << activation_name(activation)
       << " dropout=" << format_double(dropout) << " wd=" << format_double(weight_decay);
  }
  return os.str();
}

template <>
GraphOdeModel<KanNet> make_model<KanNet>(const TrainConfig& cfg, std::size_t d) {
  auto widths = [&](std::size_t in, const std::vector<std::size_t>& hidden) {
    std::vector<std::size_t> w{in};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(d);
    return w;
  };
  KanConfig h{widths(d, cfg.h_hidden), cfg.grid, cfg.degree, -cfg.range, cfg.range, cfg.multiplicative};
  KanConfig g{widths(2 * d, cfg.g_hidden), cfg.grid, cfg.degree, -cfg.range, cfg.range, cfg.multiplicative};
  return {KanNet(h, derive_seed(cfg.seed, "H")), KanNet(g, derive_seed(cfg.seed, "G"))};
}

template <>
GraphOdeModel<MlpNet> make_model<MlpNet>(const TrainConfig& cfg, std::size_t d) {
  auto widths = [&](std::size_t in) {
    std::vector<std::size_t> w{in};
    w.insert(w.end(), cfg.mlp_hidden.begin(), cfg.mlp_hidden.end());
    w.push_back(d);
    return w;
  };
  MlpConfig h{widths(d), cfg.activation, cfg.dropout};
  MlpConfig g{widths(2 * d), cfg.activation, cfg.dropout};
  return {MlpNet(h, derive_seed(cfg.seed, "H")), MlpNet(g, derive_seed(cfg.seed, "G"))};
}

EdgeList::EdgeList(const Graph& g) : nodes(g.size()) {
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto nb = g.neighbors(i);
    const auto w = g.weights(i);
    for (std::size_t k = 0; k < nb.size(); ++k) {
      target.push_back(i);
      source.push_back(nb[k]);
      weight.push_back(w[k]);
    }
  }
}

namespace {

template <class Net>
struct Workspace {
  typename Net::Tape th, tg;
  std::vector<double> xh, xg, oh, og, pred, dh, dg;

  // Fills network inputs for `count` stacked states starting at `states`.
  void inputs(const double* states, std::size_t count, std::size_t n, std::size_t d, const EdgeList& edges) {
    const std::size_t E = edges.size();
    xh.assign(states, states + count * n * d);
    xg.resize(count * E * 2 * d);
    for (std::size_t b = 0; b < count; ++b) {
      const double* x = states + b * n * d;
      double* row = xg.data() + b * E * 2 * d;
      for (std::size_t e = 0; e < E; ++e, row += 2 * d) {
        std::copy(x + edges.target[e] * d, x + edges.target[e] * d + d, row);
        std::copy(x + edges.source[e] * d, x + edges.source[e] * d + d, row + d);
      }
    }
  }

  void run(const GraphOdeModel<Net>& m, std::size_t count, std::size_t n, std::size_t d, const EdgeList& edges,
           std::mt19937_64* rng) {
    const std::size_t E = edges.size();
    oh.resize(count * n * d);
    og.resize(count * E * d);
    m.h.forward(xh, count * n, th, oh, rng);
    m.g.forward(xg, count * E, tg, og, rng);
    pred = oh;
    for (std::size_t b = 0; b < count; ++b) {
      double* p = pred.data() + b * n * d;
      const double* o = og.data() + b * E * d;
      for (std::size_t e = 0; e < E; ++e) {
        const double w = edges.weight[e];
        double* pi = p + edges.target[e] * d;
        for (std::size_t f = 0; f < d; ++f) pi[f] += w * o[e * d + f];
      }
    }
  }
};

}  // namespace

template <class Net>
std::vector<double> predict_derivative(const GraphOdeModel<Net>& m, std::span<const double> X, const EdgeList& edges) {
  const std::size_t d = m.features(), n = edges.nodes;
  if (X.size() != n * d) throw ShapeError("state has " + std::to_string(X.size()) + " entries, expected " +
                                          std::to_string(n * d));
  Workspace<Net> ws;
  ws.inputs(X.data(), 1, n, d, edges);
  ws.run(m, 1, n, d, edges, nullptr);
  return ws.pred;
}

template <class Net>
std::vector<double> predict_derivative(const GraphOdeModel<Net>& m, std::span<const double> X, const Graph& graph) {
  return predict_derivative(m, X, EdgeList(graph));
}

TrainingData make_training_data(const Dataset& ds) {
  ds.traj.validate();
  TrainingData data;
  data.graph = ds.graph;
  data.nodes = ds.traj.nodes;
  data.features = ds.traj.features;
  if (ds.graph.size() != data.nodes) throw ShapeError("graph and trajectory node counts differ");
  const DerivativeSeries derivs = ds.derivs ? *ds.derivs : stencil_derivatives(ds.traj);
  if (derivs.length() + 4 != ds.traj.length() || derivs.stride() != ds.traj.stride()) {
    throw ShapeError("derivative series is not aligned with the trajectory");
  }
  const std::size_t m = data.stride();
  data.states.assign(ds.traj.states.begin() + 2 * m, ds.traj.states.end() - 2 * m);
  data.targets = derivs.derivs;
  for (std::size_t t = 0; t < derivs.length(); ++t) {
    const std::size_t src = t + 2;
    if (src >= ds.split.train.begin && src < ds.split.train.end) data.train.push_back(t);
    else if (src >= ds.split.val.begin && src < ds.split.val.end) data.val.push_back(t);
  }
  if (data.train.empty()) throw EmptySample("training range holds no derivative samples");
  return data;
}

template <class Net>
LossParts model_loss(const GraphOdeModel<Net>& m, const TrainingData& data, std::span<const std::size_t> samples,
                     const Penalty& pen, std::span<double> grad, std::mt19937_64* rng) {
  if (samples.empty()) throw EmptySample("loss over an empty sample set");
  const std::size_t n = data.nodes, d = data.features, B = samples.size(), stride = data.stride();
  if (m.features() != d) throw ShapeError("model feature count differs from the data");
  const EdgeList edges(data.graph);
  const std::size_t E = edges.size();
  Workspace<Net> ws;
  std::vector<double> stacked(B * stride);
  for (std::size_t b = 0; b < B; ++b) {
    if (samples[b] >= data.samples()) throw IndexError("sample index out of range");
    std::copy_n(data.states.begin() + samples[b] * stride, stride, stacked.begin() + b * stride);
  }
  ws.inputs(stacked.data(), B, n, d, edges);
  ws.run(m, B, n, d, edges, rng);

  LossParts parts;
  const double inv = 1.0 / static_cast<double>(B * stride);
  std::vector<double> dpred(grad.empty() ? 0 : B * stride);
  for (std::size_t b = 0; b < B; ++b) {
    const double* y = data.targets.data() + samples[b] * stride;
    const double* p = ws.pred.data() + b * stride;
    for (std::size_t k = 0; k < stride; ++k) {
      const double r = p[k] - y[k];
      parts.mae += std::abs(r);
      if (!grad.empty()) dpred[b * stride + k] = r > 0 ? inv : (r < 0 ? -inv : 0.0);
    }
  }
  parts.mae *= inv;
  parts.penalty = m.h.penalty(ws.th, pen) + m.g.penalty(ws.tg, pen);
  if (grad.empty()) return parts;

  const std::size_t ph = m.h.parameter_count();
  if (grad.size() != m.parameter_count()) throw ShapeError("gradient buffer has wrong size");
  ws.dg.assign(B * E * d, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t e = 0; e < E; ++e) {
      const double* g = dpred.data() + b * stride + edges.target[e] * d;
      for (std::size_t f = 0; f < d; ++f) ws.dg[(b * E + e) * d + f] = edges.weight[e] * g[f];
    }
  }
  m.h.backward(ws.th, dpred, grad.subspan(0, ph));
  m.g.backward(ws.tg, ws.dg, grad.subspan(ph));
  return parts;
}

template <class Net>
double model_mae(const GraphOdeModel<Net>& m, const TrainingData& data, std::span<const std::size_t> samples) {
  if (samples.empty()) throw EmptySample("MAE over an empty sample set");
  constexpr std::size_t chunk = 64;
  double total = 0.0;
  for (std::size_t s = 0; s < samples.size(); s += chunk) {
    const auto part = samples.subspan(s, std::min(chunk, samples.size() - s));
    total += model_loss(m, data, part, Penalty{}).mae * static_cast<double>(part.size());
  }
  return total / static_cast<double>(samples.size());
}

namespace {

template <class Net>
void copy_params(const GraphOdeModel<Net>& m, std::vector<double>& out) {
  out.assign(m.h.params().begin(), m.h.params().end());
  out.insert(out.end(), m.g.params().begin(), m.g.params().end());
}

template <class Net>
void restore_params(GraphOdeModel<Net>& m, const std::vector<double>& in) {
  const std::size_t ph = m.h.parameter_count();
  std::copy(in.begin(), in.begin() + ph, m.h.params().begin());
  std::copy(in.begin() + ph, in.end(), m.g.params().begin());
}

}  // namespace

template <class Net>
TrainResult<Net> train(GraphOdeModel<Net> m, const TrainingData& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.train.empty()) throw EmptySample("no training samples");
  const std::size_t P = m.parameter_count(), ph = m.h.parameter_count();
  const Penalty pen = cfg.penalty();
  std::vector<double> grad(P), m1(P, 0.0), m2(P, 0.0), best;
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double pow1 = 1.0, pow2 = 1.0;
  std::mt19937_64 rng(derive_seed(cfg.seed, "batches"));
  std::vector<std::size_t> order = data.train;
  const auto& monitor = data.val.empty() ? data.train : data.val;

  TrainResult<Net> res{m, {}, 0, model_mae(m, data, monitor)};
  if (!std::isfinite(res.best_val_mae)) throw NonFiniteLoss("initial validation error is not finite", 0);
  copy_params(m, best);
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0, mae_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> batch(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      std::fill(grad.begin(), grad.end(), 0.0);
      const LossParts parts = model_loss(m, data, batch, pen, grad, &rng);
      if (!std::isfinite(parts.total())) throw NonFiniteLoss("training loss is not finite", epoch);
      loss_sum += parts.total();
      mae_sum += parts.mae;
      ++batches;
      pow1 *= beta1;
      pow2 *= beta2;
      const double lr_t = cfg.learning_rate * std::sqrt(1.0 - pow2) / (1.0 - pow1);
      auto step = [&](std::span<double> params, std::size_t offset) {
        for (std::size_t k = 0; k < params.size(); ++k) {
          const double g = grad[offset + k];
          if (!std::isfinite(g)) throw NonFiniteLoss("gradient is not finite", epoch);
          double& a = m1[offset + k];
          double& b = m2[offset + k];
          a = beta1 * a + (1.0 - beta1) * g;
          b = beta2 * b + (1.0 - beta2) * g * g;
          params[k] -= lr_t * a / (std::sqrt(b) + eps);
        }
      };
      step(m.h.params(), 0);
      step(m.g.params(), ph);
    }
    const double val = model_mae(m, data, monitor);
    if (!std::isfinite(val)) throw NonFiniteLoss("validation error is not finite", epoch);
    res.history.push_back({epoch, loss_sum / batches, mae_sum / batches, val});
    if (val < res.best_val_mae) {
      res.best_val_mae = val;
      res.best_epoch = epoch;
      copy_params(m, best);
      since_best = 0;
    } else if (cfg.patience && ++since_best >= cfg.patience) {
      break;
    }
  }
  restore_params(m, best);
  res.model = std::move(m);
  return res;
}

template <class Net>
TrainResult<Net> train(const TrainingData& data, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.backend != backend_of<Net>()) throw ConfigError("backend", "does not match the requested network type");
  return train(make_model<Net>(cfg, data.features), data, cfg);
}

template <class Net>
GridResult<Net> grid_search(const std::vector<TrainConfig>& grid, const TrainingData& data, std::size_t max_trials,
                            std::uint64_t sample_seed) {
  if (grid.empty()) throw ConfigError("grid", "is empty");
  std::vector<std::size_t> picks(grid.size());
  for (std::size_t k = 0; k < picks.size(); ++k) picks[k] = k;
  if (max_trials && max_trials < grid.size()) {
    std::mt19937_64 rng(sample_seed);
    std::shuffle(picks.begin(), picks.end(), rng);
    picks.resize(max_trials);
    std::sort(picks.begin(), picks.end());
  }
  GridResult<Net> out;
  bool found = false;
  for (std::size_t k : picks) {
    GridRow row;
    row.index = k;
    row.config = grid[k];
    try {
      auto r = train<Net>(data, grid[k]);
      row.val_mae = r.best_val_mae;
      row.best_epoch = r.best_epoch;
      row.parameter_count = r.model.parameter_count();
      if (!found || r.best_val_mae < out.result.best_val_mae) {
        out.best = k;
        out.result = std::move(r);
        found = true;
      }
    } catch (const NonFiniteLoss& e) {
      row.val_mae = INFINITY;
      row.status = "nonfinite";
    }
    out.rows.push_back(std::move(row));
  }
  if (!found) throw FitFailure("every grid configuration produced a non-finite loss");
  return out;
}

void write_history_csv(const std::filesystem::path& path, std::span<const HistoryRow> rows,
                       const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "config_hash,epoch,train_loss,train_mae,val_mae\n";
  for (const auto& r : rows) {
    out << config_hash << ',' << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.train_mae)
        << ',' << format_double(r.val_mae) << '\n';
  }
}

void write_grid_csv(const std::filesystem::path& path, std::span<const GridRow> rows, const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "config_hash,index,config,val_mae,best_epoch,parameter_count,status\n";
  for (const auto& r : rows) {
    out << config_hash << ',' << r.index << ',' << csv_field(r.config.summary()) << ',' << format_double(r.val_mae)
        << ',' << r.best_epoch << ',' << r.parameter_count << ',' << r.status << '\n';
  }
}

template <class Net>
std::string model_to_json(const GraphOdeModel<Net>& m) {
  nlohmann::json j;
  j["format"] = "graphdyn-model";
  j["version"] = 1;
  j["backend"] = std::string(backend_name(backend_of<Net>()));
  j["features"] = m.features();
  j["H"] = nlohmann::json::parse(m.h.to_json());
  j["G"] = nlohmann::json::parse(m.g.to_json());
  return j.dump();
}

template <class Net>
GraphOdeModel<Net> model_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "graphdyn-model") throw FormatError("not a model checkpoint", 0);
    if (backend_from_name(j.at("backend").get<std::string>()) != backend_of<Net>()) {
      throw FormatError("model checkpoint holds a different backend", 0);
    }
    GraphOdeModel<Net> m{Net::from_json(j.at("H").dump()), Net::from_json(j.at("G").dump())};
    if (m.g.input_dim() != 2 * m.features() || m.h.output_dim() != m.features() ||
        m.g.output_dim() != m.features()) {
      throw FormatError("model checkpoint has inconsistent network shapes", 0);
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model checkpoint: ") + e.what(), 0);
  }
}

Backend checkpoint_backend(const std::string& text) {
  try {
    return backend_from_name(nlohmann::json::parse(text).at("backend").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model checkpoint: ") + e.what(), 0);
  } catch (const ParamError& e) {
    throw FormatError(std::string("model checkpoint: ") + e.what(), 0);
  }
}

#define GRAPHDYN_INSTANTIATE(Net)                                                                                 \
  template struct GraphOdeModel<Net>;                                                                             \
  template std::vector<double> predict_derivative(const GraphOdeModel<Net>&, std::span<const double>,            \
                                                  const Graph&);                                                  \
  template std::vector<double> predict_derivative(const GraphOdeModel<Net>&, std::span<const double>,            \
                                                  const EdgeList&);                                               \
  template LossParts model_loss(const GraphOdeModel<Net>&, const TrainingData&, std::span<const std::size_t>,    \
                                const Penalty&, std::span<double>, std::mt19937_64*);                             \
  template double model_mae(const GraphOdeModel<Net>&, const TrainingData&, std::span<const std::size_t>);       \
  template TrainResult<Net> train(const TrainingData&, const TrainConfig&);                                      \
  template TrainResult<Net> train(GraphOdeModel<Net>, const TrainingData&, const TrainConfig&);                  \
  template GridResult<Net> grid_search(const std::vector<TrainConfig>&, const TrainingData&, std::size_t,        \
                                       std::uint64_t);                                                            \
  template std::string model_to_json(const GraphOdeModel<Net>&);                                                 \
  template GraphOdeModel<Net> model_from_json(const std::string&);

GRAPHDYN_INSTANTIATE(KanNet)
GRAPHDYN_INSTANTIATE(MlpNet)

}  // namespace graphdyn
