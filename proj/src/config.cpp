#include "graphdyn/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "graphdyn/errors.hpp"
#include "graphdyn/seeds.hpp"
#include "json.hpp"

namespace graphdyn {

using json = nlohmann::ordered_json;

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

std::string index_path(const std::string& path, std::size_t k) { return path + "[" + std::to_string(k) + "]"; }

// Typed access to one JSON object that remembers which keys were read, so
// unknown keys can be reported with their full path.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "must be an object");
  }

  bool has(const std::string& key) {
    used_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }
  const json& at(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }
  std::string path(const std::string& key) const { return join(path_, key); }

  double number(const std::string& key, double def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(path(key), "must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(path(key), "must be finite");
    return d;
  }
  std::optional<double> optional_number(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return number(key, 0.0);
  }
  std::size_t count(const std::string& key, std::size_t def) { return to_count(has(key) ? &j_.at(key) : nullptr, path(key), def); }
  std::uint64_t seed(const std::string& key, std::uint64_t def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      throw ConfigError(path(key), "must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }
  bool boolean(const std::string& key, bool def) {
    if (!has(key)) return def;
    if (!j_.at(key).is_boolean()) throw ConfigError(path(key), "must be true or false");
    return j_.at(key).get<bool>();
  }
  std::string string(const std::string& key, const std::string& def) {
    if (!has(key)) return def;
    if (!j_.at(key).is_string()) throw ConfigError(path(key), "must be a string");
    return j_.at(key).get<std::string>();
  }
  std::vector<std::size_t> counts(const std::string& key, const std::vector<std::size_t>& def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(path(key), "must be a list");
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < v.size(); ++k) out.push_back(to_count(&v[k], index_path(path(key), k), 0));
    return out;
  }
  std::vector<double> numbers(const std::string& key, const std::vector<double>& def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(path(key), "must be a list");
    std::vector<double> out;
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (!v[k].is_number()) throw ConfigError(index_path(path(key), k), "must be a number");
      out.push_back(v[k].get<double>());
    }
    return out;
  }
  std::vector<std::string> strings(const std::string& key, const std::vector<std::string>& def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(path(key), "must be a list");
    std::vector<std::string> out;
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (!v[k].is_string()) throw ConfigError(index_path(path(key), k), "must be a string");
      out.push_back(v[k].get<std::string>());
    }
    return out;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError(path(it.key()), "unknown field");
    }
  }

 private:
  static std::size_t to_count(const json* v, const std::string& path, std::size_t def) {
    if (!v) return def;
    if (v->is_number_unsigned()) return v->get<std::size_t>();
    if (v->is_number_integer() && v->get<long long>() >= 0) return static_cast<std::size_t>(v->get<long long>());
    if (v->is_number_float()) {
      const double d = v->get<double>();
      if (d >= 0 && d == std::floor(d)) return static_cast<std::size_t>(d);
    }
    throw ConfigError(path, "must be a non-negative integer");
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <class F>
auto rethrow_at(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(join(path, e.field()), e.reason());
  } catch (const ParamError& e) {
    throw ConfigError(path, e.what());
  }
}

GraphSpec read_graph(const json& j, const std::string& path, const std::string& name, GraphSpec def) {
  Reader r(j, path);
  GraphSpec g = std::move(def);
  g.name = r.string("name", name);
  g.type = r.string("type", g.type);
  g.n = r.count("n", g.n);
  g.m = r.count("m", g.m);
  g.k = r.count("k", g.k);
  g.p = r.number("p", g.p);
  if (r.has("seed")) g.seed = r.seed("seed", 0);
  r.finish();
  if (g.type != "ba" && g.type != "ws" && g.type != "er") throw ConfigError(join(path, "type"), "must be ba, ws or er");
  if (g.n == 0) throw ConfigError(join(path, "n"), "must be positive");
  if (g.type == "ba" && (g.m == 0 || g.m >= g.n)) throw ConfigError(join(path, "m"), "must lie in [1, n)");
  if (g.type == "ws" && (g.k == 0 || g.k % 2 || g.k >= g.n)) {
    throw ConfigError(join(path, "k"), "must be even and in [2, n)");
  }
  if (g.type != "ba" && !(g.p >= 0.0 && g.p <= 1.0)) throw ConfigError(join(path, "p"), "must lie in [0, 1]");
  if (g.name.empty()) throw ConfigError(join(path, "name"), "must not be empty");
  return g;
}

json graph_json(const GraphSpec& g) {
  json j;
  j["name"] = g.name;
  j["type"] = g.type;
  j["n"] = g.n;
  if (g.type == "ba") j["m"] = g.m;
  if (g.type == "ws") j["k"] = g.k;
  if (g.type != "ba") j["p"] = g.p;
  if (g.seed) j["seed"] = *g.seed;
  return j;
}

// Every TrainConfig field a run file may set, applied onto `c`.
void read_train_fields(Reader& r, TrainConfig& c) {
  c.learning_rate = r.number("learning_rate", c.learning_rate);
  c.batch_size = r.count("batch_size", c.batch_size);
  c.epochs = r.count("epochs", c.epochs);
  c.patience = r.count("patience", c.patience);
  c.lambda = r.number("lambda", c.lambda);
  c.mu1 = r.number("mu1", c.mu1);
  c.mu2 = r.number("mu2", c.mu2);
  c.grid = static_cast<int>(r.count("grid", static_cast<std::size_t>(c.grid)));
  c.degree = static_cast<int>(r.count("degree", static_cast<std::size_t>(c.degree)));
  c.range = r.number("range", c.range);
  c.h_hidden = r.counts("h_hidden", c.h_hidden);
  c.g_hidden = r.counts("g_hidden", c.g_hidden);
  c.multiplicative = r.boolean("multiplicative", c.multiplicative);
  c.mlp_hidden = r.counts("mlp_hidden", c.mlp_hidden);
  if (r.has("activation")) {
    const std::string a = r.string("activation", "");
    try {
      c.activation = activation_from_name(a);
    } catch (const Error&) {
      throw ConfigError(r.path("activation"), "unknown activation '" + a + "'");
    }
  }
  c.dropout = r.number("dropout", c.dropout);
  c.weight_decay = r.number("weight_decay", c.weight_decay);
}

json train_json(const TrainConfig& c) {
  json j;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["patience"] = c.patience;
  j["lambda"] = c.lambda;
  j["mu1"] = c.mu1;
  j["mu2"] = c.mu2;
  if (c.backend == Backend::Kan) {
    j["grid"] = c.grid;
    j["degree"] = c.degree;
    j["range"] = c.range;
    j["h_hidden"] = c.h_hidden;
    j["g_hidden"] = c.g_hidden;
    j["multiplicative"] = c.multiplicative;
  } else {
    j["mlp_hidden"] = c.mlp_hidden;
    j["activation"] = std::string(activation_name(c.activation));
    j["dropout"] = c.dropout;
    j["weight_decay"] = c.weight_decay;
  }
  return j;
}

// Cartesian product of `sweep` (keys in file order, last key varying fastest)
// applied on top of `base`.
std::vector<TrainConfig> expand_sweep(const TrainConfig& base, const json& sweep, const std::string& path) {
  if (!sweep.is_object()) throw ConfigError(path, "must be an object of lists");
  std::vector<json> rows{json::object()};
  for (auto it = sweep.begin(); it != sweep.end(); ++it) {
    if (!it.value().is_array() || it.value().empty()) {
      throw ConfigError(join(path, it.key()), "must be a non-empty list");
    }
    std::vector<json> next;
    for (const json& row : rows) {
      for (const json& v : it.value()) {
        json r = row;
        r[it.key()] = v;
        next.push_back(std::move(r));
      }
    }
    rows = std::move(next);
  }
  std::vector<TrainConfig> out;
  for (const json& row : rows) {
    TrainConfig c = base;
    Reader r(row, path);
    read_train_fields(r, c);
    r.finish();
    out.push_back(c);
  }
  return out;
}

std::vector<SwConfig> default_sw_grid() {
  std::vector<SwConfig> grid;
  for (double rho : {0.01, 0.05, 0.1}) {
    for (double eps : {0.001, 0.01, 0.1}) {
      for (SelectionMode mode : {SelectionMode::Score, SelectionMode::LogLoss}) {
        SwConfig c;
        c.rho = rho;
        c.epsilon = eps;
        c.mode = mode;
        grid.push_back(c);
      }
    }
  }
  return grid;
}

TrainConfig default_train_config() {
  TrainConfig c;
  c.backend = Backend::Kan;
  c.learning_rate = 0.01;
  c.batch_size = 32;
  c.epochs = 1000;
  c.lambda = 0.01;
  c.grid = 10;
  c.degree = 3;
  c.range = 10.0;
  c.h_hidden = {};
  c.g_hidden = {2};
  return c;
}

}  // namespace

std::uint64_t GraphSpec::resolved_seed(std::uint64_t run_seed) const {
  return seed ? *seed : derive_seed(run_seed, "graph." + name);
}

Graph GraphSpec::build(std::uint64_t run_seed) const {
  const std::uint64_t s = resolved_seed(run_seed);
  if (type == "ba") return gen_ba(n, m, s);
  if (type == "ws") return gen_ws(n, k, p, s);
  if (type == "er") return gen_er(n, p, s);
  throw ConfigError("graphs." + name + ".type", "must be ba, ws or er");
}

std::string GraphSpec::describe() const {
  std::ostringstream os;
  os << (type == "ba" ? "BA" : type == "ws" ? "WS" : "ER") << '(' << n;
  if (type == "ba") os << ',' << m;
  if (type == "ws") os << ',' << k << ',' << p;
  if (type == "er") os << ',' << p;
  os << ')';
  return os.str();
}

double DataSettings::horizon_start(DynKind) const { return t0.value_or(0.0); }

double DataSettings::horizon_end(DynKind k) const {
  if (t1) return *t1;
  switch (k) {
    case DynKind::Epid: return 2.0;
    case DynKind::Pop: return 10.0;
    default: return 1.0;
  }
}

double DataSettings::x0_low(DynKind k) const {
  if (x0_lo) return *x0_lo;
  return k == DynKind::Pop ? -1.0 : 0.0;
}

double DataSettings::x0_high(DynKind k) const {
  if (x0_hi) return *x0_hi;
  return k == DynKind::Kur ? 2.0 * std::numbers::pi : 1.0;
}

RunConfig::RunConfig() : train_grid{default_train_config()}, sw_grid(default_sw_grid()) {}

RunConfig RunConfig::from_json(const std::string& text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  if (root.is_object() && root.contains("config_hash") && root.contains("config")) root = root.at("config");

  RunConfig cfg;
  Reader r(root, "");
  cfg.experiment = r.string("experiment", cfg.experiment);
  cfg.seed = r.seed("seed", cfg.seed);
  cfg.output = r.string("output", "runs/" + cfg.experiment);
  if (cfg.output.is_relative() && !base_dir.empty()) cfg.output = base_dir / cfg.output;

  if (r.has("dynamics")) {
    Reader d(r.at("dynamics"), "dynamics");
    const std::string kind = d.string("kind", "kur");
    DynKind k;
    try {
      k = dyn_from_name(kind);
    } catch (const Error&) {
      throw ConfigError("dynamics.kind", "unknown system '" + kind + "'");
    }
    cfg.dynamics = DynSpec::defaults(k);
    if (d.has("params")) {
      Reader p(d.at("params"), "dynamics.params");
      const auto& names = DynSpec::param_names(k);
      for (std::size_t i = 0; i < names.size(); ++i) cfg.dynamics.params[i] = p.number(names[i], cfg.dynamics.params[i]);
      p.finish();
    }
    d.finish();
  }

  if (r.has("graphs")) {
    Reader g(r.at("graphs"), "graphs");
    if (g.has("train")) cfg.train_graph = read_graph(g.at("train"), "graphs.train", "train", cfg.train_graph);
    if (g.has("val")) cfg.val_graph = read_graph(g.at("val"), "graphs.val", "val", cfg.val_graph);
    if (g.has("test")) {
      const json& t = g.at("test");
      if (!t.is_array() || t.empty()) throw ConfigError("graphs.test", "must be a non-empty list");
      cfg.test_graphs.clear();
      for (std::size_t k = 0; k < t.size(); ++k) {
        cfg.test_graphs.push_back(
            read_graph(t[k], index_path("graphs.test", k), "test_" + std::to_string(k), GraphSpec{}));
      }
    }
    g.finish();
  }

  if (r.has("data")) {
    Reader d(r.at("data"), "data");
    DataSettings& s = cfg.data;
    s.samples = d.count("samples", s.samples);
    s.t0 = d.optional_number("t0");
    s.t1 = d.optional_number("t1");
    s.x0_lo = d.optional_number("x0_lo");
    s.x0_hi = d.optional_number("x0_hi");
    s.train_fraction = d.number("train_fraction", s.train_fraction);
    s.val_fraction = d.number("val_fraction", s.val_fraction);
    s.snr_db = d.optional_number("snr_db");
    s.abs_tol = d.number("abs_tol", s.abs_tol);
    s.rel_tol = d.number("rel_tol", s.rel_tol);
    s.max_redraws = d.count("max_redraws", s.max_redraws);
    d.finish();
  }

  if (r.has("train")) {
    Reader t(r.at("train"), "train");
    const std::string backend = t.string("backend", "kan");
    try {
      cfg.backend = backend_from_name(backend);
    } catch (const Error&) {
      throw ConfigError("train.backend", "unknown backend '" + backend + "'");
    }
    cfg.max_trials = t.count("max_trials", 0);
    TrainConfig base = cfg.backend == Backend::Kan ? default_train_config() : TrainConfig{};
    base.backend = cfg.backend;
    if (cfg.backend == Backend::Mlp) base.epochs = default_train_config().epochs;
    if (t.has("base")) {
      Reader b(t.at("base"), "train.base");
      read_train_fields(b, base);
      b.finish();
    }
    const bool has_grid = t.has("grid"), has_sweep = t.has("sweep");
    if (has_grid && has_sweep) throw ConfigError("train.grid", "cannot be combined with train.sweep");
    if (has_grid) {
      const json& g = t.at("grid");
      if (!g.is_array() || g.empty()) throw ConfigError("train.grid", "must be a non-empty list");
      cfg.train_grid.clear();
      for (std::size_t k = 0; k < g.size(); ++k) {
        TrainConfig c = base;
        Reader e(g[k], index_path("train.grid", k));
        read_train_fields(e, c);
        e.finish();
        cfg.train_grid.push_back(c);
      }
    } else if (has_sweep) {
      cfg.train_grid = expand_sweep(base, t.at("sweep"), "train.sweep");
    } else {
      cfg.train_grid = {base};
    }
    t.finish();
  }

  if (r.has("distill")) {
    Reader d(r.at("distill"), "distill");
    SwConfig base;
    base.gammas = d.numbers("gammas", base.gammas);
    base.library = d.strings("library", base.library);
    base.max_samples = d.count("max_samples", base.max_samples);
    base.degraded_r2 = d.number("degraded_r2", base.degraded_r2);
    const std::vector<double> rhos = d.numbers("rho", {0.01, 0.05, 0.1});
    const std::vector<double> epss = d.numbers("epsilon", {0.001, 0.01, 0.1});
    const std::vector<std::string> modes = d.strings("mode", {"score", "logloss"});
    d.finish();
    if (rhos.empty()) throw ConfigError("distill.rho", "must not be empty");
    if (epss.empty()) throw ConfigError("distill.epsilon", "must not be empty");
    if (modes.empty()) throw ConfigError("distill.mode", "must not be empty");
    cfg.sw_grid.clear();
    for (double rho : rhos) {
      for (double eps : epss) {
        for (std::size_t k = 0; k < modes.size(); ++k) {
          SwConfig c = base;
          c.rho = rho;
          c.epsilon = eps;
          try {
            c.mode = selection_mode_from_name(modes[k]);
          } catch (const Error&) {
            throw ConfigError(index_path("distill.mode", k), "must be score or logloss");
          }
          cfg.sw_grid.push_back(c);
        }
      }
    }
  }

  if (r.has("evaluate")) {
    Reader e(r.at("evaluate"), "evaluate");
    const std::string norm = e.string("mae_norm", "printed");
    if (norm == "printed") {
      cfg.eval.norm = MaeNorm::Printed;
    } else if (norm == "per_sample") {
      cfg.eval.norm = MaeNorm::PerSample;
    } else {
      throw ConfigError("evaluate.mae_norm", "must be printed or per_sample");
    }
    cfg.eval.abs_tol = e.number("abs_tol", cfg.eval.abs_tol);
    cfg.eval.rel_tol = e.number("rel_tol", cfg.eval.rel_tol);
    e.finish();
  }

  if (r.has("finetune")) {
    Reader f(r.at("finetune"), "finetune");
    FinetuneSettings& s = cfg.finetune;
    auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return !path.empty() && path.is_relative() && !base_dir.empty() ? base_dir / path : path;
    };
    if (f.has("csv")) s.csv = resolve(f.string("csv", ""));
    if (f.has("edges")) s.edges = resolve(f.string("edges", ""));
    s.dt = f.number("dt", s.dt);
    s.train_fraction = f.number("train_fraction", s.train_fraction);
    s.val_fraction = f.number("val_fraction", s.val_fraction);
    s.nodes = f.counts("nodes", s.nodes);
    if (f.has("self_term")) s.self_term = f.string("self_term", "");
    if (f.has("interaction_term")) s.interaction_term = f.string("interaction_term", "");
    s.optimizer.learning_rate = f.number("learning_rate", s.optimizer.learning_rate);
    s.optimizer.max_iterations = f.count("max_iterations", s.optimizer.max_iterations);
    f.finish();
  }
  r.finish();
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str(), path.parent_path());
}

namespace {

json config_json(const RunConfig& c, bool with_output) {
  json j;
  j["experiment"] = c.experiment;
  j["seed"] = c.seed;
  if (with_output) j["output"] = c.output.generic_string();
  json params;
  const auto& names = DynSpec::param_names(c.dynamics.kind);
  for (std::size_t i = 0; i < names.size(); ++i) params[names[i]] = c.dynamics.params[i];
  j["dynamics"] = {{"kind", std::string(dyn_name(c.dynamics.kind))}, {"params", params}};
  json tests = json::array();
  for (const auto& g : c.test_graphs) tests.push_back(graph_json(g));
  j["graphs"] = {{"train", graph_json(c.train_graph)}, {"val", graph_json(c.val_graph)}, {"test", tests}};
  const DataSettings& d = c.data;
  const DynKind k = c.dynamics.kind;
  json data;
  data["samples"] = d.samples;
  data["t0"] = d.horizon_start(k);
  data["t1"] = d.horizon_end(k);
  data["x0_lo"] = d.x0_low(k);
  data["x0_hi"] = d.x0_high(k);
  data["train_fraction"] = d.train_fraction;
  data["val_fraction"] = d.val_fraction;
  data["snr_db"] = d.snr_db ? json(*d.snr_db) : json(nullptr);
  data["abs_tol"] = d.abs_tol;
  data["rel_tol"] = d.rel_tol;
  data["max_redraws"] = d.max_redraws;
  j["data"] = data;
  json grid = json::array();
  for (const auto& t : c.train_grid) grid.push_back(train_json(t));
  j["train"] = {{"backend", std::string(backend_name(c.backend))}, {"max_trials", c.max_trials}, {"grid", grid}};

  // The SW grid is stored as its axes; configs that differ only in rho,
  // epsilon and mode share the remaining settings.
  std::vector<double> rhos, epss;
  std::vector<std::string> modes;
  auto add = [](auto& v, const auto& x) {
    if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
  };
  for (const auto& s : c.sw_grid) {
    add(rhos, s.rho);
    add(epss, s.epsilon);
    add(modes, std::string(selection_mode_name(s.mode)));
  }
  const SwConfig& s0 = c.sw_grid.front();
  j["distill"] = {{"rho", rhos},         {"epsilon", epss},
                  {"mode", modes},       {"gammas", s0.gammas},
                  {"library", s0.library}, {"max_samples", s0.max_samples},
                  {"degraded_r2", s0.degraded_r2}};
  j["evaluate"] = {{"mae_norm", c.eval.norm == MaeNorm::Printed ? "printed" : "per_sample"},
                   {"abs_tol", c.eval.abs_tol},
                   {"rel_tol", c.eval.rel_tol}};
  const FinetuneSettings& f = c.finetune;
  json ft;
  ft["csv"] = f.csv.generic_string();
  ft["edges"] = f.edges.generic_string();
  ft["dt"] = f.dt;
  ft["train_fraction"] = f.train_fraction;
  ft["val_fraction"] = f.val_fraction;
  ft["nodes"] = f.nodes;
  ft["self_term"] = f.self_term ? json(*f.self_term) : json(nullptr);
  ft["interaction_term"] = f.interaction_term ? json(*f.interaction_term) : json(nullptr);
  ft["learning_rate"] = f.optimizer.learning_rate;
  ft["max_iterations"] = f.optimizer.max_iterations;
  j["finetune"] = ft;
  return j;
}

}  // namespace

std::string RunConfig::to_json() const { return config_json(*this, true).dump(2); }

std::string RunConfig::hash() const {
  const std::uint64_t h = fnv1a(config_json(*this, false).dump());
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int k = 0; k < 16; ++k) out[15 - k] = digits[(h >> (4 * k)) & 0xf];
  return out;
}

void RunConfig::validate() const {
  if (experiment.empty()) throw ConfigError("experiment", "must not be empty");
  rethrow_at("dynamics.params", [&] {
    dynamics.validate();
    return 0;
  });
  if (data.samples < 5) throw ConfigError("data.samples", "must be at least 5");
  const DynKind k = dynamics.kind;
  if (!(data.horizon_end(k) > data.horizon_start(k))) throw ConfigError("data.t1", "must exceed t0");
  if (!(data.x0_high(k) >= data.x0_low(k))) throw ConfigError("data.x0_hi", "must be at least x0_lo");
  if (!(data.train_fraction > 0.0 && data.train_fraction <= 1.0)) {
    throw ConfigError("data.train_fraction", "must lie in (0, 1]");
  }
  if (!(data.val_fraction >= 0.0 && data.train_fraction + data.val_fraction <= 1.0)) {
    throw ConfigError("data.val_fraction", "must be >= 0 with train_fraction + val_fraction <= 1");
  }
  if (!(data.abs_tol > 0.0)) throw ConfigError("data.abs_tol", "must be positive");
  if (!(data.rel_tol > 0.0)) throw ConfigError("data.rel_tol", "must be positive");
  if (train_grid.empty()) throw ConfigError("train.grid", "must not be empty");
  for (std::size_t i = 0; i < train_grid.size(); ++i) {
    rethrow_at(index_path("train.grid", i), [&] {
      train_grid[i].validate();
      return 0;
    });
  }
  if (sw_grid.empty()) throw ConfigError("distill", "grid must not be empty");
  for (const auto& s : sw_grid) {
    rethrow_at("distill", [&] {
      s.validate();
      return 0;
    });
  }
  if (!(eval.abs_tol > 0.0)) throw ConfigError("evaluate.abs_tol", "must be positive");
  if (!(eval.rel_tol > 0.0)) throw ConfigError("evaluate.rel_tol", "must be positive");
  if (!(finetune.dt > 0.0)) throw ConfigError("finetune.dt", "must be positive");
  std::set<std::string> names;
  for (const auto& g : all_graphs()) {
    if (!names.insert(g.name).second) throw ConfigError("graphs", "duplicate graph name '" + g.name + "'");
  }
}

std::map<std::string, std::uint64_t> RunConfig::seeds() const {
  std::map<std::string, std::uint64_t> out;
  out["run"] = seed;
  for (const auto& g : all_graphs()) {
    out["graph." + g.name] = g.resolved_seed(seed);
    out["x0." + g.name] = derive_seed(seed, "x0." + g.name);
  }
  out["noise"] = derive_seed(seed, "noise");
  out["train"] = derive_seed(seed, "train");
  out["grid_sample"] = derive_seed(seed, "grid_sample");
  return out;
}

std::vector<GraphSpec> RunConfig::all_graphs() const {
  std::vector<GraphSpec> out{train_graph, val_graph};
  out.insert(out.end(), test_graphs.begin(), test_graphs.end());
  return out;
}

}  // namespace graphdyn
