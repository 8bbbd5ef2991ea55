#include "graphdyn/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <unistd.h>

#include "graphdyn/errors.hpp"
#include "graphdyn/eval.hpp"
#include "graphdyn/expr.hpp"
#include "graphdyn/model.hpp"
#include "graphdyn/seeds.hpp"
#include "graphdyn/sr.hpp"
#include "graphdyn/textio.hpp"
#include "json.hpp"

namespace graphdyn {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::Generate: return "generate";
    case Stage::Train: return "train";
    case Stage::Distill: return "distill";
    case Stage::Select: return "select";
    case Stage::Evaluate: return "evaluate";
    case Stage::Finetune: return "finetune";
  }
  return "?";
}

Stage stage_from_name(std::string_view name) {
  for (Stage s : {Stage::Generate, Stage::Train, Stage::Distill, Stage::Select, Stage::Evaluate, Stage::Finetune}) {
    if (stage_name(s) == name) return s;
  }
  throw ParamError("unknown stage '" + std::string(name) + "'");
}

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (!f) {
    if (fs::exists(path_)) {
      throw LockError("experiment directory " + dir.string() + " is locked by another run (remove " +
                      path_.string() + " if it is stale)");
    }
    throw IoError("cannot create lock file " + path_.string());
  }
  std::fprintf(f, "%ld\n", static_cast<long>(::getpid()));
  std::fclose(f);
}

DirectoryLock::~DirectoryLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

Dataset simulate_dataset(const RunConfig& cfg, const GraphSpec& spec) {
  const DynKind kind = cfg.dynamics.kind;
  const DataSettings& d = cfg.data;
  Dataset ds;
  ds.graph = spec.build(cfg.seed);
  const std::uint64_t x0_seed = derive_seed(cfg.seed, "x0." + spec.name);
  IntegratorOptions opts;
  opts.abs_tol = d.abs_tol;
  opts.rel_tol = d.rel_tol;
  const RhsFn rhs = ground_truth_rhs(cfg.dynamics);
  std::size_t attempt = 0;
  for (;; ++attempt) {
    std::mt19937_64 rng(derive_seed(x0_seed, attempt));
    std::uniform_real_distribution<double> u(d.x0_low(kind), d.x0_high(kind));
    std::vector<double> x0(ds.graph.size());
    for (double& v : x0) v = u(rng);
    try {
      ds.traj = integrate(rhs, ds.graph, x0, 1, d.horizon_start(kind), d.horizon_end(kind), d.samples, opts);
      break;
    } catch (const DivergenceError& e) {
      if (attempt >= d.max_redraws) {
        throw DivergenceError("simulation on graph '" + spec.name + "' diverged for " + std::to_string(attempt + 1) +
                                  " initial conditions",
                              e.last_valid_time());
      }
    }
  }
  ds.traj.graph_ref = spec.name;
  ds.split = make_split(d.samples, d.train_fraction, d.val_fraction);

  json meta;
  meta["dynamics"] = std::string(dyn_name(kind));
  json params;
  const auto& names = DynSpec::param_names(kind);
  for (std::size_t i = 0; i < names.size(); ++i) params[names[i]] = cfg.dynamics.params[i];
  meta["params"] = params;
  meta["graph"] = spec.name;
  meta["generator"] = spec.describe();
  meta["graph_seed"] = spec.resolved_seed(cfg.seed);
  meta["x0_seed"] = x0_seed;
  meta["x0_attempts"] = attempt + 1;
  if (d.snr_db && spec.name == cfg.train_graph.name) {
    std::vector<std::string> warnings;
    ds.traj = add_noise(ds.traj, *d.snr_db, derive_seed(cfg.seed, "noise"), &warnings);
    meta["snr_db"] = *d.snr_db;
    meta["noise_seed"] = derive_seed(cfg.seed, "noise");
    meta["noise_warnings"] = warnings;
  }
  ds.metadata = meta.dump();
  return ds;
}

namespace {

class Manifest {
 public:
  explicit Manifest(const fs::path& dir) : path_(dir / "manifest.json") {
    if (!fs::exists(path_)) return;
    std::ifstream in(path_);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      j_ = json::parse(ss.str());
    } catch (const json::parse_error& e) {
      throw FormatError(path_.string() + ": " + e.what(), 1);
    }
  }

  void require(Stage s, const std::string& hash) const {
    const std::string name(stage_name(s));
    if (!j_.contains("stages") || !j_["stages"].contains(name)) {
      throw StageDependencyError("stage '" + name + "' has not been run in this experiment directory; run `graphdyn " +
                                 name + "` first");
    }
    const json& st = j_["stages"][name];
    const std::string h = st.value("config_hash", "");
    if (h != hash) {
      throw StageDependencyError("outputs of stage '" + name + "' were produced by config " + h +
                                 ", current config is " + hash + "; rerun `graphdyn " + name + "`");
    }
    for (const auto& f : st.value("files", json::array())) {
      if (!fs::exists(path_.parent_path() / f.get<std::string>())) {
        throw StageDependencyError("output '" + f.get<std::string>() + "' of stage '" + name + "' is missing");
      }
    }
  }

  void record(const RunConfig& cfg, const StageResult& r) {
    json stages = j_.contains("stages") ? j_["stages"] : json::object();
    stages[std::string(stage_name(r.stage))] = {{"config_hash", cfg.hash()}, {"files", r.files}};
    // Stages are listed in pipeline order so the file does not depend on run order.
    json ordered = json::object();
    for (Stage s : {Stage::Generate, Stage::Train, Stage::Distill, Stage::Select, Stage::Evaluate, Stage::Finetune}) {
      const std::string n(stage_name(s));
      if (stages.contains(n)) ordered[n] = stages[n];
    }
    json out;
    out["config_hash"] = cfg.hash();
    out["config"] = json::parse(cfg.to_json());
    json seeds = json::object();
    for (const auto& [k, v] : cfg.seeds()) seeds[k] = v;
    out["seeds"] = seeds;
    out["stages"] = ordered;
    j_ = out;
    std::ofstream os(path_);
    os << j_.dump(2) << '\n';
    if (!os) throw IoError("cannot write " + path_.string());
  }

 private:
  fs::path path_;
  json j_ = json::object();
};

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
  if (!os) throw IoError("cannot write " + p.string());
}

fs::path data_dir(const std::string& graph) { return fs::path("data") / graph; }

std::vector<TrainConfig> seeded_grid(const RunConfig& cfg) {
  std::vector<TrainConfig> grid = cfg.train_grid;
  const std::uint64_t base = derive_seed(cfg.seed, "train");
  for (std::size_t k = 0; k < grid.size(); ++k) {
    grid[k].backend = cfg.backend;
    grid[k].seed = derive_seed(base, static_cast<std::uint64_t>(k));
  }
  return grid;
}

template <class Net>
void train_backend(const RunConfig& cfg, const TrainingData& td, const fs::path& dir, StageResult& r) {
  const auto res = grid_search<Net>(seeded_grid(cfg), td, cfg.max_trials, derive_seed(cfg.seed, "grid_sample"));
  const std::string hash = cfg.hash();
  write_text(dir / "train/model.json", model_to_json(res.result.model));
  write_grid_csv(dir / "train/grid.csv", res.rows, hash);
  write_history_csv(dir / "train/history.csv", res.result.history, hash);
  r.files = {"train/model.json", "train/grid.csv", "train/history.csv"};
  for (const auto& row : res.rows) {
    if (row.index != res.best) continue;
    r.notes.push_back("best config " + std::to_string(row.index) + " (" + row.config.summary() +
                      "): validation MAE " + format_double(row.val_mae));
  }
}

struct Candidate {
  std::size_t index = 0;
  SymbolicModel model;
};

std::vector<Candidate> read_candidates(const fs::path& path) {
  const json j = json::parse(read_text(path));
  std::vector<Candidate> out;
  for (const auto& c : j.at("candidates")) {
    out.push_back({c.at("index").get<std::size_t>(),
                   SymbolicModel{parse_expr(c.at("self_term").get<std::string>()),
                                 parse_expr(c.at("interaction_term").get<std::string>())}});
  }
  return out;
}

SymbolicModel read_selected(const fs::path& path) {
  const json j = json::parse(read_text(path));
  return SymbolicModel{parse_expr(j.at("self_term").get<std::string>()),
                       parse_expr(j.at("interaction_term").get<std::string>())};
}

IntegratorOptions eval_options(const RunConfig& cfg) {
  IntegratorOptions o;
  o.abs_tol = cfg.eval.abs_tol;
  o.rel_tol = cfg.eval.rel_tol;
  return o;
}

double guarded_mae_eul(const RhsFn& rhs, const Trajectory& truth, const Graph& g) {
  try {
    return mae_eul(rhs, truth, g);
  } catch (const DomainError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

EvalRow eval_row(const std::string& name, const std::string& formula, std::size_t complexity, const RhsFn& rhs,
                 const Dataset& ds, const GraphSpec& spec, const RunConfig& cfg) {
  EvalRow row;
  row.candidate = name;
  row.formula = formula;
  row.complexity = complexity;
  row.graph = spec.name;
  const RolloutResult rr = rollout_against(rhs, ds.traj, ds.graph, eval_options(cfg), cfg.eval.norm);
  row.diverged = rr.diverged;
  row.divergence_time = rr.divergence_time;
  row.mae_traj = rr.mae_traj;
  row.mae_eul = guarded_mae_eul(rhs, ds.traj, ds.graph);
  return row;
}

StageResult do_generate(const RunConfig& cfg, const fs::path& dir) {
  StageResult r{Stage::Generate, {}, {}};
  for (const GraphSpec& g : cfg.all_graphs()) {
    const Dataset ds = simulate_dataset(cfg, g);
    save_dataset(dir / data_dir(g.name), ds);
    for (const char* f : {"meta.json", "graph.edges", "states.csv"}) r.files.push_back((data_dir(g.name) / f).generic_string());
    const json meta = json::parse(ds.metadata);
    const std::size_t attempts = meta.value("x0_attempts", std::size_t{1});
    if (attempts > 1) {
      r.notes.push_back(g.name + ": initial conditions redrawn " + std::to_string(attempts - 1) + " times");
    }
  }
  return r;
}

StageResult do_train(const RunConfig& cfg, const Manifest& m, const fs::path& dir) {
  m.require(Stage::Generate, cfg.hash());
  StageResult r{Stage::Train, {}, {}};
  const Dataset ds = load_dataset(dir / data_dir(cfg.train_graph.name));
  const TrainingData td = make_training_data(ds);
  fs::create_directories(dir / "train");
  if (cfg.backend == Backend::Kan) {
    train_backend<KanNet>(cfg, td, dir, r);
  } else {
    train_backend<MlpNet>(cfg, td, dir, r);
  }
  return r;
}

// Share of the training derivative variance explained by a distilled law;
// -inf when the law cannot be evaluated on the training states.
double data_r2(const SymbolicModel& model, const TrainingData& td) {
  const RhsFn rhs = symbolic_rhs(model);
  const std::size_t n = td.stride();
  std::vector<double> dx(n);
  double mean = 0.0;
  for (std::size_t s : td.train) {
    for (std::size_t i = 0; i < n; ++i) mean += td.targets[s * n + i];
  }
  mean /= static_cast<double>(td.train.size() * n);
  double ss_res = 0.0, ss_tot = 0.0;
  try {
    for (std::size_t s : td.train) {
      rhs(td.graph, std::span<const double>(td.states).subspan(s * n, n), dx);
      for (std::size_t i = 0; i < n; ++i) {
        const double y = td.targets[s * n + i];
        ss_res += (y - dx[i]) * (y - dx[i]);
        ss_tot += (y - mean) * (y - mean);
      }
    }
  } catch (const Error&) {
    return -std::numeric_limits<double>::infinity();
  }
  if (!std::isfinite(ss_res)) return -std::numeric_limits<double>::infinity();
  return ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : -std::numeric_limits<double>::infinity());
}

StageResult do_distill(const RunConfig& cfg, const Manifest& m, const fs::path& dir) {
  m.require(Stage::Train, cfg.hash());
  const std::string text = read_text(dir / "train/model.json");
  if (checkpoint_backend(text) != Backend::Kan) {
    throw ConfigError("train.backend", "Spline-Wise distillation needs the kan backend");
  }
  const auto model = model_from_json<KanNet>(text);
  const TrainingData td = make_training_data(load_dataset(dir / data_dir(cfg.train_graph.name)));
  const std::vector<Distillation> ds = distill_grid(model, td, cfg.sw_grid);
  const std::string hash = cfg.hash();
  fs::create_directories(dir / "distill");

  json cands = json::array();
  std::ofstream csv(dir / "distill/candidates.csv");
  csv << "config_hash,candidate,rho,epsilon,mode,formula,complexity,data_r2,degraded\n";
  const fs::path report = dir / "distill/fit_report.csv";
  fs::remove(report);
  StageResult r{Stage::Distill, {}, {}};
  for (std::size_t k = 0; k < ds.size(); ++k) {
    const SwConfig& sw = cfg.sw_grid[k];
    const Distillation& d = ds[k];
    const std::string formula = format_model(d.model, kExactPrecision);
    const double r2 = data_r2(d.model, td);
    const bool poor_data_fit = !(r2 >= sw.degraded_r2);
    const bool degraded = d.degraded() || poor_data_fit;
    json c;
    c["index"] = k;
    c["rho"] = sw.rho;
    c["epsilon"] = sw.epsilon;
    c["mode"] = std::string(selection_mode_name(sw.mode));
    c["self_term"] = format_expr(d.model.self_term, kExactPrecision);
    c["interaction_term"] = format_expr(d.model.interaction_term, kExactPrecision);
    c["formula"] = formula;
    c["complexity"] = complexity(d.model);
    c["data_r2"] = std::isfinite(r2) ? json(r2) : json(nullptr);
    c["degraded"] = degraded;
    cands.push_back(c);
    csv << csv_field(hash) << ',' << k << ',' << format_double(sw.rho) << ',' << format_double(sw.epsilon) << ','
        << selection_mode_name(sw.mode) << ',' << csv_field(formula) << ',' << complexity(d.model) << ','
        << format_double(r2) << ',' << (degraded ? 1 : 0) << '\n';
    write_fit_report(report, "c" + std::to_string(k) + ":H", d.h.splines, sw.gammas, hash, true);
    write_fit_report(report, "c" + std::to_string(k) + ":G", d.g.splines, sw.gammas, hash, true);
    for (const auto* res : {&d.h, &d.g}) {
      for (const auto& w : res->warnings) r.notes.push_back("candidate " + std::to_string(k) + ": " + w);
    }
    if (d.degraded()) r.notes.push_back("candidate " + std::to_string(k) + ": degraded spline fit (R^2 below threshold)");
    if (poor_data_fit) {
      r.notes.push_back("candidate " + std::to_string(k) + ": degraded fit to the training derivatives (R^2 " +
                        format_double(r2) + ")");
    }
  }
  if (!csv) throw IoError("cannot write candidates.csv");
  write_text(dir / "distill/candidates.json", json{{"config_hash", hash}, {"candidates", cands}}.dump(2) + "\n");
  r.files = {"distill/candidates.json", "distill/candidates.csv", "distill/fit_report.csv"};
  return r;
}

StageResult do_select(const RunConfig& cfg, const Manifest& m, const fs::path& dir) {
  const std::string hash = cfg.hash();
  m.require(Stage::Generate, hash);
  m.require(Stage::Distill, hash);
  const std::vector<Candidate> cands = read_candidates(dir / "distill/candidates.json");
  if (cands.empty()) throw StageDependencyError("distill produced no candidates");
  // Identical formulas are rolled out once; the ranking names the first index.
  std::vector<SymbolicModel> unique;
  std::vector<std::size_t> first;
  std::map<std::string, std::size_t> seen;
  for (const auto& c : cands) {
    const std::string key = format_model(c.model, kExactPrecision);
    if (seen.emplace(key, unique.size()).second) {
      unique.push_back(c.model);
      first.push_back(c.index);
    }
  }
  const Dataset val = load_dataset(dir / data_dir(cfg.val_graph.name));
  OodSelection sel = ood_select(unique, val.graph, val.traj, eval_options(cfg));
  const std::size_t best_unique = sel.best;
  for (auto& rc : sel.ranking) rc.index = first[rc.index];
  sel.best = first[best_unique];

  fs::create_directories(dir / "select");
  write_ranking_csv(dir / "select/ranking.csv", sel, hash);
  const SymbolicModel& best = unique[best_unique];
  const RankedCandidate& top = sel.ranking.front();
  json j;
  j["config_hash"] = hash;
  j["candidate"] = sel.best;
  j["self_term"] = format_expr(best.self_term, kExactPrecision);
  j["interaction_term"] = format_expr(best.interaction_term, kExactPrecision);
  j["formula"] = format_model(best, kExactPrecision);
  j["complexity"] = complexity(best);
  j["mae_traj"] = top.diverged ? json(nullptr) : json(top.mae_traj);
  j["diverged"] = top.diverged;
  j["all_diverged"] = sel.all_diverged;
  write_text(dir / "select/selected.json", j.dump(2) + "\n");
  StageResult r{Stage::Select, {"select/ranking.csv", "select/selected.json"}, {}};
  r.notes.push_back("selected candidate " + std::to_string(sel.best) + ": " + format_model(best));
  if (sel.all_diverged) r.notes.push_back("every candidate diverged on the validation graph");
  return r;
}

StageResult do_evaluate(const RunConfig& cfg, const Manifest& m, const fs::path& dir) {
  const std::string hash = cfg.hash();
  m.require(Stage::Generate, hash);
  m.require(Stage::Train, hash);
  const std::string text = read_text(dir / "train/model.json");
  const Backend backend = checkpoint_backend(text);
  std::optional<SymbolicModel> symbolic;
  if (backend == Backend::Kan) {
    m.require(Stage::Select, hash);
    symbolic = read_selected(dir / "select/selected.json");
  }
  const RhsFn neural =
      backend == Backend::Kan ? neural_rhs(model_from_json<KanNet>(text)) : neural_rhs(model_from_json<MlpNet>(text));
  const std::string neural_name = backend == Backend::Kan ? "gkan-ode" : "gmlp-ode";

  std::vector<EvalRow> rows;
  for (const GraphSpec& g : cfg.test_graphs) {
    const Dataset ds = load_dataset(dir / data_dir(g.name));
    if (symbolic) {
      rows.push_back(eval_row("symbolic", format_model(*symbolic, kExactPrecision), complexity(*symbolic),
                              symbolic_rhs(*symbolic), ds, g, cfg));
    }
    rows.push_back(eval_row(neural_name, "", 0, neural, ds, g, cfg));
  }
  fs::create_directories(dir / "evaluate");
  write_eval_report(dir / "evaluate/report.csv", rows, hash);
  StageResult r{Stage::Evaluate, {"evaluate/report.csv"}, {}};
  for (const auto& row : rows) {
    r.notes.push_back(row.candidate + " on " + row.graph + ": " +
                      (row.diverged ? "diverged" : "MAE_traj " + format_double(row.mae_traj)));
  }
  return r;
}

StageResult do_finetune(const RunConfig& cfg, const Manifest& m, const fs::path& dir) {
  const std::string hash = cfg.hash();
  const FinetuneSettings& f = cfg.finetune;
  if (f.csv.empty()) throw ConfigError("finetune.csv", "is required for fine-tuning");
  if (f.edges.empty()) throw ConfigError("finetune.edges", "is required for fine-tuning");
  SymbolicModel model;
  if (f.self_term || f.interaction_term) {
    try {
      model.self_term = parse_expr(f.self_term.value_or("0"));
      model.interaction_term = parse_expr(f.interaction_term.value_or("0"));
    } catch (const ParseError& e) {
      throw ConfigError(f.self_term ? "finetune.self_term" : "finetune.interaction_term", e.what());
    }
  } else {
    m.require(Stage::Select, hash);
    model = read_selected(dir / "select/selected.json");
  }

  Dataset ds = load_empirical(f.csv, f.edges, f.dt);
  ds.split = make_split(ds.traj.length(), f.train_fraction, f.val_fraction);
  const Scaler scaler = fit_scaler(ds.traj, ds.split.train);
  ds.traj = scaler.apply(ds.traj);
  const TrainingData td = make_training_data(ds);
  if (td.train.empty()) throw ConfigError("finetune.train_fraction", "leaves no training derivatives");
  std::vector<std::size_t> nodes = f.nodes;
  if (nodes.empty()) {
    for (std::size_t i = 0; i < td.nodes; ++i) nodes.push_back(i);
  }
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    if (nodes[k] >= td.nodes) {
      throw ConfigError("finetune.nodes[" + std::to_string(k) + "]", "is not a node of the empirical graph");
    }
  }

  fs::create_directories(dir / "finetune");
  std::ofstream csv(dir / "finetune/finetune.csv");
  csv << "config_hash,node,initial_mae,final_mae,iterations,self_term,interaction_term\n";
  std::ofstream log(dir / "finetune/log.txt");
  for (std::size_t node : nodes) {
    const std::size_t one[] = {node};
    const FinetuneResult res = finetune_constants(model, td, td.train, one, f.optimizer);
    csv << csv_field(hash) << ',' << node << ',' << format_double(res.initial_mae) << ','
        << format_double(res.final_mae) << ',' << res.iterations << ','
        << csv_field(format_expr(res.model.self_term, kExactPrecision)) << ','
        << csv_field(format_expr(res.model.interaction_term, kExactPrecision)) << '\n';
    for (const auto& line : res.log) log << "node " << node << ": " << line << '\n';
  }
  json sc;
  sc["config_hash"] = hash;
  sc["min"] = scaler.min;
  sc["max"] = scaler.max;
  write_text(dir / "finetune/scaler.json", sc.dump(2) + "\n");
  if (!csv || !log) throw IoError("cannot write fine-tuning outputs");
  return StageResult{Stage::Finetune, {"finetune/finetune.csv", "finetune/log.txt", "finetune/scaler.json"}, {}};
}

}  // namespace

StageResult run_stage(Stage stage, const RunConfig& cfg) {
  cfg.validate();
  const fs::path dir = cfg.output;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  DirectoryLock lock(dir);
  Manifest manifest(dir);
  StageResult r;
  switch (stage) {
    case Stage::Generate: r = do_generate(cfg, dir); break;
    case Stage::Train: r = do_train(cfg, manifest, dir); break;
    case Stage::Distill: r = do_distill(cfg, manifest, dir); break;
    case Stage::Select: r = do_select(cfg, manifest, dir); break;
    case Stage::Evaluate: r = do_evaluate(cfg, manifest, dir); break;
    case Stage::Finetune: r = do_finetune(cfg, manifest, dir); break;
  }
  manifest.record(cfg, r);
  return r;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const StageDependencyError*>(&e)) return 3;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e)) return 4;
  if (dynamic_cast<const NonFiniteLoss*>(&e) || dynamic_cast<const FitFailure*>(&e) ||
      dynamic_cast<const DivergenceError*>(&e) || dynamic_cast<const DomainError*>(&e) ||
      dynamic_cast<const DegenerateFeature*>(&e) || dynamic_cast<const EmptySample*>(&e)) {
    return 5;
  }
  if (dynamic_cast<const LockError*>(&e)) return 6;
  return 1;
}

}  // namespace graphdyn
