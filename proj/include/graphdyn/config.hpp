#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "graphdyn/dynamics.hpp"
#include "graphdyn/eval.hpp"
#include "graphdyn/graph.hpp"
#include "graphdyn/model.hpp"
#include "graphdyn/sr.hpp"

namespace graphdyn {

/// Graph generator: "ba" (n, m), "ws" (n, k, p) or "er" (n, p). Without an
/// explicit seed one is derived from the run seed and the graph name.
struct GraphSpec {
  std::string name;
  std::string type = "ba";
  std::size_t n = 70;
  std::size_t m = 3;
  std::size_t k = 4;
  double p = 0.05;
  std::optional<std::uint64_t> seed;

  std::uint64_t resolved_seed(std::uint64_t run_seed) const;
  Graph build(std::uint64_t run_seed) const;
  std::string describe() const;
};

struct DataSettings {
  std::size_t samples = 2000;
  /// Horizon and initial-condition interval; unset values follow the system.
  std::optional<double> t0, t1, x0_lo, x0_hi;
  double train_fraction = 0.8;
  double val_fraction = 0.2;
  /// Gaussian state noise on the training graph; unset means noiseless.
  std::optional<double> snr_db;
  double abs_tol = 1e-10;
  double rel_tol = 1e-10;
  /// Initial conditions are redrawn when the integration diverges.
  std::size_t max_redraws = 20;

  double horizon_start(DynKind k) const;
  double horizon_end(DynKind k) const;
  double x0_low(DynKind k) const;
  double x0_high(DynKind k) const;
};

struct EvalSettings {
  MaeNorm norm = MaeNorm::Printed;
  double abs_tol = 1e-8;
  double rel_tol = 1e-8;
};

struct FinetuneSettings {
  /// Empirical node-state CSV and weighted edge list, relative to the config file.
  std::filesystem::path csv, edges;
  double dt = 1.0;
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  /// Nodes to fine-tune; empty means all.
  std::vector<std::size_t> nodes;
  /// Formula to fine-tune instead of the selected one.
  std::optional<std::string> self_term, interaction_term;
  FinetuneConfig optimizer;
};

struct RunConfig {
  std::string experiment = "experiment";
  std::uint64_t seed = 0;
  DynSpec dynamics = DynSpec::defaults(DynKind::Kur);
  GraphSpec train_graph{"train", "ba", 70, 3, 4, 0.05, std::nullopt};
  GraphSpec val_graph{"val", "ba", 100, 3, 4, 0.05, std::nullopt};
  std::vector<GraphSpec> test_graphs{{"test_ba", "ba", 70, 3, 4, 0.05, std::nullopt},
                                     {"test_ws", "ws", 50, 3, 6, 0.1, std::nullopt},
                                     {"test_er", "er", 100, 3, 4, 0.05, std::nullopt}};
  DataSettings data;
  Backend backend = Backend::Kan;
  std::vector<TrainConfig> train_grid;
  /// Number of grid entries to train, picked with a derived seed; 0 trains all.
  std::size_t max_trials = 0;
  std::vector<SwConfig> sw_grid;
  EvalSettings eval;
  FinetuneSettings finetune;
  std::filesystem::path output = "runs/experiment";

  /// Default run: BA(70) training graph, BA(100) validation, three test graphs, one KAN configuration and the full
  /// Spline-Wise grid.
  RunConfig();

  /// Parses the JSON run file; a manifest written by the pipeline is accepted
  /// too. Relative paths resolve against `base_dir`. Throws ConfigError with
  /// the dotted path of the offending field.
  static RunConfig from_json(const std::string& text, const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path);
  /// Normalized JSON with every field spelled out.
  std::string to_json() const;
  /// FNV-1a of the normalized JSON without the output directory, as 16 hex digits.
  std::string hash() const;
  void validate() const;

  /// Named seeds for every random decision of the run.
  std::map<std::string, std::uint64_t> seeds() const;
  std::vector<GraphSpec> all_graphs() const;
};

}  // namespace graphdyn
