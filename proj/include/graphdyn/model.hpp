#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "graphdyn/dataset.hpp"
#include "graphdyn/graph.hpp"
#include "graphdyn/kan.hpp"
#include "graphdyn/mlp.hpp"

namespace graphdyn {

/// What the training harness needs from a network backend.
template <class N>
concept GraphNet = requires(N& n, const N& cn, typename N::Tape& tape, std::span<const double> in,
                            std::span<double> out, std::mt19937_64* rng, const Penalty& pen) {
  { cn.input_dim() } -> std::convertible_to<std::size_t>;
  { cn.output_dim() } -> std::convertible_to<std::size_t>;
  { cn.parameter_count() } -> std::convertible_to<std::size_t>;
  { n.params() } -> std::same_as<std::span<double>>;
  cn.forward(in, std::size_t{}, tape, out, rng);
  cn.backward(tape, in, out);
  { cn.penalty(tape, pen) } -> std::convertible_to<double>;
  { cn.to_json() } -> std::convertible_to<std::string>;
  { N::from_json(std::string{}) } -> std::same_as<N>;
};

enum class Backend { Kan, Mlp };

std::string_view backend_name(Backend b);
Backend backend_from_name(std::string_view name);

template <class Net>
constexpr Backend backend_of();
template <>
constexpr Backend backend_of<KanNet>() { return Backend::Kan; }
template <>
constexpr Backend backend_of<MlpNet>() { return Backend::Mlp; }

struct TrainConfig {
  Backend backend = Backend::Kan;
  double learning_rate = 0.01;
  std::size_t batch_size = 32;
  std::size_t epochs = 200;
  /// Stop after this many epochs without validation improvement; 0 disables.
  std::size_t patience = 0;
  double lambda = 0.0;
  double mu1 = 1.0;
  double mu2 = 1.0;
  std::uint64_t seed = 0;

  int grid = 5;
  int degree = 3;
  double range = 10.0;
  std::vector<std::size_t> h_hidden{2};
  std::vector<std::size_t> g_hidden{2};
  bool multiplicative = true;

  std::vector<std::size_t> mlp_hidden{32};
  Activation activation = Activation::Tanh;
  double dropout = 0.0;
  double weight_decay = 0.0;

  Penalty penalty() const { return {lambda, mu1, mu2, weight_decay}; }
  /// Throws ConfigError naming the offending field.
  void validate() const;
  /// One-line key=value summary used in result tables.
  std::string summary() const;
};

/// x_i' = H(x_i) + sum_j A_ij G(x_i, x_j) with H: R^d -> R^d and G: R^2d -> R^d.
template <GraphNet Net>
struct GraphOdeModel {
  Net h;
  Net g;

  std::size_t features() const { return h.input_dim(); }
  std::size_t parameter_count() const { return h.parameter_count() + g.parameter_count(); }
};

template <class Net>
GraphOdeModel<Net> make_model(const TrainConfig& cfg, std::size_t features);

/// Directed interaction list of a graph: (target i, source j, A_ij) for A_ij != 0.
struct EdgeList {
  std::vector<std::size_t> target, source;
  std::vector<double> weight;
  std::size_t nodes = 0;

  explicit EdgeList(const Graph& g);
  std::size_t size() const { return target.size(); }
};

/// X is n x d row-major; returns n x d.
template <class Net>
std::vector<double> predict_derivative(const GraphOdeModel<Net>& m, std::span<const double> X, const Graph& graph);
template <class Net>
std::vector<double> predict_derivative(const GraphOdeModel<Net>& m, std::span<const double> X, const EdgeList& edges);

/// Derivative-regression samples: the state at each interior trajectory
/// sample and its stencil derivative.
struct TrainingData {
  Graph graph;
  std::size_t nodes = 0;
  std::size_t features = 1;
  std::vector<double> states;   // samples x (n*d)
  std::vector<double> targets;  // samples x (n*d)
  std::vector<std::size_t> train, val;

  std::size_t stride() const { return nodes * features; }
  std::size_t samples() const { return stride() ? states.size() / stride() : 0; }
};

/// Uses ds.derivs when present, otherwise the stencil. Derivative sample t
/// belongs to the split range holding trajectory sample t + 2.
TrainingData make_training_data(const Dataset& ds);

struct LossParts {
  double mae = 0.0;
  double penalty = 0.0;
  double total() const { return mae + penalty; }
};

/// Loss over the given samples; when grad is non-empty it receives (+=) the
/// gradient laid out as [H params | G params]. A non-null rng enables dropout.
template <class Net>
LossParts model_loss(const GraphOdeModel<Net>& m, const TrainingData& data, std::span<const std::size_t> samples,
                     const Penalty& pen, std::span<double> grad = {}, std::mt19937_64* rng = nullptr);

/// Mean absolute derivative error over the samples (no penalty, no dropout).
template <class Net>
double model_mae(const GraphOdeModel<Net>& m, const TrainingData& data, std::span<const std::size_t> samples);

struct HistoryRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_mae = 0.0;
  double val_mae = 0.0;
};

template <class Net>
struct TrainResult {
  GraphOdeModel<Net> model;
  std::vector<HistoryRow> history;
  std::size_t best_epoch = 0;
  double best_val_mae = 0.0;
};

/// Adam (0.9, 0.999) on MAE + penalty over shuffled minibatches of time
/// samples; returns the parameters with the best validation MAE (training MAE
/// when there is no validation range). Throws NonFiniteLoss with the epoch.
template <class Net>
TrainResult<Net> train(const TrainingData& data, const TrainConfig& cfg);
template <class Net>
TrainResult<Net> train(GraphOdeModel<Net> init, const TrainingData& data, const TrainConfig& cfg);

struct GridRow {
  std::size_t index = 0;
  TrainConfig config;
  double val_mae = 0.0;
  std::size_t best_epoch = 0;
  std::size_t parameter_count = 0;
  std::string status = "ok";
};

template <class Net>
struct GridResult {
  std::size_t best = 0;
  TrainResult<Net> result;
  std::vector<GridRow> rows;
};

/// Trains every configuration (or `max_trials` of them picked with
/// `sample_seed`) and keeps the lowest validation MAE; ties go to the earlier
/// index. Non-finite runs are recorded and skipped.
template <class Net>
GridResult<Net> grid_search(const std::vector<TrainConfig>& grid, const TrainingData& data,
                            std::size_t max_trials = 0, std::uint64_t sample_seed = 0);

void write_history_csv(const std::filesystem::path& path, std::span<const HistoryRow> rows,
                       const std::string& config_hash = "");
void write_grid_csv(const std::filesystem::path& path, std::span<const GridRow> rows,
                    const std::string& config_hash = "");

template <class Net>
std::string model_to_json(const GraphOdeModel<Net>& m);
template <class Net>
GraphOdeModel<Net> model_from_json(const std::string& text);
/// Reads the backend tag of a model checkpoint.
Backend checkpoint_backend(const std::string& text);

extern template struct GraphOdeModel<KanNet>;
extern template struct GraphOdeModel<MlpNet>;

}  // namespace graphdyn
