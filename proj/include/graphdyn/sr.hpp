#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "graphdyn/expr.hpp"
#include "graphdyn/kan.hpp"
#include "graphdyn/model.hpp"

namespace graphdyn {

/// Univariate library primitive f used in a * f(b * x + c) + d.
class CandidateFn {
 public:
  enum class Shape { Identity, Power, Unary };

  static CandidateFn identity();
  static CandidateFn power(int exponent);
  static CandidateFn unary(Primitive p);
  /// "x", "x^2", "x^3", or a primitive name ("sin", "log", ...).
  static CandidateFn from_name(std::string_view name);

  const std::string& name() const { return name_; }
  Shape shape() const { return shape_; }
  /// Operators contributed by f itself.
  std::size_t ops() const { return ops_; }

  bool defined(double u) const;
  double value(double u) const;
  double derivative(double u) const;
  Expr apply(Expr arg) const;

  /// Maps (a, b, c, d) to the canonical member of its equivalence class under
  /// the symmetries of f (scale absorbed into a, odd/even reflections,
  /// periodicity). The represented function is unchanged.
  std::array<double, 4> canonical(const std::array<double, 4>& theta) const;

  friend bool operator==(const CandidateFn& a, const CandidateFn& b) { return a.name_ == b.name_; }

 private:
  std::string name_;
  Shape shape_ = Shape::Identity;
  int exponent_ = 1;
  Primitive prim_ = Primitive::Sin;
  std::size_t ops_ = 0;
};

/// x, x^2, x^3, sin, tanh, exp, log, 1/x, sqrt, sigmoid.
std::vector<CandidateFn> default_library();
std::vector<CandidateFn> library_from_names(std::span<const std::string> names);

/// Edge (out j <- in i) of layer l.
struct SplineId {
  std::size_t layer = 0, out = 0, in = 0;
  std::string label() const;
  friend bool operator==(const SplineId&, const SplineId&) = default;
};

struct SplineSample {
  std::vector<double> x, y;
};

/// Inputs and outputs of one spline in tape row order. Throws EmptySample if
/// the spline is masked or the tape has no rows.
SplineSample sample_spline(const KanNet& net, const KanNet::Tape& tape, const SplineId& id);

struct AffineFit {
  std::array<double, 4> theta{};  // a, b, c, d
  double mse = 0.0;
  std::size_t starts_converged = 0;
};

/// Levenberg-Marquardt on sum (y - a f(b x + c) - d)^2 from starts
/// b in {+-2, +-1, +-0.5}, c in {-2, 0, 2} with a, d set by linear regression.
/// Returns the best start in canonical form. Throws ShapeError for fewer than
/// 8 points and FitFailure when no start is usable.
AffineFit affine_fit(std::span<const double> x, std::span<const double> y, const CandidateFn& f);

/// a * f(b x + c) + d with unit factors and zero offsets omitted.
Expr affine_expr(const CandidateFn& f, const std::array<double, 4>& theta, const Expr& arg = Expr::self(0));

struct FitCandidate {
  SplineId spline;
  CandidateFn fn = CandidateFn::identity();
  std::array<double, 4> theta{};
  double mse = 0.0;
  std::size_t complexity = 0;
  double log_loss = 0.0;
  Expr expr;
  /// Pruned polynomial used when no library candidate could be fitted.
  bool fallback = false;
};

/// Zeroes coefficients below eps, rebuilds the expression and recomputes mse
/// and complexity on the sample.
FitCandidate make_candidate(const SplineId& id, const CandidateFn& f, std::array<double, 4> theta,
                            std::span<const double> x, std::span<const double> y, double eps);

/// argmin mse + gamma * complexity; ties go to lower complexity, lower mse,
/// then list order. Throws ParamError on an empty list.
std::size_t select_per_gamma(std::span<const FitCandidate> candidates, double gamma);

enum class SelectionMode { Score, LogLoss };
std::string_view selection_mode_name(SelectionMode m);
SelectionMode selection_mode_from_name(std::string_view name);

/// Deduplicates, sorts by complexity and returns the candidate with the
/// steepest log-mse drop per unit complexity (the simplest scores 0). LogLoss
/// mode returns the lowest mse instead. Throws ParamError on an empty list.
FitCandidate pareto_select(std::span<const FitCandidate> winners, SelectionMode mode = SelectionMode::Score);

/// The surviving per-gamma winners after deduplication, sorted by complexity.
std::vector<FitCandidate> pareto_front(std::span<const FitCandidate> winners);

/// Least-squares cubic c0 + c1 x + c2 x^2 + c3 x^3, pruned at eps.
FitCandidate polynomial_fallback(const SplineId& id, std::span<const double> x, std::span<const double> y,
                                 double eps);

struct SwConfig {
  std::vector<double> gammas{1e-5, 1e-4, 1e-2, 1e-1, 1.0};
  double epsilon = 0.01;
  double rho = 0.05;
  SelectionMode mode = SelectionMode::Score;
  std::vector<std::string> library;  // empty: default library
  /// Cap on rows used for fitting; rows are taken at an even stride. 0 keeps all.
  std::size_t max_samples = 2000;
  /// A selected fit with R^2 below this is flagged as degraded.
  double degraded_r2 = 0.99;

  void validate() const;
  std::string summary() const;
};

struct SplineReport {
  SplineId spline;
  std::vector<FitCandidate> candidates;
  /// Index into candidates of the winner for each gamma.
  std::vector<std::size_t> gamma_winners;
  FitCandidate selected;
  std::size_t selected_index = 0;
  double r2 = 1.0;
  bool degraded = false;
  /// (function, reason) for library members that could not be fitted.
  std::vector<std::pair<std::string, std::string>> failures;
};

struct SwResult {
  KanNet pruned;
  std::vector<SplineReport> splines;
  /// One expression per network output over x_i<k> (input k).
  std::vector<Expr> outputs;
  std::vector<std::string> warnings;

  bool degraded() const;
};

/// Prunes at rho using X as calibration batch, then fits every surviving
/// spline and composes the selections through the node structure. Network
/// input k is written as `inputs[k]` (default x_i<k>).
SwResult spline_wise_regress(const KanNet& net, std::span<const double> X, std::size_t rows,
                             const SwConfig& cfg, std::span<const Expr> inputs = {});

/// spline_wise_regress() for every config. Configs that share rho, library and
/// sample cap share one pruning pass and one set of affine fits.
std::vector<SwResult> spline_wise_regress_grid(const KanNet& net, std::span<const double> X, std::size_t rows,
                                               std::span<const SwConfig> cfgs, std::span<const Expr> inputs = {});

/// Input k of a network becomes `inputs[k]` in the composed expression.
std::vector<Expr> compose_network(const KanNet& net, std::span<const SplineReport> splines,
                                  std::span<const Expr> inputs);

struct Distillation {
  SymbolicModel model;
  SwResult h, g;
  bool degraded() const { return h.degraded() || g.degraded(); }
};

/// Runs Spline-Wise regression on both networks of a scalar-state model, with
/// H fed the training states and G the (x_i, x_j) pairs of every edge.
Distillation distill(const GraphOdeModel<KanNet>& model, const TrainingData& data, const SwConfig& cfg);
std::vector<Distillation> distill_grid(const GraphOdeModel<KanNet>& model, const TrainingData& data,
                                       std::span<const SwConfig> cfgs);

void write_fit_report(const std::filesystem::path& path, std::string_view net_name,
                      std::span<const SplineReport> splines, std::span<const double> gammas,
                      const std::string& config_hash = "", bool append = false);

struct FinetuneConfig {
  double learning_rate = 0.01;
  std::size_t max_iterations = 2000;
  double min_step = 1e-12;
};

struct FinetuneResult {
  SymbolicModel model;
  double initial_mae = 0.0;
  double final_mae = 0.0;
  std::size_t iterations = 0;
  std::vector<std::string> log;
};

/// Gradient descent on the derivative MAE of the given nodes over the samples,
/// with every constant of the model trainable. A step that raises the loss or
/// leaves an operator's domain is rejected and the step size halved. Throws
/// NonFiniteLoss if the starting loss is not finite.
FinetuneResult finetune_constants(const SymbolicModel& model, const TrainingData& data,
                                  std::span<const std::size_t> samples, std::span<const std::size_t> nodes,
                                  const FinetuneConfig& cfg = {});

}  // namespace graphdyn
