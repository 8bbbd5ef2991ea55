#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace graphdyn {

double silu(double x);
double silu_grad(double x);

/// Uniform knot grid with `intervals` cells on [lo, hi], extended by `degree`
/// knots on each side; carries intervals + degree basis functions.
struct SplineGrid {
  double lo = -10.0;
  double hi = 10.0;
  int intervals = 5;
  int degree = 3;

  std::size_t basis_count() const { return static_cast<std::size_t>(intervals + degree); }
  double step() const { return (hi - lo) / intervals; }
  /// Throws ParamError unless lo < hi, intervals >= 1 and 0 <= degree <= 5.
  void validate() const;

  /// Writes the degree + 1 basis values that can be nonzero at clamp(x, lo, hi)
  /// into b[0..degree] and returns the index of the first one.
  std::size_t basis(double x, double* b) const;
  /// Same, plus d/dx of each basis value. Derivatives are zero outside [lo, hi]
  /// since the spline term is clamped there.
  std::size_t basis_with_derivative(double x, double* b, double* db) const;
  /// All basis values at x (length basis_count()).
  std::vector<double> full_basis(double x) const;
};

/// phi(x) = w_b * silu(x) + w_s * sum_i c_i B_i(x).
struct Spline {
  SplineGrid grid;
  std::vector<double> coeffs;
  double w_b = 1.0;
  double w_s = 1.0;

  double eval(double x) const;
  double grad_x(double x) const;
  /// d phi / d(c_0 .. c_{n-1}, w_b, w_s).
  std::vector<double> grad_params(double x) const;
};

enum class NodeKind { Additive, Multiplicative };

struct Penalty {
  double lambda = 0.0;
  double mu1 = 1.0;
  double mu2 = 1.0;
  double weight_decay = 0.0;
};

struct KanConfig {
  std::vector<std::size_t> widths{1, 1};
  int grid = 5;
  int degree = 3;
  double range_lo = -10.0;
  double range_hi = 10.0;
  /// When false every node is additive.
  bool multiplicative = true;

  void validate() const;
};

/// Stack of KAN layers. Parameters live in one flat vector, laid out per
/// layer, then per edge (output j, input i) row-major, each edge holding
/// [c_0 .. c_{G+k-1}, w_b, w_s].
class KanNet {
 public:
  struct Tape {
    std::size_t rows = 0;
    /// acts[l]: inputs of layer l (rows x d_in); acts[L]: network output.
    std::vector<std::vector<double>> acts;
    /// phi[l]: edge activations (rows x d_out x d_in).
    std::vector<std::vector<double>> phi;
    /// Per-edge coefficient multiplying sign(phi) in the backward pass; set by penalty().
    std::vector<std::vector<double>> reg;
  };

  KanNet() = default;
  KanNet(const KanConfig& cfg, std::uint64_t seed);

  const KanConfig& config() const { return cfg_; }
  const SplineGrid& grid() const { return grid_; }
  std::size_t input_dim() const { return cfg_.widths.front(); }
  std::size_t output_dim() const { return cfg_.widths.back(); }
  std::size_t layer_count() const { return cfg_.widths.size() - 1; }
  std::size_t layer_in(std::size_t l) const { return cfg_.widths[l]; }
  std::size_t layer_out(std::size_t l) const { return cfg_.widths[l + 1]; }
  NodeKind node_kind(std::size_t l, std::size_t j) const;
  std::size_t edge_param_count() const { return grid_.basis_count() + 2; }
  std::size_t edge_count() const;
  std::size_t active_edge_count() const;
  std::size_t parameter_count() const { return params_.size(); }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::span<double> edge_params(std::size_t l, std::size_t j, std::size_t i);
  std::span<const double> edge_params(std::size_t l, std::size_t j, std::size_t i) const;
  Spline edge_spline(std::size_t l, std::size_t j, std::size_t i) const;
  double edge_eval(std::size_t l, std::size_t j, std::size_t i, double x) const;

  bool active(std::size_t l, std::size_t j, std::size_t i) const;
  void set_active(std::size_t l, std::size_t j, std::size_t i, bool on);
  const std::vector<unsigned char>& mask() const { return mask_; }

  /// X is rows x input_dim row-major; out receives rows x output_dim.
  void forward(std::span<const double> X, std::size_t rows, Tape& tape, std::span<double> out,
               std::mt19937_64* train_rng = nullptr) const;
  std::vector<double> forward(std::span<const double> x) const;
  /// Accumulates (+=) parameter gradients for d loss / d out = dout; writes
  /// d loss / d X into dX when it is non-empty.
  void backward(const Tape& tape, std::span<const double> dout, std::span<double> grad,
                std::span<double> dX = {}) const;
  /// lambda * (mu1 * sum_l |Phi_l|_1 + mu2 * sum_l S(Phi_l)) on the taped batch.
  /// Stores the matching gradient coefficients in the tape for backward().
  double penalty(Tape& tape, const Penalty& p) const;

  /// Per-edge |phi|_1 over the taped rows, d_out x d_in row-major.
  std::vector<double> edge_l1(const Tape& tape, std::size_t l) const;
  /// Min and max of each input of layer l over the taped rows.
  std::vector<std::pair<double, double>> input_ranges(const Tape& tape, std::size_t l) const;

  std::string to_json() const;
  static KanNet from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static KanNet load(const std::filesystem::path& path);

  friend bool operator==(const KanNet& a, const KanNet& b);

 private:
  std::size_t edge_index(std::size_t l, std::size_t j, std::size_t i) const;
  void build();

  KanConfig cfg_;
  SplineGrid grid_;
  std::vector<double> params_;
  std::vector<unsigned char> mask_;
  std::vector<std::size_t> layer_edge_offset_;
};

double layer_l1(std::span<const double> edge_norms);
/// -sum p log p with p = |phi|_1 / |Phi|_1 and 0 log 0 = 0.
double layer_entropy(std::span<const double> edge_norms);

/// Masks edges whose |phi|_1 on the calibration batch is below rho and hidden
/// nodes whose largest incoming and outgoing norms are both below rho, then
/// edges that no longer reach the output (into a node without active outgoing
/// edges, or into a product with an empty factor).
/// Warns when every edge of a layer ends up masked.
KanNet prune(const KanNet& net, double rho, std::span<const double> calibration, std::size_t rows,
             std::vector<std::string>* warnings = nullptr);

}  // namespace graphdyn
