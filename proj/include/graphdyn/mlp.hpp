#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "graphdyn/kan.hpp"

namespace graphdyn {

enum class Activation { Relu, Softplus, Tanh };

std::string_view activation_name(Activation a);
Activation activation_from_name(std::string_view name);

struct MlpConfig {
  std::vector<std::size_t> widths{1, 16, 1};
  Activation activation = Activation::Tanh;
  /// Applied after each hidden activation, only when a training RNG is passed.
  double dropout = 0.0;

  void validate() const;
};

/// Fully connected network; parameters per layer are W (d_out x d_in,
/// row-major) followed by the bias.
class MlpNet {
 public:
  struct Tape {
    std::size_t rows = 0;
    /// acts[l]: input of layer l after activation and dropout; acts[L]: output.
    std::vector<std::vector<double>> acts;
    /// pre[l]: pre-activation output of layer l.
    std::vector<std::vector<double>> pre;
    /// Inverted-dropout multipliers for hidden layers (empty when off).
    std::vector<std::vector<double>> drop;
    double weight_decay = 0.0;
  };

  MlpNet() = default;
  MlpNet(const MlpConfig& cfg, std::uint64_t seed);

  const MlpConfig& config() const { return cfg_; }
  std::size_t input_dim() const { return cfg_.widths.front(); }
  std::size_t output_dim() const { return cfg_.widths.back(); }
  std::size_t layer_count() const { return cfg_.widths.size() - 1; }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  void forward(std::span<const double> X, std::size_t rows, Tape& tape, std::span<double> out,
               std::mt19937_64* train_rng = nullptr) const;
  std::vector<double> forward(std::span<const double> x) const;
  void backward(const Tape& tape, std::span<const double> dout, std::span<double> grad,
                std::span<double> dX = {}) const;
  /// weight_decay * sum of squared weights (biases excluded); the spline
  /// sparsity terms do not apply.
  double penalty(Tape& tape, const Penalty& p) const;

  std::string to_json() const;
  static MlpNet from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static MlpNet load(const std::filesystem::path& path);

  friend bool operator==(const MlpNet& a, const MlpNet& b) {
    return a.cfg_.widths == b.cfg_.widths && a.cfg_.activation == b.cfg_.activation &&
           a.cfg_.dropout == b.cfg_.dropout && a.params_ == b.params_;
  }

 private:
  void build();

  MlpConfig cfg_;
  std::vector<double> params_;
  std::vector<std::size_t> offset_;
};

}  // namespace graphdyn
