#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace graphdyn {

/// Regular sample times t0 + (t1 - t0) * k / (count - 1), k = 0..count-1.
/// Every component that needs sample times calls this, so stored and
/// recomputed grids agree bitwise.
std::vector<double> sample_times(double t0, double t1, std::size_t count);

/// Node states sampled on a regular time grid; states are stored row-major as
/// [time][node][feature].
struct Trajectory {
  std::vector<double> times;
  std::size_t nodes = 0;
  std::size_t features = 1;
  std::vector<double> states;
  std::string graph_ref;

  std::size_t length() const { return times.size(); }
  std::size_t stride() const { return nodes * features; }
  std::span<const double> at(std::size_t t) const {
    return std::span<const double>(states).subspan(t * stride(), stride());
  }
  std::span<double> at(std::size_t t) { return std::span<double>(states).subspan(t * stride(), stride()); }
  double step() const { return times.size() > 1 ? times[1] - times[0] : 0.0; }

  /// Throws ShapeError/FormatError when sizes disagree, spacing is irregular or
  /// a state is not finite.
  void validate() const;
};

/// Stencil derivatives aligned with source samples 2 .. T-3.
struct DerivativeSeries {
  std::vector<double> times;
  std::size_t nodes = 0;
  std::size_t features = 1;
  std::vector<double> derivs;
  std::string source;

  std::size_t length() const { return times.size(); }
  std::size_t stride() const { return nodes * features; }
  std::span<const double> at(std::size_t t) const {
    return std::span<const double>(derivs).subspan(t * stride(), stride());
  }
};

}  // namespace graphdyn
