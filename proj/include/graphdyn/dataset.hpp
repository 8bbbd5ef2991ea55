#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "graphdyn/dynamics.hpp"
#include "graphdyn/graph.hpp"
#include "graphdyn/trajectory.hpp"

namespace graphdyn {

/// Five-point central stencil; the first two and last two samples are dropped.
/// Throws ShapeError if fewer than 5 samples.
DerivativeSeries stencil_derivatives(const Trajectory& traj);

/// Adds iid Gaussian noise per (node, feature) channel with variance
/// P / 10^(snr_db / 10), P the mean-removed signal power of the channel.
/// snr_db = +inf returns the input unchanged. Constant channels are left
/// untouched and reported in `warnings` when given.
Trajectory add_noise(const Trajectory& traj, double snr_db, std::uint64_t seed,
                     std::vector<std::string>* warnings = nullptr);

/// Half-open index ranges [begin, end) into a time series.
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool empty() const { return end <= begin; }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

struct Split {
  IndexRange train, val, test;
  friend bool operator==(const Split&, const Split&) = default;
};

/// Contiguous ordered split of `count` samples; the test range takes the rest.
/// Throws ParamError for fractions outside [0, 1] or summing above 1.
Split make_split(std::size_t count, double train_fraction, double val_fraction);

/// Per-feature affine map of the training range onto [-1, 1].
struct Scaler {
  std::vector<double> min, max;

  double apply(double x, std::size_t feature) const;
  double invert(double y, std::size_t feature) const;
  Trajectory apply(const Trajectory& traj) const;
  Trajectory invert(const Trajectory& traj) const;
};

/// Fits on samples [train.begin, train.end) across all nodes. Throws
/// DegenerateFeature when a feature is constant there, ParamError if the
/// training range is empty.
Scaler fit_scaler(const Trajectory& traj, const IndexRange& train);

/// Dataset directory: meta.json, graph.edges, states.csv and optionally derivs.csv.
struct Dataset {
  Trajectory traj;
  Graph graph;
  Split split;
  std::optional<DerivativeSeries> derivs;
  /// Free-form metadata stored verbatim in meta.json (JSON text of an object).
  std::string metadata = "{}";
};

void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
/// Throws IoError for missing files and FormatError (with line number) for
/// malformed content.
Dataset load_dataset(const std::filesystem::path& dir);

/// Empirical ingestion: CSV with one row per time step and one column per node
/// (an optional non-numeric header row is skipped), sample spacing `dt`, and a
/// weighted edge list in the graph file format.
Dataset load_empirical(const std::filesystem::path& csv, const std::filesystem::path& edges,
                       double dt);

}  // namespace graphdyn
