#include "graphdyn/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "graphdyn/errors.hpp"
#include "json.hpp"

namespace graphdyn {

using nlohmann::json;

DerivativeSeries stencil_derivatives(const Trajectory& traj) {
  const std::size_t T = traj.length();
  if (T < 5) throw ShapeError("stencil needs at least 5 samples, got " + std::to_string(T));
  if (traj.states.size() != T * traj.stride()) throw ShapeError("trajectory state size mismatch");
  const double h = traj.step();
  const std::size_t m = traj.stride();
  DerivativeSeries out;
  out.nodes = traj.nodes;
  out.features = traj.features;
  out.source = traj.graph_ref;
  out.times.assign(traj.times.begin() + 2, traj.times.end() - 2);
  out.derivs.resize((T - 4) * m);
  for (std::size_t t = 2; t + 2 < T; ++t) {
    const auto xm2 = traj.at(t - 2), xm1 = traj.at(t - 1), xp1 = traj.at(t + 1), xp2 = traj.at(t + 2);
    double* d = out.derivs.data() + (t - 2) * m;
    for (std::size_t i = 0; i < m; ++i) {
      d[i] = (-xp2[i] + 8.0 * xp1[i] - 8.0 * xm1[i] + xm2[i]) / (12.0 * h);
    }
  }
  return out;
}

Trajectory add_noise(const Trajectory& traj, double snr_db, std::uint64_t seed,
                     std::vector<std::string>* warnings) {
  if (std::isnan(snr_db)) throw ParamError("snr_db must not be NaN");
  Trajectory out = traj;
  if (std::isinf(snr_db) && snr_db > 0) return out;
  const std::size_t T = traj.length(), m = traj.stride();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t c = 0; c < m; ++c) {
    double mean = 0.0;
    for (std::size_t t = 0; t < T; ++t) mean += traj.states[t * m + c];
    mean /= static_cast<double>(T);
    double power = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const double r = traj.states[t * m + c] - mean;
      power += r * r;
    }
    power /= static_cast<double>(T);
    if (power == 0.0) {
      if (warnings) {
        warnings->push_back("channel " + std::to_string(c) + " (node " + std::to_string(c / traj.features) +
                            ") is constant; no noise added");
      }
      continue;
    }
    const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
    for (std::size_t t = 0; t < T; ++t) out.states[t * m + c] += sigma * normal(rng);
  }
  return out;
}

Split make_split(std::size_t count, double train_fraction, double val_fraction) {
  if (!(train_fraction >= 0 && train_fraction <= 1) || !(val_fraction >= 0 && val_fraction <= 1) ||
      train_fraction + val_fraction > 1.0 + 1e-12) {
    throw ParamError("split fractions must lie in [0, 1] and sum to at most 1");
  }
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * count + 1e-9));
  auto n_val = static_cast<std::size_t>(std::floor(val_fraction * count + 1e-9));
  if (train_fraction + val_fraction >= 1.0 - 1e-12) n_val = count - n_train;
  n_val = std::min(n_val, count - n_train);
  Split s;
  s.train = {0, n_train};
  s.val = {n_train, n_train + n_val};
  s.test = {n_train + n_val, count};
  return s;
}

double Scaler::apply(double x, std::size_t f) const { return 2.0 * (x - min[f]) / (max[f] - min[f]) - 1.0; }

double Scaler::invert(double y, std::size_t f) const { return (y + 1.0) * 0.5 * (max[f] - min[f]) + min[f]; }

Trajectory Scaler::apply(const Trajectory& traj) const {
  Trajectory out = traj;
  for (std::size_t k = 0; k < out.states.size(); ++k) out.states[k] = apply(out.states[k], k % traj.features);
  return out;
}

Trajectory Scaler::invert(const Trajectory& traj) const {
  Trajectory out = traj;
  for (std::size_t k = 0; k < out.states.size(); ++k) out.states[k] = invert(out.states[k], k % traj.features);
  return out;
}

Scaler fit_scaler(const Trajectory& traj, const IndexRange& train) {
  if (train.empty() || train.end > traj.length()) throw ParamError("scaler needs a nonempty training range");
  Scaler s;
  s.min.assign(traj.features, INFINITY);
  s.max.assign(traj.features, -INFINITY);
  for (std::size_t t = train.begin; t < train.end; ++t) {
    const auto x = traj.at(t);
    for (std::size_t k = 0; k < x.size(); ++k) {
      const std::size_t f = k % traj.features;
      s.min[f] = std::min(s.min[f], x[k]);
      s.max[f] = std::max(s.max[f], x[k]);
    }
  }
  for (std::size_t f = 0; f < traj.features; ++f) {
    if (s.min[f] == s.max[f]) {
      throw DegenerateFeature("feature " + std::to_string(f) + " is constant on the training range");
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// IO

namespace {

std::string num_text(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_matrix(const std::filesystem::path& path, std::span<const double> data, std::size_t rows,
                  std::size_t cols) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  std::string line;
  for (std::size_t r = 0; r < rows; ++r) {
    line.clear();
    for (std::size_t c = 0; c < cols; ++c) {
      if (c) line += ',';
      line += num_text(data[r * cols + c]);
    }
    line += '\n';
    out << line;
  }
  if (!out) throw IoError("error writing " + path.string());
}

bool parse_double(std::string_view tok, double& v) {
  while (!tok.empty() && (tok.front() == ' ' || tok.front() == '\t')) tok.remove_prefix(1);
  while (!tok.empty() && (tok.back() == ' ' || tok.back() == '\t' || tok.back() == '\r')) tok.remove_suffix(1);
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  return ec == std::errc() && ptr == tok.data() + tok.size() && !tok.empty();
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// Reads rows of `cols` numbers; returns the row count. A leading header row is
// skipped when allowed.
std::vector<double> read_matrix(const std::filesystem::path& path, std::size_t& rows, std::size_t& cols,
                                bool allow_header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<double> data;
  std::string line;
  std::size_t lineno = 0;
  rows = 0;
  const bool fixed_cols = cols != 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tok = split_commas(line);
    std::vector<double> row(tok.size());
    bool ok = true;
    for (std::size_t k = 0; k < tok.size() && ok; ++k) ok = parse_double(tok[k], row[k]);
    if (!ok) {
      if (allow_header && rows == 0 && data.empty() && lineno == 1) continue;
      throw FormatError(path.filename().string() + ": malformed number", lineno);
    }
    if (cols == 0) cols = row.size();
    if (row.size() != cols) {
      throw FormatError(path.filename().string() + ": expected " + std::to_string(cols) + " columns, got " +
                            std::to_string(row.size()),
                        lineno);
    }
    for (double v : row) {
      if (!std::isfinite(v)) throw FormatError(path.filename().string() + ": non-finite value", lineno);
    }
    data.insert(data.end(), row.begin(), row.end());
    ++rows;
  }
  (void)fixed_cols;
  return data;
}

json range_json(const IndexRange& r) { return json::array({r.begin, r.end}); }

IndexRange range_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw FormatError("meta.json: split range must be [begin, end]", 0);
  return {j[0].get<std::size_t>(), j[1].get<std::size_t>()};
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  ds.traj.validate();
  if (ds.graph.size() != ds.traj.nodes) throw ShapeError("graph and trajectory node counts differ");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  json meta;
  meta["format"] = "graphdyn-dataset";
  meta["version"] = 1;
  meta["nodes"] = ds.traj.nodes;
  meta["features"] = ds.traj.features;
  meta["samples"] = ds.traj.length();
  meta["t_start"] = ds.traj.times.front();
  meta["t_end"] = ds.traj.times.back();
  if (ds.traj.times != sample_times(ds.traj.times.front(), ds.traj.times.back(), ds.traj.length())) {
    meta["times"] = ds.traj.times;
  }
  meta["graph_ref"] = ds.traj.graph_ref;
  meta["split"] = {{"train", range_json(ds.split.train)},
                   {"val", range_json(ds.split.val)},
                   {"test", range_json(ds.split.test)}};
  meta["has_derivs"] = ds.derivs.has_value();
  json extra;
  try {
    extra = json::parse(ds.metadata);
  } catch (const json::exception& e) {
    throw ParamError(std::string("dataset metadata is not valid JSON: ") + e.what());
  }
  meta["metadata"] = extra;

  std::ofstream out(dir / "meta.json");
  if (!out) throw IoError("cannot write " + (dir / "meta.json").string());
  out << meta.dump(2) << '\n';
  out.close();

  write_edge_list(ds.graph, dir / "graph.edges");
  write_matrix(dir / "states.csv", ds.traj.states, ds.traj.length(), ds.traj.stride());
  if (ds.derivs) {
    write_matrix(dir / "derivs.csv", ds.derivs->derivs, ds.derivs->length(), ds.derivs->stride());
  } else {
    std::filesystem::remove(dir / "derivs.csv", ec);
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  std::ifstream in(meta_path);
  if (!in) throw IoError("cannot open " + meta_path.string());
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("meta.json: ") + e.what(), 0);
  }
  Dataset ds;
  std::size_t T = 0;
  try {
    ds.traj.nodes = meta.at("nodes").get<std::size_t>();
    ds.traj.features = meta.at("features").get<std::size_t>();
    T = meta.at("samples").get<std::size_t>();
    if (meta.contains("times")) {
      ds.traj.times = meta["times"].get<std::vector<double>>();
    } else {
      ds.traj.times = sample_times(meta.at("t_start").get<double>(), meta.at("t_end").get<double>(), T);
    }
    ds.traj.graph_ref = meta.value("graph_ref", "");
    const auto& sp = meta.at("split");
    ds.split = {range_from(sp.at("train")), range_from(sp.at("val")), range_from(sp.at("test"))};
    ds.metadata = meta.value("metadata", json::object()).dump();
  } catch (const json::exception& e) {
    throw FormatError(std::string("meta.json: ") + e.what(), 0);
  }

  ds.graph = read_edge_list(dir / "graph.edges");
  if (ds.graph.size() != ds.traj.nodes) throw FormatError("graph.edges node count disagrees with meta.json", 1);

  std::size_t rows = 0, cols = ds.traj.stride();
  ds.traj.states = read_matrix(dir / "states.csv", rows, cols, false);
  if (rows != T) {
    throw FormatError("states.csv has " + std::to_string(rows) + " rows, expected " + std::to_string(T), rows + 1);
  }
  if (meta.value("has_derivs", false)) {
    if (T < 5) throw FormatError("derivs.csv present for fewer than 5 samples", 0);
    DerivativeSeries d;
    d.nodes = ds.traj.nodes;
    d.features = ds.traj.features;
    d.source = ds.traj.graph_ref;
    d.times.assign(ds.traj.times.begin() + 2, ds.traj.times.end() - 2);
    std::size_t drows = 0, dcols = ds.traj.stride();
    d.derivs = read_matrix(dir / "derivs.csv", drows, dcols, false);
    if (drows != T - 4) {
      throw FormatError("derivs.csv has " + std::to_string(drows) + " rows, expected " + std::to_string(T - 4),
                        drows + 1);
    }
    ds.derivs = std::move(d);
  }
  return ds;
}

Dataset load_empirical(const std::filesystem::path& csv, const std::filesystem::path& edges, double dt) {
  if (!(dt > 0)) throw ParamError("sample spacing must be positive");
  Dataset ds;
  ds.graph = read_edge_list(edges);
  std::size_t rows = 0, cols = 0;
  ds.traj.states = read_matrix(csv, rows, cols, true);
  if (rows < 2) throw FormatError(csv.filename().string() + ": need at least two rows", rows + 1);
  if (cols != ds.graph.size()) {
    throw FormatError(csv.filename().string() + ": " + std::to_string(cols) + " columns but the graph has " +
                          std::to_string(ds.graph.size()) + " nodes",
                      1);
  }
  ds.traj.nodes = cols;
  ds.traj.features = 1;
  ds.traj.times = sample_times(0.0, dt * static_cast<double>(rows - 1), rows);
  ds.traj.graph_ref = edges.filename().string();
  ds.split = make_split(rows, 0.8, 0.1);
  return ds;
}

}  // namespace graphdyn
