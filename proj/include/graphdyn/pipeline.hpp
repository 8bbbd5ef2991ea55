#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "graphdyn/config.hpp"
#include "graphdyn/dataset.hpp"

namespace graphdyn {

enum class Stage { Generate, Train, Distill, Select, Evaluate, Finetune };
std::string_view stage_name(Stage s);
Stage stage_from_name(std::string_view name);

struct StageResult {
  Stage stage = Stage::Generate;
  /// Written files, relative to the experiment directory.
  std::vector<std::string> files;
  /// One-line notes worth showing to the user (warnings, selections).
  std::vector<std::string> notes;
};

/// Exclusive writer lock on an experiment directory, held for the lifetime of
/// the object. Throws LockError when the lock file already exists.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// Simulates one system on one graph from x0 ~ U[lo, hi], redrawing x0 with
/// the next derived seed while the integration diverges. The attempt count
/// lands in the dataset metadata. Throws DivergenceError after max_redraws.
Dataset simulate_dataset(const RunConfig& cfg, const GraphSpec& graph);

/// Runs one pipeline stage under the experiment directory cfg.output, taking
/// the directory lock and recording the stage in manifest.json. Throws
/// StageDependencyError when an input stage is missing or was produced by a
/// different config.
StageResult run_stage(Stage stage, const RunConfig& cfg);

/// Process exit code per error class: 2 config, 3 stage dependency, 4 I/O and
/// file format, 5 numerical, 6 lock, 1 anything else.
int exit_code_for(const std::exception& e);

}  // namespace graphdyn
