#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "graphdyn/errors.hpp"
#include "graphdyn/pipeline.hpp"

using namespace graphdyn;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "Run configuration (JSON)")->required();
  cmd->add_option("--seed", o.seed, "Override the run seed");
  cmd->add_option("--out", o.out, "Override the experiment directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Equation discovery for dynamics on graphs"};
  app.require_subcommand(1);
  Options opts;
  const std::pair<Stage, const char*> commands[] = {
      {Stage::Generate, "Simulate the train, validation and test datasets"},
      {Stage::Train, "Grid-search and train the neural surrogate"},
      {Stage::Distill, "Run Spline-Wise regression over the distillation grid"},
      {Stage::Select, "Rank candidate formulas by rollout error on the validation graph"},
      {Stage::Evaluate, "Score the selected formula and the surrogate on the test graphs"},
      {Stage::Finetune, "Fine-tune formula constants per node on empirical data"},
  };
  for (const auto& [stage, help] : commands) add_common(app.add_subcommand(std::string(stage_name(stage)), help), opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const Stage stage = stage_from_name(app.get_subcommands().front()->get_name());
    RunConfig cfg = RunConfig::load(opts.config);
    if (opts.seed) cfg.seed = *opts.seed;
    if (opts.out) cfg.output = *opts.out;
    const StageResult r = run_stage(stage, cfg);
    std::cout << stage_name(stage) << ": " << cfg.output.string() << " (config " << cfg.hash() << ")\n";
    for (const auto& n : r.notes) std::cout << "  " << n << '\n';
    for (const auto& f : r.files) std::cout << "  wrote " << f << '\n';
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "graphdyn: " << e.what() << '\n';
    return exit_code_for(e);
  }
}
