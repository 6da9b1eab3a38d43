// Command-line driver: run experiment grids from a config file, validate
// configs, and re-print stored summaries.
//
// Exit codes: 0 success, 2 bad config or usage, 3 aborted run, 4 partition
// failure.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "fca/experiment.hpp"
#include "fca/partition.hpp"

namespace {

int do_run(const std::string& config_path, const fca::experiment::RunOptions& opts) {
  auto cfg = fca::experiment::parse_config(config_path);
  auto summary = fca::experiment::run(cfg, opts);
  std::cout << fca::experiment::format_summary_table(summary);
  const std::string out_dir = opts.out_override.empty() ? cfg.output_dir : opts.out_override;
  std::cout << "results: " << out_dir << " (" << summary.cells.size() << " cells)\n";
  return 0;
}

int do_validate(const std::string& config_path) {
  auto cfg = fca::experiment::parse_config(config_path);
  const auto variants = fca::experiment::make_variants(cfg);
  std::cout << "ok: " << variants.size() << " method variant" << (variants.size() == 1 ? "" : "s")
            << " x " << cfg.seeds.size() << " seed" << (cfg.seeds.size() == 1 ? "" : "s") << "\n";
  return 0;
}

int do_summarize(const std::string& out_dir) {
  auto summary = fca::experiment::load_summary(out_dir);
  std::cout << fca::experiment::format_summary_table(summary);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated classifier-anchoring experiment driver"};
  app.require_subcommand(1);

  std::string config_path;
  fca::experiment::RunOptions opts;
  auto* run_cmd = app.add_subcommand("run", "execute the (method x seed) grid from a config");
  run_cmd->add_option("config", config_path, "config file (json)")->required();
  run_cmd->add_option("--out", opts.out_override, "override the config's output directory");
  run_cmd->add_option("--parallel", opts.parallel, "worker threads over grid cells")
      ->check(CLI::PositiveNumber);
  run_cmd->add_option("--checkpoint-every", opts.checkpoint_every,
                      "write a training checkpoint every R rounds (0 = off)");

  std::string validate_path;
  auto* validate_cmd = app.add_subcommand("validate", "parse and check a config, run nothing");
  validate_cmd->add_option("config", validate_path, "config file (json)")->required();

  std::string summary_dir;
  auto* summarize_cmd = app.add_subcommand("summarize", "re-print the table for a finished run");
  summarize_cmd->add_option("out-dir", summary_dir, "output directory of a previous run")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (run_cmd->parsed()) return do_run(config_path, opts);
    if (validate_cmd->parsed()) return do_validate(validate_path);
    return do_summarize(summary_dir);
  } catch (const fca::experiment::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const fca::partition::PartitionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
