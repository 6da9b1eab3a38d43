#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "fca/data.hpp"
#include "fca/fed.hpp"
#include "fca/losses.hpp"
#include "fca/metrics.hpp"
#include "fca/partition.hpp"

namespace fca::experiment {

// Raised for unreadable, unparseable, or invalid configuration input.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  bool synthetic = true;
  // Synthetic source. synth.seed pins the dataset instance; run seeds vary
  // only model init and minibatch order so methods and seeds are compared on
  // one fixed benchmark instance.
  data::SynthSpec synth;
  std::string csv_path;  // csv source
  std::vector<std::string> feature_columns;
  std::string label_column;
  std::size_t csv_num_classes = 0;
};

struct PartitionConfig {
  std::string preset = "split2";  // split1 | split2 | custom
  std::size_t num_clients = 10;
  std::vector<double> per_class_alpha;  // custom only
  double missing_class_prob = 0.0;      // custom only
  double train_fraction = 0.8;          // custom only
  std::uint64_t seed = 0;               // pins the split instance across run seeds
};

// One experiment cell axis: a training method plus its loss composition.
struct MethodVariant {
  std::string label;
  fed::Method method = fed::Method::fca;
  losses::LossWeights weights;
};

struct ExperimentConfig {
  DataConfig data;
  PartitionConfig partition;
  std::vector<std::size_t> hidden_dims = {32, 16};
  fed::RoundPlan plan;  // method, weights, and seed are filled per cell
  std::string method_preset;             // table4 | table5 | table6, or empty
  std::vector<std::string> method_list;  // explicit methods when no preset
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string output_dir = "runs/out";
};

// Strict parse: unknown keys anywhere are errors naming the key, and every
// value is validated. parse(emit(parse(x))) == parse(x).
ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

// Canonical JSON for the parsed config (presets preserved, defaults explicit).
std::string emit_config(const ExperimentConfig& config);

// The resolved method axis: the preset grid or the explicit list.
std::vector<MethodVariant> make_variants(const ExperimentConfig& config);

// One (variant, seed) run's final-round metrics.
struct CellResult {
  std::string label;
  std::uint64_t seed = 0;
  metrics::MetricsRecord final_record;
  std::string csv_path;
};

struct MetricStat {
  double mean = 0.0;
  double std = 0.0;  // sample (n-1) convention; 0 for a single seed
};

struct VariantSummary {
  std::string label;
  std::size_t n_seeds = 0;
  MetricStat spec_bacc, spec_bauc, gen_bacc, gen_bauc, avg_bacc, avg_bauc;
};

struct RunSummary {
  std::vector<CellResult> cells;
  std::vector<VariantSummary> variants;
};

struct RunOptions {
  std::string out_override;         // replaces config.output_dir when non-empty
  std::size_t parallel = 1;         // worker threads over (variant, seed) cells
  std::size_t checkpoint_every = 0; // rounds between checkpoint files; 0 = off
};

// Executes the full (variant x seed) grid: per cell a fresh dataset draw,
// partition, and federated run sharing the cell seed, a per-round metrics
// CSV; then a summary JSON plus a copy of the canonical config in the output
// directory. Errors carry (method, seed) context.
RunSummary run(const ExperimentConfig& config, const RunOptions& opts = {});

// Aligned text table of one row per variant, columns S-bACC, S-bAUC, G-bACC,
// G-bAUC, Avg-bACC, Avg-bAUC as "75.1±0.4" percent entries.
std::string format_summary_table(const RunSummary& summary);

// summary.json round-trips the summary at full precision.
std::string summary_to_json(const RunSummary& summary);
RunSummary summary_from_json(const std::string& text);

// Reads <dir>/summary.json back for re-printing.
RunSummary load_summary(const std::string& dir);

}  // namespace fca::experiment
