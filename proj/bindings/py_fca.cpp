// Python bindings for the simulator core: synthetic data generation, the
// benchmark partitions, the two evaluation metrics, and the config-driven
// experiment runner. Configs and summaries cross the boundary as JSON text so
// the Python surface stays in lockstep with the CLI's file formats.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fca/data.hpp"
#include "fca/experiment.hpp"
#include "fca/metrics.hpp"
#include "fca/partition.hpp"

namespace py = pybind11;

namespace {

py::dict dataset_to_dict(const fca::data::Dataset& ds) {
  py::list rows;
  for (std::size_t i = 0; i < ds.n; ++i) {
    py::list row;
    for (std::size_t j = 0; j < ds.d; ++j) row.append(ds.features[i * ds.d + j]);
    rows.append(std::move(row));
  }
  py::dict out;
  out["features"] = std::move(rows);
  out["labels"] = ds.labels;
  out["dim"] = ds.d;
  out["num_classes"] = ds.num_classes;
  return out;
}

py::dict partition_to_dict(const fca::partition::Partition& p) {
  py::dict out;
  out["assignment"] = p.assignment;
  out["train_idx"] = p.train_idx;
  out["test_idx"] = p.test_idx;
  out["removed_classes"] = p.removed_classes;
  out["dropped"] = p.dropped;
  out["num_clients"] = p.num_clients;
  out["num_classes"] = p.num_classes;
  return out;
}

fca::metrics::PredictionBatch batch_from(const std::vector<std::vector<double>>& scores,
                                         const std::vector<std::size_t>& labels) {
  fca::metrics::PredictionBatch p;
  p.n = scores.size();
  if (p.n == 0) throw std::invalid_argument("scores must hold at least one row");
  p.num_classes = scores.front().size();
  if (labels.size() != p.n)
    throw std::invalid_argument("labels must match the number of score rows");
  p.scores.reserve(p.n * p.num_classes);
  for (const auto& row : scores) {
    if (row.size() != p.num_classes)
      throw std::invalid_argument("every score row needs the same number of classes");
    p.scores.insert(p.scores.end(), row.begin(), row.end());
  }
  p.labels = labels;
  return p;
}

}  // namespace

PYBIND11_MODULE(fcasim, m) {
  m.doc() = "Desk-scale federated learning simulator: long-tailed synthetic data, "
            "Dirichlet client partitions, federated training methods with personalized "
            "heads, and the dual generalization/specialization evaluation protocol.";

  py::register_exception<fca::experiment::ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def(
      "generate_dataset",
      [](std::size_t num_classes, std::size_t dim, const std::vector<std::size_t>& class_counts,
         double separation, double within_std, std::uint64_t seed) {
        fca::data::SynthSpec spec;
        spec.num_classes = num_classes;
        spec.dim = dim;
        spec.class_counts = class_counts;
        spec.separation = separation;
        spec.within_std = within_std;
        spec.seed = seed;
        fca::data::validate(spec);
        return dataset_to_dict(fca::data::generate(spec));
      },
      py::arg("num_classes") = 5, py::arg("dim") = 8,
      py::arg("class_counts") = std::vector<std::size_t>{60, 250, 600, 1200, 2000},
      py::arg("separation") = 3.0, py::arg("within_std") = 1.0, py::arg("seed") = 0,
      "Gaussian-mixture classification data with one seeded mean per class; class ids "
      "ascend in frequency (class 0 is the rarest). Returns features, labels, dim, "
      "num_classes.");

  m.def(
      "make_split1",
      [](const std::vector<std::size_t>& labels, std::size_t num_clients, std::uint64_t seed) {
        return partition_to_dict(fca::partition::make_split1(labels, num_clients, seed));
      },
      py::arg("labels"), py::arg("num_clients") = 5, py::arg("seed") = 0,
      "Benchmark setting 1: the rarest class is spread with concentration 0.5, all other "
      "classes near-uniformly; nothing is removed.");

  m.def(
      "make_split2",
      [](const std::vector<std::size_t>& labels, std::size_t num_clients, std::uint64_t seed) {
        return partition_to_dict(fca::partition::make_split2(labels, num_clients, seed));
      },
      py::arg("labels"), py::arg("num_clients") = 10, py::arg("seed") = 0,
      "Benchmark setting 2: per-class concentrations {0.5, 5, 10, 30, 50} keyed to class id, "
      "plus independent per-(client, class) removal at probability 0.3.");

  m.def(
      "dirichlet_partition",
      [](const std::vector<std::size_t>& labels, const std::vector<double>& per_class_alpha,
         std::size_t num_clients, double missing_class_prob, double train_fraction,
         std::uint64_t seed) {
        fca::partition::PartitionSpec spec;
        spec.num_clients = num_clients;
        spec.per_class_alpha = per_class_alpha;
        spec.missing_class_prob = missing_class_prob;
        spec.train_fraction = train_fraction;
        spec.seed = seed;
        std::size_t num_classes = 0;
        for (auto y : labels) num_classes = std::max(num_classes, y + 1);
        fca::partition::validate(spec, num_classes);
        return partition_to_dict(fca::partition::dirichlet_partition(labels, spec));
      },
      py::arg("labels"), py::arg("per_class_alpha"), py::arg("num_clients"),
      py::arg("missing_class_prob") = 0.0, py::arg("train_fraction") = 0.8, py::arg("seed") = 0,
      "Per-class Dirichlet allocation of samples to clients with largest-remainder rounding, "
      "optional class removal, and a per-class train/test split inside each client.");

  m.def(
      "balanced_accuracy",
      [](const std::vector<std::vector<double>>& scores, const std::vector<std::size_t>& labels) {
        return fca::metrics::balanced_accuracy(batch_from(scores, labels));
      },
      py::arg("scores"), py::arg("labels"),
      "Mean per-class recall of the argmax prediction over the classes present in labels. "
      "scores is a list of per-sample class-score rows.");

  m.def(
      "balanced_auc",
      [](const std::vector<std::vector<double>>& scores, const std::vector<std::size_t>& labels) {
        return fca::metrics::balanced_auc(batch_from(scores, labels));
      },
      py::arg("scores"), py::arg("labels"),
      "Mean one-vs-rest Mann-Whitney AUC (ties count one half) over the classes with both "
      "positives and negatives.");

  m.def(
      "validate_config",
      [](const std::string& config_text) {
        return fca::experiment::emit_config(fca::experiment::parse_config_text(config_text));
      },
      py::arg("config_text"),
      "Strictly parses an experiment config (unknown keys are errors) and returns the "
      "canonical JSON with every default made explicit. Raises ConfigError on bad input.");

  m.def(
      "run_config",
      [](const std::string& config_text, const std::string& output_dir, std::size_t parallel,
         std::size_t checkpoint_every) {
        const auto cfg = fca::experiment::parse_config_text(config_text);
        fca::experiment::RunOptions opts;
        opts.out_override = output_dir;
        opts.parallel = parallel;
        opts.checkpoint_every = checkpoint_every;
        const auto summary = fca::experiment::run(cfg, opts);
        return fca::experiment::summary_to_json(summary);
      },
      py::arg("config_text"), py::arg("output_dir") = std::string(), py::arg("parallel") = 1,
      py::arg("checkpoint_every") = 0, py::call_guard<py::gil_scoped_release>(),
      "Runs the full (method x seed) grid described by the config JSON: per-cell metrics "
      "CSVs, a summary JSON, and a canonical config copy land in the output directory "
      "(output_dir overrides the config's when non-empty). Returns the summary as JSON "
      "text.");

  m.def(
      "summary_table",
      [](const std::string& summary_json) {
        return fca::experiment::format_summary_table(
            fca::experiment::summary_from_json(summary_json));
      },
      py::arg("summary_json"),
      "Renders a summary JSON (as returned by run_config) as the aligned percent table the "
      "CLI prints.");
}
