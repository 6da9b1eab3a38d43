#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fca/data.hpp"
#include "fca/model.hpp"

namespace fca::metrics {

// Softmax class scores with ground truth for one evaluation pass.
struct PredictionBatch {
  std::size_t n = 0;
  std::size_t num_classes = 0;
  std::vector<double> scores;  // n x C, rows sum to 1
  std::vector<std::size_t> labels;
};

// Mean per-class recall (argmax prediction, ties to the lower class index)
// over the classes present in the labels.
double balanced_accuracy(const PredictionBatch& preds);

// Mean one-vs-rest Mann-Whitney AUC (ties count 0.5) over the classes that
// have both positives and negatives.
double balanced_auc(const PredictionBatch& preds);

// Forward pass of extractor + head over the selected rows; softmax scores.
// head_override substitutes a personalized head for the params' own head.
PredictionBatch predict(const data::Dataset& dataset, const std::vector<std::size_t>& indices,
                        const model::ModelParams& params,
                        const model::LayerParams* head_override = nullptr);

// One client's model choice for an evaluation pass.
struct EvalClient {
  std::size_t client_id = 0;
  const model::ModelParams* params = nullptr;          // shared or local model
  const model::LayerParams* head_override = nullptr;   // personalized head, if any
  const std::vector<std::size_t>* test_idx = nullptr;
};

// Per-client metrics on each client's own test shard plus their unweighted
// means. A client whose shard holds a single class has no rankable
// one-vs-rest pair; its bAUC entry is NaN and it is excluded from the bAUC
// mean (bACC is unaffected).
struct SpecializationResult {
  std::vector<double> client_bacc;
  std::vector<double> client_bauc;
  double bacc = 0.0;
  double bauc = 0.0;
};
SpecializationResult evaluate_specialization(const data::Dataset& dataset,
                                             const std::vector<EvalClient>& clients);

// Metrics over the union of all test shards. Single-model methods pass one
// entry (the federated model); local learning passes one entry per client
// model and receives the across-model average.
struct GeneralizationResult {
  double bacc = 0.0;
  double bauc = 0.0;
};
GeneralizationResult evaluate_generalization(const data::Dataset& dataset,
                                             const std::vector<std::size_t>& aggregated_test,
                                             const std::vector<EvalClient>& models);

// One evaluation round's record.
struct MetricsRecord {
  std::size_t round = 0;
  std::string method;
  std::uint64_t seed = 0;
  std::vector<double> client_bacc;
  std::vector<double> client_bauc;
  double spec_bacc = 0.0;
  double spec_bauc = 0.0;
  double gen_bacc = 0.0;
  double gen_bauc = 0.0;
  double avg_bacc = 0.0;  // (spec + gen) / 2, exactly
  double avg_bauc = 0.0;
};

}  // namespace fca::metrics
