#include "fca/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "fca/tensor.hpp"

namespace fca::metrics {

namespace {

bool has_scoreable_class(const PredictionBatch& preds) {
  std::vector<std::size_t> positives(preds.num_classes, 0);
  for (auto y : preds.labels) positives[y] += 1;
  for (auto p : positives)
    if (p > 0 && p < preds.n) return true;
  return false;
}

void check_batch(const PredictionBatch& preds) {
  if (preds.n == 0) throw std::invalid_argument("metrics: empty prediction batch");
  if (preds.scores.size() != preds.n * preds.num_classes)
    throw std::invalid_argument("metrics: score matrix size mismatch");
  if (preds.labels.size() != preds.n)
    throw std::invalid_argument("metrics: one label per row required");
  for (auto y : preds.labels)
    if (y >= preds.num_classes) throw std::invalid_argument("metrics: label out of range");
}

}  // namespace

double balanced_accuracy(const PredictionBatch& preds) {
  check_batch(preds);
  const std::size_t C = preds.num_classes;
  std::vector<std::size_t> present(C, 0), hit(C, 0);
  for (std::size_t i = 0; i < preds.n; ++i) {
    const double* row = preds.scores.data() + i * C;
    std::size_t arg = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (row[c] > row[arg]) arg = c;
    present[preds.labels[i]] += 1;
    if (arg == preds.labels[i]) hit[preds.labels[i]] += 1;
  }
  double sum = 0.0;
  std::size_t classes_present = 0;
  for (std::size_t c = 0; c < C; ++c) {
    if (present[c] == 0) continue;
    sum += static_cast<double>(hit[c]) / static_cast<double>(present[c]);
    ++classes_present;
  }
  return sum / static_cast<double>(classes_present);
}

double balanced_auc(const PredictionBatch& preds) {
  check_batch(preds);
  const std::size_t C = preds.num_classes;
  std::vector<std::size_t> positives(C, 0);
  for (auto y : preds.labels) positives[y] += 1;

  double sum = 0.0;
  std::size_t scoreable = 0;
  std::vector<std::pair<double, bool>> column(preds.n);  // (score, is positive)
  for (std::size_t c = 0; c < C; ++c) {
    const std::size_t n_pos = positives[c];
    const std::size_t n_neg = preds.n - n_pos;
    if (n_pos == 0 || n_neg == 0) continue;

    for (std::size_t i = 0; i < preds.n; ++i)
      column[i] = {preds.scores[i * C + c], preds.labels[i] == c};
    std::sort(column.begin(), column.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    // Mann-Whitney rank sum with midranks for ties.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < preds.n) {
      std::size_t j = i;
      while (j + 1 < preds.n && column[j + 1].first == column[i].first) ++j;
      // ranks i+1 .. j+1 share the midrank
      const double midrank = 0.5 * static_cast<double>(i + 1 + j + 1);
      for (std::size_t t = i; t <= j; ++t)
        if (column[t].second) rank_sum_pos += midrank;
      i = j + 1;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) *
                                        static_cast<double>(n_pos + 1);
    sum += u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
    ++scoreable;
  }
  if (scoreable == 0) throw std::invalid_argument("balanced_auc: no scoreable class");
  return sum / static_cast<double>(scoreable);
}

PredictionBatch predict(const data::Dataset& dataset, const std::vector<std::size_t>& indices,
                        const model::ModelParams& params,
                        const model::LayerParams* head_override) {
  if (indices.empty()) throw std::invalid_argument("predict: no rows selected");
  const std::size_t d = dataset.d;
  std::vector<double> x;
  x.reserve(indices.size() * d);
  PredictionBatch out;
  out.n = indices.size();
  out.num_classes = params.num_classes();
  out.labels.reserve(out.n);
  for (auto i : indices) {
    if (i >= dataset.n) throw std::invalid_argument("predict: index out of range");
    x.insert(x.end(), dataset.row(i), dataset.row(i) + d);
    out.labels.push_back(dataset.labels[i]);
  }

  autodiff::Tape tape;
  auto ext = model::lift_extractor(tape, params, false);
  auto head = head_override ? model::lift_head(tape, *head_override, false)
                            : model::lift_head(tape, params.head, false);
  auto feats = model::forward_features(tape, ext, tape.constant({out.n, d}, std::move(x)));
  auto probs = tape.exp(tape.log_softmax(model::forward_head(tape, head, feats)));
  out.scores = probs.values();
  return out;
}

SpecializationResult evaluate_specialization(const data::Dataset& dataset,
                                             const std::vector<EvalClient>& clients) {
  if (clients.empty()) throw std::invalid_argument("evaluate_specialization: no clients");
  SpecializationResult r;
  for (const auto& c : clients) {
    if (!c.params || !c.test_idx || c.test_idx->empty())
      throw std::invalid_argument("evaluate_specialization: client " +
                                  std::to_string(c.client_id) + " has no test shard");
    auto preds = predict(dataset, *c.test_idx, *c.params, c.head_override);
    r.client_bacc.push_back(balanced_accuracy(preds));
    // A shard whose labels are all one class has no one-vs-rest pair to rank;
    // such clients carry NaN and drop out of the bAUC mean.
    r.client_bauc.push_back(has_scoreable_class(preds)
                                ? balanced_auc(preds)
                                : std::numeric_limits<double>::quiet_NaN());
  }
  r.bacc = std::accumulate(r.client_bacc.begin(), r.client_bacc.end(), 0.0) /
           static_cast<double>(clients.size());
  double auc_sum = 0.0;
  std::size_t auc_n = 0;
  for (double a : r.client_bauc)
    if (!std::isnan(a)) {
      auc_sum += a;
      ++auc_n;
    }
  r.bauc = auc_n == 0 ? std::numeric_limits<double>::quiet_NaN()
                      : auc_sum / static_cast<double>(auc_n);
  return r;
}

GeneralizationResult evaluate_generalization(const data::Dataset& dataset,
                                             const std::vector<std::size_t>& aggregated_test,
                                             const std::vector<EvalClient>& models) {
  if (models.empty()) throw std::invalid_argument("evaluate_generalization: no models");
  if (aggregated_test.empty())
    throw std::invalid_argument("evaluate_generalization: empty aggregated test set");
  double bacc = 0.0, bauc = 0.0;
  for (const auto& m : models) {
    auto preds = predict(dataset, aggregated_test, *m.params, m.head_override);
    bacc += balanced_accuracy(preds);
    bauc += balanced_auc(preds);
  }
  return {bacc / static_cast<double>(models.size()),
          bauc / static_cast<double>(models.size())};
}

}  // namespace fca::metrics
