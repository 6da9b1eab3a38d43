#include "fca/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fca::losses {

using autodiff::Tape;
using autodiff::Tensor;

ClassPrior make_prior(int client_id, std::vector<std::size_t> counts) {
  std::size_t total = 0;
  for (auto c : counts) total += c;
  if (total == 0) throw std::invalid_argument("make_prior: all class counts are zero");
  ClassPrior p;
  p.client_id = client_id;
  p.pi.resize(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c)
    p.pi[c] = static_cast<double>(counts[c]) / static_cast<double>(total);
  p.counts = std::move(counts);
  return p;
}

void validate(const LossWeights& w) {
  if (!(std::isfinite(w.lambda1) && w.lambda1 >= 0.0))
    throw std::invalid_argument("loss weights: lambda1 must be finite and >= 0");
  if (!(std::isfinite(w.lambda2) && w.lambda2 >= 0.0))
    throw std::invalid_argument("loss weights: lambda2 must be finite and >= 0");
}

namespace {

// expanded-onehot constant for the batch labels
Tensor onehot(Tape& tape, const std::vector<std::size_t>& labels, std::size_t batch,
              std::size_t classes) {
  if (labels.size() != batch)
    throw std::invalid_argument("loss: one label per logit row required");
  std::vector<double> v(batch * classes, 0.0);
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] >= classes)
      throw std::invalid_argument("loss: label " + std::to_string(labels[i]) +
                                  " out of range for " + std::to_string(classes) + " classes");
    v[i * classes + labels[i]] = 1.0;
  }
  return tape.constant({batch, classes}, std::move(v));
}

// [batch x 1] column of log softmax(logits)[label]
Tensor picked_log_prob(Tape& tape, const Tensor& logits,
                       const std::vector<std::size_t>& labels) {
  auto lsm = tape.log_softmax(logits);
  return tape.row_sum(tape.mul(lsm, onehot(tape, labels, logits.rows(), logits.cols())));
}

constexpr double kZeroCountClamp = 1e-12;

Tensor log_prior_row(Tape& tape, const ClassPrior& prior) {
  const std::size_t classes = prior.pi.size();
  std::vector<double> log_pi(classes);
  for (std::size_t c = 0; c < classes; ++c)
    log_pi[c] = prior.counts[c] > 0 ? std::log(prior.pi[c]) : std::log(kZeroCountClamp);
  return tape.constant({classes}, std::move(log_pi));
}

// KL(softmax(sg(guide)) || softmax(pred)), summed over the batch (not yet
// divided by batch size).
Tensor kl_sum_guided(Tape& tape, const Tensor& guide_logits, const Tensor& pred_logits) {
  auto guide_lsm = tape.log_softmax(tape.stop_gradient(guide_logits));
  auto pred_lsm = tape.log_softmax(pred_logits);
  auto guide_p = tape.exp(guide_lsm);
  return tape.sum(tape.mul(guide_p, tape.sub(guide_lsm, pred_lsm)));
}

}  // namespace

Tensor cross_entropy(Tape& tape, const Tensor& logits, const std::vector<std::size_t>& labels) {
  auto picked = picked_log_prob(tape, logits, labels);
  return tape.scale(tape.sum(picked), -1.0 / static_cast<double>(logits.rows()));
}

Tensor focal_loss(Tape& tape, const Tensor& logits, const std::vector<std::size_t>& labels,
                  double gamma) {
  if (!(gamma >= 0.0)) throw std::invalid_argument("focal_loss: gamma must be >= 0");
  auto picked = picked_log_prob(tape, logits, labels);  // log p_t, [batch x 1]
  auto p_t = tape.exp(picked);
  auto ones = tape.constant({logits.rows(), std::size_t{1}},
                            std::vector<double>(logits.rows(), 1.0));
  auto factor = tape.pow_const(tape.sub(ones, p_t), gamma);
  return tape.scale(tape.sum(tape.mul(factor, picked)), -1.0 / static_cast<double>(logits.rows()));
}

Tensor balanced_softmax(Tape& tape, const Tensor& logits, const std::vector<std::size_t>& labels,
                        const ClassPrior& prior) {
  if (prior.pi.size() != logits.cols())
    throw std::invalid_argument("balanced_softmax: prior dimension does not match logits");
  for (auto y : labels)
    if (y < prior.counts.size() && prior.counts[y] == 0)
      throw std::invalid_argument(
          "balanced_softmax: label " + std::to_string(y) +
          " has zero count in this prior (shard and prior disagree)");
  auto calibrated = tape.add(logits, log_prior_row(tape, prior));
  return cross_entropy(tape, calibrated, labels);
}

Tensor kl_consistency(Tape& tape, const Tensor& fed_logits, const Tensor& personal_logits,
                      ConsistencyDirection direction) {
  if (fed_logits.shape() != personal_logits.shape())
    throw std::invalid_argument("kl_consistency: logit shapes differ");
  const double inv_batch = 1.0 / static_cast<double>(fed_logits.rows());
  switch (direction) {
    case ConsistencyDirection::personalized_guides_federated:
      return tape.scale(kl_sum_guided(tape, personal_logits, fed_logits), inv_batch);
    case ConsistencyDirection::federated_guides_personalized:
      return tape.scale(kl_sum_guided(tape, fed_logits, personal_logits), inv_batch);
    case ConsistencyDirection::bidirectional: {
      auto both = tape.add(kl_sum_guided(tape, personal_logits, fed_logits),
                           kl_sum_guided(tape, fed_logits, personal_logits));
      return tape.scale(both, 0.5 * inv_batch);
    }
  }
  throw std::logic_error("kl_consistency: unknown direction");
}

Tensor fca_client_loss(Tape& tape, const Tensor& fed_logits, const Tensor& personal_logits,
                       const std::vector<std::size_t>& labels, const ClassPrior& prior,
                       const LossWeights& weights) {
  validate(weights);
  auto fed_term = tape.scale(balanced_softmax(tape, fed_logits, labels, prior), weights.lambda1);
  auto local_term =
      tape.scale(balanced_softmax(tape, personal_logits, labels, prior), weights.lambda2);
  auto total = tape.add(fed_term, local_term);
  if (weights.consistency_enabled) {
    Tensor fed_in = fed_logits, personal_in = personal_logits;
    if (weights.calibrate_consistency) {
      auto log_pi = log_prior_row(tape, prior);
      fed_in = tape.add(fed_logits, log_pi);
      personal_in = tape.add(personal_logits, log_pi);
    }
    total = tape.add(total, kl_consistency(tape, fed_in, personal_in, weights.direction));
  }
  return total;
}

Tensor proximal_term(Tape& tape, const std::vector<Tensor>& current,
                     const std::vector<const std::vector<double>*>& anchor, double mu) {
  if (current.size() != anchor.size())
    throw std::invalid_argument("proximal_term: block counts differ");
  if (current.empty()) throw std::invalid_argument("proximal_term: no parameter blocks");
  Tensor acc;
  for (std::size_t b = 0; b < current.size(); ++b) {
    if (current[b].size() != anchor[b]->size())
      throw std::invalid_argument("proximal_term: block " + std::to_string(b) +
                                  " shapes differ");
    auto anchor_t = tape.constant(current[b].shape(), *anchor[b]);
    auto diff = tape.sub(current[b], anchor_t);
    auto sq = tape.sum(tape.mul(diff, diff));
    acc = (b == 0) ? sq : tape.add(acc, sq);
  }
  return tape.scale(acc, 0.5 * mu);
}

}  // namespace fca::losses
