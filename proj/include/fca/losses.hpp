#pragma once

#include <cstdint>
#include <vector>

#include "fca/tensor.hpp"

namespace fca::losses {

// Empirical class frequencies of one client's training shard.
struct ClassPrior {
  int client_id = -1;
  std::vector<std::size_t> counts;
  std::vector<double> pi;  // counts / sum(counts)
};

// Builds a prior from counts; throws if every count is zero.
ClassPrior make_prior(int client_id, std::vector<std::size_t> counts);

enum class ConsistencyDirection {
  personalized_guides_federated,  // KL(sg(personal) || federated) — the default
  federated_guides_personalized,  // KL(sg(federated) || personal)
  bidirectional,                  // mean of both directional terms
};

struct LossWeights {
  double lambda1 = 1.0;  // scales the federated-head classification term
  double lambda2 = 3.0;  // scales the personalized-head classification term
  ConsistencyDirection direction = ConsistencyDirection::personalized_guides_federated;
  bool consistency_enabled = true;   // off reproduces the no-regularizer ablation
  bool calibrate_consistency = false;  // compute the KL on prior-shifted logits
};

void validate(const LossWeights& w);

// Mean over the batch of -log softmax(logits)[label].
autodiff::Tensor cross_entropy(autodiff::Tape& tape, const autodiff::Tensor& logits,
                               const std::vector<std::size_t>& labels);

// Mean of -(1 - p_t)^gamma * log p_t; gamma = 0 reduces to cross_entropy.
autodiff::Tensor focal_loss(autodiff::Tape& tape, const autodiff::Tensor& logits,
                            const std::vector<std::size_t>& labels, double gamma);

// Cross-entropy on logits shifted by log pi (zero-count classes clamped to
// log 1e-12). Labels must belong to classes with nonzero counts.
autodiff::Tensor balanced_softmax(autodiff::Tape& tape, const autodiff::Tensor& logits,
                                  const std::vector<std::size_t>& labels,
                                  const ClassPrior& prior);

// Batch-mean KL between the two heads' softmax distributions. The guide side
// is detached (stop-gradient at its logits), so the loss trains only the
// other head's path.
autodiff::Tensor kl_consistency(autodiff::Tape& tape, const autodiff::Tensor& fed_logits,
                                const autodiff::Tensor& personal_logits,
                                ConsistencyDirection direction);

// lambda1 * balanced_softmax(fed) + lambda2 * balanced_softmax(personal)
// [+ kl_consistency at fixed weight 1 when enabled].
autodiff::Tensor fca_client_loss(autodiff::Tape& tape, const autodiff::Tensor& fed_logits,
                                 const autodiff::Tensor& personal_logits,
                                 const std::vector<std::size_t>& labels, const ClassPrior& prior,
                                 const LossWeights& weights);

// (mu/2) * squared L2 distance between the live parameter tensors and their
// round-start anchor values, summed over all blocks.
autodiff::Tensor proximal_term(autodiff::Tape& tape,
                               const std::vector<autodiff::Tensor>& current,
                               const std::vector<const std::vector<double>*>& anchor, double mu);

}  // namespace fca::losses
