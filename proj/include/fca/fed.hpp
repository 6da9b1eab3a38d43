#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "fca/data.hpp"
#include "fca/losses.hpp"
#include "fca/metrics.hpp"
#include "fca/model.hpp"
#include "fca/partition.hpp"

namespace fca::fed {

// Training method for a run. fedavg_* differ only in the local loss; fedprox
// adds a proximal pull toward the round-start snapshot; local means every
// client trains a private model and nothing is aggregated.
enum class Method { local, fedavg_ce, fedavg_focal, fedavg_bsm, fedprox, fca };

std::string method_name(Method m);
Method method_from_name(const std::string& name);  // throws std::invalid_argument

struct RoundPlan {
  std::size_t total_rounds = 60;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 64;
  double base_lr = 1e-3;
  std::vector<std::size_t> lr_milestones = {45, 52};  // 0.75 T and 0.875 T
  double lr_factor = 0.1;
  double weight_decay = 5e-4;  // decoupled, shared blocks only
  Method method = Method::fca;
  losses::LossWeights weights;  // fca loss composition
  double focal_gamma = 2.0;     // fedavg_focal
  double prox_mu = 0.01;        // fedprox
  std::uint64_t seed = 0;
  std::size_t eval_every = 10;  // 0 = evaluate at the final round only
};

// Throws std::invalid_argument on bad shapes (zero rounds, zero batch,
// non-increasing or out-of-range milestones, negative rates).
void validate(const RoundPlan& plan);

// base_lr * factor^(number of milestones <= t). t is the 0-based round.
double lr_schedule(std::size_t t, const RoundPlan& plan);

// Adaptive-moment state for an ordered list of parameter blocks.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;
};

// One Adam step (beta1 0.9, beta2 0.999, eps 1e-8) with decoupled weight
// decay applied only to blocks whose decay flag is set. A zero gradient with
// decay off leaves the block bitwise unchanged.
void adam_step(AdamState& state, const std::vector<std::vector<double>*>& params,
               const std::vector<const std::vector<double>*>& grads, double lr,
               double weight_decay, const std::vector<bool>& decay);

struct ClientState {
  std::size_t client_id = 0;
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> test_idx;
  losses::ClassPrior prior;          // train-shard class frequencies
  model::LayerParams personal_head;  // lives on the client, never uploaded
  AdamState personal_opt;            // persists across rounds with its head
  model::ModelParams local_model;    // local-learning baseline only
  AdamState local_opt;               // persists: local training never resets
};

struct ServerState {
  model::ModelParams params;
  std::size_t round = 0;
  std::vector<double> weights;  // per client: |train_k| / sum, fixed for the run
};

// Counters exposed so tests can prove method isolation (e.g. a fedavg_bsm run
// never enters the two-head loss or steps a personal head).
struct UpdateStats {
  std::size_t minibatches = 0;
  std::size_t two_head_losses = 0;
  std::size_t personal_head_steps = 0;
  std::size_t proximal_terms = 0;
  std::vector<double> epoch_mean_loss;  // per local epoch of the last update
};

// Aggregation weights from train-shard sizes; their sum is 1 within 1e-12.
ServerState make_server(model::ModelParams params, const std::vector<std::size_t>& train_sizes);

// One state per partition client: shard views, train prior, a personal head
// initialized to the shared head, and a private model copy for local runs.
std::vector<ClientState> make_clients(const data::Dataset& dataset,
                                      const partition::Partition& partition,
                                      const model::ModelParams& init);

// One client round: copy the round-start snapshot, train locally for
// plan.local_epochs of shuffled minibatches, and return the shared-block
// delta (after - snapshot). Shared-block optimizer moments start fresh each
// round; the personal head (fca) or the private model (local) is mutated in
// place and an empty delta is returned for local runs. Throws
// std::runtime_error with round/client context if the loss goes non-finite.
model::ParamDelta local_update(ClientState& client, const data::Dataset& dataset,
                               const model::ModelParams& fed_params, const RoundPlan& plan,
                               std::size_t round, UpdateStats* stats = nullptr);

// Weighted application of one delta per client (every client participates
// every round). Deltas are reduced in ascending client-id order regardless of
// arrival order; duplicates and missing clients are rejected.
void aggregate(ServerState& server,
               std::vector<std::pair<std::size_t, model::ParamDelta>> deltas);

struct ExperimentResult {
  std::vector<metrics::MetricsRecord> records;
  ServerState server;
  std::vector<ClientState> clients;
  UpdateStats stats;  // accumulated over all clients and rounds
};

// Everything a run mutates: the server plus all client-side state. A saved
// checkpoint restores this exactly, so a resumed run continues the original
// trajectory bitwise (minibatch streams are keyed by round, not by history).
struct RunState {
  ServerState server;
  std::vector<ClientState> clients;
};

// Text manifest plus a little-endian double stream, like model serialization.
// Carries the round counter, server params and weights, and every client's
// personal head, private model, and their optimizer moments. Round-trips
// bitwise. The shard views and priors are NOT stored: they are rebuilt from
// the partition on resume.
void save_checkpoint(const ServerState& server, const std::vector<ClientState>& clients,
                     std::ostream& os);
RunState load_checkpoint(std::istream& is);

// Called after each completed round with the live state.
using RoundCallback = std::function<void(const ServerState&, const std::vector<ClientState>&)>;

// The full round loop: local updates, aggregation (except local runs), and
// periodic dual evaluation. Specialization uses each client's own head (fca),
// private model (local), or the shared model; generalization evaluates the
// shared model — or the average over private models for local runs — on the
// union of the test shards. Errors are rethrown with round/client context.
// Passing resume continues from a loaded checkpoint (rounds server.round..T);
// on_round, when set, observes the state after every completed round.
ExperimentResult run_experiment(const data::Dataset& dataset,
                                const partition::Partition& partition,
                                const model::ModelConfig& config, const RoundPlan& plan,
                                const RunState* resume = nullptr,
                                const RoundCallback& on_round = {});

}  // namespace fca::fed
