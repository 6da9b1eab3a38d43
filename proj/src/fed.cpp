#include "fca/fed.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "fca/rng.hpp"
#include "fca/tensor.hpp"

namespace fca::fed {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEps = 1e-8;

std::vector<bool> all_decay(std::size_t blocks) { return std::vector<bool>(blocks, true); }

// Gradients of the lifted blocks, in the canonical flattening order.
std::vector<const std::vector<double>*> collect_grads(const model::ExtractorTensors& ext,
                                                      const model::HeadTensors& head) {
  std::vector<const std::vector<double>*> grads;
  for (std::size_t l = 0; l < ext.weights.size(); ++l) {
    grads.push_back(&ext.weights[l].grad());
    grads.push_back(&ext.biases[l].grad());
  }
  grads.push_back(&head.weight.grad());
  grads.push_back(&head.bias.grad());
  return grads;
}

std::vector<std::vector<double>*> head_blocks(model::LayerParams& head) {
  return {&head.weight, &head.bias};
}

}  // namespace

std::string method_name(Method m) {
  switch (m) {
    case Method::local: return "local";
    case Method::fedavg_ce: return "fedavg_ce";
    case Method::fedavg_focal: return "fedavg_focal";
    case Method::fedavg_bsm: return "fedavg_bsm";
    case Method::fedprox: return "fedprox";
    case Method::fca: return "fca";
  }
  throw std::invalid_argument("method_name: unknown method");
}

Method method_from_name(const std::string& name) {
  if (name == "local") return Method::local;
  if (name == "fedavg_ce") return Method::fedavg_ce;
  if (name == "fedavg_focal") return Method::fedavg_focal;
  if (name == "fedavg_bsm") return Method::fedavg_bsm;
  if (name == "fedprox") return Method::fedprox;
  if (name == "fca") return Method::fca;
  throw std::invalid_argument("unknown method name: " + name);
}

void validate(const RoundPlan& plan) {
  if (plan.total_rounds == 0) throw std::invalid_argument("plan: total_rounds must be >= 1");
  if (plan.batch_size == 0) throw std::invalid_argument("plan: batch_size must be >= 1");
  if (!(plan.base_lr > 0.0)) throw std::invalid_argument("plan: base_lr must be positive");
  if (!(plan.lr_factor > 0.0)) throw std::invalid_argument("plan: lr_factor must be positive");
  if (plan.weight_decay < 0.0) throw std::invalid_argument("plan: weight_decay must be >= 0");
  if (plan.focal_gamma < 0.0) throw std::invalid_argument("plan: focal_gamma must be >= 0");
  if (plan.prox_mu < 0.0) throw std::invalid_argument("plan: prox_mu must be >= 0");
  for (std::size_t i = 0; i < plan.lr_milestones.size(); ++i) {
    if (plan.lr_milestones[i] >= plan.total_rounds)
      throw std::invalid_argument("plan: lr milestone beyond the last round");
    if (i > 0 && plan.lr_milestones[i] <= plan.lr_milestones[i - 1])
      throw std::invalid_argument("plan: lr milestones must be strictly increasing");
  }
  losses::validate(plan.weights);
}

double lr_schedule(std::size_t t, const RoundPlan& plan) {
  std::size_t passed = 0;
  for (auto m : plan.lr_milestones)
    if (m <= t) ++passed;
  return plan.base_lr * std::pow(plan.lr_factor, static_cast<double>(passed));
}

void adam_step(AdamState& state, const std::vector<std::vector<double>*>& params,
               const std::vector<const std::vector<double>*>& grads, double lr,
               double weight_decay, const std::vector<bool>& decay) {
  if (params.size() != grads.size() || params.size() != decay.size())
    throw std::invalid_argument("adam_step: mismatched block lists");
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->size(), 0.0);
      state.v.emplace_back(p->size(), 0.0);
    }
  }
  if (state.m.size() != params.size())
    throw std::invalid_argument("adam_step: state built for a different block count");

  state.step += 1;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& p = *params[b];
    const auto& g = *grads[b];
    if (p.size() != g.size() || p.size() != state.m[b].size())
      throw std::invalid_argument("adam_step: block size mismatch");
    auto& m = state.m[b];
    auto& v = state.v[b];
    const double wd = decay[b] ? weight_decay : 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= lr * (m_hat / (std::sqrt(v_hat) + kEps) + wd * p[i]);
    }
  }
}

ServerState make_server(model::ModelParams params, const std::vector<std::size_t>& train_sizes) {
  if (train_sizes.empty()) throw std::invalid_argument("make_server: no clients");
  const std::size_t total = std::accumulate(train_sizes.begin(), train_sizes.end(), std::size_t{0});
  if (total == 0) throw std::invalid_argument("make_server: all train shards empty");
  ServerState s;
  s.params = std::move(params);
  s.weights.reserve(train_sizes.size());
  for (auto n : train_sizes)
    s.weights.push_back(static_cast<double>(n) / static_cast<double>(total));
  const double sum = std::accumulate(s.weights.begin(), s.weights.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::logic_error("make_server: aggregation weights do not sum to 1");
  return s;
}

std::vector<ClientState> make_clients(const data::Dataset& dataset,
                                      const partition::Partition& partition,
                                      const model::ModelParams& init) {
  if (partition.num_classes != dataset.num_classes)
    throw std::invalid_argument("make_clients: partition and dataset class counts differ");
  std::vector<ClientState> clients;
  clients.reserve(partition.num_clients);
  for (std::size_t k = 0; k < partition.num_clients; ++k) {
    ClientState c;
    c.client_id = k;
    c.train_idx = partition.train_idx[k];
    c.test_idx = partition.test_idx[k];
    c.prior = partition::compute_prior(partition, dataset.labels, k);
    c.personal_head = init.head;
    c.local_model = init;
    clients.push_back(std::move(c));
  }
  return clients;
}

model::ParamDelta local_update(ClientState& client, const data::Dataset& dataset,
                               const model::ModelParams& fed_params, const RoundPlan& plan,
                               std::size_t round, UpdateStats* stats) {
  if (client.train_idx.empty())
    throw std::invalid_argument("local_update: client " + std::to_string(client.client_id) +
                                " has an empty train shard");

  const bool is_local = plan.method == Method::local;
  // Local learning continues training its private model; every federated
  // method trains a fresh copy of the downloaded snapshot.
  model::ModelParams work = is_local ? model::ModelParams{} : fed_params;
  model::ModelParams& target = is_local ? client.local_model : work;

  AdamState fresh_opt;  // shared blocks restart their moments at each download
  AdamState& opt = is_local ? client.local_opt : fresh_opt;

  // Round-start anchor for the proximal pull.
  std::vector<const std::vector<double>*> anchor;
  if (plan.method == Method::fedprox) anchor = model::block_values(fed_params);

  const double lr = lr_schedule(round, plan);
  const std::size_t d = dataset.d;
  rng::Rng order_rng(rng::mix(rng::mix(plan.seed, round), client.client_id));
  std::vector<std::size_t> order = client.train_idx;

  if (stats) stats->epoch_mean_loss.clear();
  for (std::size_t epoch = 0; epoch < plan.local_epochs; ++epoch) {
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += plan.batch_size) {
      const std::size_t b = std::min(plan.batch_size, order.size() - start);
      std::vector<double> x;
      x.reserve(b * d);
      std::vector<std::size_t> y;
      y.reserve(b);
      for (std::size_t i = start; i < start + b; ++i) {
        x.insert(x.end(), dataset.row(order[i]), dataset.row(order[i]) + d);
        y.push_back(dataset.labels[order[i]]);
      }

      autodiff::Tape tape;
      auto ext = model::lift_extractor(tape, target, true);
      auto head = model::lift_head(tape, target.head, true);
      auto feats = model::forward_features(tape, ext, tape.constant({b, d}, std::move(x)));
      auto logits = model::forward_head(tape, head, feats);

      autodiff::Tensor loss;
      model::HeadTensors personal{};
      bool has_personal = false;
      switch (plan.method) {
        case Method::fedavg_ce:
          loss = losses::cross_entropy(tape, logits, y);
          break;
        case Method::fedavg_focal:
          loss = losses::focal_loss(tape, logits, y, plan.focal_gamma);
          break;
        case Method::local:
        case Method::fedavg_bsm:
          loss = losses::balanced_softmax(tape, logits, y, client.prior);
          break;
        case Method::fedprox: {
          std::vector<autodiff::Tensor> live;
          for (std::size_t l = 0; l < ext.weights.size(); ++l) {
            live.push_back(ext.weights[l]);
            live.push_back(ext.biases[l]);
          }
          live.push_back(head.weight);
          live.push_back(head.bias);
          loss = tape.add(losses::balanced_softmax(tape, logits, y, client.prior),
                          losses::proximal_term(tape, live, anchor, plan.prox_mu));
          if (stats) stats->proximal_terms += 1;
          break;
        }
        case Method::fca: {
          personal = model::lift_head(tape, client.personal_head, true);
          has_personal = true;
          auto personal_logits = model::forward_head(tape, personal, feats);
          loss = losses::fca_client_loss(tape, logits, personal_logits, y, client.prior,
                                         plan.weights);
          if (stats) stats->two_head_losses += 1;
          break;
        }
      }

      const double loss_value = loss.value();
      if (!std::isfinite(loss_value))
        throw std::runtime_error("round " + std::to_string(round) + ", client " +
                                 std::to_string(client.client_id) +
                                 ": non-finite training loss (diverged)");
      loss_sum += loss_value;
      batches += 1;
      tape.backward(loss);

      adam_step(opt, model::block_values(target), collect_grads(ext, head), lr,
                plan.weight_decay, all_decay(2 * target.extractor.size() + 2));
      if (has_personal) {
        // The personal head takes plain Adam steps: no weight decay, moments
        // persisting across rounds alongside the head itself.
        adam_step(client.personal_opt, head_blocks(client.personal_head),
                  {&personal.weight.grad(), &personal.bias.grad()}, lr, 0.0, {false, false});
        if (stats) stats->personal_head_steps += 1;
      }
      if (stats) stats->minibatches += 1;
    }
    if (stats)
      stats->epoch_mean_loss.push_back(batches ? loss_sum / static_cast<double>(batches) : 0.0);
  }

  if (is_local) return model::ParamDelta{};
  return model::subtract(work, fed_params);
}

void aggregate(ServerState& server,
               std::vector<std::pair<std::size_t, model::ParamDelta>> deltas) {
  const std::size_t K = server.weights.size();
  if (deltas.size() != K)
    throw std::invalid_argument("aggregate: got " + std::to_string(deltas.size()) +
                                " deltas for " + std::to_string(K) + " clients");
  std::vector<model::ParamDelta> ordered(K);
  std::vector<bool> seen(K, false);
  for (auto& [id, delta] : deltas) {
    if (id >= K) throw std::invalid_argument("aggregate: unknown client " + std::to_string(id));
    if (seen[id]) throw std::invalid_argument("aggregate: duplicate client " + std::to_string(id));
    seen[id] = true;
    ordered[id] = std::move(delta);
  }
  server.params = model::apply_delta(server.params, server.weights, ordered);
  server.round += 1;
}

namespace {

void write_f64_le(std::ostream& os, double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, sizeof bits);
  std::array<unsigned char, 8> b;
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b.data()), 8);
}

double read_f64_le(std::istream& is) {
  std::array<unsigned char, 8> b;
  is.read(reinterpret_cast<char*>(b.data()), 8);
  if (!is) throw std::runtime_error("load_checkpoint: truncated float stream");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double x;
  std::memcpy(&x, &bits, sizeof x);
  return x;
}

void write_block(std::ostream& os, const std::vector<double>& v) {
  for (double x : v) write_f64_le(os, x);
}

void read_block(std::istream& is, std::vector<double>& v) {
  for (auto& x : v) x = read_f64_le(is);
}

void write_opt(std::ostream& os, const AdamState& opt) {
  os << "opt " << opt.step << " " << opt.m.size() << "\n";
  for (std::size_t b = 0; b < opt.m.size(); ++b) os << "block " << opt.m[b].size() << "\n";
  os << "data\n";
  for (std::size_t b = 0; b < opt.m.size(); ++b) {
    write_block(os, opt.m[b]);
    write_block(os, opt.v[b]);
  }
}

AdamState read_opt(std::istream& is) {
  AdamState opt;
  std::string key;
  std::size_t blocks = 0;
  if (!(is >> key >> opt.step >> blocks) || key != "opt")
    throw std::runtime_error("load_checkpoint: malformed optimizer manifest");
  std::vector<std::size_t> sizes(blocks);
  for (auto& n : sizes)
    if (!(is >> key >> n) || key != "block")
      throw std::runtime_error("load_checkpoint: malformed optimizer block");
  if (!(is >> key) || key != "data")
    throw std::runtime_error("load_checkpoint: missing optimizer data marker");
  is.get();  // newline before the raw stream
  for (auto n : sizes) {
    opt.m.emplace_back(n, 0.0);
    opt.v.emplace_back(n, 0.0);
    read_block(is, opt.m.back());
    read_block(is, opt.v.back());
  }
  return opt;
}

void write_head(std::ostream& os, const model::LayerParams& head) {
  os << "head " << head.in << " " << head.out << "\n";
  os << "data\n";
  write_block(os, head.weight);
  write_block(os, head.bias);
}

model::LayerParams read_head(std::istream& is) {
  model::LayerParams head;
  std::string key;
  if (!(is >> key >> head.in >> head.out) || key != "head")
    throw std::runtime_error("load_checkpoint: malformed head manifest");
  if (!(is >> key) || key != "data")
    throw std::runtime_error("load_checkpoint: missing head data marker");
  is.get();
  head.weight.resize(head.in * head.out);
  head.bias.resize(head.out);
  read_block(is, head.weight);
  read_block(is, head.bias);
  return head;
}

}  // namespace

void save_checkpoint(const ServerState& server, const std::vector<ClientState>& clients,
                     std::ostream& os) {
  os << "fca-checkpoint 1\n";
  os << "round " << server.round << "\n";
  os << "weights " << server.weights.size() << "\n";
  os << "data\n";
  write_block(os, server.weights);
  model::save_params(server.params, os);
  os << "\nclients " << clients.size() << "\n";
  for (const auto& c : clients) {
    os << "client " << c.client_id << "\n";
    write_head(os, c.personal_head);
    os << "\n";
    write_opt(os, c.personal_opt);
    os << "\n";
    model::save_params(c.local_model, os);
    os << "\n";
    write_opt(os, c.local_opt);
    os << "\n";
  }
}

RunState load_checkpoint(std::istream& is) {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "fca-checkpoint" || version != 1)
    throw std::runtime_error("load_checkpoint: unrecognized header");
  RunState state;
  std::string key;
  std::size_t k = 0;
  if (!(is >> key >> state.server.round) || key != "round")
    throw std::runtime_error("load_checkpoint: malformed round counter");
  if (!(is >> key >> k) || key != "weights")
    throw std::runtime_error("load_checkpoint: malformed weight count");
  if (!(is >> key) || key != "data")
    throw std::runtime_error("load_checkpoint: missing weight data marker");
  is.get();
  state.server.weights.assign(k, 0.0);
  read_block(is, state.server.weights);
  state.server.params = model::load_params(is);
  std::size_t clients = 0;
  if (!(is >> key >> clients) || key != "clients")
    throw std::runtime_error("load_checkpoint: malformed client count");
  for (std::size_t i = 0; i < clients; ++i) {
    ClientState c;
    if (!(is >> key >> c.client_id) || key != "client")
      throw std::runtime_error("load_checkpoint: malformed client manifest");
    c.personal_head = read_head(is);
    c.personal_opt = read_opt(is);
    c.local_model = model::load_params(is);
    c.local_opt = read_opt(is);
    state.clients.push_back(std::move(c));
  }
  return state;
}

namespace {

metrics::MetricsRecord evaluate_round(const data::Dataset& dataset, const ServerState& server,
                                      const std::vector<ClientState>& clients,
                                      const std::vector<std::size_t>& union_test,
                                      const RoundPlan& plan, std::size_t round) {
  std::vector<metrics::EvalClient> spec_clients;
  spec_clients.reserve(clients.size());
  for (const auto& c : clients) {
    metrics::EvalClient e;
    e.client_id = c.client_id;
    e.test_idx = &c.test_idx;
    if (plan.method == Method::local) {
      e.params = &c.local_model;
    } else if (plan.method == Method::fca) {
      e.params = &server.params;
      e.head_override = &c.personal_head;
    } else {
      e.params = &server.params;
    }
    spec_clients.push_back(e);
  }
  auto spec = metrics::evaluate_specialization(dataset, spec_clients);

  std::vector<metrics::EvalClient> gen_models;
  if (plan.method == Method::local) {
    for (const auto& c : clients)
      gen_models.push_back({c.client_id, &c.local_model, nullptr, nullptr});
  } else {
    gen_models.push_back({0, &server.params, nullptr, nullptr});
  }
  auto gen = metrics::evaluate_generalization(dataset, union_test, gen_models);

  metrics::MetricsRecord rec;
  rec.round = round;
  rec.method = method_name(plan.method);
  rec.seed = plan.seed;
  rec.client_bacc = std::move(spec.client_bacc);
  rec.client_bauc = std::move(spec.client_bauc);
  rec.spec_bacc = spec.bacc;
  rec.spec_bauc = spec.bauc;
  rec.gen_bacc = gen.bacc;
  rec.gen_bauc = gen.bauc;
  rec.avg_bacc = (spec.bacc + gen.bacc) / 2.0;
  rec.avg_bauc = (spec.bauc + gen.bauc) / 2.0;
  return rec;
}

}  // namespace

ExperimentResult run_experiment(const data::Dataset& dataset,
                                const partition::Partition& partition,
                                const model::ModelConfig& config, const RoundPlan& plan,
                                const RunState* resume, const RoundCallback& on_round) {
  model::validate(config);
  validate(plan);
  if (config.num_classes != dataset.num_classes)
    throw std::invalid_argument("run_experiment: model and dataset class counts differ");
  if (config.input_dim != dataset.d)
    throw std::invalid_argument("run_experiment: model input dim and dataset dim differ");
  if (partition.num_classes != dataset.num_classes)
    throw std::invalid_argument("run_experiment: partition and dataset class counts differ");

  ExperimentResult result;
  auto init = model::init_model(config);
  result.clients = make_clients(dataset, partition, init);
  std::vector<std::size_t> train_sizes;
  train_sizes.reserve(result.clients.size());
  for (const auto& c : result.clients) train_sizes.push_back(c.train_idx.size());
  result.server = make_server(std::move(init), train_sizes);

  std::size_t first_round = 0;
  if (resume) {
    if (resume->clients.size() != result.clients.size())
      throw std::invalid_argument("run_experiment: checkpoint client count mismatch");
    if (resume->server.round > plan.total_rounds)
      throw std::invalid_argument("run_experiment: checkpoint is beyond the last round");
    first_round = resume->server.round;
    result.server.params = resume->server.params;
    result.server.round = resume->server.round;
    // shard views and priors were just rebuilt from the partition; only the
    // trained state comes from the checkpoint
    for (std::size_t k = 0; k < result.clients.size(); ++k) {
      if (resume->clients[k].client_id != result.clients[k].client_id)
        throw std::invalid_argument("run_experiment: checkpoint client ids mismatch");
      result.clients[k].personal_head = resume->clients[k].personal_head;
      result.clients[k].personal_opt = resume->clients[k].personal_opt;
      result.clients[k].local_model = resume->clients[k].local_model;
      result.clients[k].local_opt = resume->clients[k].local_opt;
    }
  }

  std::vector<std::size_t> union_test;
  for (const auto& c : result.clients)
    union_test.insert(union_test.end(), c.test_idx.begin(), c.test_idx.end());

  for (std::size_t t = first_round; t < plan.total_rounds; ++t) {
    const model::ModelParams snapshot = result.server.params;
    std::vector<std::pair<std::size_t, model::ParamDelta>> deltas;
    deltas.reserve(result.clients.size());
    for (auto& client : result.clients) {
      try {
        UpdateStats step_stats;
        auto delta = local_update(client, dataset, snapshot, plan, t, &step_stats);
        result.stats.minibatches += step_stats.minibatches;
        result.stats.two_head_losses += step_stats.two_head_losses;
        result.stats.personal_head_steps += step_stats.personal_head_steps;
        result.stats.proximal_terms += step_stats.proximal_terms;
        result.stats.epoch_mean_loss = std::move(step_stats.epoch_mean_loss);
        if (plan.method != Method::local) deltas.emplace_back(client.client_id, std::move(delta));
      } catch (const std::runtime_error&) {
        throw;  // already carries round/client context
      } catch (const std::exception& e) {
        throw std::runtime_error("round " + std::to_string(t) + ", client " +
                                 std::to_string(client.client_id) + ": " + e.what());
      }
    }
    if (plan.method == Method::local) {
      result.server.round += 1;
    } else {
      aggregate(result.server, std::move(deltas));
    }
    const bool cadence_hit = plan.eval_every > 0 && (t + 1) % plan.eval_every == 0;
    if (cadence_hit || t + 1 == plan.total_rounds)
      result.records.push_back(
          evaluate_round(dataset, result.server, result.clients, union_test, plan, t));
    if (on_round) on_round(result.server, result.clients);
  }
  return result;
}

}  // namespace fca::fed
