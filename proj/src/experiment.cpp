#include "fca/experiment.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "fca/rng.hpp"
#include "json.hpp"

namespace fca::experiment {

namespace {

using nlohmann::json;

// Seed-stream tags: each run seed spawns independent draws for the data, the
// partition, and the model initialization.
constexpr std::uint64_t kDataTag = 0xD47A;
constexpr std::uint64_t kPartitionTag = 0x9A57;
constexpr std::uint64_t kModelTag = 0x30D3;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError("config error at " + (path.empty() ? "top level" : path) + ": " + what);
}

void check_keys(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        known = true;
        break;
      }
    if (!known) fail(path, "unknown key \"" + item.key() + "\"");
  }
}

const json* find(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

double get_double(const json& v, const std::string& path) {
  if (!v.is_number()) fail(path, "expected a number");
  return v.get<double>();
}

std::size_t get_size(const json& v, const std::string& path) {
  if (v.is_number_unsigned()) return v.get<std::size_t>();
  if (v.is_number_integer() && v.get<long long>() >= 0)
    return static_cast<std::size_t>(v.get<long long>());
  fail(path, "expected a non-negative integer");
}

bool get_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) fail(path, "expected true or false");
  return v.get<bool>();
}

std::string get_string(const json& v, const std::string& path) {
  if (!v.is_string()) fail(path, "expected a string");
  return v.get<std::string>();
}

std::vector<std::size_t> get_size_array(const json& v, const std::string& path) {
  if (!v.is_array()) fail(path, "expected an array");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(get_size(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

std::vector<double> get_double_array(const json& v, const std::string& path) {
  if (!v.is_array()) fail(path, "expected an array");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(get_double(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

std::string direction_name(losses::ConsistencyDirection d) {
  switch (d) {
    case losses::ConsistencyDirection::personalized_guides_federated:
      return "personalized_guides_federated";
    case losses::ConsistencyDirection::federated_guides_personalized:
      return "federated_guides_personalized";
    case losses::ConsistencyDirection::bidirectional:
      return "bidirectional";
  }
  throw std::invalid_argument("direction_name: unknown direction");
}

losses::ConsistencyDirection direction_from_name(const std::string& s, const std::string& path) {
  if (s == "personalized_guides_federated")
    return losses::ConsistencyDirection::personalized_guides_federated;
  if (s == "federated_guides_personalized")
    return losses::ConsistencyDirection::federated_guides_personalized;
  if (s == "bidirectional") return losses::ConsistencyDirection::bidirectional;
  fail(path, "unknown direction \"" + s + "\"");
}

void parse_data(const json& obj, DataConfig& out) {
  const std::string type =
      find(obj, "type") ? get_string(*find(obj, "type"), "data.type") : "synthetic";
  if (type == "synthetic") {
    check_keys(obj, "data",
               {"type", "num_classes", "dim", "class_counts", "separation", "within_std", "seed"});
    out.synthetic = true;
    if (auto* v = find(obj, "seed")) out.synth.seed = get_size(*v, "data.seed");
    if (auto* v = find(obj, "num_classes")) out.synth.num_classes = get_size(*v, "data.num_classes");
    if (auto* v = find(obj, "dim")) out.synth.dim = get_size(*v, "data.dim");
    if (auto* v = find(obj, "class_counts"))
      out.synth.class_counts = get_size_array(*v, "data.class_counts");
    if (auto* v = find(obj, "separation")) out.synth.separation = get_double(*v, "data.separation");
    if (auto* v = find(obj, "within_std")) out.synth.within_std = get_double(*v, "data.within_std");
    try {
      data::validate(out.synth);
    } catch (const std::exception& e) {
      fail("data", e.what());
    }
  } else if (type == "csv") {
    check_keys(obj, "data", {"type", "path", "feature_columns", "label_column", "num_classes"});
    out.synthetic = false;
    if (auto* v = find(obj, "path")) out.csv_path = get_string(*v, "data.path");
    if (out.csv_path.empty()) fail("data.path", "a csv source needs a file path");
    if (auto* v = find(obj, "feature_columns")) {
      if (!v->is_array()) fail("data.feature_columns", "expected an array");
      for (std::size_t i = 0; i < v->size(); ++i)
        out.feature_columns.push_back(
            get_string((*v)[i], "data.feature_columns[" + std::to_string(i) + "]"));
    }
    if (out.feature_columns.empty())
      fail("data.feature_columns", "a csv source needs at least one feature column");
    if (auto* v = find(obj, "label_column")) out.label_column = get_string(*v, "data.label_column");
    if (out.label_column.empty()) fail("data.label_column", "a csv source needs a label column");
    if (auto* v = find(obj, "num_classes")) out.csv_num_classes = get_size(*v, "data.num_classes");
    if (out.csv_num_classes < 2) fail("data.num_classes", "need at least 2 classes");
  } else {
    fail("data.type", "unknown data source \"" + type + "\"");
  }
}

void parse_partition(const json& obj, PartitionConfig& out) {
  check_keys(obj, "partition", {"preset", "num_clients", "per_class_alpha", "missing_class_prob",
                                "train_fraction", "seed"});
  if (auto* v = find(obj, "seed")) out.seed = get_size(*v, "partition.seed");
  if (auto* v = find(obj, "preset")) out.preset = get_string(*v, "partition.preset");
  if (out.preset != "split1" && out.preset != "split2" && out.preset != "custom")
    fail("partition.preset", "unknown preset \"" + out.preset + "\"");
  if (out.preset == "split1") out.num_clients = 5;
  if (auto* v = find(obj, "num_clients")) out.num_clients = get_size(*v, "partition.num_clients");
  if (out.num_clients == 0) fail("partition.num_clients", "need at least one client");
  const bool custom = out.preset == "custom";
  if (auto* v = find(obj, "per_class_alpha")) {
    if (!custom) fail("partition.per_class_alpha", "only a custom partition takes alphas");
    out.per_class_alpha = get_double_array(*v, "partition.per_class_alpha");
  }
  if (custom && out.per_class_alpha.empty())
    fail("partition.per_class_alpha", "a custom partition needs per-class alphas");
  if (auto* v = find(obj, "missing_class_prob")) {
    if (!custom) fail("partition.missing_class_prob", "only a custom partition takes this");
    out.missing_class_prob = get_double(*v, "partition.missing_class_prob");
  }
  if (auto* v = find(obj, "train_fraction")) {
    if (!custom) fail("partition.train_fraction", "only a custom partition takes this");
    out.train_fraction = get_double(*v, "partition.train_fraction");
  }
}

void parse_rounds(const json& obj, fed::RoundPlan& plan) {
  check_keys(obj, "rounds",
             {"total_rounds", "local_epochs", "batch_size", "base_lr", "lr_milestones",
              "lr_factor", "weight_decay", "eval_every"});
  if (auto* v = find(obj, "total_rounds")) plan.total_rounds = get_size(*v, "rounds.total_rounds");
  if (auto* v = find(obj, "local_epochs")) plan.local_epochs = get_size(*v, "rounds.local_epochs");
  if (auto* v = find(obj, "batch_size")) plan.batch_size = get_size(*v, "rounds.batch_size");
  if (auto* v = find(obj, "base_lr")) plan.base_lr = get_double(*v, "rounds.base_lr");
  if (auto* v = find(obj, "lr_milestones")) {
    plan.lr_milestones = get_size_array(*v, "rounds.lr_milestones");
  } else {
    // scale the 60/70-of-80 decay pattern to the configured horizon
    plan.lr_milestones.clear();
    const std::size_t t = plan.total_rounds;
    for (std::size_t m : {3 * t / 4, 7 * t / 8})
      if (plan.lr_milestones.empty() || m > plan.lr_milestones.back())
        plan.lr_milestones.push_back(m);
  }
  if (auto* v = find(obj, "lr_factor")) plan.lr_factor = get_double(*v, "rounds.lr_factor");
  if (auto* v = find(obj, "weight_decay")) plan.weight_decay = get_double(*v, "rounds.weight_decay");
  if (auto* v = find(obj, "eval_every")) plan.eval_every = get_size(*v, "rounds.eval_every");
}

void parse_loss(const json& obj, fed::RoundPlan& plan) {
  check_keys(obj, "loss",
             {"lambda1", "lambda2", "preset", "direction", "consistency_enabled",
              "calibrate_consistency", "focal_gamma", "prox_mu"});
  if (auto* v = find(obj, "preset")) {
    const std::string preset = get_string(*v, "loss.preset");
    if (preset != "table5_best") fail("loss.preset", "unknown preset \"" + preset + "\"");
    if (find(obj, "lambda1") || find(obj, "lambda2"))
      fail("loss.preset", "preset conflicts with explicit lambda values");
    plan.weights.lambda1 = 1.0;
    plan.weights.lambda2 = 3.0;
  }
  if (auto* v = find(obj, "lambda1")) plan.weights.lambda1 = get_double(*v, "loss.lambda1");
  if (auto* v = find(obj, "lambda2")) plan.weights.lambda2 = get_double(*v, "loss.lambda2");
  if (auto* v = find(obj, "direction"))
    plan.weights.direction = direction_from_name(get_string(*v, "loss.direction"), "loss.direction");
  if (auto* v = find(obj, "consistency_enabled"))
    plan.weights.consistency_enabled = get_bool(*v, "loss.consistency_enabled");
  if (auto* v = find(obj, "calibrate_consistency"))
    plan.weights.calibrate_consistency = get_bool(*v, "loss.calibrate_consistency");
  if (auto* v = find(obj, "focal_gamma")) plan.focal_gamma = get_double(*v, "loss.focal_gamma");
  if (auto* v = find(obj, "prox_mu")) plan.prox_mu = get_double(*v, "loss.prox_mu");
}

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

json json_double(double x) {
  // JSON has no NaN literal; keep the slot with null and restore on load
  if (std::isnan(x)) return nullptr;
  return x;
}

double double_from_json(const json& v, const std::string& path) {
  if (v.is_null()) return std::numeric_limits<double>::quiet_NaN();
  return get_double(v, path);
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config error at top level: expected an object");
  check_keys(root, "",
             {"data", "partition", "model", "rounds", "loss", "methods", "seeds", "output_dir"});

  ExperimentConfig cfg;
  if (auto* v = find(root, "data")) {
    if (!v->is_object()) fail("data", "expected an object");
    parse_data(*v, cfg.data);
  }
  if (auto* v = find(root, "partition")) {
    if (!v->is_object()) fail("partition", "expected an object");
    parse_partition(*v, cfg.partition);
  }
  if (auto* v = find(root, "model")) {
    if (!v->is_object()) fail("model", "expected an object");
    check_keys(*v, "model", {"hidden_dims"});
    if (auto* h = find(*v, "hidden_dims")) cfg.hidden_dims = get_size_array(*h, "model.hidden_dims");
  }
  if (cfg.hidden_dims.empty()) fail("model.hidden_dims", "need at least one hidden layer");
  for (auto h : cfg.hidden_dims)
    if (h == 0) fail("model.hidden_dims", "layer widths must be positive");
  if (auto* v = find(root, "rounds")) {
    if (!v->is_object()) fail("rounds", "expected an object");
    parse_rounds(*v, cfg.plan);
  }
  if (auto* v = find(root, "loss")) {
    if (!v->is_object()) fail("loss", "expected an object");
    parse_loss(*v, cfg.plan);
  }
  if (auto* v = find(root, "methods")) {
    if (v->is_string()) {
      cfg.method_preset = v->get<std::string>();
      if (cfg.method_preset != "table4" && cfg.method_preset != "table5" &&
          cfg.method_preset != "table6")
        fail("methods", "unknown preset \"" + cfg.method_preset + "\"");
    } else if (v->is_array()) {
      for (std::size_t i = 0; i < v->size(); ++i) {
        const std::string name = get_string((*v)[i], "methods[" + std::to_string(i) + "]");
        try {
          (void)fed::method_from_name(name);
        } catch (const std::exception& e) {
          fail("methods[" + std::to_string(i) + "]", e.what());
        }
        for (const auto& seen : cfg.method_list)
          if (seen == name)
            fail("methods", "duplicate method \"" + name + "\"");
        cfg.method_list.push_back(name);
      }
      if (cfg.method_list.empty()) fail("methods", "need at least one method");
    } else {
      fail("methods", "expected a preset name or an array of method names");
    }
  } else {
    cfg.method_list = {"fca"};
  }
  if (auto* v = find(root, "seeds")) {
    if (!v->is_array()) fail("seeds", "expected an array");
    cfg.seeds.clear();
    for (std::size_t i = 0; i < v->size(); ++i)
      cfg.seeds.push_back(get_size((*v)[i], "seeds[" + std::to_string(i) + "]"));
    if (cfg.seeds.empty()) fail("seeds", "need at least one seed");
  }
  if (auto* v = find(root, "output_dir")) cfg.output_dir = get_string(*v, "output_dir");
  if (cfg.output_dir.empty()) fail("output_dir", "must not be empty");

  try {
    fed::validate(cfg.plan);
  } catch (const std::exception& e) {
    fail("rounds", e.what());
  }
  return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string emit_config(const ExperimentConfig& cfg) {
  json root;
  json data;
  if (cfg.data.synthetic) {
    data["type"] = "synthetic";
    data["num_classes"] = cfg.data.synth.num_classes;
    data["dim"] = cfg.data.synth.dim;
    data["class_counts"] = cfg.data.synth.class_counts;
    data["separation"] = cfg.data.synth.separation;
    data["within_std"] = cfg.data.synth.within_std;
    data["seed"] = cfg.data.synth.seed;
  } else {
    data["type"] = "csv";
    data["path"] = cfg.data.csv_path;
    data["feature_columns"] = cfg.data.feature_columns;
    data["label_column"] = cfg.data.label_column;
    data["num_classes"] = cfg.data.csv_num_classes;
  }
  root["data"] = data;

  json part;
  part["preset"] = cfg.partition.preset;
  part["num_clients"] = cfg.partition.num_clients;
  if (cfg.partition.preset == "custom") {
    part["per_class_alpha"] = cfg.partition.per_class_alpha;
    part["missing_class_prob"] = cfg.partition.missing_class_prob;
    part["train_fraction"] = cfg.partition.train_fraction;
  }
  part["seed"] = cfg.partition.seed;
  root["partition"] = part;

  root["model"] = json{{"hidden_dims", cfg.hidden_dims}};

  json rounds;
  rounds["total_rounds"] = cfg.plan.total_rounds;
  rounds["local_epochs"] = cfg.plan.local_epochs;
  rounds["batch_size"] = cfg.plan.batch_size;
  rounds["base_lr"] = cfg.plan.base_lr;
  rounds["lr_milestones"] = cfg.plan.lr_milestones;
  rounds["lr_factor"] = cfg.plan.lr_factor;
  rounds["weight_decay"] = cfg.plan.weight_decay;
  rounds["eval_every"] = cfg.plan.eval_every;
  root["rounds"] = rounds;

  json loss;
  loss["lambda1"] = cfg.plan.weights.lambda1;
  loss["lambda2"] = cfg.plan.weights.lambda2;
  loss["direction"] = direction_name(cfg.plan.weights.direction);
  loss["consistency_enabled"] = cfg.plan.weights.consistency_enabled;
  loss["calibrate_consistency"] = cfg.plan.weights.calibrate_consistency;
  loss["focal_gamma"] = cfg.plan.focal_gamma;
  loss["prox_mu"] = cfg.plan.prox_mu;
  root["loss"] = loss;

  if (!cfg.method_preset.empty())
    root["methods"] = cfg.method_preset;
  else
    root["methods"] = cfg.method_list;
  root["seeds"] = cfg.seeds;
  root["output_dir"] = cfg.output_dir;
  return root.dump(2) + "\n";
}

std::vector<MethodVariant> make_variants(const ExperimentConfig& cfg) {
  std::vector<MethodVariant> out;
  const auto& base = cfg.plan.weights;
  if (cfg.method_preset == "table4") {
    for (const char* name :
         {"local", "fedavg_ce", "fedavg_focal", "fedavg_bsm", "fedprox", "fca"})
      out.push_back({name, fed::method_from_name(name), base});
  } else if (cfg.method_preset == "table5") {
    const std::pair<int, int> grid[] = {{1, 1}, {1, 2}, {1, 3}, {2, 1}, {3, 1}};
    for (auto [l1, l2] : grid)
      for (bool cr : {true, false}) {
        MethodVariant v;
        v.method = fed::Method::fca;
        v.weights = base;
        v.weights.lambda1 = l1;
        v.weights.lambda2 = l2;
        v.weights.consistency_enabled = cr;
        v.label = "fca_l1_" + std::to_string(l1) + "_l2_" + std::to_string(l2) +
                  (cr ? "_cr_on" : "_cr_off");
        out.push_back(std::move(v));
      }
  } else if (cfg.method_preset == "table6") {
    const std::pair<losses::ConsistencyDirection, const char*> dirs[] = {
        {losses::ConsistencyDirection::personalized_guides_federated, "fca_p_guides_f"},
        {losses::ConsistencyDirection::federated_guides_personalized, "fca_f_guides_p"},
        {losses::ConsistencyDirection::bidirectional, "fca_bidirectional"},
    };
    for (auto [dir, label] : dirs) {
      MethodVariant v;
      v.method = fed::Method::fca;
      v.weights = base;
      v.weights.direction = dir;
      v.weights.consistency_enabled = true;
      v.label = label;
      out.push_back(std::move(v));
    }
  } else {
    for (const auto& name : cfg.method_list)
      out.push_back({name, fed::method_from_name(name), base});
  }
  return out;
}

namespace {

data::Dataset build_dataset(const DataConfig& dc) {
  if (dc.synthetic) {
    auto spec = dc.synth;
    spec.seed = rng::mix(dc.synth.seed, kDataTag);
    return data::generate(spec);
  }
  data::CsvSchema schema{dc.feature_columns, dc.label_column, dc.csv_num_classes};
  return data::load_csv(dc.csv_path, schema);
}

partition::Partition build_partition(const PartitionConfig& pc,
                                     const std::vector<std::size_t>& labels,
                                     std::size_t num_classes) {
  const std::uint64_t seed = rng::mix(pc.seed, kPartitionTag);
  if (pc.preset == "split1") return partition::make_split1(labels, pc.num_clients, seed);
  if (pc.preset == "split2") return partition::make_split2(labels, pc.num_clients, seed);
  partition::PartitionSpec spec;
  spec.num_clients = pc.num_clients;
  spec.per_class_alpha = pc.per_class_alpha;
  spec.missing_class_prob = pc.missing_class_prob;
  spec.train_fraction = pc.train_fraction;
  spec.seed = seed;
  partition::validate(spec, num_classes);
  return partition::dirichlet_partition(labels, spec);
}

void write_cell_csv(const std::string& path, const std::vector<metrics::MetricsRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write csv: " + path);
  out << "round,client_id,split,bACC,bAUC\n";
  for (const auto& rec : records) {
    for (std::size_t k = 0; k < rec.client_bacc.size(); ++k)
      out << rec.round << "," << k << ",spec," << format_double(rec.client_bacc[k]) << ","
          << format_double(rec.client_bauc[k]) << "\n";
    out << rec.round << ",ALL,spec," << format_double(rec.spec_bacc) << ","
        << format_double(rec.spec_bauc) << "\n";
    out << rec.round << ",ALL,gen," << format_double(rec.gen_bacc) << ","
        << format_double(rec.gen_bauc) << "\n";
  }
}

CellResult run_cell(const ExperimentConfig& cfg, const MethodVariant& variant,
                    std::uint64_t seed, const std::string& out_dir,
                    std::size_t checkpoint_every) {
  auto dataset = build_dataset(cfg.data);
  auto part = build_partition(cfg.partition, dataset.labels, dataset.num_classes);

  std::vector<std::size_t> union_train;
  for (const auto& shard : part.train_idx)
    union_train.insert(union_train.end(), shard.begin(), shard.end());
  dataset = data::normalize(dataset, union_train);

  model::ModelConfig mc;
  mc.input_dim = dataset.d;
  mc.hidden_dims = cfg.hidden_dims;
  mc.num_classes = dataset.num_classes;
  mc.seed = rng::mix(seed, kModelTag);

  auto plan = cfg.plan;
  plan.method = variant.method;
  plan.weights = variant.weights;
  plan.seed = seed;

  const std::string stem = variant.label + "_seed" + std::to_string(seed);
  fed::RoundCallback on_round;
  if (checkpoint_every > 0) {
    on_round = [&](const fed::ServerState& server, const std::vector<fed::ClientState>& cs) {
      if (server.round % checkpoint_every != 0) return;
      const std::string ckpt =
          out_dir + "/" + stem + "_round" + std::to_string(server.round) + ".ckpt";
      std::ofstream os(ckpt, std::ios::binary);
      if (!os) throw std::runtime_error("cannot write checkpoint: " + ckpt);
      fed::save_checkpoint(server, cs, os);
    };
  }

  auto result = fed::run_experiment(dataset, part, mc, plan, nullptr, on_round);

  CellResult cell;
  cell.label = variant.label;
  cell.seed = seed;
  cell.final_record = result.records.back();
  cell.csv_path = stem + ".csv";
  write_cell_csv(out_dir + "/" + cell.csv_path, result.records);
  return cell;
}

MetricStat stat_over(const std::vector<double>& xs) {
  MetricStat s;
  const double n = static_cast<double>(xs.size());
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / n;
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

std::string percent_entry(const MetricStat& s) {
  if (std::isnan(s.mean)) return "n/a";
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.1f±%.1f", 100.0 * s.mean, 100.0 * s.std);
  return buf;
}

json stat_json(const MetricStat& s) {
  return json{{"mean", json_double(s.mean)}, {"std", json_double(s.std)}};
}

MetricStat stat_from_json(const json& v, const std::string& path) {
  MetricStat s;
  s.mean = double_from_json(v.at("mean"), path + ".mean");
  s.std = double_from_json(v.at("std"), path + ".std");
  return s;
}

}  // namespace

RunSummary run(const ExperimentConfig& cfg, const RunOptions& opts) {
  const std::string out_dir = opts.out_override.empty() ? cfg.output_dir : opts.out_override;
  std::filesystem::create_directories(out_dir);

  const auto variants = make_variants(cfg);
  struct Cell {
    const MethodVariant* variant;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (const auto& v : variants)
    for (auto s : cfg.seeds) cells.push_back({&v, s});

  std::vector<CellResult> results(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next{0};
  const std::size_t workers =
      std::max<std::size_t>(1, std::min(opts.parallel == 0 ? 1 : opts.parallel, cells.size()));

  auto work = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      const auto& cell = cells[i];
      const std::string context =
          "method " + cell.variant->label + ", seed " + std::to_string(cell.seed) + ": ";
      try {
        results[i] = run_cell(cfg, *cell.variant, cell.seed, out_dir, opts.checkpoint_every);
      } catch (const partition::PartitionError& e) {
        errors[i] = std::make_exception_ptr(partition::PartitionError(context + e.what()));
      } catch (const std::runtime_error& e) {
        errors[i] = std::make_exception_ptr(std::runtime_error(context + e.what()));
      } catch (const std::exception& e) {
        errors[i] = std::make_exception_ptr(std::runtime_error(context + e.what()));
      }
    }
  };

  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  RunSummary summary;
  summary.cells = std::move(results);
  for (const auto& v : variants) {
    VariantSummary vs;
    vs.label = v.label;
    std::vector<double> sb, sa, gb, ga, ab, aa;
    for (const auto& cell : summary.cells) {
      if (cell.label != v.label) continue;
      sb.push_back(cell.final_record.spec_bacc);
      sa.push_back(cell.final_record.spec_bauc);
      gb.push_back(cell.final_record.gen_bacc);
      ga.push_back(cell.final_record.gen_bauc);
      ab.push_back(cell.final_record.avg_bacc);
      aa.push_back(cell.final_record.avg_bauc);
    }
    vs.n_seeds = sb.size();
    vs.spec_bacc = stat_over(sb);
    vs.spec_bauc = stat_over(sa);
    vs.gen_bacc = stat_over(gb);
    vs.gen_bauc = stat_over(ga);
    vs.avg_bacc = stat_over(ab);
    vs.avg_bauc = stat_over(aa);
    summary.variants.push_back(std::move(vs));
  }

  {
    std::ofstream cfg_copy(out_dir + "/config.json", std::ios::binary);
    if (!cfg_copy) throw std::runtime_error("cannot write config copy in " + out_dir);
    cfg_copy << emit_config(cfg);
  }
  {
    std::ofstream sj(out_dir + "/summary.json", std::ios::binary);
    if (!sj) throw std::runtime_error("cannot write summary in " + out_dir);
    sj << summary_to_json(summary);
  }
  return summary;
}

namespace {

// column padding counts characters, not bytes (the ± sign is two bytes)
std::size_t display_width(const std::string& s) {
  std::size_t w = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++w;
  return w;
}

}  // namespace

std::string format_summary_table(const RunSummary& summary) {
  constexpr std::size_t kColWidth = 11;
  std::size_t label_w = std::string("method").size();
  for (const auto& v : summary.variants) label_w = std::max(label_w, v.label.size());

  std::ostringstream out;
  auto put = [&](const std::string& text, std::size_t width) {
    out << text;
    const std::size_t w = display_width(text);
    if (w < width) out << std::string(width - w, ' ');
  };
  put("method", label_w);
  for (const char* c : {"S-bACC", "S-bAUC", "G-bACC", "G-bAUC", "Avg-bACC", "Avg-bAUC"}) {
    out << "  ";
    put(c, kColWidth);
  }
  out << "\n";
  for (const auto& v : summary.variants) {
    put(v.label, label_w);
    for (const auto* s : {&v.spec_bacc, &v.spec_bauc, &v.gen_bacc, &v.gen_bauc, &v.avg_bacc,
                          &v.avg_bauc}) {
      out << "  ";
      put(percent_entry(*s), kColWidth);
    }
    out << "\n";
  }
  return out.str();
}

std::string summary_to_json(const RunSummary& summary) {
  json root;
  root["variants"] = json::array();
  for (const auto& v : summary.variants) {
    json jv;
    jv["label"] = v.label;
    jv["n_seeds"] = v.n_seeds;
    jv["spec_bacc"] = stat_json(v.spec_bacc);
    jv["spec_bauc"] = stat_json(v.spec_bauc);
    jv["gen_bacc"] = stat_json(v.gen_bacc);
    jv["gen_bauc"] = stat_json(v.gen_bauc);
    jv["avg_bacc"] = stat_json(v.avg_bacc);
    jv["avg_bauc"] = stat_json(v.avg_bauc);
    root["variants"].push_back(std::move(jv));
  }
  root["cells"] = json::array();
  for (const auto& c : summary.cells) {
    json jc;
    jc["label"] = c.label;
    jc["seed"] = c.seed;
    jc["csv"] = c.csv_path;
    jc["round"] = c.final_record.round;
    jc["method"] = c.final_record.method;
    jc["spec_bacc"] = json_double(c.final_record.spec_bacc);
    jc["spec_bauc"] = json_double(c.final_record.spec_bauc);
    jc["gen_bacc"] = json_double(c.final_record.gen_bacc);
    jc["gen_bauc"] = json_double(c.final_record.gen_bauc);
    jc["avg_bacc"] = json_double(c.final_record.avg_bacc);
    jc["avg_bauc"] = json_double(c.final_record.avg_bauc);
    root["cells"].push_back(std::move(jc));
  }
  return root.dump(2) + "\n";
}

namespace {

RunSummary summary_from_parsed(const json& root) {
  RunSummary summary;
  for (const auto& jv : root.at("variants")) {
    VariantSummary v;
    v.label = jv.at("label").get<std::string>();
    v.n_seeds = jv.at("n_seeds").get<std::size_t>();
    v.spec_bacc = stat_from_json(jv.at("spec_bacc"), "spec_bacc");
    v.spec_bauc = stat_from_json(jv.at("spec_bauc"), "spec_bauc");
    v.gen_bacc = stat_from_json(jv.at("gen_bacc"), "gen_bacc");
    v.gen_bauc = stat_from_json(jv.at("gen_bauc"), "gen_bauc");
    v.avg_bacc = stat_from_json(jv.at("avg_bacc"), "avg_bacc");
    v.avg_bauc = stat_from_json(jv.at("avg_bauc"), "avg_bauc");
    summary.variants.push_back(std::move(v));
  }
  for (const auto& jc : root.at("cells")) {
    CellResult c;
    c.label = jc.at("label").get<std::string>();
    c.seed = jc.at("seed").get<std::uint64_t>();
    c.csv_path = jc.at("csv").get<std::string>();
    c.final_record.round = jc.at("round").get<std::size_t>();
    c.final_record.method = jc.at("method").get<std::string>();
    c.final_record.seed = c.seed;
    c.final_record.spec_bacc = double_from_json(jc.at("spec_bacc"), "spec_bacc");
    c.final_record.spec_bauc = double_from_json(jc.at("spec_bauc"), "spec_bauc");
    c.final_record.gen_bacc = double_from_json(jc.at("gen_bacc"), "gen_bacc");
    c.final_record.gen_bauc = double_from_json(jc.at("gen_bauc"), "gen_bauc");
    c.final_record.avg_bacc = double_from_json(jc.at("avg_bacc"), "avg_bacc");
    c.final_record.avg_bauc = double_from_json(jc.at("avg_bauc"), "avg_bauc");
    summary.cells.push_back(std::move(c));
  }
  return summary;
}

}  // namespace

RunSummary summary_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("summary parse error: ") + e.what());
  }
  try {
    return summary_from_parsed(root);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("summary format error: ") + e.what());
  }
}

RunSummary load_summary(const std::string& dir) {
  const std::string path = dir + "/summary.json";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return summary_from_json(buf.str());
}

}  // namespace fca::experiment
