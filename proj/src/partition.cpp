#include "fca/partition.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>

#include "fca/rng.hpp"

namespace fca::partition {

void validate(const PartitionSpec& spec, std::size_t num_classes) {
  if (spec.num_clients == 0)
    throw std::invalid_argument("partition spec: at least one client required");
  if (spec.per_class_alpha.size() != num_classes)
    throw std::invalid_argument("partition spec: one alpha per class required (" +
                                std::to_string(num_classes) + " classes)");
  for (double a : spec.per_class_alpha)
    if (!(std::isfinite(a) && a > 0.0))
      throw std::invalid_argument("partition spec: alphas must be positive and finite");
  if (!(spec.missing_class_prob >= 0.0 && spec.missing_class_prob <= 1.0))
    throw std::invalid_argument("partition spec: missing_class_prob must be in [0, 1]");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw std::invalid_argument("partition spec: train_fraction must be in (0, 1)");
}

namespace {

constexpr std::size_t kMaxRedraws = 16;

// Integer quotas from proportions via the largest-remainder method: floor
// each expected count, then hand the leftover units to the largest
// fractional remainders (ties broken toward lower client ids).
std::vector<std::size_t> quota_counts(const std::vector<double>& proportions, std::size_t total) {
  const std::size_t k = proportions.size();
  std::vector<std::size_t> counts(k);
  std::vector<std::pair<double, std::size_t>> remainders(k);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double expect = proportions[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(expect));
    if (counts[i] > total) counts[i] = total;  // guard against fp overshoot
    remainders[i] = {expect - std::floor(expect), i};
    assigned += counts[i];
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < total; ++r, ++assigned)
    counts[remainders[r % k].second] += 1;
  return counts;
}

Partition try_partition(const std::vector<std::size_t>& labels, const PartitionSpec& spec,
                        std::size_t num_classes, rng::Rng& r) {
  const std::size_t k = spec.num_clients;
  Partition p;
  p.num_clients = k;
  p.num_classes = num_classes;
  p.assignment.assign(k, {});
  p.removed_classes.assign(k, {});
  p.train_idx.assign(k, {});
  p.test_idx.assign(k, {});

  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  // Per-client, per-class sample lists, filled class by class.
  std::vector<std::vector<std::vector<std::size_t>>> holdings(
      k, std::vector<std::vector<std::size_t>>(num_classes));

  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& pool = by_class[c];
    if (pool.empty()) continue;
    auto proportions = r.dirichlet(spec.per_class_alpha[c], k);
    auto counts = quota_counts(proportions, pool.size());
    r.shuffle(pool);
    std::size_t cursor = 0;
    for (std::size_t ci = 0; ci < k; ++ci) {
      auto& slot = holdings[ci][c];
      slot.assign(pool.begin() + cursor, pool.begin() + cursor + counts[ci]);
      cursor += counts[ci];
    }
  }

  // Independent per-(client, class) removal.
  if (spec.missing_class_prob > 0.0) {
    for (std::size_t ci = 0; ci < k; ++ci)
      for (std::size_t c = 0; c < num_classes; ++c)
        if (r.uniform() < spec.missing_class_prob) {
          p.removed_classes[ci].push_back(c);
          p.dropped += holdings[ci][c].size();
          holdings[ci][c].clear();
        }
  }

  // Per-class train/test split inside each client, then flatten.
  for (std::size_t ci = 0; ci < k; ++ci) {
    for (std::size_t c = 0; c < num_classes; ++c) {
      const auto& samples = holdings[ci][c];
      if (samples.empty()) continue;
      auto train_count = static_cast<std::size_t>(
          std::llround(spec.train_fraction * static_cast<double>(samples.size())));
      train_count = std::min(train_count, samples.size());
      p.assignment[ci].insert(p.assignment[ci].end(), samples.begin(), samples.end());
      p.train_idx[ci].insert(p.train_idx[ci].end(), samples.begin(),
                             samples.begin() + train_count);
      p.test_idx[ci].insert(p.test_idx[ci].end(), samples.begin() + train_count, samples.end());
    }
  }
  return p;
}

bool usable(const Partition& p) {
  for (std::size_t ci = 0; ci < p.num_clients; ++ci)
    if (p.train_idx[ci].empty() || p.test_idx[ci].empty()) return false;
  return true;
}

}  // namespace

Partition dirichlet_partition(const std::vector<std::size_t>& labels, const PartitionSpec& spec) {
  if (labels.empty()) throw std::invalid_argument("dirichlet_partition: labels are empty");
  const std::size_t num_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  validate(spec, num_classes);

  for (std::size_t attempt = 0; attempt <= kMaxRedraws; ++attempt) {
    rng::Rng r(rng::mix(spec.seed, attempt));
    Partition p = try_partition(labels, spec, num_classes, r);
    if (usable(p)) return p;
  }
  throw PartitionError("dirichlet_partition: no usable partition after " +
                       std::to_string(kMaxRedraws + 1) +
                       " draws (a client kept ending with an empty train or test shard)");
}

losses::ClassPrior compute_prior(const Partition& partition,
                                 const std::vector<std::size_t>& labels, std::size_t client) {
  if (client >= partition.num_clients)
    throw std::invalid_argument("compute_prior: no such client");
  const auto& train = partition.train_idx[client];
  if (train.empty()) throw std::invalid_argument("compute_prior: empty train shard");
  std::vector<std::size_t> counts(partition.num_classes, 0);
  for (auto i : train) counts[labels[i]] += 1;
  return losses::make_prior(static_cast<int>(client), std::move(counts));
}

Partition make_split1(const std::vector<std::size_t>& labels, std::size_t num_clients,
                      std::uint64_t seed) {
  PartitionSpec spec;
  spec.num_clients = num_clients;
  spec.per_class_alpha = {0.5, 50.0, 50.0, 50.0, 50.0};
  spec.missing_class_prob = 0.0;
  spec.seed = seed;
  return dirichlet_partition(labels, spec);
}

Partition make_split2(const std::vector<std::size_t>& labels, std::size_t num_clients,
                      std::uint64_t seed) {
  PartitionSpec spec;
  spec.num_clients = num_clients;
  spec.per_class_alpha = {0.5, 5.0, 10.0, 30.0, 50.0};
  spec.missing_class_prob = 0.3;
  spec.seed = seed;
  return dirichlet_partition(labels, spec);
}

namespace {

void write_index_list(std::ostream& os, const std::vector<std::size_t>& v) {
  os << v.size();
  for (auto x : v) os << " " << x;
  os << "\n";
}

std::vector<std::size_t> read_index_list(std::istream& is, const char* what) {
  std::size_t n = 0;
  if (!(is >> n)) throw std::runtime_error(std::string("load_partition: malformed ") + what);
  std::vector<std::size_t> v(n);
  for (auto& x : v)
    if (!(is >> x)) throw std::runtime_error(std::string("load_partition: truncated ") + what);
  return v;
}

}  // namespace

void save_partition(const Partition& p, std::ostream& os) {
  os << "fca-partition 1\n";
  os << "clients " << p.num_clients << " classes " << p.num_classes << " dropped " << p.dropped
     << "\n";
  for (std::size_t ci = 0; ci < p.num_clients; ++ci) {
    os << "client " << ci << "\n";
    os << "removed ";
    write_index_list(os, p.removed_classes[ci]);
    os << "assigned ";
    write_index_list(os, p.assignment[ci]);
    os << "train ";
    write_index_list(os, p.train_idx[ci]);
    os << "test ";
    write_index_list(os, p.test_idx[ci]);
  }
}

Partition load_partition(std::istream& is) {
  std::string magic, key;
  int version = 0;
  if (!(is >> magic >> version) || magic != "fca-partition" || version != 1)
    throw std::runtime_error("load_partition: unrecognized header");
  Partition p;
  std::string k1, k2, k3;
  if (!(is >> k1 >> p.num_clients >> k2 >> p.num_classes >> k3 >> p.dropped) ||
      k1 != "clients" || k2 != "classes" || k3 != "dropped")
    throw std::runtime_error("load_partition: malformed size line");
  p.assignment.assign(p.num_clients, {});
  p.removed_classes.assign(p.num_clients, {});
  p.train_idx.assign(p.num_clients, {});
  p.test_idx.assign(p.num_clients, {});
  for (std::size_t ci = 0; ci < p.num_clients; ++ci) {
    std::size_t id = 0;
    if (!(is >> key >> id) || key != "client" || id != ci)
      throw std::runtime_error("load_partition: malformed client record");
    if (!(is >> key) || key != "removed")
      throw std::runtime_error("load_partition: missing removed list");
    p.removed_classes[ci] = read_index_list(is, "removed list");
    if (!(is >> key) || key != "assigned")
      throw std::runtime_error("load_partition: missing assigned list");
    p.assignment[ci] = read_index_list(is, "assigned list");
    if (!(is >> key) || key != "train")
      throw std::runtime_error("load_partition: missing train list");
    p.train_idx[ci] = read_index_list(is, "train list");
    if (!(is >> key) || key != "test")
      throw std::runtime_error("load_partition: missing test list");
    p.test_idx[ci] = read_index_list(is, "test list");
  }
  return p;
}

}  // namespace fca::partition
