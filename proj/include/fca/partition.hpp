#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "fca/losses.hpp"

namespace fca::partition {

struct PartitionSpec {
  std::size_t num_clients = 1;
  std::vector<double> per_class_alpha;  // Dirichlet concentration per class
  double missing_class_prob = 0.0;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

void validate(const PartitionSpec& spec, std::size_t num_classes);

// Raised when no usable partition exists after the bounded re-draws.
struct PartitionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Partition {
  std::size_t num_clients = 0;
  std::size_t num_classes = 0;
  std::vector<std::vector<std::size_t>> assignment;       // per client, sample indices
  std::vector<std::vector<std::size_t>> removed_classes;  // per client, sorted class ids
  std::vector<std::vector<std::size_t>> train_idx;        // per client
  std::vector<std::vector<std::size_t>> test_idx;         // per client
  std::size_t dropped = 0;  // samples discarded by missing-class removal
};

// Per-class Dirichlet allocation with largest-remainder rounding, independent
// per-(client, class) removal, then a per-class train/test split inside each
// client. Re-draws (bounded) if any client ends with an empty train or test
// shard; throws PartitionError when the retries are exhausted.
Partition dirichlet_partition(const std::vector<std::size_t>& labels, const PartitionSpec& spec);

// Class frequencies of one client's TRAIN shard.
losses::ClassPrior compute_prior(const Partition& partition,
                                 const std::vector<std::size_t>& labels, std::size_t client);

// The two benchmark settings (class order: 0 Epidural ... 4 Subdural):
// split 1 — minority class alpha 0.5, all others 50, no removal;
// split 2 — per-class alphas {0.5, 5, 10, 30, 50}, removal probability 0.3.
Partition make_split1(const std::vector<std::size_t>& labels, std::size_t num_clients,
                      std::uint64_t seed);
Partition make_split2(const std::vector<std::size_t>& labels, std::size_t num_clients,
                      std::uint64_t seed);

// Structured-text export/import for reproducible replays; round-trips exactly.
void save_partition(const Partition& partition, std::ostream& os);
Partition load_partition(std::istream& is);

}  // namespace fca::partition
