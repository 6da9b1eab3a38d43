#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fca::data {

// Immutable feature/label table. Features are row-major n x d.
struct Dataset {
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t num_classes = 0;
  std::vector<double> features;
  std::vector<std::size_t> labels;
  // training statistics recorded by normalize (empty before)
  std::vector<double> norm_mean;
  std::vector<double> norm_std;

  const double* row(std::size_t i) const { return features.data() + i * d; }
};

struct SynthSpec {
  std::size_t num_classes = 5;
  std::size_t dim = 8;
  // Class ids ascend in frequency (class 0 is the rarest). The split presets
  // key their per-class Dirichlet concentrations to this order: the rare
  // classes get the smallest alphas and therefore the most skewed allocation.
  std::vector<std::size_t> class_counts = {60, 250, 600, 1200, 2000};
  double separation = 3.0;    // radius of the sphere holding class means
  double within_std = 1.0;    // isotropic within-class standard deviation
  std::uint64_t seed = 0;
};

void validate(const SynthSpec& spec);

// Gaussian mixture with one seeded mean per class on a sphere of radius
// `separation`; exactly class_counts[c] samples of class c, grouped by class.
Dataset generate(const SynthSpec& spec);

struct CsvSchema {
  std::vector<std::string> feature_columns;
  std::string label_column;
  std::size_t num_classes = 0;
};

// Reads a headered CSV. Labels must be integers in [0, num_classes).
// Errors carry the offending row/column.
Dataset load_csv(const std::string& path, const CsvSchema& schema);

// Per-dimension (x - mean) / std with statistics from train_indices only,
// applied to every row; std floored at 1e-8. Records the statistics.
Dataset normalize(const Dataset& dataset, const std::vector<std::size_t>& train_indices);

}  // namespace fca::data
