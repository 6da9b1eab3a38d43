#include "fca/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fca/rng.hpp"

namespace fca::data {

void validate(const SynthSpec& spec) {
  if (spec.num_classes < 2)
    throw std::invalid_argument("synth spec: at least two classes required");
  if (spec.dim == 0) throw std::invalid_argument("synth spec: dim must be positive");
  if (spec.class_counts.size() != spec.num_classes)
    throw std::invalid_argument("synth spec: one count per class required");
  for (auto c : spec.class_counts)
    if (c == 0) throw std::invalid_argument("synth spec: class counts must be positive");
  if (!(std::isfinite(spec.separation) && spec.separation > 0.0))
    throw std::invalid_argument("synth spec: separation must be positive and finite");
  if (!(std::isfinite(spec.within_std) && spec.within_std > 0.0))
    throw std::invalid_argument("synth spec: within_std must be positive and finite");
}

Dataset generate(const SynthSpec& spec) {
  validate(spec);
  rng::Rng r(spec.seed);

  // Class means: random directions scaled onto the separation sphere.
  std::vector<std::vector<double>> means(spec.num_classes, std::vector<double>(spec.dim));
  for (auto& mu : means) {
    double norm2 = 0.0;
    for (auto& v : mu) {
      v = r.normal();
      norm2 += v * v;
    }
    double norm = std::sqrt(norm2);
    if (norm < 1e-12) {  // astronomically unlikely; keep the draw well-defined
      mu.assign(spec.dim, 0.0);
      mu[0] = 1.0;
      norm = 1.0;
    }
    for (auto& v : mu) v *= spec.separation / norm;
  }

  Dataset ds;
  ds.d = spec.dim;
  ds.num_classes = spec.num_classes;
  for (auto c : spec.class_counts) ds.n += c;
  ds.features.reserve(ds.n * ds.d);
  ds.labels.reserve(ds.n);
  for (std::size_t c = 0; c < spec.num_classes; ++c)
    for (std::size_t i = 0; i < spec.class_counts[c]; ++i) {
      for (std::size_t j = 0; j < spec.dim; ++j)
        ds.features.push_back(means[c][j] + spec.within_std * r.normal());
      ds.labels.push_back(c);
    }
  return ds;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    // trim surrounding whitespace
    auto b = cell.find_first_not_of(" \t\r");
    auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

[[noreturn]] void csv_error(std::size_t row, const std::string& column, const std::string& what) {
  throw std::runtime_error("csv: row " + std::to_string(row) + ", column '" + column + "': " +
                           what);
}

}  // namespace

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  if (schema.feature_columns.empty())
    throw std::invalid_argument("csv schema: at least one feature column required");
  if (schema.label_column.empty())
    throw std::invalid_argument("csv schema: label column name required");
  if (schema.num_classes < 2)
    throw std::invalid_argument("csv schema: num_classes must be at least 2");

  std::ifstream in(path);
  if (!in) throw std::runtime_error("csv: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("csv: empty file " + path);
  auto header = split_csv_line(line);

  auto find_col = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw std::runtime_error("csv schema: column '" + name + "' not found in " + path);
    return static_cast<std::size_t>(it - header.begin());
  };

  std::vector<std::size_t> feat_idx;
  for (const auto& name : schema.feature_columns) feat_idx.push_back(find_col(name));
  const std::size_t label_idx = find_col(schema.label_column);

  Dataset ds;
  ds.d = feat_idx.size();
  ds.num_classes = schema.num_classes;

  std::size_t row = 1;  // header was row 1
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw std::runtime_error("csv: row " + std::to_string(row) + ": expected " +
                               std::to_string(header.size()) + " cells, got " +
                               std::to_string(cells.size()));
    for (std::size_t j = 0; j < feat_idx.size(); ++j) {
      const auto& cell = cells[feat_idx[j]];
      try {
        std::size_t used = 0;
        double v = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument("trailing characters");
        ds.features.push_back(v);
      } catch (const std::exception&) {
        csv_error(row, schema.feature_columns[j], "cannot parse '" + cell + "' as a number");
      }
    }
    const auto& label_cell = cells[label_idx];
    long long label = 0;
    try {
      std::size_t used = 0;
      label = std::stoll(label_cell, &used);
      if (used != label_cell.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      csv_error(row, schema.label_column, "cannot parse '" + label_cell + "' as an integer");
    }
    if (label < 0 || static_cast<std::size_t>(label) >= schema.num_classes)
      csv_error(row, schema.label_column,
                "label " + std::to_string(label) + " out of range for " +
                    std::to_string(schema.num_classes) + " classes");
    ds.labels.push_back(static_cast<std::size_t>(label));
    ++ds.n;
  }
  if (ds.n == 0) throw std::runtime_error("csv: no data rows in " + path);
  return ds;
}

Dataset normalize(const Dataset& dataset, const std::vector<std::size_t>& train_indices) {
  if (train_indices.empty())
    throw std::invalid_argument("normalize: train indices must be non-empty");
  for (auto i : train_indices)
    if (i >= dataset.n) throw std::invalid_argument("normalize: train index out of range");

  const std::size_t d = dataset.d;
  std::vector<double> mean(d, 0.0), variance(d, 0.0);
  for (auto i : train_indices)
    for (std::size_t j = 0; j < d; ++j) mean[j] += dataset.row(i)[j];
  for (auto& m : mean) m /= static_cast<double>(train_indices.size());
  for (auto i : train_indices)
    for (std::size_t j = 0; j < d; ++j) {
      const double dv = dataset.row(i)[j] - mean[j];
      variance[j] += dv * dv;
    }

  Dataset out = dataset;
  out.norm_mean = mean;
  out.norm_std.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::sqrt(variance[j] / static_cast<double>(train_indices.size()));
    out.norm_std[j] = std::max(sd, 1e-8);
  }
  for (std::size_t i = 0; i < out.n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      auto& v = out.features[i * d + j];
      v = (v - mean[j]) / out.norm_std[j];
    }
  return out;
}

}  // namespace fca::data
