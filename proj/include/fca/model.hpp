#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "fca/tensor.hpp"

namespace fca::model {

struct ModelConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t num_classes = 0;
  std::uint64_t seed = 0;
};

// Throws std::invalid_argument on a malformed config.
void validate(const ModelConfig& cfg);

// One affine layer, weight stored row-major [in x out] to feed matmul directly.
struct LayerParams {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;  // in * out
  std::vector<double> bias;    // out
};

// Shared model snapshot: feature-extractor layers plus one classifier head.
// Immutable by convention — training constructs new snapshots.
struct ModelParams {
  std::vector<LayerParams> extractor;
  LayerParams head;

  std::size_t feature_dim() const { return extractor.back().out; }
  std::size_t num_classes() const { return head.out; }
};

// A parameter movement with the same block structure as ModelParams.
// Convention: delta = params_after_local_training - params_at_round_start,
// so server application is literal addition.
using ParamDelta = ModelParams;

std::size_t param_count(const ModelConfig& cfg);
std::size_t param_count(const ModelParams& params);

// Seeded init: weights uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero.
ModelParams init_model(const ModelConfig& cfg);

// after - before, elementwise over every block. Throws on shape mismatch.
ParamDelta subtract(const ModelParams& after, const ModelParams& before);

// base + sum_i weights[i] * deltas[i]. The weighted delta sum is accumulated
// first and added to base in one operation, so a single delta at weight 1 and
// identical deltas at weights summing to 1 (in exact arithmetic) reproduce
// base + delta bitwise. Empty sequence returns base unchanged.
ModelParams apply_delta(const ModelParams& base, const std::vector<double>& weights,
                        const std::vector<ParamDelta>& deltas);

// Graph-side views of parameter blocks, created on a tape as leaves
// (trainable) or constants (inference).
struct ExtractorTensors {
  std::vector<autodiff::Tensor> weights;
  std::vector<autodiff::Tensor> biases;
};
struct HeadTensors {
  autodiff::Tensor weight;
  autodiff::Tensor bias;
};

ExtractorTensors lift_extractor(autodiff::Tape& tape, const ModelParams& params, bool trainable);
HeadTensors lift_head(autodiff::Tape& tape, const LayerParams& head, bool trainable);

// Relu MLP over the extractor layers; the last hidden activation is the
// feature row. x is [batch x input_dim].
autodiff::Tensor forward_features(autodiff::Tape& tape, const ExtractorTensors& ext,
                                  const autodiff::Tensor& x);

// Affine map of features to C logits (no activation).
autodiff::Tensor forward_head(autodiff::Tape& tape, const HeadTensors& head,
                              const autodiff::Tensor& feats);

// Canonical block order used everywhere a model is flattened:
// layer0 weight, layer0 bias, layer1 weight, ..., head weight, head bias.
std::vector<const std::vector<double>*> block_values(const ModelParams& params);
std::vector<std::vector<double>*> block_values(ModelParams& params);

// Serialization: text manifest (block names and dims) followed by the raw
// little-endian 64-bit float stream. Round-trips bitwise.
void save_params(const ModelParams& params, std::ostream& os);
ModelParams load_params(std::istream& is);

}  // namespace fca::model
