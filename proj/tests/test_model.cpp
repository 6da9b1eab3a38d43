#include "doctest.h"

#include <sstream>
#include <stdexcept>
#include <vector>

#include "fca/model.hpp"
#include "fca/rng.hpp"
#include "fca/tensor.hpp"

using fca::autodiff::Tape;
using fca::autodiff::Tensor;
using namespace fca::model;

namespace {

bool same_params(const ModelParams& a, const ModelParams& b) {
  auto va = block_values(a), vb = block_values(b);
  if (va.size() != vb.size()) return false;
  for (std::size_t i = 0; i < va.size(); ++i)
    if (*va[i] != *vb[i]) return false;
  return true;
}

ModelConfig small_cfg() { return {2, {16}, 5, 7}; }

}  // namespace

TEST_CASE("config validation rejects malformed configs") {
  CHECK_THROWS_AS(validate({0, {4}, 3, 0}), std::invalid_argument);
  CHECK_THROWS_AS(validate({2, {}, 3, 0}), std::invalid_argument);
  CHECK_THROWS_AS(validate({2, {4, 0}, 3, 0}), std::invalid_argument);
  CHECK_THROWS_AS(validate({2, {4}, 1, 0}), std::invalid_argument);
  CHECK_NOTHROW(validate({2, {4}, 2, 0}));
}

TEST_CASE("param count formula") {
  CHECK(param_count(small_cfg()) == 133);  // 2*16+16 + 16*5+5
  CHECK(param_count(ModelConfig{8, {32, 16}, 5, 0}) == 8 * 32 + 32 + 32 * 16 + 16 + 16 * 5 + 5);
  auto p = init_model(small_cfg());
  CHECK(param_count(p) == 133);
}

TEST_CASE("init is deterministic, biases zero, weights within fan-in bound") {
  auto a = init_model(small_cfg());
  auto b = init_model(small_cfg());
  CHECK(same_params(a, b));

  ModelConfig other = small_cfg();
  other.seed = 8;
  CHECK_FALSE(same_params(a, init_model(other)));

  for (const auto& l : a.extractor)
    for (double v : l.bias) CHECK(v == 0.0);
  for (double v : a.head.bias) CHECK(v == 0.0);

  double bound0 = 1.0 / std::sqrt(2.0);
  for (double v : a.extractor[0].weight) {
    CHECK(v >= -bound0);
    CHECK(v < bound0);
  }
}

TEST_CASE("forward_features: zero weights, shape, row order, hand example") {
  ModelParams p = init_model({2, {2}, 2, 3});
  for (auto* blk : block_values(p)) std::fill(blk->begin(), blk->end(), 0.0);

  Tape tape;
  auto ext = lift_extractor(tape, p, false);
  auto x = tape.constant({3, 2}, {1, 2, 3, 4, 5, 6});
  auto f = forward_features(tape, ext, x);
  CHECK(f.shape() == fca::autodiff::Shape{3, 2});
  CHECK(f.values() == std::vector<double>(6, 0.0));

  // relu(W x + b) by hand on one layer.
  ModelParams h = p;
  h.extractor[0].weight = {1.0, 0.5, 0.25, -1.0};  // [in=2 x out=2] row-major
  h.extractor[0].bias = {0.1, -0.2};
  Tape t2;
  auto ext2 = lift_extractor(t2, h, false);
  auto x2 = t2.constant({1, 2}, {1.0, -2.0});
  auto f2 = forward_features(t2, ext2, x2);
  CHECK(f2.values()[0] == doctest::Approx(0.6).epsilon(1e-15));   // 1 - 0.5 + 0.1
  CHECK(f2.values()[1] == doctest::Approx(2.3).epsilon(1e-15));   // 0.5 + 2 - 0.2

  // negative pre-activation clamps to zero
  auto x3 = t2.constant({1, 2}, {-1.0, 2.0});
  auto f3 = forward_features(t2, ext2, x3);
  CHECK(f3.values()[1] == 0.0);  // -0.5 - 2 - 0.2 < 0
}

TEST_CASE("forward_head: zero head, identity head, hand affine example") {
  Tape tape;
  auto feats = tape.constant({2, 2}, {1.5, -2.0, 0.25, 3.0});

  LayerParams zero{2, 3, std::vector<double>(6, 0.0), std::vector<double>(3, 0.0)};
  auto logits0 = forward_head(tape, lift_head(tape, zero, false), feats);
  CHECK(logits0.values() == std::vector<double>(6, 0.0));

  LayerParams ident{2, 2, {1, 0, 0, 1}, {0, 0}};
  auto logits1 = forward_head(tape, lift_head(tape, ident, false), feats);
  CHECK(logits1.values() == feats.values());

  LayerParams aff{2, 2, {2, 0, 0, 3}, {1, -1}};
  auto logits2 = forward_head(tape, lift_head(tape, aff, false), feats);
  CHECK(logits2.values() == std::vector<double>{4.0, -7.0, 1.5, 8.0});
}

TEST_CASE("block split does not change values vs monolithic composition") {
  auto p = init_model({3, {4, 3}, 2, 11});
  fca::rng::Rng r(5);
  std::vector<double> xv(2 * 3);
  for (auto& v : xv) v = r.uniform(-2, 2);

  Tape split;
  auto ext = lift_extractor(split, p, false);
  auto hd = lift_head(split, p.head, false);
  auto out_split =
      forward_head(split, hd, forward_features(split, ext, split.constant({2, 3}, xv)));

  Tape mono;
  Tensor h = mono.constant({2, 3}, xv);
  for (const auto& l : p.extractor) {
    auto w = mono.constant({l.in, l.out}, l.weight);
    auto b = mono.constant({l.out}, l.bias);
    h = mono.relu(mono.add(mono.matmul(h, w), b));
  }
  auto w = mono.constant({p.head.in, p.head.out}, p.head.weight);
  auto b = mono.constant({p.head.out}, p.head.bias);
  auto out_mono = mono.add(mono.matmul(h, w), b);

  CHECK(out_split.values() == out_mono.values());
}

TEST_CASE("forward is permutation-equivariant over batch rows") {
  auto p = init_model({4, {5}, 3, 13});
  fca::rng::Rng r(17);
  std::vector<double> rows[3];
  for (auto& row : rows) {
    row.resize(4);
    for (auto& v : row) v = r.uniform(-1, 1);
  }
  auto forward = [&](const std::vector<int>& order) {
    std::vector<double> xv;
    for (int i : order) xv.insert(xv.end(), rows[i].begin(), rows[i].end());
    Tape t;
    auto out = forward_head(t, lift_head(t, p.head, false),
                            forward_features(t, lift_extractor(t, p, false),
                                             t.constant({3, 4}, xv)));
    return out.values();
  };
  auto a = forward({0, 1, 2});
  auto b = forward({2, 0, 1});
  // row i of run b is row order[i] of run a, bitwise
  const std::size_t C = 3;
  for (std::size_t j = 0; j < C; ++j) {
    CHECK(b[0 * C + j] == a[2 * C + j]);
    CHECK(b[1 * C + j] == a[0 * C + j]);
    CHECK(b[2 * C + j] == a[1 * C + j]);
  }
}

TEST_CASE("apply_delta identities") {
  auto base = init_model({2, {3}, 2, 19});
  auto delta = init_model({2, {3}, 2, 23});

  auto one = apply_delta(base, {1.0}, {delta});
  auto two = apply_delta(base, {0.5, 0.5}, {delta, delta});
  CHECK(same_params(one, two));

  auto base_blocks = block_values(base);
  auto delta_blocks = block_values(delta);
  auto one_blocks = block_values(one);
  for (std::size_t b = 0; b < one_blocks.size(); ++b)
    for (std::size_t j = 0; j < one_blocks[b]->size(); ++j)
      CHECK((*one_blocks[b])[j] == (*base_blocks[b])[j] + (*delta_blocks[b])[j]);

  CHECK(same_params(apply_delta(base, {}, {}), base));
}

TEST_CASE("apply_delta with train-count weights hits every element") {
  // Client train sizes 1807, 9930, 655, 2691, 351, 3163 -> weights sum to 1.
  const std::vector<double> counts = {1807, 9930, 655, 2691, 351, 3163};
  const double total = 18597;
  std::vector<double> weights;
  for (double c : counts) weights.push_back(c / total);
  CHECK(weights[0] == doctest::Approx(0.09716).epsilon(1e-4));
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  CHECK(wsum == doctest::Approx(1.0).epsilon(1e-12));

  auto base = init_model({2, {3}, 2, 29});
  std::vector<ParamDelta> deltas;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    ParamDelta d = init_model({2, {3}, 2, 31});
    for (auto* blk : block_values(d))
      std::fill(blk->begin(), blk->end(), static_cast<double>(i + 1));
    deltas.push_back(std::move(d));
  }
  auto out = apply_delta(base, weights, deltas);

  double expect = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i)
    expect += weights[i] * static_cast<double>(i + 1);
  auto out_blocks = block_values(out);
  auto base_blocks = block_values(base);
  for (std::size_t b = 0; b < out_blocks.size(); ++b)
    for (std::size_t j = 0; j < out_blocks[b]->size(); ++j)
      CHECK((*out_blocks[b])[j] == (*base_blocks[b])[j] + expect);
}

TEST_CASE("apply_delta validates shapes and weights") {
  auto base = init_model({2, {3}, 2, 1});
  auto bad = init_model({2, {4}, 2, 1});
  CHECK_THROWS_AS((void)apply_delta(base, {1.0}, {bad}), std::invalid_argument);
  auto ok = init_model({2, {3}, 2, 2});
  CHECK_THROWS_AS((void)apply_delta(base, {1.0, 1.0}, {ok}), std::invalid_argument);
  std::vector<double> nan_w = {std::nan("")};
  CHECK_THROWS_AS((void)apply_delta(base, nan_w, {ok}), std::invalid_argument);
}

TEST_CASE("subtract then inspect delta block structure") {
  auto before = init_model({2, {3}, 2, 37});
  auto after = before;
  block_values(after)[0]->at(0) += 0.25;
  auto d = subtract(after, before);
  auto blocks = block_values(d);
  CHECK(blocks[0]->at(0) == 0.25);
  for (std::size_t b = 0; b < blocks.size(); ++b)
    for (std::size_t j = (b == 0 ? 1 : 0); j < blocks[b]->size(); ++j)
      CHECK((*blocks[b])[j] == 0.0);
}

TEST_CASE("serialization round-trips bitwise") {
  auto p = init_model({5, {7, 3}, 4, 41});
  std::stringstream ss;
  save_params(p, ss);
  auto q = load_params(ss);
  CHECK(same_params(p, q));
  CHECK(q.feature_dim() == 3);
  CHECK(q.num_classes() == 4);

  std::stringstream bad("not-a-params-file");
  CHECK_THROWS_AS((void)load_params(bad), std::runtime_error);
}
