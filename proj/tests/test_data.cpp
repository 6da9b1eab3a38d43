#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "fca/data.hpp"
#include "fca/tensor.hpp"

using namespace fca::data;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name, const std::string& content)
      : path("/tmp/fca_test_" + name) {
    std::ofstream out(path);
    out << content;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("synth spec validation") {
  SynthSpec s;
  CHECK_NOTHROW(validate(s));
  SynthSpec bad = s;
  bad.class_counts = {10, 20};
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);  // count/classes mismatch
  bad = s;
  bad.class_counts[2] = 0;
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
  bad = s;
  bad.separation = 0.0;
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
  bad = s;
  bad.within_std = -1.0;
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
}

TEST_CASE("generate: exact counts, label histogram, determinism") {
  SynthSpec s;
  s.class_counts = {50, 30, 20, 10, 5};
  s.seed = 3;
  auto ds = generate(s);
  CHECK(ds.n == 115);
  CHECK(ds.d == s.dim);
  CHECK(ds.features.size() == ds.n * ds.d);
  std::vector<std::size_t> hist(s.num_classes, 0);
  for (auto y : ds.labels) hist[y] += 1;
  CHECK(hist == s.class_counts);

  auto again = generate(s);
  CHECK(ds.features == again.features);
  CHECK(ds.labels == again.labels);

  SynthSpec other = s;
  other.seed = 4;
  CHECK(generate(other).features != ds.features);
}

TEST_CASE("well-separated two-class data is linearly separable (probe oracle)") {
  SynthSpec s;
  s.num_classes = 2;
  s.dim = 4;
  s.class_counts = {100, 100};
  s.separation = 10.0;
  s.within_std = 0.1;
  s.seed = 11;
  auto ds = generate(s);
  std::vector<std::size_t> all(ds.n);
  std::iota(all.begin(), all.end(), 0);
  auto norm = normalize(ds, all);

  // plain gradient descent on a linear softmax probe
  std::vector<double> w(norm.d * 2, 0.0), b(2, 0.0);
  for (int step = 0; step < 200; ++step) {
    fca::autodiff::Tape tape;
    auto wt = tape.leaf({norm.d, 2}, w);
    auto bt = tape.leaf({2}, b);
    auto x = tape.constant({norm.n, norm.d}, norm.features);
    auto lsm = tape.log_softmax(tape.add(tape.matmul(x, wt), bt));
    std::vector<double> onehot(norm.n * 2, 0.0);
    for (std::size_t i = 0; i < norm.n; ++i) onehot[i * 2 + norm.labels[i]] = 1.0;
    auto picked = tape.mul(lsm, tape.constant({norm.n, 2}, onehot));
    tape.backward(tape.scale(tape.sum(picked), -1.0 / static_cast<double>(norm.n)));
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= 0.5 * wt.grad()[j];
    for (std::size_t j = 0; j < b.size(); ++j) b[j] -= 0.5 * bt.grad()[j];
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < norm.n; ++i) {
    double s0 = b[0], s1 = b[1];
    for (std::size_t j = 0; j < norm.d; ++j) {
      s0 += norm.row(i)[j] * w[j * 2 + 0];
      s1 += norm.row(i)[j] * w[j * 2 + 1];
    }
    const std::size_t pred = s1 > s0 ? 1 : 0;
    correct += pred == norm.labels[i];
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(norm.n) >= 0.99);
}

TEST_CASE("normalize: train stats, std floor, test rows use train statistics") {
  Dataset ds;
  ds.n = 4;
  ds.d = 2;
  ds.num_classes = 2;
  // column 0 varies on train rows; column 1 is constant
  ds.features = {1.0, 7.0, 3.0, 7.0, 5.0, 7.0, 103.0, 7.0};
  ds.labels = {0, 0, 1, 1};

  auto out = normalize(ds, {0, 1, 2});  // row 3 is a shifted "test" row
  // train column 0: mean 3, population std sqrt(8/3)
  CHECK(out.norm_mean[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(out.norm_std[0] == doctest::Approx(std::sqrt(8.0 / 3.0)).epsilon(1e-12));
  double m = (out.features[0] + out.features[2] + out.features[4]) / 3.0;
  double v = 0.0;
  for (auto i : {0, 2, 4}) v += (out.features[i] - m) * (out.features[i] - m);
  CHECK(std::abs(m) < 1e-10);
  CHECK(std::abs(std::sqrt(v / 3.0) - 1.0) < 1e-10);

  // constant column maps to zeros through the std floor
  for (auto i : {1, 3, 5, 7}) CHECK(out.features[i] == 0.0);

  // the held-out row is scaled by TRAIN stats, so it stays far from 0
  CHECK(out.features[6] == doctest::Approx((103.0 - 3.0) / std::sqrt(8.0 / 3.0)).epsilon(1e-12));
  CHECK(std::abs(out.features[6]) > 10.0);

  CHECK_THROWS_AS((void)normalize(ds, {}), std::invalid_argument);
  CHECK_THROWS_AS((void)normalize(ds, {9}), std::invalid_argument);
}

TEST_CASE("normalize is idempotent exactly when train stats are already (0,1)") {
  SynthSpec s;
  s.class_counts = {40, 30, 20, 10, 8};
  s.seed = 5;
  auto raw = generate(s);
  std::vector<std::size_t> train(raw.n / 2);
  std::iota(train.begin(), train.end(), 0);

  auto once = normalize(raw, train);
  // first application moves the data
  double moved = 0.0;
  for (std::size_t i = 0; i < raw.features.size(); ++i)
    moved = std::max(moved, std::abs(once.features[i] - raw.features[i]));
  CHECK(moved > 0.1);

  // second application is a no-op up to rounding: stats are now (0,1)
  auto twice = normalize(once, train);
  double drift = 0.0;
  for (std::size_t i = 0; i < raw.features.size(); ++i)
    drift = std::max(drift, std::abs(twice.features[i] - once.features[i]));
  CHECK(drift < 1e-9);
}

TEST_CASE("csv loader round-trips a hand-written file") {
  TempFile f("ok.csv",
             "a,b,label\n"
             "1.5,-2.25,0\n"
             "0.125,4.0,1\n"
             "-3.5,0.0625,2\n");
  auto ds = load_csv(f.path, {{"a", "b"}, "label", 3});
  CHECK(ds.n == 3);
  CHECK(ds.d == 2);
  CHECK(ds.features == std::vector<double>{1.5, -2.25, 0.125, 4.0, -3.5, 0.0625});
  CHECK(ds.labels == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("csv loader error contracts") {
  TempFile f("ok2.csv", "a,b,label\n1,2,0\n");
  // missing label column named in the error
  CHECK_THROWS_WITH_AS((void)load_csv(f.path, {{"a", "b"}, "target", 2}),
                       doctest::Contains("target"), std::runtime_error);
  // missing feature column named
  CHECK_THROWS_WITH_AS((void)load_csv(f.path, {{"a", "z"}, "label", 2}),
                       doctest::Contains("z"), std::runtime_error);

  // out-of-range label value rejected (value C for declared C classes)
  TempFile g("badlabel.csv", "a,b,label\n1,2,0\n3,4,2\n");
  CHECK_THROWS_WITH_AS((void)load_csv(g.path, {{"a", "b"}, "label", 2}),
                       doctest::Contains("row 3"), std::runtime_error);

  // non-numeric feature cell carries row and column
  TempFile h("badnum.csv", "a,b,label\n1,oops,0\n");
  CHECK_THROWS_WITH_AS((void)load_csv(h.path, {{"a", "b"}, "label", 2}),
                       doctest::Contains("'b'"), std::runtime_error);

  // non-integral label
  TempFile i("fraclabel.csv", "a,b,label\n1,2,0.5\n");
  CHECK_THROWS_AS((void)load_csv(i.path, {{"a", "b"}, "label", 2}), std::runtime_error);

  CHECK_THROWS_AS((void)load_csv("/nonexistent/file.csv", {{"a"}, "label", 2}),
                  std::runtime_error);
}
