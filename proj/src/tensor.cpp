#include "fca/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fca::autodiff {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

const std::vector<double>& Tensor::grad() const {
  if (!d_ || !d_->requires_grad)
    throw std::logic_error("Tensor::grad: tensor does not require grad");
  return d_->grad;
}

double Tensor::value() const {
  if (!d_ || d_->values.size() != 1)
    throw std::logic_error("Tensor::value: tensor is not a scalar");
  return d_->values[0];
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": operand shapes differ");
}

bool is_bias_row(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2) return false;
  const auto& bs = b.shape();
  std::size_t n = a.shape()[1];
  return (bs.size() == 1 && bs[0] == n) || (bs.size() == 2 && bs[0] == 1 && bs[1] == n);
}

}  // namespace

Tensor Tape::emit(Op op, const Tensor* a, const Tensor* b, Shape out_shape,
                  std::vector<double> out_values, double c) {
  if (numel(out_shape) != out_values.size())
    throw std::logic_error("Tape::emit: shape/value size mismatch");
  auto data = std::make_shared<detail::TensorData>();
  data->shape = std::move(out_shape);
  data->values = std::move(out_values);
  data->node = static_cast<int>(nodes_.size());
  Node node;
  node.op = op;
  node.c = c;
  node.out = data;
  if (a) {
    node.a = a->node_id();
    node.in_a = a->d_;
  }
  if (b) {
    node.b = b->node_id();
    node.in_b = b->d_;
  }
  nodes_.push_back(std::move(node));
  return Tensor(data);
}

Tensor Tape::leaf(Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size())
    throw std::invalid_argument("Tape::leaf: shape/value size mismatch");
  Tensor t = emit(Op::leaf, nullptr, nullptr, std::move(shape), std::move(values));
  t.d_->requires_grad = true;
  leaves_.push_back(t.d_);
  return t;
}

Tensor Tape::constant(Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size())
    throw std::invalid_argument("Tape::constant: shape/value size mismatch");
  auto data = std::make_shared<detail::TensorData>();
  data->shape = std::move(shape);
  data->values = std::move(values);
  return Tensor(data);
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw std::invalid_argument("matmul: operands must be rank 2");
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) throw std::invalid_argument("matmul: inner dimensions disagree");
  std::vector<double> out(m * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  return emit(Op::matmul, &a, &b, {m, n}, std::move(out));
}

Tensor Tape::transpose(const Tensor& a) {
  if (a.shape().size() != 2)
    throw std::invalid_argument("transpose: operand must be rank 2");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  const auto& av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return emit(Op::transpose, &a, nullptr, {n, m}, std::move(out));
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    return emit(Op::add, &a, &b, a.shape(), std::move(out));
  }
  if (is_bias_row(a, b)) {
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.values()[i * n + j] + b.values()[j];
    return emit(Op::add_bias, &a, &b, a.shape(), std::move(out));
  }
  throw std::invalid_argument("add: operand shapes differ (only a bias row broadcasts)");
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return emit(Op::sub, &a, &b, a.shape(), std::move(out));
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return emit(Op::mul, &a, &b, a.shape(), std::move(out));
}

Tensor Tape::relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] > 0.0 ? a.values()[i] : 0.0;
  return emit(Op::relu, &a, nullptr, a.shape(), std::move(out));
}

Tensor Tape::exp(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.values()[i]);
  return emit(Op::exp, &a, nullptr, a.shape(), std::move(out));
}

Tensor Tape::ln(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(a.values()[i] > 0.0)) throw std::domain_error("ln: input must be strictly positive");
    out[i] = std::log(a.values()[i]);
  }
  return emit(Op::ln, &a, nullptr, a.shape(), std::move(out));
}

Tensor Tape::scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a.values()[i];
  return emit(Op::scale, &a, nullptr, a.shape(), std::move(out), c);
}

Tensor Tape::pow_const(const Tensor& a, double p) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::pow(a.values()[i], p);
  return emit(Op::pow_const, &a, nullptr, a.shape(), std::move(out), p);
}

Tensor Tape::log_softmax(const Tensor& logits) {
  if (logits.shape().size() != 2 || logits.shape()[1] < 2)
    throw std::invalid_argument("log_softmax: expected [batch x C] with C >= 2");
  const std::size_t m = logits.shape()[0], n = logits.shape()[1];
  std::vector<double> out(m * n);
  const auto& v = logits.values();
  for (std::size_t i = 0; i < m; ++i) {
    double mx = v[i * n];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, v[i * n + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(v[i * n + j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = v[i * n + j] - lse;
  }
  return emit(Op::log_softmax, &logits, nullptr, logits.shape(), std::move(out));
}

Tensor Tape::stop_gradient(const Tensor& a) {
  return emit(Op::stop_grad, &a, nullptr, a.shape(), a.values());
}

Tensor Tape::sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return emit(Op::sum, &a, nullptr, {}, {s});
}

Tensor Tape::row_sum(const Tensor& a) {
  if (a.shape().size() != 2) throw std::invalid_argument("row_sum: operand must be rank 2");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += a.values()[i * n + j];
  return emit(Op::row_sum, &a, nullptr, {m, 1}, std::move(out));
}

void Tape::backward(const Tensor& loss) {
  const int root = loss.node_id();
  if (root < 0 || root >= static_cast<int>(nodes_.size()) || nodes_[root].out != loss.d_)
    throw std::logic_error("backward: loss is not on this tape");
  if (numel(loss.shape()) != 1) throw std::logic_error("backward: loss must be scalar");

  std::vector<std::vector<double>> adj(static_cast<std::size_t>(root) + 1);
  adj[root].assign(1, 1.0);

  auto accumulate = [&](int id, const detail::TensorData& in, std::size_t idx, double g) {
    auto& buf = adj[id];
    if (buf.empty()) buf.assign(in.values.size(), 0.0);
    buf[idx] += g;
  };

  for (int id = root; id >= 0; --id) {
    auto& g = adj[id];
    if (g.empty()) continue;
    const Node& node = nodes_[id];
    switch (node.op) {
      case Op::leaf: {
        auto& grad = node.out->grad;
        if (grad.empty()) grad.assign(node.out->values.size(), 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
        break;
      }
      case Op::matmul: {
        const auto& av = node.in_a->values;
        const auto& bv = node.in_b->values;
        const std::size_t m = node.in_a->shape[0], k = node.in_a->shape[1];
        const std::size_t n = node.in_b->shape[1];
        if (node.a >= 0) {  // dA = G * B^T
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
              accumulate(node.a, *node.in_a, i * k + p, acc);
            }
        }
        if (node.b >= 0) {  // dB = A^T * G
          for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < n; ++j) {
              double acc = 0.0;
              for (std::size_t i = 0; i < m; ++i) acc += av[i * k + p] * g[i * n + j];
              accumulate(node.b, *node.in_b, p * n + j, acc);
            }
        }
        break;
      }
      case Op::transpose: {
        if (node.a >= 0) {
          const std::size_t n = node.out->shape[0], m = node.out->shape[1];
          for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < m; ++i)
              accumulate(node.a, *node.in_a, i * n + j, g[j * m + i]);
        }
        break;
      }
      case Op::add: {
        if (node.a >= 0)
          for (std::size_t i = 0; i < g.size(); ++i) accumulate(node.a, *node.in_a, i, g[i]);
        if (node.b >= 0)
          for (std::size_t i = 0; i < g.size(); ++i) accumulate(node.b, *node.in_b, i, g[i]);
        break;
      }
      case Op::add_bias: {
        const std::size_t m = node.out->shape[0], n = node.out->shape[1];
        if (node.a >= 0)
          for (std::size_t i = 0; i < g.size(); ++i) accumulate(node.a, *node.in_a, i, g[i]);
        if (node.b >= 0) {  // column sums
          for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < m; ++i) acc += g[i * n + j];
            accumulate(node.b, *node.in_b, j, acc);
          }
        }
        break;
      }
      case Op::sub: {
        if (node.a >= 0)
          for (std::size_t i = 0; i < g.size(); ++i) accumulate(node.a, *node.in_a, i, g[i]);
        if (node.b >= 0)
          for (std::size_t i = 0; i < g.size(); ++i) accumulate(node.b, *node.in_b, i, -g[i]);
        break;
      }
      case Op::mul: {
        if (node.a >= 0)
          for (std::size_t i = 0; i < g.size(); ++i)
            accumulate(node.a, *node.in_a, i, g[i] * node.in_b->values[i]);
        if (node.b >= 0)
          for (std::size_t i = 0; i < g.size(); ++i)
            accumulate(node.b, *node.in_b, i, g[i] * node.in_a->values[i]);
        break;
      }
      case Op::relu: {
        if (node.a >= 0)
          for (std::size_t i = 0; i < g.size(); ++i)
            accumulate(node.a, *node.in_a, i, node.in_a->values[i] > 0.0 ? g[i] : 0.0);
        break;
      }
      case Op::exp: {
        if (node.a >= 0)
          for (std::size_t i = 0; i < g.size(); ++i)
            accumulate(node.a, *node.in_a, i, g[i] * node.out->values[i]);
        break;
      }
      case Op::ln: {
        if (node.a >= 0)
          for (std::size_t i = 0; i < g.size(); ++i)
            accumulate(node.a, *node.in_a, i, g[i] / node.in_a->values[i]);
        break;
      }
      case Op::scale: {
        if (node.a >= 0)
          for (std::size_t i = 0; i < g.size(); ++i)
            accumulate(node.a, *node.in_a, i, node.c * g[i]);
        break;
      }
      case Op::pow_const: {
        if (node.a >= 0) {
          const double p = node.c;
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double d = p == 0.0 ? 0.0 : p * std::pow(node.in_a->values[i], p - 1.0);
            accumulate(node.a, *node.in_a, i, g[i] * d);
          }
        }
        break;
      }
      case Op::log_softmax: {
        if (node.a >= 0) {
          const std::size_t m = node.out->shape[0], n = node.out->shape[1];
          for (std::size_t i = 0; i < m; ++i) {
            double rs = 0.0;
            for (std::size_t j = 0; j < n; ++j) rs += g[i * n + j];
            for (std::size_t j = 0; j < n; ++j) {
              const double p = std::exp(node.out->values[i * n + j]);
              accumulate(node.a, *node.in_a, i * n + j, g[i * n + j] - p * rs);
            }
          }
        }
        break;
      }
      case Op::stop_grad:
        break;
      case Op::sum: {
        if (node.a >= 0)
          for (std::size_t i = 0; i < node.in_a->values.size(); ++i)
            accumulate(node.a, *node.in_a, i, g[0]);
        break;
      }
      case Op::row_sum: {
        if (node.a >= 0) {
          const std::size_t m = node.in_a->shape[0], n = node.in_a->shape[1];
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
              accumulate(node.a, *node.in_a, i * n + j, g[i]);
        }
        break;
      }
    }
    g.clear();
    g.shrink_to_fit();
  }

  // Leaves untouched by this loss still report a defined (zero) gradient.
  for (auto& leaf : leaves_)
    if (leaf->grad.empty()) leaf->grad.assign(leaf->values.size(), 0.0);
}

void Tape::zero_grads() {
  for (auto& leaf : leaves_) std::fill(leaf->grad.begin(), leaf->grad.end(), 0.0);
}

}  // namespace fca::autodiff
