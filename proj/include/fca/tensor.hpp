#pragma once

#include <cstddef>
#include <memory>
#include <vector>

namespace fca::autodiff {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);

namespace detail {
struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // leaves only; sized lazily, persists across backward calls
  int node = -1;             // -1: constant, not part of any graph
  bool requires_grad = false;
};
}  // namespace detail

// Dense double tensor. A cheap handle: copies share the underlying buffer.
// Tensors are created by a Tape (leaf/constant/ops) and are confined to it.
class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const { return d_->shape; }
  const std::vector<double>& values() const { return d_->values; }
  bool requires_grad() const { return d_ && d_->requires_grad; }
  int node_id() const { return d_ ? d_->node : -1; }

  // Gradient of a requires-grad leaf, populated by Tape::backward.
  const std::vector<double>& grad() const;

  // Value of a one-element tensor.
  double value() const;

  std::size_t size() const { return d_->values.size(); }
  std::size_t rows() const { return d_->shape.empty() ? 1 : d_->shape[0]; }
  std::size_t cols() const { return d_->shape.size() < 2 ? 1 : d_->shape[1]; }

 private:
  friend class Tape;
  explicit Tensor(std::shared_ptr<detail::TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<detail::TensorData> d_;
};

// Reverse-mode tape. Rebuilt per forward pass; nodes are appended in
// topological order and backward walks them in reverse exactly once.
// Not thread-safe: confine a tape and its tensors to one execution context.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Trainable input: participates in backward, grad accumulates.
  Tensor leaf(Shape shape, std::vector<double> values);
  // Non-trainable input: forward values only.
  Tensor constant(Shape shape, std::vector<double> values);
  Tensor scalar(double v) { return constant({}, {v}); }

  // [m x k] * [k x n] -> [m x n]
  Tensor matmul(const Tensor& a, const Tensor& b);
  // [m x n] -> [n x m]
  Tensor transpose(const Tensor& a);
  // Elementwise; the single permitted broadcast is a bias row b ([n] or
  // [1 x n]) added across the rows of a [m x n].
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor relu(const Tensor& a);  // subgradient at 0 is 0
  Tensor exp(const Tensor& a);
  Tensor ln(const Tensor& a);  // domain error on values <= 0
  Tensor scale(const Tensor& a, double c);
  Tensor pow_const(const Tensor& a, double p);
  // Row-wise log-softmax with max subtraction, [m x C], C >= 2.
  Tensor log_softmax(const Tensor& logits);
  // Values pass through; backward contributes zero gradient through this edge.
  Tensor stop_gradient(const Tensor& a);
  // Reduce all elements to a scalar.
  Tensor sum(const Tensor& a);
  // [m x n] -> [m x 1]
  Tensor row_sum(const Tensor& a);

  // Accumulates d(loss)/d(leaf) into every requires-grad leaf. loss must be
  // a one-element tensor on this tape. Repeated calls accumulate; call
  // zero_grads to reset between optimizer steps.
  void backward(const Tensor& loss);
  void zero_grads();

  std::size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op {
    leaf,
    matmul,
    transpose,
    add,
    add_bias,
    sub,
    mul,
    relu,
    exp,
    ln,
    scale,
    pow_const,
    log_softmax,
    stop_grad,
    sum,
    row_sum,
  };

  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    std::shared_ptr<detail::TensorData> out;
    std::shared_ptr<detail::TensorData> in_a;
    std::shared_ptr<detail::TensorData> in_b;
    double c = 0.0;  // scale factor / pow exponent
  };

  Tensor emit(Op op, const Tensor* a, const Tensor* b, Shape out_shape,
              std::vector<double> out_values, double c = 0.0);

  std::vector<Node> nodes_;
  std::vector<std::shared_ptr<detail::TensorData>> leaves_;
};

}  // namespace fca::autodiff
