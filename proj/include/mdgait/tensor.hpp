#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mdgait::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

// Dense row-major tensor with reverse-mode differentiation. Copies share the
// underlying node; use clone() for an independent value.
template <typename T>
class Tensor {
 public:
  using Node = detail::Node<T>;
  using BackwardFn = std::function<void(Node&)>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false) { return from_data({}, {value}, requires_grad); }

  // Builds a non-leaf result of a custom op. The graph link is only recorded
  // when gradients are enabled and an input requires them.
  static Tensor make_result(Shape shape, std::vector<T> data, std::vector<Tensor> inputs,
                            BackwardFn backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  std::vector<T>& values() { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Empty span when no gradient has been accumulated.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad_mut() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool is_leaf() const { return node_->parents.empty(); }

  T item() const;
  Tensor clone() const;  // detached copy
  Tensor detach() const { return clone(); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Core ops. Shape mismatches throw ShapeError naming the op and both shapes.
//
// Broadcasting is limited to leading dimensions: for add/sub/hadamard the
// second operand's shape (with leading 1s stripped) must equal a suffix of
// the first operand's shape.

// A: [..., m, k]; B: [k, n] (shared across the batch) or [..., k, n] with the
// same leading dimensions as A.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> softmax(const Tensor<T>& a, std::size_t axis);
// Normalizes over the last dimension; gain and bias have that length.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gain, const Tensor<T>& bias, T eps);
// Exact (erf) GELU.
template <typename T> Tensor<T> gelu(const Tensor<T>& a);
// y = a . weight^T + bias, weight: [out, in], bias: [out].
template <typename T>
Tensor<T> linear(const Tensor<T>& a, const Tensor<T>& weight, const Tensor<T>& bias);
template <typename T> Tensor<T> transpose(const Tensor<T>& a, std::size_t d0, std::size_t d1);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length);
// Repeats `a` over new or size-1 leading dimensions.
template <typename T> Tensor<T> broadcast_to(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

// Mean over the batch of -log softmax(logits)[label]; logits [batch, classes].
template <typename T>
Tensor<T> cross_entropy_logits(const Tensor<T>& logits, std::span<const std::size_t> labels);

// Reverse topological sweep from a single-element tensor. Leaf gradients
// accumulate; interior links are released afterwards.
template <typename T> void backward(const Tensor<T>& loss);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
  bool passed = false;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double abs_floor = 1e-4;
};

// Central differences on every coordinate of every input against backward().
GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                           std::vector<Tensor<double>> inputs, const GradCheckOptions& opts = {});

}  // namespace mdgait::ad
