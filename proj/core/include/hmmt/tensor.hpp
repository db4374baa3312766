#pragma once

// Dense row-major float64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared node. Operations on tensors that
// require gradients record their parents and a backward closure; calling
// backward() on a scalar walks every recorded ancestor exactly once in reverse
// creation order. Leaf gradients accumulate across backward() calls, so a
// caller that invokes backward twice without zero_grad() gets doubled grads.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hmmt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::uint64_t sequence = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad();
};

}  // namespace detail

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

bool grad_mode_enabled();

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  // Negative axes count from the back.
  std::size_t dim(int axis) const;

  std::span<const double> data() const;
  // Direct write access; used by optimizers and data staging, never inside
  // a recorded computation.
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  // Drops the gradient buffer; has_grad() becomes false.
  void zero_grad();

  void backward() const;

  // Same values, no graph history.
  Tensor detach() const;
  Tensor clone() const;

  const detail::Node* node_ptr() const { return node_.get(); }

  // Internal: wraps a freshly computed node.
  static Tensor make_result(Shape shape, std::vector<double> data,
                            std::vector<Tensor> parents,
                            std::function<void(detail::Node&)> backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

enum class Nonlinearity { kRelu, kGelu };

Nonlinearity parse_nonlinearity(const std::string& name);
std::string to_string(Nonlinearity nl);

// Elementwise; `b` may match `a` or any trailing suffix of `a`'s shape, in
// which case it is broadcast over the leading dimensions.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// a[..., m, k] x b[..., k, n]. Batch dims must be equal, or one operand is
// rank 2 and is shared across the other's batch.
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& order);
Tensor reshape(const Tensor& a, Shape shape);
// Prepends a leading axis of extent `count`, repeating `a`.
Tensor expand_leading(const Tensor& a, std::size_t count);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end);
// Rows of a [N, ...] tensor picked along axis 0.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor activate(const Tensor& a, Nonlinearity nl);

Tensor softmax(const Tensor& a, int axis);
Tensor log_softmax(const Tensor& a, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};
// x: [n, d]. Training mode normalizes with batch statistics (biased variance)
// and folds the unbiased variance into the running estimates; eval mode uses
// the running estimates.
Tensor batch_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  BatchNormState& state, bool training);

// Rows of `table` [V, d] selected by `indices`; result [len, d].
Tensor embedding(const Tensor& table, std::span<const std::size_t> indices);

// Mean negative log-likelihood of integer labels under logits [n, C].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
// Mean squared error against a constant target of the same shape.
Tensor mse(const Tensor& pred, const Tensor& target);

}  // namespace hmmt
