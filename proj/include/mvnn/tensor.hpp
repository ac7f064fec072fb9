#pragma once

#include <Eigen/Core>

#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace mvnn {

using Scalar = double;
using Index = Eigen::Index;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using RowMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixMap = Eigen::Map<RowMatrix>;
using ConstRowMatrixMap = Eigen::Map<const RowMatrix>;
using Shape = std::vector<Index>;

std::string to_string(const Shape& shape);
Index numel(const Shape& shape);

namespace detail {

/// One recorded value in the computation graph. Leaves (parameters, inputs)
/// have no inputs and no backward function.
struct Node {
  Shape shape;
  Vector value;
  Vector grad;  // empty until backward reaches this node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs that require grad.
  std::function<void(Node&)> backward_fn;

  /// Gradient buffer, zero-initialised on first access.
  Vector& grad_buffer();
};

}  // namespace detail

/// n-dimensional row-major array of doubles that records the operations
/// applied to it when gradients are required.
///
/// A Tensor is a cheap handle; copies share the same node. Operations never
/// mutate their operands, so the shape of a tensor never changes.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Vector data, bool requires_grad = false);
  Tensor(Shape shape, std::initializer_list<Scalar> data,
         bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  Index dim(int axis) const;
  Index size() const;

  const Vector& data() const;
  /// Raw access for leaves (optimizer updates, initialisation). Mutating a
  /// tensor that is already part of a recorded graph invalidates it.
  Vector& mutable_data();
  Scalar item() const;
  Scalar at(std::initializer_list<Index> index) const;

  /// Row-major matrix view of a rank-2 tensor.
  ConstRowMatrixMap matrix() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  /// Gradient after backward; zeros when the tensor was never reached.
  Vector grad() const;
  void zero_grad();

  /// Same data under a new shape (differentiable).
  Tensor reshape(Shape shape) const;
  /// Copy of the value with no graph history.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  /// Builds an op result. The backward function is only retained when
  /// gradient recording is enabled and some input requires a gradient.
  static Tensor make_result(Shape shape, Vector value,
                            const std::vector<Tensor>& inputs, const char* op,
                            std::function<void(detail::Node&)> backward_fn);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// True while operations record graph history on this thread.
bool grad_enabled();

/// Disables graph recording for its lifetime (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Recorded computation reachable from a root tensor, in topological order
/// (every node after its inputs).
class Graph {
 public:
  explicit Graph(const Tensor& root);

  const std::vector<std::shared_ptr<detail::Node>>& nodes() const {
    return nodes_;
  }

  /// Seeds d(root)/d(root) = 1 and visits every node once in reverse order.
  /// Leaf gradients accumulate across calls; intermediate gradients are
  /// reset first. The root must be a scalar.
  void backward();

 private:
  Tensor root_;
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

/// Populates grads of every requires-grad tensor reachable from `loss`.
void backward(const Tensor& loss);

}  // namespace mvnn
