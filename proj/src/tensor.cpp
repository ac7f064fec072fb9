#include "mvnn/tensor.hpp"

#include <numeric>
#include <unordered_set>

#include "mvnn/errors.hpp"

namespace mvnn {

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1},
                         std::multiplies<>());
}

Vector& detail::Node::grad_buffer() {
  if (grad.size() != value.size()) grad = Vector::Zero(value.size());
  return grad;
}

namespace {

thread_local bool g_grad_enabled = true;

void check_shape(const Shape& shape, Index length) {
  for (Index d : shape) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape " + to_string(shape));
  }
  if (numel(shape) != length) {
    throw DimensionError("shape " + to_string(shape) + " does not match " +
                         std::to_string(length) + " elements");
  }
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor::Tensor(Shape shape, Vector data, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  check_shape(shape, data.size());
  node_->shape = std::move(shape);
  node_->value = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::initializer_list<Scalar> data,
               bool requires_grad)
    : Tensor(std::move(shape),
             Eigen::Map<const Vector>(data.begin(),
                                      static_cast<Index>(data.size())),
             requires_grad) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
  const Index n = numel(shape);
  return Tensor(std::move(shape), Vector::Constant(n, value), requires_grad);
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) {
  return Tensor({1}, Vector::Constant(1, value), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw UsageError("use of undefined tensor");
  return node_->shape;
}

Index Tensor::dim(int axis) const {
  const Shape& s = shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         to_string(s));
  }
  return s[static_cast<std::size_t>(axis)];
}

Index Tensor::size() const { return data().size(); }

const Vector& Tensor::data() const {
  if (!node_) throw UsageError("use of undefined tensor");
  return node_->value;
}

Vector& Tensor::mutable_data() {
  if (!node_) throw UsageError("use of undefined tensor");
  return node_->value;
}

Scalar Tensor::item() const {
  if (size() != 1) {
    throw DimensionError("item() on tensor of shape " + to_string(shape()));
  }
  return data()[0];
}

Scalar Tensor::at(std::initializer_list<Index> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) {
    throw DimensionError("index rank does not match " + to_string(s));
  }
  Index flat = 0;
  std::size_t axis = 0;
  for (Index i : index) {
    if (i < 0 || i >= s[axis]) throw DimensionError("index out of range for " + to_string(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return data()[flat];
}

ConstRowMatrixMap Tensor::matrix() const {
  if (rank() != 2) throw DimensionError("matrix() on tensor of shape " + to_string(shape()));
  return ConstRowMatrixMap(data().data(), shape()[0], shape()[1]);
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_) throw UsageError("use of undefined tensor");
  node_->requires_grad = on;
}

bool Tensor::has_grad() const {
  return node_ && node_->grad.size() == node_->value.size();
}

Vector Tensor::grad() const {
  if (has_grad()) return node_->grad;
  return Vector::Zero(size());
}

void Tensor::zero_grad() {
  if (node_) node_->grad.resize(0);
}

Tensor Tensor::reshape(Shape new_shape) const {
  check_shape(new_shape, size());
  return make_result(std::move(new_shape), data(), {*this}, "reshape",
                     [](detail::Node& self) {
                       self.inputs[0]->grad_buffer() += self.grad;
                     });
}

Tensor Tensor::detach() const { return Tensor(shape(), data(), false); }

Tensor Tensor::make_result(Shape shape, Vector value,
                           const std::vector<Tensor>& inputs, const char* op,
                           std::function<void(detail::Node&)> backward_fn) {
  auto node = std::make_shared<detail::Node>();
  check_shape(shape, value.size());
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (g_grad_enabled) {
    for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const Tensor& t : inputs) node->inputs.push_back(t.node_);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

Graph::Graph(const Tensor& root) : root_(root) {
  if (!root.defined()) throw UsageError("backward from undefined tensor");
  // Iterative post-order DFS: a node is emitted after all of its inputs.
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const auto& child = node->inputs[next++];
      if (child->requires_grad && visited.insert(child.get()).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      nodes_.push_back(node);
      stack.pop_back();
    }
  }
}

void Graph::backward() {
  if (root_.size() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " +
                     to_string(root_.shape()));
  }
  if (!root_.requires_grad()) {
    throw UsageError("loss does not depend on any tensor requiring grad");
  }
  for (const auto& node : nodes_) {
    if (node->backward_fn) node->grad.resize(0);
  }
  nodes_.back()->grad_buffer()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::Node& node = **it;
    if (node.backward_fn && node.grad.size() == node.value.size()) {
      node.backward_fn(node);
    }
  }
}

void backward(const Tensor& loss) { Graph(loss).backward(); }

}  // namespace mvnn
