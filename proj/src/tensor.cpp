#include "dimask/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace dimask {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  if (requires_grad) node->grad.assign(node->data.size(), 0.0);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

Tensor Tensor::make_result(Shape shape, std::vector<double> data,
                           std::vector<Tensor> parents, BackwardFn backward) {
  Tensor out = from(std::move(shape), std::move(data), false);
  const bool any = std::any_of(parents.begin(), parents.end(),
                               [](const Tensor& p) { return p.requires_grad(); });
  if (!any) return out;
  auto& node = *out.node_;
  node.requires_grad = true;
  node.leaf = false;
  node.parents.reserve(parents.size());
  for (auto& p : parents) node.parents.push_back(p.node_);
  node.backward = std::move(backward);
  return out;
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw IndexError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape()));
  }
  return shape()[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }

std::span<const double> Tensor::data() const { return node_->data; }

std::span<double> Tensor::mutable_data() {
  if (!node_->leaf) throw GraphError("mutable_data() on a non-leaf tensor");
  return node_->data;
}

std::vector<double> Tensor::to_vector() const { return node_->data; }

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->data[0];
}

double Tensor::at(std::size_t i) const {
  if (i >= numel()) throw IndexError("flat index " + std::to_string(i) + " out of range");
  return node_->data[i];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  if (rank() != 2 || i >= shape()[0] || j >= shape()[1]) {
    throw IndexError("index (" + std::to_string(i) + "," + std::to_string(j) +
                     ") out of range for shape " + shape_str(shape()));
  }
  return node_->data[i * shape()[1] + j];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->leaf; }
bool Tensor::has_grad() const { return node_->grad.size() == node_->data.size() && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw GraphError("tensor has no gradient");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!node_->requires_grad) throw GraphError("tensor does not require grad");
  return node_->grad_buffer();
}

void Tensor::zero_grad() {
  if (node_->requires_grad) node_->grad.assign(node_->data.size(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

void backward(const Tensor& loss) {
  if (!loss.defined()) throw GraphError("backward() on an undefined tensor");
  if (loss.numel() != 1) {
    throw GraphError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  auto& root = loss.node();
  if (root.consumed) throw GraphError("backward() on a consumed graph; run a new forward pass");
  if (!root.requires_grad) throw GraphError("backward() on a loss that does not depend on any parameter");
  if (root.leaf) {
    root.grad_buffer()[0] += 1.0;
    return;
  }

  // Iterative post-order DFS over interior nodes gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{&root, 0}};
  seen.insert(&root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && !p->leaf && !seen.contains(p)) {
        if (p->consumed) throw GraphError("backward() reached a node of a consumed graph");
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node& node = **it;
    node.grad_buffer();
    if (node.backward) node.backward(node);
  }
  for (detail::Node* node : order) {
    node->consumed = true;
    node->backward = nullptr;
    node->parents.clear();
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

}  // namespace dimask
