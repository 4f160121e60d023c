#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dimask/errors.hpp"

namespace dimask {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One vertex of the autodiff graph. Leaves own parameters and inputs;
// interior nodes also keep their parents and a backward closure until the
// graph is consumed by backward().
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  // Lazily allocated gradient buffer, zero-filled on first use.
  std::vector<double>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
  Node& parent(std::size_t i) { return *parents[i]; }
};

}  // namespace detail

// Dense row-major tensor of doubles with reverse-mode autodiff.
//
// Tensor is a handle: copies share the underlying node. Ops never mutate
// their inputs; they return fresh tensors that record how to push gradients
// back to their parents when any parent requires a gradient.
class Tensor {
 public:
  using BackwardFn = std::function<void(detail::Node&)>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  // Builds an interior node. When no parent requires a gradient the result
  // is a plain constant and the closure is dropped.
  static Tensor make_result(Shape shape, std::vector<double> data,
                            std::vector<Tensor> parents, BackwardFn backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Mutable access is for leaves only (optimizer updates, finite differences).
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;

  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Same values, cut off from the graph.
  Tensor detach() const;

  detail::Node& node() const { return *node_; }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;
};

// Runs reverse accumulation from a scalar loss. Every reachable leaf with
// requires_grad receives d(loss)/d(leaf) added to its grad. The graph is
// consumed: a second call on the same loss throws GraphError.
void backward(const Tensor& loss);

// ---- ops ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]x[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k]x[n,k]^T

// Elementwise binary ops accept identical shapes or a one-element operand
// on either side. Nothing else broadcasts.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
// x[n,d] + bias[d] on every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// x: [h,w,c_in]; weight: [kernel*kernel*c_in, c_out]; bias: [c_out].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::size_t kernel, std::size_t stride, std::size_t pad);

// x: [h*w, c] pixel rows in (y, x) order. Bilinear resampling by an integer
// factor with half-pixel centers; returns [(h*f)*(w*f), c].
Tensor upsample_bilinear(const Tensor& x, std::size_t h, std::size_t w,
                         std::size_t factor);

}  // namespace dimask
