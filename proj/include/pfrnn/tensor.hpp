// SPDX-License-Identifier: Apache-2.0
/**
 * @file   tensor.hpp
 * @brief  Dense row-major tensors with a dynamic reverse-mode differentiation
 *         graph.
 *
 * Every operation returns a fresh Tensor. When any operand requires a
 * gradient, the result records its parents and a local backward rule, so the
 * graph is rebuilt on every forward pass and released with its last handle.
 * Sampling functions produce constant leaves: randomness never carries a
 * gradient (only the pathwise term is propagated).
 */
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pfrnn {

class RngStream;

using Shape = std::vector<std::size_t>;

/// Operand shapes are incompatible with the requested operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A value left the mathematical domain of an operation (e.g. log of 0).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

std::size_t numel(const Shape &shape);
std::string to_string(const Shape &shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node &)> backward;

  std::vector<double> &ensure_grad() {
    if (grad.size() != value.size())
      grad.assign(value.size(), 0.0);
    return grad;
  }
};

} // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// 1-D tensor from a list of values.
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape &shape() const;
  std::size_t size() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<const double> values() const;
  /// Mutable storage. Only meaningful for leaves (parameters, buffers).
  std::span<double> data();
  double item() const;
  double operator[](std::size_t i) const { return values()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  /// Gradient accumulated by backward(); zeros when nothing reached this node.
  std::vector<double> grad() const;
  bool has_grad() const;
  void zero_grad();

  /// Same values, cut from the graph.
  Tensor detach() const;

  detail::Node *node() const { return node_.get(); }
  const std::shared_ptr<detail::Node> &node_ptr() const { return node_; }

  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Elementwise binary operations. Operands must have equal shapes, or one
// operand is a scalar, or its shape is a suffix of the other's (broadcast
// along leading dimensions, e.g. a bias row).
Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor div(const Tensor &a, const Tensor &b);

// Row-wise variants: the smaller operand's shape is a prefix of the larger
// one's, and each of its entries is reused across the trailing block.
Tensor add_rowwise(const Tensor &a, const Tensor &b);
Tensor sub_rowwise(const Tensor &a, const Tensor &b);
Tensor mul_rowwise(const Tensor &a, const Tensor &b);

Tensor operator+(const Tensor &a, const Tensor &b);
Tensor operator-(const Tensor &a, const Tensor &b);
Tensor operator*(const Tensor &a, const Tensor &b);
Tensor operator/(const Tensor &a, const Tensor &b);
Tensor operator-(const Tensor &a);

Tensor scale(const Tensor &t, double factor);
Tensor add_scalar(const Tensor &t, double value);
Tensor neg(const Tensor &t);
Tensor sigmoid(const Tensor &t);
Tensor tanh(const Tensor &t);
/// relu'(0) is 0.
Tensor relu(const Tensor &t);
Tensor exp(const Tensor &t);
/// Throws DomainError on non-positive input.
Tensor log(const Tensor &t);
Tensor square(const Tensor &t);
Tensor sqrt(const Tensor &t);
/// Values outside [lo, hi] are clamped and receive zero gradient.
Tensor clamp(const Tensor &t, double lo, double hi);

/// (m x k) . (k x n)
Tensor matmul(const Tensor &a, const Tensor &b);
/// (m x k) . (n x k)^T, the layout used by linear layers.
Tensor matmul_nt(const Tensor &a, const Tensor &b);

Tensor concat(const std::vector<Tensor> &parts, std::size_t axis);
/// Slice [start, start + length) along axis.
Tensor narrow(const Tensor &t, std::size_t axis, std::size_t start,
              std::size_t length);
/// out[j] = t[indices[j]] along axis 0; the gradient scatter-adds back.
Tensor gather_rows(const Tensor &t, std::span<const std::size_t> indices);
Tensor reshape(const Tensor &t, Shape shape);

Tensor sum(const Tensor &t);
Tensor mean(const Tensor &t);
/// Reduces (and removes) one axis.
Tensor sum_axis(const Tensor &t, std::size_t axis);
/// Max-shifted log-sum-exp along an axis, which is removed.
Tensor logsumexp(const Tensor &t, std::size_t axis);
/// Log-softmax over the last axis.
Tensor log_softmax(const Tensor &t);
/// Euclidean norm over the last axis (removed). Gradient at the origin is 0.
Tensor norm_last(const Tensor &t);

/// Valid cross-correlation. input: C x H x W, kernels: F x C x kh x kw.
Tensor conv2d(const Tensor &input, const Tensor &kernels, std::size_t stride = 1);

// Sampling. Results are constant leaves.
Tensor sample_uniform(RngStream &rng, double lo, double hi, Shape shape);
Tensor sample_gaussian(RngStream &rng, Shape shape);

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate;
/// intermediate gradients are reset on every call.
void backward(const Tensor &loss);

} // namespace pfrnn
