// SPDX-License-Identifier: Apache-2.0
/**
 * @file   nn.hpp
 * @brief  Linear layers, batch normalization, initialization and the
 *         RMSProp / gradient-clipping optimizer pieces.
 */
#pragma once

#include <pfrnn/rng.hpp>
#include <pfrnn/tensor.hpp>

#include <stdexcept>
#include <string>
#include <vector>

namespace pfrnn {

enum class Mode { Train, Eval };

/// A non-finite value showed up where it must not (loss, gradient).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParameterList = std::vector<NamedTensor>;

std::size_t count_parameters(const ParameterList &params);

/// Glorot bound sqrt(6 / (fan_in + fan_out)).
double fan_bound(std::size_t fan_in, std::size_t fan_out);

/// Fan-based uniform initialization. Fans are derived from the shape:
/// (out, in) for matrices, (F, C, kh, kw) -> (C*kh*kw, F*kh*kw) for kernels,
/// (n) -> (n, n) for vectors.
Tensor init_params(const Shape &shape, RngStream &rng);

/// y = x W^T + b, weight stored (out x in).
struct LinearLayer {
  Tensor weight;
  Tensor bias;

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
  Tensor forward(const Tensor &x) const;
  void append_parameters(const std::string &prefix, ParameterList &out) const;
};

/// Weights fan-initialized, bias zero.
LinearLayer make_linear(std::size_t in, std::size_t out, RngStream &rng);

Tensor linear_forward(const LinearLayer &layer, const Tensor &x);

struct BatchNorm {
  Tensor gamma;        // scale, trainable
  Tensor beta;         // shift, trainable
  Tensor running_mean; // buffer
  Tensor running_var;  // buffer
  double momentum = 0.1;
  double epsilon = 1e-5;

  std::size_t features() const { return gamma.size(); }
  void append_parameters(const std::string &prefix, ParameterList &out) const;
  void append_buffers(const std::string &prefix, ParameterList &out) const;
};

BatchNorm make_batchnorm(std::size_t features, double momentum = 0.1, double epsilon = 1e-5);

/// x: N x H. Train mode normalizes with the (biased) batch statistics and
/// updates the running statistics; it needs N >= 2. Eval mode uses the
/// running statistics only.
Tensor batchnorm_forward(BatchNorm &bn, const Tensor &x, Mode mode);

using GradientSet = std::vector<std::vector<double>>;

/// Copies each parameter's accumulated gradient.
GradientSet collect_gradients(const ParameterList &params);

double global_norm(const GradientSet &grads);

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(GradientSet &grads, double max_norm);

struct RmsPropConfig {
  double learning_rate = 1e-3;
  double decay = 0.99;
  double epsilon = 1e-8;
};

/// s <- rho s + (1 - rho) g^2;  theta <- theta - lr g / (sqrt(s) + eps)
class RmsProp {
 public:
  explicit RmsProp(RmsPropConfig config = {}) : config_(config) {}

  /// Throws NumericError naming the parameter when a gradient is not finite.
  void step(ParameterList &params, const GradientSet &grads);

  const RmsPropConfig &config() const { return config_; }
  const GradientSet &mean_square() const { return mean_square_; }

 private:
  RmsPropConfig config_;
  GradientSet mean_square_;
};

} // namespace pfrnn
