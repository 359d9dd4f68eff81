// SPDX-License-Identifier: Apache-2.0
#include <pfrnn/nn.hpp>

#include <cmath>

namespace pfrnn {

std::size_t count_parameters(const ParameterList &params) {
  std::size_t n = 0;
  for (const auto &p : params)
    n += p.tensor.size();
  return n;
}

double fan_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Tensor init_params(const Shape &shape, RngStream &rng) {
  if (shape.empty() || numel(shape) == 0)
    throw ShapeError("init_params needs positive dimensions, got " + to_string(shape));
  std::size_t fan_in = 0, fan_out = 0;
  switch (shape.size()) {
  case 1:
    fan_in = fan_out = shape[0];
    break;
  case 2:
    fan_out = shape[0];
    fan_in = shape[1];
    break;
  default: {
    std::size_t receptive = 1;
    for (std::size_t i = 2; i < shape.size(); ++i)
      receptive *= shape[i];
    fan_out = shape[0] * receptive;
    fan_in = shape[1] * receptive;
  }
  }
  const double a = fan_bound(fan_in, fan_out);
  std::vector<double> v(numel(shape));
  for (auto &x : v)
    x = rng.uniform(-a, a);
  return Tensor(shape, std::move(v), true);
}

Tensor LinearLayer::forward(const Tensor &x) const { return linear_forward(*this, x); }

void LinearLayer::append_parameters(const std::string &prefix, ParameterList &out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

LinearLayer make_linear(std::size_t in, std::size_t out, RngStream &rng) {
  return LinearLayer{init_params({out, in}, rng), Tensor::zeros({out}, true)};
}

Tensor linear_forward(const LinearLayer &layer, const Tensor &x) {
  if (x.rank() != 2 || x.dim(1) != layer.in_features())
    throw ShapeError("linear layer expects N x " + std::to_string(layer.in_features()) + ", got " +
                     to_string(x.shape()));
  return add(matmul_nt(x, layer.weight), layer.bias);
}

void BatchNorm::append_parameters(const std::string &prefix, ParameterList &out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

void BatchNorm::append_buffers(const std::string &prefix, ParameterList &out) const {
  out.push_back({prefix + ".running_mean", running_mean});
  out.push_back({prefix + ".running_var", running_var});
}

BatchNorm make_batchnorm(std::size_t features, double momentum, double epsilon) {
  BatchNorm bn;
  bn.gamma = Tensor::full({features}, 1.0, true);
  bn.beta = Tensor::zeros({features}, true);
  bn.running_mean = Tensor::zeros({features});
  bn.running_var = Tensor::full({features}, 1.0);
  bn.momentum = momentum;
  bn.epsilon = epsilon;
  return bn;
}

Tensor batchnorm_forward(BatchNorm &bn, const Tensor &x, Mode mode) {
  const std::size_t H = bn.features();
  if (x.rank() != 2 || x.dim(1) != H)
    throw ShapeError("batchnorm expects N x " + std::to_string(H) + ", got " + to_string(x.shape()));
  const std::size_t N = x.dim(0);

  if (mode == Mode::Eval) {
    std::vector<double> shift(H), inv(H);
    for (std::size_t j = 0; j < H; ++j) {
      shift[j] = -bn.running_mean[j];
      inv[j] = 1.0 / std::sqrt(bn.running_var[j] + bn.epsilon);
    }
    Tensor xhat = mul(add(x, Tensor::vector(shift)), Tensor::vector(inv));
    return add(mul(xhat, bn.gamma), bn.beta);
  }

  if (N < 2)
    throw ShapeError("batchnorm in train mode needs at least 2 rows, got " + std::to_string(N));
  const double invn = 1.0 / static_cast<double>(N);
  Tensor mu = scale(sum_axis(x, 0), invn);
  Tensor centered = sub(x, mu);
  Tensor var = scale(sum_axis(square(centered), 0), invn);
  Tensor xhat = div(centered, sqrt(add_scalar(var, bn.epsilon)));

  auto rm = bn.running_mean.data();
  auto rv = bn.running_var.data();
  for (std::size_t j = 0; j < H; ++j) {
    rm[j] = (1.0 - bn.momentum) * rm[j] + bn.momentum * mu[j];
    rv[j] = (1.0 - bn.momentum) * rv[j] + bn.momentum * var[j];
  }
  return add(mul(xhat, bn.gamma), bn.beta);
}

GradientSet collect_gradients(const ParameterList &params) {
  GradientSet g;
  g.reserve(params.size());
  for (const auto &p : params)
    g.push_back(p.tensor.grad());
  return g;
}

double global_norm(const GradientSet &grads) {
  double acc = 0.0;
  for (const auto &g : grads)
    for (double v : g)
      acc += v * v;
  return std::sqrt(acc);
}

double clip_grad_norm(GradientSet &grads, double max_norm) {
  if (!(max_norm > 0.0))
    throw std::invalid_argument("clip_grad_norm: max_norm must be positive");
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (auto &g : grads)
      for (auto &v : g)
        v *= f;
  }
  return norm;
}

void RmsProp::step(ParameterList &params, const GradientSet &grads) {
  if (grads.size() != params.size())
    throw ShapeError("rmsprop: gradient count does not match parameter count");
  if (mean_square_.empty())
    for (const auto &p : params)
      mean_square_.emplace_back(p.tensor.size(), 0.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto &g = grads[i];
    if (g.size() != params[i].tensor.size())
      throw ShapeError("rmsprop: gradient shape mismatch for " + params[i].name);
    for (double v : g)
      if (!std::isfinite(v))
        throw NumericError("non-finite gradient in parameter " + params[i].name);
  }
  const double rho = config_.decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].tensor.data();
    auto &s = mean_square_[i];
    const auto &g = grads[i];
    for (std::size_t j = 0; j < g.size(); ++j) {
      s[j] = rho * s[j] + (1.0 - rho) * g[j] * g[j];
      theta[j] -= config_.learning_rate * g[j] / (std::sqrt(s[j]) + config_.epsilon);
    }
  }
}

} // namespace pfrnn
