// SPDX-License-Identifier: Apache-2.0
#include <pfrnn/cells.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pfrnn {

void CellConfig::validate() const {
  if (particles < 1)
    throw ConfigError("particle count must be at least 1");
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw ConfigError("soft-resampling alpha must lie in (0, 1], got " + std::to_string(alpha));
  if (logstd_min > logstd_max)
    throw ConfigError("noise log-std clamp is empty");
}

ParticleBelief initial_belief(std::size_t batch, std::size_t particles, std::size_t hidden, bool with_cell) {
  if (particles < 1)
    throw ConfigError("particle count must be at least 1");
  ParticleBelief b;
  b.hidden = Tensor::zeros({batch, particles, hidden});
  if (with_cell)
    b.cell = Tensor::zeros({batch, particles, hidden});
  b.log_weights = Tensor::full({batch, particles}, -std::log(static_cast<double>(particles)));
  return b;
}

// ---------------------------------------------------------------------------
// Parameters

void LstmParams::append_parameters(const std::string &prefix, ParameterList &out) const {
  input_gate.append_parameters(prefix + ".input_gate", out);
  forget_gate.append_parameters(prefix + ".forget_gate", out);
  output_gate.append_parameters(prefix + ".output_gate", out);
  candidate.append_parameters(prefix + ".candidate", out);
  if (bn)
    bn->append_parameters(prefix + ".bn", out);
}

void LstmParams::append_buffers(const std::string &prefix, ParameterList &out) const {
  if (bn)
    bn->append_buffers(prefix + ".bn", out);
}

void GruParams::append_parameters(const std::string &prefix, ParameterList &out) const {
  reset_gate.append_parameters(prefix + ".reset_gate", out);
  update_gate.append_parameters(prefix + ".update_gate", out);
  candidate.append_parameters(prefix + ".candidate", out);
  if (bn)
    bn->append_parameters(prefix + ".bn", out);
}

void GruParams::append_buffers(const std::string &prefix, ParameterList &out) const {
  if (bn)
    bn->append_buffers(prefix + ".bn", out);
}

void PfLstmParams::append_parameters(const std::string &prefix, ParameterList &out) const {
  core.append_parameters(prefix, out);
  noise.append_parameters(prefix + ".noise", out);
  obs.append_parameters(prefix + ".obs", out);
}

void PfLstmParams::append_buffers(const std::string &prefix, ParameterList &out) const {
  core.append_buffers(prefix, out);
}

void PfGruParams::append_parameters(const std::string &prefix, ParameterList &out) const {
  core.append_parameters(prefix, out);
  noise.append_parameters(prefix + ".noise", out);
  obs.append_parameters(prefix + ".obs", out);
}

void PfGruParams::append_buffers(const std::string &prefix, ParameterList &out) const {
  core.append_buffers(prefix, out);
}

LstmParams make_lstm_params(std::size_t input, std::size_t hidden, bool with_bn, RngStream &rng) {
  const std::size_t in = hidden + input;
  LstmParams p{make_linear(in, hidden, rng), make_linear(in, hidden, rng), make_linear(in, hidden, rng),
               make_linear(in, hidden, rng), std::nullopt};
  auto fb = p.forget_gate.bias.data();
  std::fill(fb.begin(), fb.end(), 1.0);
  if (with_bn)
    p.bn = make_batchnorm(hidden);
  return p;
}

GruParams make_gru_params(std::size_t input, std::size_t hidden, bool with_bn, RngStream &rng) {
  const std::size_t in = hidden + input;
  GruParams p{make_linear(in, hidden, rng), make_linear(in, hidden, rng), make_linear(in, hidden, rng),
              std::nullopt};
  if (with_bn)
    p.bn = make_batchnorm(hidden);
  return p;
}

PfLstmParams make_pf_lstm_params(std::size_t input, std::size_t hidden, bool with_bn, RngStream &rng) {
  PfLstmParams p{make_lstm_params(input, hidden, with_bn, rng), {}, {}};
  p.noise = make_linear(hidden + input, hidden, rng);
  p.obs = make_linear(hidden + input, 1, rng);
  return p;
}

PfGruParams make_pf_gru_params(std::size_t input, std::size_t hidden, bool with_bn, RngStream &rng) {
  PfGruParams p{make_gru_params(input, hidden, with_bn, rng), {}, {}};
  p.noise = make_linear(hidden + input, hidden, rng);
  p.obs = make_linear(hidden + input, 1, rng);
  return p;
}

std::size_t lstm_param_count(std::size_t input, std::size_t hidden, bool with_bn) {
  return 4 * hidden * (hidden + input + 1) + (with_bn ? 2 * hidden : 0);
}

std::size_t gru_param_count(std::size_t input, std::size_t hidden, bool with_bn) {
  return 3 * hidden * (hidden + input + 1) + (with_bn ? 2 * hidden : 0);
}

std::size_t pf_lstm_param_count(std::size_t input, std::size_t hidden, bool with_bn) {
  return lstm_param_count(input, hidden, with_bn) + hidden * (hidden + input + 1) + (hidden + input + 1);
}

std::size_t pf_gru_param_count(std::size_t input, std::size_t hidden, bool with_bn) {
  return gru_param_count(input, hidden, with_bn) + hidden * (hidden + input + 1) + (hidden + input + 1);
}

// ---------------------------------------------------------------------------
// Shared machinery

namespace {

std::vector<std::size_t> repeat_index(std::size_t batch, std::size_t particles) {
  std::vector<std::size_t> idx(batch * particles);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < particles; ++k)
      idx[b * particles + k] = b;
  return idx;
}

/// Stacked pre-activations of several layers over [h, x] for N = B*K particle
/// rows. The x half is computed once per batch row and repeated K times,
/// which is the same product as applying each layer to the concatenation.
Tensor project(std::initializer_list<const LinearLayer *> layers, const Tensor &h2, const Tensor &x,
               std::size_t particles) {
  const std::size_t H = h2.dim(1);
  const std::size_t in = (*layers.begin())->in_features();
  if (x.rank() != 2 || x.dim(1) + H != in)
    throw ShapeError("cell input expects B x " + std::to_string(in - H) + ", got " + to_string(x.shape()));
  if (x.dim(0) * particles != h2.dim(0))
    throw ShapeError("cell input batch " + std::to_string(x.dim(0)) + " does not match belief rows " +
                     std::to_string(h2.dim(0)));
  std::vector<Tensor> ws, bs;
  for (const auto *l : layers) {
    ws.push_back(l->weight);
    bs.push_back(l->bias);
  }
  Tensor W = ws.size() == 1 ? ws[0] : concat(ws, 0);
  Tensor b = bs.size() == 1 ? bs[0] : concat(bs, 0);
  Tensor px = add(matmul_nt(x, narrow(W, 1, H, in - H)), b);
  if (particles > 1)
    px = gather_rows(px, repeat_index(x.dim(0), particles));
  return add(matmul_nt(h2, narrow(W, 1, 0, H)), px);
}

Tensor candidate_activation(const Tensor &pre, std::optional<BatchNorm> &bn, bool bn_relu, Mode mode) {
  if (!bn_relu)
    return tanh(pre);
  if (!bn)
    throw ConfigError("BN-ReLU activation requested on a cell built without batch normalization");
  return relu(batchnorm_forward(*bn, pre, mode));
}

/// pre: N x (>= 4H) with blocks [input, forget, output, candidate, ...].
LstmState lstm_transition(const Tensor &pre, const Tensor &c_prev, const Tensor *noise, LstmParams &params,
                          bool bn_relu, Mode mode) {
  const std::size_t H = c_prev.dim(1);
  Tensor i = sigmoid(narrow(pre, 1, 0, H));
  Tensor f = sigmoid(narrow(pre, 1, H, H));
  Tensor o = sigmoid(narrow(pre, 1, 2 * H, H));
  Tensor cand = narrow(pre, 1, 3 * H, H);
  if (noise)
    cand = add(cand, *noise);
  Tensor act = candidate_activation(cand, params.bn, bn_relu, mode);
  Tensor c = add(mul(f, c_prev), mul(i, act));
  Tensor h = mul(o, tanh(c));
  return {h, c};
}

/// h' = (1 - z) * act(n) + z * h, n = W_n [r * h, x] + b_n (+ noise).
Tensor gru_transition(const Tensor &h2, const Tensor &r, const Tensor &z, const Tensor &x, const Tensor *noise,
                      GruParams &params, std::size_t particles, bool bn_relu, Mode mode) {
  Tensor n = project({&params.candidate}, mul(r, h2), x, particles);
  if (noise)
    n = add(n, *noise);
  Tensor act = candidate_activation(n, params.bn, bn_relu, mode);
  return add(mul(add_scalar(neg(z), 1.0), act), mul(z, h2));
}

Tensor flat_particles(const Tensor &t) { return reshape(t, {t.dim(0) * t.dim(1), t.dim(2)}); }

Tensor obs_loglik_flat(const Tensor &x, const Tensor &h2, const LinearLayer &obs, std::size_t batch,
                       std::size_t particles) {
  return reshape(project({&obs}, h2, x, particles), {batch, particles});
}

void check_belief(const ParticleBelief &b) {
  if (!b.hidden.defined() || b.hidden.rank() != 3)
    throw ShapeError("belief hidden state must be B x K x H");
  if (b.log_weights.shape() != Shape{b.batch(), b.particles()})
    throw ShapeError("belief log-weights must be B x K");
}

StepResult finish_step(ParticleBelief updated, const CellConfig &config, RngStream &rng) {
  StepResult r;
  r.aux.pre_resample_log_weights = updated.log_weights;
  if (config.resample) {
    auto rs = soft_resample(updated, config.alpha, rng);
    r.belief = std::move(rs.belief);
    r.aux.ancestors = std::move(rs.ancestors);
  } else {
    r.belief = std::move(updated);
    const std::size_t K = r.belief.particles();
    r.aux.ancestors.resize(r.belief.batch() * K);
    for (std::size_t i = 0; i < r.aux.ancestors.size(); ++i)
      r.aux.ancestors[i] = i % K;
  }
  return r;
}

} // namespace

// ---------------------------------------------------------------------------
// Baselines

LstmState lstm_step(const LstmState &state, const Tensor &x, LstmParams &params, bool bn_relu, Mode mode) {
  Tensor pre = project({&params.input_gate, &params.forget_gate, &params.output_gate, &params.candidate},
                       state.hidden, x, 1);
  return lstm_transition(pre, state.cell, nullptr, params, bn_relu, mode);
}

Tensor gru_step(const Tensor &hidden, const Tensor &x, GruParams &params, bool bn_relu, Mode mode) {
  const std::size_t H = hidden.dim(1);
  Tensor pre = project({&params.reset_gate, &params.update_gate}, hidden, x, 1);
  Tensor r = sigmoid(narrow(pre, 1, 0, H));
  Tensor z = sigmoid(narrow(pre, 1, H, H));
  return gru_transition(hidden, r, z, x, nullptr, params, 1, bn_relu, mode);
}

// ---------------------------------------------------------------------------
// Particle operations

Tensor reparam_from_logstd(const Tensor &logstd_pre, const CellConfig &config, RngStream &rng) {
  Tensor logstd = clamp(logstd_pre, config.logstd_min, config.logstd_max);
  Tensor eps = sample_gaussian(rng, logstd_pre.shape());
  return mul(eps, exp(logstd));
}

Tensor reparam_noise(const Tensor &prev_hidden, const Tensor &x, const LinearLayer &noise,
                     const CellConfig &config, RngStream &rng) {
  const std::size_t B = prev_hidden.dim(0), K = prev_hidden.dim(1), H = prev_hidden.dim(2);
  Tensor pre = project({&noise}, flat_particles(prev_hidden), x, K);
  return reshape(reparam_from_logstd(pre, config, rng), {B, K, H});
}

Tensor obs_loglik(const Tensor &x, const Tensor &particles, const LinearLayer &obs) {
  if (particles.rank() != 3)
    throw ShapeError("particles must be B x K x H");
  return obs_loglik_flat(x, flat_particles(particles), obs, particles.dim(0), particles.dim(1));
}

Tensor weight_update(const Tensor &log_weights, const Tensor &loglik) {
  if (log_weights.shape() != loglik.shape() || log_weights.rank() != 2)
    throw ShapeError("weight_update expects matching B x K tensors");
  Tensor s = add(log_weights, loglik);
  Tensor lse = logsumexp(s, 1);
  for (double v : lse.values())
    if (!std::isfinite(v))
      throw DegenerateBelief("particle weights degenerate: a batch row has no finite mass");
  return sub_rowwise(s, lse);
}

ResampleResult soft_resample(const ParticleBelief &belief, double alpha, RngStream &rng) {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw ConfigError("soft-resampling alpha must lie in (0, 1], got " + std::to_string(alpha));
  check_belief(belief);
  const std::size_t B = belief.batch(), K = belief.particles(), H = belief.hidden_size();
  const double uniform_mass = (1.0 - alpha) / static_cast<double>(K);

  ResampleResult out;
  out.ancestors.resize(B * K);
  std::vector<std::size_t> flat(B * K);
  const auto lw = belief.log_weights.values();
  std::vector<double> cdf(K);
  for (std::size_t b = 0; b < B; ++b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < K; ++i) {
      acc += alpha * std::exp(lw[b * K + i]) + uniform_mass;
      cdf[i] = acc;
    }
    for (std::size_t j = 0; j < K; ++j) {
      const double u = rng.uniform() * acc;
      auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
      const auto a = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), K - 1);
      out.ancestors[b * K + j] = a;
      flat[b * K + j] = b * K + a;
    }
  }

  ParticleBelief nb;
  nb.hidden = reshape(gather_rows(flat_particles(belief.hidden), flat), {B, K, H});
  if (belief.has_cell())
    nb.cell = reshape(gather_rows(flat_particles(belief.cell), flat), {B, K, H});

  Tensor g = gather_rows(reshape(belief.log_weights, {B * K}), flat);
  Tensor lq = alpha == 1.0 ? g : log(add_scalar(scale(exp(g), alpha), uniform_mass));
  Tensor raw = reshape(sub(g, lq), {B, K});
  out.unnormalized_log_weights = raw;
  nb.log_weights = sub_rowwise(raw, logsumexp(raw, 1));
  out.belief = std::move(nb);
  return out;
}

Tensor mean_particle(const ParticleBelief &belief) {
  check_belief(belief);
  return sum_axis(mul_rowwise(belief.hidden, exp(belief.log_weights)), 1);
}

StepResult pf_lstm_step(const ParticleBelief &belief, const Tensor &x, PfLstmParams &params,
                        const CellConfig &config, RngStream &rng, Mode mode) {
  config.validate();
  check_belief(belief);
  if (!belief.has_cell())
    throw ShapeError("PF-LSTM belief needs a cell state");
  const std::size_t B = belief.batch(), K = belief.particles(), H = belief.hidden_size();
  Tensor h2 = flat_particles(belief.hidden);
  Tensor c2 = flat_particles(belief.cell);

  auto &core = params.core;
  Tensor pre = project({&core.input_gate, &core.forget_gate, &core.output_gate, &core.candidate, &params.noise},
                       h2, x, K);
  Tensor noise = reparam_from_logstd(narrow(pre, 1, 4 * H, H), config, rng);
  LstmState next = lstm_transition(pre, c2, &noise, core, config.bn_relu, mode);

  Tensor loglik = obs_loglik_flat(x, next.hidden, params.obs, B, K);
  ParticleBelief updated;
  updated.hidden = reshape(next.hidden, {B, K, H});
  updated.cell = reshape(next.cell, {B, K, H});
  updated.log_weights = weight_update(belief.log_weights, loglik);
  return finish_step(std::move(updated), config, rng);
}

StepResult pf_gru_step(const ParticleBelief &belief, const Tensor &x, PfGruParams &params,
                       const CellConfig &config, RngStream &rng, Mode mode) {
  config.validate();
  check_belief(belief);
  const std::size_t B = belief.batch(), K = belief.particles(), H = belief.hidden_size();
  Tensor h2 = flat_particles(belief.hidden);

  auto &core = params.core;
  Tensor pre = project({&core.reset_gate, &core.update_gate, &params.noise}, h2, x, K);
  Tensor r = sigmoid(narrow(pre, 1, 0, H));
  Tensor z = sigmoid(narrow(pre, 1, H, H));
  Tensor noise = reparam_from_logstd(narrow(pre, 1, 2 * H, H), config, rng);
  Tensor h = gru_transition(h2, r, z, x, &noise, core, K, config.bn_relu, mode);

  Tensor loglik = obs_loglik_flat(x, h, params.obs, B, K);
  ParticleBelief updated;
  updated.hidden = reshape(h, {B, K, H});
  updated.log_weights = weight_update(belief.log_weights, loglik);
  return finish_step(std::move(updated), config, rng);
}

} // namespace pfrnn
