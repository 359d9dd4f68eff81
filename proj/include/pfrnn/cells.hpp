// SPDX-License-Identifier: Apache-2.0
/**
 * @file   cells.hpp
 * @brief  Particle-filter recurrent cells (PF-LSTM, PF-GRU) and the gated
 *         baselines they extend.
 *
 * A particle belief holds K weighted copies of the recurrent memory for each
 * batch row. One PF step moves every particle through a stochastic gated
 * update (reparameterized Gaussian noise on the candidate), re-weights the
 * particles with a learned observation log-likelihood, and optionally applies
 * soft resampling, which draws ancestors from a mixture of the particle
 * weights and the uniform distribution and corrects with importance weights.
 * All particles share every parameter.
 *
 * Shapes: B batch rows, K particles, H hidden units, F input features.
 */
#pragma once

#include <pfrnn/nn.hpp>
#include <pfrnn/rng.hpp>
#include <pfrnn/tensor.hpp>

#include <optional>
#include <stdexcept>
#include <vector>

namespace pfrnn {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Every particle in some batch row has zero weight.
class DegenerateBelief : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CellConfig {
  std::size_t particles = 1;
  /// Soft-resampling mixture weight, in (0, 1]. 1 is plain multinomial.
  double alpha = 0.5;
  bool resample = true;
  /// ReLU(BN(.)) on the candidate instead of tanh.
  bool bn_relu = true;
  /// Noise log-standard-deviation clamp.
  double logstd_min = -8.0;
  double logstd_max = 2.0;

  void validate() const;
};

struct ParticleBelief {
  Tensor hidden;      ///< B x K x H
  Tensor cell;        ///< B x K x H, PF-LSTM only
  Tensor log_weights; ///< B x K, normalized per row

  std::size_t batch() const { return hidden.dim(0); }
  std::size_t particles() const { return hidden.dim(1); }
  std::size_t hidden_size() const { return hidden.dim(2); }
  bool has_cell() const { return cell.defined(); }
};

/// Zero memory replicated K times with uniform log-weights -log K.
ParticleBelief initial_belief(std::size_t batch, std::size_t particles, std::size_t hidden, bool with_cell);

struct LstmParams {
  LinearLayer input_gate;  // over [h, x]
  LinearLayer forget_gate;
  LinearLayer output_gate;
  LinearLayer candidate;
  std::optional<BatchNorm> bn;

  std::size_t hidden_size() const { return candidate.out_features(); }
  std::size_t input_size() const { return candidate.in_features() - hidden_size(); }
  void append_parameters(const std::string &prefix, ParameterList &out) const;
  void append_buffers(const std::string &prefix, ParameterList &out) const;
};

struct GruParams {
  LinearLayer reset_gate;  // over [h, x]
  LinearLayer update_gate; // over [h, x]
  LinearLayer candidate;   // over [r * h, x]
  std::optional<BatchNorm> bn;

  std::size_t hidden_size() const { return candidate.out_features(); }
  std::size_t input_size() const { return candidate.in_features() - hidden_size(); }
  void append_parameters(const std::string &prefix, ParameterList &out) const;
  void append_buffers(const std::string &prefix, ParameterList &out) const;
};

struct PfLstmParams {
  LstmParams core;
  LinearLayer noise; ///< [h, x] -> H noise log-std
  LinearLayer obs;   ///< [h, x] -> 1 observation log-likelihood

  void append_parameters(const std::string &prefix, ParameterList &out) const;
  void append_buffers(const std::string &prefix, ParameterList &out) const;
};

struct PfGruParams {
  GruParams core;
  LinearLayer noise;
  LinearLayer obs;

  void append_parameters(const std::string &prefix, ParameterList &out) const;
  void append_buffers(const std::string &prefix, ParameterList &out) const;
};

/// Forget-gate bias starts at 1, other biases at 0.
LstmParams make_lstm_params(std::size_t input, std::size_t hidden, bool with_bn, RngStream &rng);
GruParams make_gru_params(std::size_t input, std::size_t hidden, bool with_bn, RngStream &rng);
PfLstmParams make_pf_lstm_params(std::size_t input, std::size_t hidden, bool with_bn, RngStream &rng);
PfGruParams make_pf_gru_params(std::size_t input, std::size_t hidden, bool with_bn, RngStream &rng);

// Closed-form trainable-parameter counts (F inputs, H hidden).
std::size_t lstm_param_count(std::size_t input, std::size_t hidden, bool with_bn);
std::size_t gru_param_count(std::size_t input, std::size_t hidden, bool with_bn);
std::size_t pf_lstm_param_count(std::size_t input, std::size_t hidden, bool with_bn);
std::size_t pf_gru_param_count(std::size_t input, std::size_t hidden, bool with_bn);

// ---------------------------------------------------------------------------
// Baselines: one deterministic state per batch row.

struct LstmState {
  Tensor hidden; ///< B x H
  Tensor cell;   ///< B x H
};

LstmState lstm_step(const LstmState &state, const Tensor &x, LstmParams &params, bool bn_relu, Mode mode);
Tensor gru_step(const Tensor &hidden, const Tensor &x, GruParams &params, bool bn_relu, Mode mode);

// ---------------------------------------------------------------------------
// Particle operations

/// xi = eps * exp(clamp(logstd_pre)), eps ~ N(0, 1) drawn from rng as a
/// constant. Same shape as logstd_pre.
Tensor reparam_from_logstd(const Tensor &logstd_pre, const CellConfig &config, RngStream &rng);

/// Noise for every particle: the noise layer over [prev_hidden, x] gives the
/// log-std. prev_hidden: B x K x H, x: B x F. Returns B x K x H.
Tensor reparam_noise(const Tensor &prev_hidden, const Tensor &x, const LinearLayer &noise,
                     const CellConfig &config, RngStream &rng);

/// Learned log-likelihood of each particle: linear over [h_i, x]. Returns B x K.
Tensor obs_loglik(const Tensor &x, const Tensor &particles, const LinearLayer &obs);

/// log w' = log w + loglik - logsumexp(log w + loglik). Throws
/// DegenerateBelief when a row has no finite mass.
Tensor weight_update(const Tensor &log_weights, const Tensor &loglik);

struct ResampleResult {
  ParticleBelief belief;
  /// Flat B*K ancestor indices (within each row, 0..K-1).
  std::vector<std::size_t> ancestors;
  /// log(w_a / (alpha w_a + (1 - alpha) / K)) before renormalization, B x K.
  Tensor unnormalized_log_weights;
};

ResampleResult soft_resample(const ParticleBelief &belief, double alpha, RngStream &rng);

/// Weighted mean of the hidden particles, B x H.
Tensor mean_particle(const ParticleBelief &belief);

struct StepAux {
  Tensor pre_resample_log_weights; ///< B x K
  std::vector<std::size_t> ancestors;
};

struct StepResult {
  ParticleBelief belief;
  StepAux aux;
};

StepResult pf_lstm_step(const ParticleBelief &belief, const Tensor &x, PfLstmParams &params,
                        const CellConfig &config, RngStream &rng, Mode mode);
StepResult pf_gru_step(const ParticleBelief &belief, const Tensor &x, PfGruParams &params,
                       const CellConfig &config, RngStream &rng, Mode mode);

} // namespace pfrnn
