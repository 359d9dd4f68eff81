// SPDX-License-Identifier: Apache-2.0
/**
 * @file   model.hpp
 * @brief  Localization network: input encoder, map encoder, recurrent cell
 *         (PF or baseline) and the pose head.
 *
 * Inputs are standardized with training-split statistics before the encoder.
 * The head output is mapped back to encoded-pose units as mu + sigma * f(h),
 * so losses and metrics are reported in (x/n, y/n, cos, sin) space.
 */
#pragma once

#include <pfrnn/cells.hpp>
#include <pfrnn/losses.hpp>
#include <pfrnn/maze.hpp>
#include <pfrnn/nn.hpp>

#include <optional>
#include <string>
#include <vector>

namespace pfrnn {

enum class CellKind { PfLstm, PfGru, Lstm, Gru, LstmBnRelu, GruBnRelu };

std::string to_string(CellKind kind);
CellKind parse_cell_kind(const std::string &name);
bool is_particle_cell(CellKind kind);

struct ModelSpec {
  CellKind kind = CellKind::PfLstm;
  std::size_t hidden = 32;
  std::size_t particles = 10;
  double alpha = 0.5;
  bool resample = true;
  /// PF cells only: BN-ReLU candidate path (false is the tanh ablation).
  bool bn_relu = true;
  double logstd_min = -8.0;
  double logstd_max = 2.0;
  std::size_t input_dim = 8;
  std::size_t encoder_width = 64;
  bool use_map = true;
  std::size_t map_size = 10;
  std::size_t conv1_channels = 8;
  std::size_t conv2_channels = 16;
  std::size_t map_features = 64;
  std::size_t output_dim = 4;

  /// Width of the features entering the cell.
  std::size_t feature_dim() const { return encoder_width + (use_map ? map_features : 0); }
  CellConfig cell_config() const;
  void validate() const;
};

/// Closed-form trainable-parameter counts.
std::size_t cell_param_count(const ModelSpec &spec);
std::size_t model_param_count(const ModelSpec &spec);

/// Recurrent memory for one minibatch. Baselines use a single particle slot.
struct RecurrentState {
  ParticleBelief belief; ///< PF cells
  LstmState lstm;        ///< LSTM baselines
  Tensor gru;            ///< GRU baselines

  RecurrentState detached() const;
};

class Model {
 public:
  Model(const ModelSpec &spec, const MazeMap &map, RngStream &rng);

  const ModelSpec &spec() const { return spec_; }
  const MazeMap &map() const { return map_; }

  /// Trainable tensors, in a fixed order with stable names.
  ParameterList parameters() const;
  /// BN running statistics and normalization constants.
  ParameterList buffers() const;

  void set_input_stats(const std::vector<double> &mean, const std::vector<double> &stddev);
  void set_output_stats(const std::vector<double> &mean, const std::vector<double> &stddev);

  RecurrentState initial_state(std::size_t batch) const;

  /// Map features for one forward pass (1 x map_features), undefined when
  /// the spec has no map input.
  Tensor map_features() const;

  /// Raw (unstandardized) inputs B x input_dim -> cell features B x F.
  Tensor encode(const Tensor &raw_inputs, const Tensor &map_feat) const;

  /// One recurrent step. Per-particle predictions are filled when
  /// with_particles is set (baselines always give B x 1 x D).
  StepOutputs step(RecurrentState &state, const Tensor &features, Mode mode, RngStream &rng, bool with_particles);

  /// Full unroll over T steps of raw inputs (each B x input_dim).
  std::vector<StepOutputs> forward(const std::vector<Tensor> &inputs, Mode mode, RngStream &rng,
                                   bool with_particles);

  /// Latest step's ancestor indices (PF cells), for visualization.
  const std::vector<std::size_t> &last_ancestors() const { return last_ancestors_; }

  using Snapshot = std::vector<std::vector<double>>;
  Snapshot snapshot() const;
  void restore(const Snapshot &snap);

 private:
  Tensor head(const Tensor &hidden) const;

  ModelSpec spec_;
  MazeMap map_;
  Tensor map_input_; // 2 x n x n: occupancy, black cells
  LinearLayer enc1_, enc2_;
  Tensor conv1_w_, conv1_b_, conv2_w_, conv2_b_;
  LinearLayer map_fc_;
  std::optional<PfLstmParams> pf_lstm_;
  std::optional<PfGruParams> pf_gru_;
  std::optional<LstmParams> lstm_;
  std::optional<GruParams> gru_;
  LinearLayer head_;
  Tensor in_mean_, in_inv_std_, out_mean_, out_std_;
  std::vector<std::size_t> last_ancestors_;
};

} // namespace pfrnn
