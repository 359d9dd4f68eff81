// SPDX-License-Identifier: Apache-2.0
/**
 * @file   train.hpp
 * @brief  Training loop, evaluation, grid search and the ablation matrix for
 *         the localization task.
 */
#pragma once

#include <pfrnn/dataset.hpp>
#include <pfrnn/model.hpp>

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace pfrnn {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  double clip_norm = 5.0;
  double l2 = 1e-4;
  std::size_t epochs = 30;
  std::uint64_t seed = 1;
  /// Truncation window in steps; 0 backpropagates through the whole sequence.
  std::size_t bptt = 0;
  double beta = 1.0;
  double pred_weight = 1.0;
  std::size_t eval_seeds = 3;

  void validate() const;
};

/// Trajectories as dense model inputs and encoded-pose targets.
struct EncodedSplit {
  std::size_t count = 0;
  std::size_t steps = 0;
  std::vector<double> inputs;  ///< count x steps x kInputDim
  std::vector<double> targets; ///< count x steps x kPoseDim
};

EncodedSplit encode_split(const std::vector<Trajectory> &trajs, std::size_t maze_size);

/// Per-dimension mean and (population) standard deviation over all steps.
void feature_stats(const std::vector<double> &rows, std::size_t dim, std::vector<double> &mean,
                   std::vector<double> &stddev);

/// Builds a model with parameters drawn from the seed's model stream and
/// normalization statistics taken from the training split.
std::unique_ptr<Model> build_model(const ModelSpec &spec, const Dataset &data, std::uint64_t seed);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_pred = 0.0;
  double train_elbo = 0.0;
  double grad_norm = 0.0;
  double val_last_step_mse = 0.0;
  double val_mse = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
};

/// A non-finite loss or gradient stopped training. The model holds the last
/// good parameters when this is thrown.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string &what, TrainResult partial)
      : NumericError(what), partial_(std::move(partial)) {}
  const TrainResult &partial() const { return partial_; }

 private:
  TrainResult partial_;
};

/// Loss weights actually used for a spec (baselines have no particles, so
/// their ELBO weight is zero).
LossConfig loss_config_for(const ModelSpec &spec, const TrainConfig &config, std::size_t steps);

/// Trains in place; on return the model holds the best-validation parameters.
TrainResult train(Model &model, const Dataset &data, const TrainConfig &config, std::ostream *log = nullptr);

struct EvalMetrics {
  double last_step_mse = 0.0;
  double mse = 0.0;
};

/// Eval-mode BN, sampling driven by the given seed. Squared error is summed
/// over the encoded pose and averaged over trajectories (and steps for mse).
EvalMetrics evaluate(Model &model, const EncodedSplit &split, std::uint64_t seed, std::size_t batch = 100);

struct EvalSummary {
  double last_step_mse_mean = 0.0;
  double last_step_mse_std = 0.0;
  double mse_mean = 0.0;
  double mse_std = 0.0;
  std::vector<EvalMetrics> per_seed;
};

EvalSummary evaluate_seeds(Model &model, const EncodedSplit &split, std::uint64_t base_seed, std::size_t seeds);

struct RunSpec {
  std::string name;
  ModelSpec spec;
  TrainConfig config;
};

struct RunResult {
  std::string name;
  ModelSpec spec;
  TrainConfig config;
  std::size_t parameters = 0;
  double val_last_step_mse = 0.0;
  double test_last_step_mse = 0.0;
  double test_last_step_mse_std = 0.0;
  double final_loss = 0.0;
  double final_pred = 0.0;
  std::string error;
  std::vector<EpochMetrics> history;
};

RunResult run_one(const RunSpec &run, const Dataset &data, std::ostream *log = nullptr);

/// Every spec x config pair, ranked by validation last-step MSE (failed runs
/// last).
std::vector<RunResult> grid_search(const std::vector<ModelSpec> &specs, const std::vector<TrainConfig> &configs,
                                   const Dataset &data, std::ostream *log = nullptr);

/// Baseline hidden size whose cell parameter count is closest to the spec's.
std::size_t parity_hidden(const ModelSpec &pf_spec, CellKind baseline);

/// P1, P5, P10, P20, P30, NoResample, NoBNReLU, NoELBO, ELBOonly, LSTM-BNReLU.
std::vector<RunSpec> ablation_variants(const ModelSpec &base, const TrainConfig &config);

std::vector<RunResult> ablation_suite(const ModelSpec &base, const TrainConfig &config, const Dataset &data,
                                      std::ostream *log = nullptr);

void write_results_csv(const std::filesystem::path &file, const std::vector<RunResult> &results);
void write_metrics_csv(const std::filesystem::path &file, const std::vector<RunResult> &results);

} // namespace pfrnn
