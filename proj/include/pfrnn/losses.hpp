// SPDX-License-Identifier: Apache-2.0
/**
 * @file   losses.hpp
 * @brief  Prediction loss, sampled particle ELBO and their weighted sum.
 *
 * Steps are summed, batch rows are averaged.
 */
#pragma once

#include <pfrnn/tensor.hpp>

#include <stdexcept>
#include <vector>

namespace pfrnn {

enum class Task { Regression, Classification };

/// Model outputs at one time step.
struct StepOutputs {
  Tensor mean_pred;      ///< B x D, head applied to the mean particle
  Tensor particle_preds; ///< B x K x D, same head applied to each particle
  Tensor log_weights;    ///< B x K
};

struct LossConfig {
  Task task = Task::Regression;
  double beta = 1.0;
  double pred_weight = 1.0;
  /// Step indices that carry a target.
  std::vector<std::size_t> output_steps;

  void validate() const;
};

/// Regression: squared error summed over dims and over the output steps.
/// Classification: cross-entropy of the mean logits at the last output step;
/// targets are (possibly soft) one-hot rows.
Tensor pred_loss(const std::vector<StepOutputs> &outputs, const std::vector<Tensor> &targets,
                 const LossConfig &config);

/// -sum_t [logsumexp_i log p_i - log K] with log p_i = -||y - y_i|| for
/// regression and -CE(y, y_i) for classification.
Tensor elbo_loss(const std::vector<StepOutputs> &outputs, const std::vector<Tensor> &targets,
                 const LossConfig &config);

struct LossTerms {
  Tensor total;
  Tensor pred;
  Tensor elbo;
};

/// pred_weight * pred + beta * elbo. A zero weight skips that term entirely.
LossTerms combined_loss(const std::vector<StepOutputs> &outputs, const std::vector<Tensor> &targets,
                        const LossConfig &config);

} // namespace pfrnn
