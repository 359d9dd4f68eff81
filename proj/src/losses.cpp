// SPDX-License-Identifier: Apache-2.0
#include <pfrnn/losses.hpp>

#include <cmath>

namespace pfrnn {

void LossConfig::validate() const {
  if (!(beta >= 0.0))
    throw std::invalid_argument("ELBO weight must be non-negative");
  if (!(pred_weight >= 0.0))
    throw std::invalid_argument("prediction weight must be non-negative");
  if (output_steps.empty())
    throw std::invalid_argument("output step set is empty");
}

namespace {

void check_steps(const std::vector<StepOutputs> &outputs, const std::vector<Tensor> &targets,
                 const LossConfig &config) {
  config.validate();
  if (outputs.size() != targets.size())
    throw ShapeError("got " + std::to_string(outputs.size()) + " output steps but " +
                     std::to_string(targets.size()) + " targets");
  for (std::size_t t : config.output_steps)
    if (t >= outputs.size())
      throw ShapeError("output step " + std::to_string(t) + " out of range");
}

std::size_t last_step(const LossConfig &config) {
  std::size_t t = 0;
  for (std::size_t s : config.output_steps)
    t = std::max(t, s);
  return t;
}

/// B x D target repeated for each particle: B x K x D.
Tensor expand_target(const Tensor &y, std::size_t particles) {
  const std::size_t B = y.dim(0), D = y.dim(1);
  std::vector<std::size_t> idx(B * particles);
  for (std::size_t i = 0; i < idx.size(); ++i)
    idx[i] = i / particles;
  return reshape(gather_rows(y, idx), {B, particles, D});
}

Tensor step_elbo(const StepOutputs &out, const Tensor &y, Task task) {
  const Tensor &p = out.particle_preds;
  if (p.rank() != 3 || y.rank() != 2 || p.dim(0) != y.dim(0) || p.dim(2) != y.dim(1))
    throw ShapeError("particle predictions " + to_string(p.shape()) + " do not match target " +
                     to_string(y.shape()));
  const std::size_t K = p.dim(1);
  Tensor ye = expand_target(y, K);
  Tensor logp = task == Task::Regression ? neg(norm_last(sub(p, ye))) : sum_axis(mul(ye, log_softmax(p)), 2);
  Tensor per_row = add_scalar(logsumexp(logp, 1), -std::log(static_cast<double>(K)));
  return neg(sum(per_row));
}

} // namespace

Tensor pred_loss(const std::vector<StepOutputs> &outputs, const std::vector<Tensor> &targets,
                 const LossConfig &config) {
  check_steps(outputs, targets, config);
  auto row_loss = [&](std::size_t t) {
    const Tensor &yhat = outputs[t].mean_pred;
    const Tensor &y = targets[t];
    if (yhat.shape() != y.shape() || y.rank() != 2)
      throw ShapeError("prediction " + to_string(yhat.shape()) + " does not match target " + to_string(y.shape()));
    if (config.task == Task::Regression)
      return sum(square(sub(yhat, y)));
    return neg(sum(mul(y, log_softmax(yhat))));
  };
  const double inv_batch = 1.0 / static_cast<double>(targets[config.output_steps.front()].dim(0));
  if (config.task == Task::Classification)
    return scale(row_loss(last_step(config)), inv_batch);
  Tensor acc;
  for (std::size_t t : config.output_steps)
    acc = acc.defined() ? add(acc, row_loss(t)) : row_loss(t);
  return scale(acc, inv_batch);
}

Tensor elbo_loss(const std::vector<StepOutputs> &outputs, const std::vector<Tensor> &targets,
                 const LossConfig &config) {
  check_steps(outputs, targets, config);
  Tensor acc;
  for (std::size_t t : config.output_steps) {
    Tensor term = step_elbo(outputs[t], targets[t], config.task);
    acc = acc.defined() ? add(acc, term) : term;
  }
  return scale(acc, 1.0 / static_cast<double>(targets[config.output_steps.front()].dim(0)));
}

LossTerms combined_loss(const std::vector<StepOutputs> &outputs, const std::vector<Tensor> &targets,
                        const LossConfig &config) {
  LossTerms terms;
  if (config.pred_weight > 0.0)
    terms.pred = pred_loss(outputs, targets, config);
  if (config.beta > 0.0)
    terms.elbo = elbo_loss(outputs, targets, config);
  if (!terms.pred.defined() && !terms.elbo.defined())
    throw std::invalid_argument("both loss weights are zero");
  if (!terms.elbo.defined())
    terms.total = config.pred_weight == 1.0 ? terms.pred : scale(terms.pred, config.pred_weight);
  else if (!terms.pred.defined())
    terms.total = scale(terms.elbo, config.beta);
  else
    terms.total = add(scale(terms.pred, config.pred_weight), scale(terms.elbo, config.beta));
  return terms;
}

} // namespace pfrnn
