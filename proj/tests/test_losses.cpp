// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "fd_oracle.hpp"

#include <pfrnn/losses.hpp>
#include <pfrnn/rng.hpp>

#include <cmath>

using namespace pfrnn;

namespace {

StepOutputs outputs(Tensor mean, Tensor particles) {
  const std::size_t B = particles.dim(0), K = particles.dim(1);
  return {mean, particles, Tensor::full({B, K}, -std::log(static_cast<double>(K)))};
}

LossConfig single_step(Task task = Task::Regression, double beta = 1.0) {
  LossConfig c;
  c.task = task;
  c.beta = beta;
  c.output_steps = {0};
  return c;
}

} // namespace

TEST(PredLoss, PerfectIsZero) {
  Tensor y = Tensor::matrix(1, 2, {1, 2});
  EXPECT_EQ(pred_loss({outputs(y, Tensor({1, 1, 2}, {1, 2}))}, {y}, single_step()).item(), 0.0);
}

TEST(PredLoss, SquaredErrorSummedOverDims) {
  Tensor y = Tensor::matrix(1, 2, {1, 2});
  Tensor yhat = Tensor::zeros({1, 2});
  EXPECT_DOUBLE_EQ(pred_loss({outputs(yhat, Tensor::zeros({1, 1, 2}))}, {y}, single_step()).item(), 5.0);
}

TEST(PredLoss, UniformClassificationIsLog3) {
  Tensor y = Tensor::matrix(1, 3, {0, 1, 0});
  Tensor logits = Tensor::zeros({1, 3});
  auto l = pred_loss({outputs(logits, Tensor::zeros({1, 1, 3}))}, {y}, single_step(Task::Classification));
  EXPECT_NEAR(l.item(), std::log(3.0), 1e-12);
}

TEST(PredLoss, EmptyOutputStepsThrow) {
  LossConfig c;
  Tensor y = Tensor::zeros({1, 2});
  EXPECT_THROW(pred_loss({outputs(y, Tensor::zeros({1, 1, 2}))}, {y}, c), std::invalid_argument);
}

TEST(PredLoss, StepsSumBatchAverages) {
  Tensor y = Tensor::matrix(2, 1, {1, 3});
  Tensor z = Tensor::zeros({2, 1});
  LossConfig c = single_step();
  c.output_steps = {0, 1};
  auto o = outputs(z, Tensor::zeros({2, 1, 1}));
  EXPECT_DOUBLE_EQ(pred_loss({o, o}, {y, y}, c).item(), 10.0);
}

TEST(Elbo, TwoParticleHandValue) {
  Tensor y = Tensor::matrix(1, 2, {0, 0});
  Tensor p({1, 2, 2}, {0, 0, 2, 0});
  auto l = elbo_loss({outputs(Tensor::zeros({1, 2}), p)}, {y}, single_step());
  EXPECT_NEAR(l.item(), -std::log((1 + std::exp(-2.0)) / 2), 1e-12);
  EXPECT_NEAR(l.item(), 0.566219, 1e-6);
}

TEST(Elbo, SingleParticleIsNll) {
  RngStream rng(3);
  Tensor y = sample_uniform(rng, -1, 1, {3, 4});
  Tensor p = sample_uniform(rng, -1, 1, {3, 1, 4});
  auto l = elbo_loss({outputs(Tensor::zeros({3, 4}), p)}, {y}, single_step());
  double nll = 0;
  for (std::size_t b = 0; b < 3; ++b) {
    double s = 0;
    for (std::size_t d = 0; d < 4; ++d)
      s += (y[b * 4 + d] - p[b * 4 + d]) * (y[b * 4 + d] - p[b * 4 + d]);
    nll += std::sqrt(s);
  }
  EXPECT_NEAR(l.item(), nll / 3, 1e-12);
}

TEST(Elbo, IdenticalParticlesHaveNoKDependence) {
  Tensor y = Tensor::matrix(1, 2, {0.5, -1});
  Tensor one({1, 1, 2}, {0.1, 0.2});
  Tensor many({1, 4, 2}, {0.1, 0.2, 0.1, 0.2, 0.1, 0.2, 0.1, 0.2});
  auto c = single_step();
  EXPECT_NEAR(elbo_loss({outputs(Tensor::zeros({1, 2}), one)}, {y}, c).item(),
              elbo_loss({outputs(Tensor::zeros({1, 2}), many)}, {y}, c).item(), 1e-12);
}

TEST(Elbo, LogMeanBounds) {
  RngStream rng(4);
  Tensor y = sample_uniform(rng, -1, 1, {1, 3});
  Tensor p = sample_uniform(rng, -2, 2, {1, 6, 3});
  double best = 1e300;
  for (std::size_t k = 0; k < 6; ++k) {
    double s = 0;
    for (std::size_t d = 0; d < 3; ++d)
      s += std::pow(y[d] - p[k * 3 + d], 2);
    best = std::min(best, std::sqrt(s));
  }
  const double l = elbo_loss({outputs(Tensor::zeros({1, 3}), p)}, {y}, single_step()).item();
  EXPECT_GE(l, best - 1e-12);
  EXPECT_LE(l, best + std::log(6.0) + 1e-12);
}

TEST(Combined, BetaZeroEqualsPred) {
  RngStream rng(5);
  Tensor y = sample_uniform(rng, -1, 1, {2, 3});
  auto o = outputs(sample_uniform(rng, -1, 1, {2, 3}), sample_uniform(rng, -1, 1, {2, 4, 3}));
  auto c = single_step(Task::Regression, 0.0);
  EXPECT_EQ(combined_loss({o}, {y}, c).total.item(), pred_loss({o}, {y}, c).item());
}

TEST(Combined, BetaOneIsSum) {
  Tensor y = Tensor::matrix(1, 2, {1, 2});
  Tensor p({1, 2, 2}, {1, 2, 3, 2});
  auto o = outputs(Tensor::zeros({1, 2}), p);
  auto c = single_step();
  auto t = combined_loss({o}, {y}, c);
  EXPECT_NEAR(t.total.item(), 5.0 - std::log((1 + std::exp(-2.0)) / 2), 1e-12);
}

TEST(Combined, PerfectClassificationIsZero) {
  Tensor y = Tensor::matrix(1, 2, {1, 0});
  Tensor logits = Tensor::matrix(1, 2, {800, 0});
  auto o = outputs(logits, Tensor({1, 1, 2}, {800, 0}));
  EXPECT_NEAR(combined_loss({o}, {y}, single_step(Task::Classification)).total.item(), 0.0, 1e-12);
}

TEST(Combined, GradientsMatchFiniteDifferences) {
  RngStream rng(6);
  Tensor y = sample_uniform(rng, -1, 1, {2, 3});
  Tensor m(Shape{2, 3}, std::vector<double>(6, 0.1), true);
  Tensor p = sample_uniform(rng, -1, 1, {2, 4, 3});
  p.set_requires_grad(true);
  ParameterList params{{"m", m}, {"p", p}};
  auto c = single_step();
  auto loss = [&] { return combined_loss({outputs(m, p)}, {y}, c).total; };
  auto r = oracle::fd_check(params, loss);
  EXPECT_EQ(r.failed, 0u) << r.worst_name << " rel " << r.worst_rel;
}
