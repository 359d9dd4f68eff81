// SPDX-License-Identifier: Apache-2.0
#include <pfrnn/bootstrap_pf.hpp>

#include <algorithm>
#include <iostream>
#include <limits>

namespace pfrnn {

namespace {

void init_uniform(const MazeMap &map, std::vector<Pose> &particles, RngStream &rng) {
  for (auto &p : particles)
    p = sample_free_pose(map, rng);
}

} // namespace

double position_error(const Pose &a, const Pose &b) { return std::hypot(a.x - b.x, a.y - b.y); }

BootstrapResult bootstrap_pf(const MazeMap &map, const std::vector<Action> &actions,
                             const std::vector<std::array<double, kObservedLandmarks>> &observations,
                             const BootstrapConfig &config) {
  if (config.particles < 1)
    throw std::invalid_argument("bootstrap filter needs at least one particle");
  if (actions.size() != observations.size())
    throw std::invalid_argument("action and observation sequences differ in length");
  const std::size_t K = config.particles;
  RngStream rng(config.seed);
  std::vector<Pose> particles(K);
  if (config.initial_pose)
    std::fill(particles.begin(), particles.end(), *config.initial_pose);
  else
    init_uniform(map, particles, rng);
  std::vector<double> logw(K, -std::log(static_cast<double>(K))), w(K), cdf(K);
  const double inv_var = 1.0 / (config.obs_sigma * config.obs_sigma);
  const double ninf = -std::numeric_limits<double>::infinity();

  BootstrapResult res;
  for (std::size_t t = 0; t < actions.size(); ++t) {
    for (std::size_t i = 0; i < K; ++i) {
      Pose &p = particles[i];
      const double d = actions[t].distance +
                       (config.noise.distance > 0 ? rng.uniform(-config.noise.distance, config.noise.distance) : 0.0);
      const double th = wrap_angle(p.theta + actions[t].turn);
      const Point to{p.x + d * std::cos(th), p.y + d * std::sin(th)};
      if (!segment_free(map, {p.x, p.y}, to)) {
        logw[i] = ninf;
        p.theta = th;
        continue;
      }
      p = {to.x, to.y, th};
      const auto pred = nearest_landmark_distances(map, p.x, p.y);
      double ll = 0.0;
      for (std::size_t j = 0; j < kObservedLandmarks; ++j) {
        const double e = observations[t][j] - pred[j];
        ll -= 0.5 * e * e * inv_var;
      }
      logw[i] += ll;
    }

    double mx = *std::max_element(logw.begin(), logw.end());
    if (!std::isfinite(mx)) {
      ++res.reinitializations;
      if (config.log)
        *config.log << "bootstrap filter: all weights vanished at step " << t << ", re-initializing\n";
      init_uniform(map, particles, rng);
      std::fill(logw.begin(), logw.end(), -std::log(static_cast<double>(K)));
      mx = logw[0];
    }
    double total = 0.0;
    for (std::size_t i = 0; i < K; ++i)
      total += w[i] = std::exp(logw[i] - mx);
    double ess_den = 0.0;
    for (std::size_t i = 0; i < K; ++i) {
      w[i] /= total;
      logw[i] = std::log(w[i]);
      ess_den += w[i] * w[i];
    }

    Pose est{};
    double sc = 0.0, ss = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < K; ++i) {
      est.x += w[i] * particles[i].x;
      est.y += w[i] * particles[i].y;
      sc += w[i] * std::cos(particles[i].theta);
      ss += w[i] * std::sin(particles[i].theta);
      wsum += w[i];
    }
    est.theta = std::atan2(ss, sc);
    res.estimates.push_back(est);
    res.weight_sums.push_back(wsum);

    if (1.0 / ess_den < 0.5 * static_cast<double>(K)) {
      ++res.resamples;
      double acc = 0.0;
      for (std::size_t i = 0; i < K; ++i)
        cdf[i] = acc += w[i];
      std::vector<Pose> next(K);
      for (std::size_t j = 0; j < K; ++j) {
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), rng.uniform() * acc);
        next[j] = particles[std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), K - 1)];
      }
      if (config.jitter_position > 0 || config.jitter_heading > 0)
        for (auto &p : next) {
          const double jx = p.x + config.jitter_position * rng.gaussian();
          const double jy = p.y + config.jitter_position * rng.gaussian();
          if (map.free_point(jx, jy) && segment_free(map, {p.x, p.y}, {jx, jy})) {
            p.x = jx;
            p.y = jy;
          }
          p.theta = wrap_angle(p.theta + config.jitter_heading * rng.gaussian());
        }
      particles.swap(next);
      std::fill(logw.begin(), logw.end(), -std::log(static_cast<double>(K)));
    }
  }
  return res;
}

} // namespace pfrnn
