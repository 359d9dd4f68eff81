// SPDX-License-Identifier: Apache-2.0
/**
 * @file   bootstrap_pf.hpp
 * @brief  Classical bootstrap particle filter over robot poses, using the
 *         simulator's own motion model and a Gaussian range likelihood.
 */
#pragma once

#include <pfrnn/dataset.hpp>
#include <pfrnn/maze.hpp>

#include <cmath>
#include <iostream>
#include <optional>
#include <vector>

namespace pfrnn {

struct BootstrapConfig {
  std::size_t particles = 500;
  std::uint64_t seed = 0;
  SimNoise noise;
  /// Standard deviation of a U[-0.1, 0.1] variable.
  double obs_sigma = 0.1 / std::sqrt(3.0);
  /// Roughening: Gaussian jitter on resampled particles (position in cells,
  /// heading in radians). Jitter that lands in an obstacle is dropped.
  double jitter_position = 0.02;
  double jitter_heading = 0.1;
  /// Start every particle here instead of uniformly over free space.
  std::optional<Pose> initial_pose;
  /// Receives a line for each re-initialization; null silences it.
  std::ostream *log = &std::clog;
};

struct BootstrapResult {
  std::vector<Pose> estimates; ///< one per step
  std::vector<double> weight_sums;
  std::size_t resamples = 0;
  std::size_t reinitializations = 0;
};

BootstrapResult bootstrap_pf(const MazeMap &map, const std::vector<Action> &actions,
                             const std::vector<std::array<double, kObservedLandmarks>> &observations,
                             const BootstrapConfig &config);

/// Euclidean (x, y) distance in grid cells.
double position_error(const Pose &a, const Pose &b);

} // namespace pfrnn
