// SPDX-License-Identifier: Apache-2.0
/**
 * @file   maze.hpp
 * @brief  Mirror-symmetric grid mazes and the robot motion / observation
 *         simulator used for the localization task.
 *
 * Cell (cx, cy) covers [cx, cx+1) x [cy, cy+1); the world spans [0, n]^2.
 * Border cells are always obstacles. Interior obstacles are mirrored across
 * the vertical axis (cx -> n-1-cx); every other interior obstacle in a
 * row-major scan is black and contributes its four corners as landmarks.
 */
#pragma once

#include <pfrnn/rng.hpp>

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pfrnn {

class MazeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Cell : std::uint8_t { Free, Gray, Black };

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct MazeMap {
  std::size_t n = 0;
  std::vector<Cell> cells; ///< row-major, index cy * n + cx
  std::vector<Point> landmarks;
  std::uint64_t seed = 0;
  double density = 0.0;

  Cell at(std::size_t cx, std::size_t cy) const { return cells[cy * n + cx]; }
  bool free(std::size_t cx, std::size_t cy) const { return at(cx, cy) == Cell::Free; }
  /// True when (x, y) lies in a free cell inside the world.
  bool free_point(double x, double y) const;
  std::vector<std::size_t> free_cells() const;

  /// One string per row, index = cy: '#' black, '+' gray, '.' free.
  std::vector<std::string> rows() const;
  static MazeMap from_rows(const std::vector<std::string> &rows, std::uint64_t seed = 0, double density = 0.0);
};

/// Landmarks of a grid: deduplicated corners of black cells, sorted.
std::vector<Point> landmarks_of(std::size_t n, const std::vector<Cell> &cells);

/// Retries with derived seeds until free space is 4-connected, covers at
/// least a quarter of the interior and at least five landmarks exist. Throws MazeError after 100 attempts.
MazeMap generate_maze(std::size_t n, double obstacle_density, std::uint64_t seed);

/// Every free cell reachable from the first one (4-connectivity).
bool free_space_connected(const MazeMap &map);

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0; ///< (-pi, pi]
};

/// Commanded forward distance and executed heading change.
struct Action {
  double distance = 0.0;
  double turn = 0.0;
};

struct SimNoise {
  double distance = 0.02;    ///< half-width of the uniform step noise
  double observation = 0.1;  ///< half-width of the uniform range noise
};

constexpr double kStepDistance = 0.2;
constexpr std::size_t kObservedLandmarks = 5;

double wrap_angle(double a);

/// True when the straight segment a -> b stays inside free cells.
bool segment_free(const MazeMap &map, Point a, Point b);

Pose sample_free_pose(const MazeMap &map, RngStream &rng);

struct StepResult2D {
  Pose pose;
  Action action;
};

/// Moves forward by 0.2 plus uniform noise; when the move would hit an
/// obstacle, draws uniform new headings until it does not. Throws MazeError
/// after 100 blocked headings.
StepResult2D step_robot(const MazeMap &map, const Pose &pose, RngStream &rng, const SimNoise &noise = {});

/// True distances to the five closest landmarks, ascending.
std::array<double, kObservedLandmarks> nearest_landmark_distances(const MazeMap &map, double x, double y);

/// Sorted true distances plus independent uniform noise, floored at zero.
std::array<double, kObservedLandmarks> observe(const MazeMap &map, const Pose &pose, RngStream &rng,
                                               const SimNoise &noise = {});

} // namespace pfrnn
