// SPDX-License-Identifier: Apache-2.0
#include <pfrnn/maze.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace pfrnn {

bool MazeMap::free_point(double x, double y) const {
  if (!(x >= 0.0 && y >= 0.0 && x < static_cast<double>(n) && y < static_cast<double>(n)))
    return false;
  return free(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
}

std::vector<std::size_t> MazeMap::free_cells() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (cells[i] == Cell::Free)
      out.push_back(i);
  return out;
}

std::vector<std::string> MazeMap::rows() const {
  std::vector<std::string> out(n, std::string(n, '.'));
  for (std::size_t cy = 0; cy < n; ++cy)
    for (std::size_t cx = 0; cx < n; ++cx) {
      const Cell c = at(cx, cy);
      out[cy][cx] = c == Cell::Black ? '#' : c == Cell::Gray ? '+' : '.';
    }
  return out;
}

MazeMap MazeMap::from_rows(const std::vector<std::string> &rows, std::uint64_t seed, double density) {
  MazeMap m;
  m.n = rows.size();
  m.seed = seed;
  m.density = density;
  m.cells.reserve(m.n * m.n);
  for (const auto &r : rows) {
    if (r.size() != m.n)
      throw MazeError("maze rows must form a square grid");
    for (char ch : r) {
      switch (ch) {
      case '#':
        m.cells.push_back(Cell::Black);
        break;
      case '+':
        m.cells.push_back(Cell::Gray);
        break;
      case '.':
        m.cells.push_back(Cell::Free);
        break;
      default:
        throw MazeError(std::string("unknown maze cell character '") + ch + "'");
      }
    }
  }
  m.landmarks = landmarks_of(m.n, m.cells);
  return m;
}

std::vector<Point> landmarks_of(std::size_t n, const std::vector<Cell> &cells) {
  std::vector<std::pair<std::size_t, std::size_t>> corners;
  for (std::size_t cy = 0; cy < n; ++cy)
    for (std::size_t cx = 0; cx < n; ++cx)
      if (cells[cy * n + cx] == Cell::Black)
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx)
            corners.emplace_back(cx + dx, cy + dy);
  std::sort(corners.begin(), corners.end());
  corners.erase(std::unique(corners.begin(), corners.end()), corners.end());
  std::vector<Point> out;
  out.reserve(corners.size());
  for (auto [x, y] : corners)
    out.push_back({static_cast<double>(x), static_cast<double>(y)});
  return out;
}

bool free_space_connected(const MazeMap &map) {
  const auto fc = map.free_cells();
  if (fc.empty())
    return false;
  const std::size_t n = map.n;
  std::vector<char> seen(n * n, 0);
  std::vector<std::size_t> stack{fc.front()};
  seen[fc.front()] = 1;
  std::size_t reached = 0;
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    ++reached;
    const std::size_t cx = i % n, cy = i / n;
    const std::size_t nb[4][2] = {{cx + 1, cy}, {cx - 1, cy}, {cx, cy + 1}, {cx, cy - 1}};
    for (auto &p : nb) {
      if (p[0] >= n || p[1] >= n)
        continue;
      const std::size_t j = p[1] * n + p[0];
      if (!seen[j] && map.cells[j] == Cell::Free) {
        seen[j] = 1;
        stack.push_back(j);
      }
    }
  }
  return reached == fc.size();
}

MazeMap generate_maze(std::size_t n, double obstacle_density, std::uint64_t seed) {
  if (n < 6)
    throw MazeError("maze size must be at least 6, got " + std::to_string(n));
  if (!(obstacle_density >= 0.0 && obstacle_density < 1.0))
    throw MazeError("obstacle density must lie in [0, 1)");
  const RngStream base(seed);
  for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
    RngStream rng = base.fork(attempt);
    std::vector<bool> occ(n * n, false);
    for (std::size_t cy = 0; cy < n; ++cy)
      for (std::size_t cx = 0; cx < n; ++cx)
        if (cx == 0 || cy == 0 || cx == n - 1 || cy == n - 1)
          occ[cy * n + cx] = true;
    for (std::size_t cy = 1; cy + 1 < n; ++cy)
      for (std::size_t cx = 1; cx < (n + 1) / 2; ++cx)
        if (rng.uniform() < obstacle_density)
          occ[cy * n + cx] = occ[cy * n + (n - 1 - cx)] = true;

    MazeMap m;
    m.n = n;
    m.seed = seed;
    m.density = obstacle_density;
    m.cells.assign(n * n, Cell::Free);
    bool black = true;
    for (std::size_t cy = 0; cy < n; ++cy)
      for (std::size_t cx = 0; cx < n; ++cx) {
        if (!occ[cy * n + cx])
          continue;
        const bool border = cx == 0 || cy == 0 || cx == n - 1 || cy == n - 1;
        if (border) {
          m.cells[cy * n + cx] = Cell::Gray;
        } else {
          m.cells[cy * n + cx] = black ? Cell::Black : Cell::Gray;
          black = !black;
        }
      }
    m.landmarks = landmarks_of(n, m.cells);
    const std::size_t interior = (n - 2) * (n - 2);
    if (m.landmarks.size() >= kObservedLandmarks && 4 * m.free_cells().size() >= interior &&
        free_space_connected(m))
      return m;
  }
  throw MazeError("could not generate a connected maze with enough landmarks after 100 attempts (density " +
                  std::to_string(obstacle_density) + ")");
}

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi)
    a += two_pi;
  else if (a > std::numbers::pi)
    a -= two_pi;
  return a;
}

bool segment_free(const MazeMap &map, Point a, Point b) {
  if (!map.free_point(a.x, a.y) || !map.free_point(b.x, b.y))
    return false;
  // Grid traversal of every cell the segment passes through.
  long cx = static_cast<long>(std::floor(a.x)), cy = static_cast<long>(std::floor(a.y));
  const long ex = static_cast<long>(std::floor(b.x)), ey = static_cast<long>(std::floor(b.y));
  const double dx = b.x - a.x, dy = b.y - a.y;
  const long sx = dx > 0 ? 1 : -1, sy = dy > 0 ? 1 : -1;
  const double inf = std::numeric_limits<double>::infinity();
  double tmx = dx != 0 ? ((sx > 0 ? cx + 1 - a.x : a.x - cx) / std::abs(dx)) : inf;
  double tmy = dy != 0 ? ((sy > 0 ? cy + 1 - a.y : a.y - cy) / std::abs(dy)) : inf;
  const double tdx = dx != 0 ? 1.0 / std::abs(dx) : inf;
  const double tdy = dy != 0 ? 1.0 / std::abs(dy) : inf;
  const long n = static_cast<long>(map.n);
  for (int guard = 0; guard < 4 * static_cast<int>(map.n) + 4 && (cx != ex || cy != ey); ++guard) {
    if (tmx < tmy) {
      cx += sx;
      tmx += tdx;
    } else {
      cy += sy;
      tmy += tdy;
    }
    if (cx < 0 || cy < 0 || cx >= n || cy >= n)
      return false;
    if (!map.free(static_cast<std::size_t>(cx), static_cast<std::size_t>(cy)))
      return false;
  }
  return true;
}

Pose sample_free_pose(const MazeMap &map, RngStream &rng) {
  const auto fc = map.free_cells();
  if (fc.empty())
    throw MazeError("maze has no free cell");
  const std::size_t c = fc[rng.uniform_index(fc.size())];
  Pose p;
  p.x = static_cast<double>(c % map.n) + rng.uniform();
  p.y = static_cast<double>(c / map.n) + rng.uniform();
  p.theta = wrap_angle(std::numbers::pi - 2.0 * std::numbers::pi * rng.uniform());
  return p;
}

StepResult2D step_robot(const MazeMap &map, const Pose &pose, RngStream &rng, const SimNoise &noise) {
  const double d = kStepDistance + (noise.distance > 0 ? rng.uniform(-noise.distance, noise.distance) : 0.0);
  double theta = pose.theta;
  auto target = [&](double th) { return Point{pose.x + d * std::cos(th), pose.y + d * std::sin(th)}; };
  int tries = 0;
  while (!segment_free(map, {pose.x, pose.y}, target(theta))) {
    if (++tries > 100)
      throw MazeError("robot is boxed in: no free heading after 100 tries");
    theta = wrap_angle(std::numbers::pi - 2.0 * std::numbers::pi * rng.uniform());
  }
  const Point p = target(theta);
  return {{p.x, p.y, theta}, {kStepDistance, wrap_angle(theta - pose.theta)}};
}

std::array<double, kObservedLandmarks> nearest_landmark_distances(const MazeMap &map, double x, double y) {
  if (map.landmarks.size() < kObservedLandmarks)
    throw MazeError("observation needs at least 5 landmarks, map has " + std::to_string(map.landmarks.size()));
  std::array<double, kObservedLandmarks> best;
  best.fill(std::numeric_limits<double>::infinity());
  for (const auto &l : map.landmarks) {
    const double dist = std::hypot(l.x - x, l.y - y);
    if (dist < best.back()) {
      best.back() = dist;
      for (std::size_t i = kObservedLandmarks - 1; i > 0 && best[i] < best[i - 1]; --i)
        std::swap(best[i], best[i - 1]);
    }
  }
  return best;
}

std::array<double, kObservedLandmarks> observe(const MazeMap &map, const Pose &pose, RngStream &rng,
                                               const SimNoise &noise) {
  auto d = nearest_landmark_distances(map, pose.x, pose.y);
  if (noise.observation > 0)
    for (auto &v : d)
      v = std::max(0.0, v + rng.uniform(-noise.observation, noise.observation));
  return d;
}

} // namespace pfrnn
