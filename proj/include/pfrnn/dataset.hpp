// SPDX-License-Identifier: Apache-2.0
/**
 * @file   dataset.hpp
 * @brief  Localization trajectories, their model encodings and the on-disk
 *         dataset layout (JSON Lines splits plus metadata and manifest).
 */
#pragma once

#include <pfrnn/maze.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace pfrnn {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// poses has T+1 entries; actions[t] moves poses[t] to poses[t+1] and obs[t]
/// is measured at poses[t+1].
struct Trajectory {
  std::vector<Pose> poses;
  std::vector<Action> actions;
  std::vector<std::array<double, kObservedLandmarks>> obs;

  std::size_t steps() const { return actions.size(); }
};

constexpr std::size_t kInputDim = 3 + kObservedLandmarks;
constexpr std::size_t kPoseDim = 4;

Trajectory simulate_trajectory(const MazeMap &map, std::size_t steps, RngStream &rng, const SimNoise &noise = {});

/// [d, cos dtheta, sin dtheta, o1..o5] for step t.
std::array<double, kInputDim> encode_input(const Trajectory &traj, std::size_t t);
/// (x/n, y/n, cos theta, sin theta) of the pose reached at step t.
std::array<double, kPoseDim> encode_pose(const Pose &pose, std::size_t n);

struct DatasetSpec {
  std::size_t maze_size = 10;
  double density = 0.25;
  std::uint64_t map_seed = 1;
  std::uint64_t data_seed = 2;
  std::size_t num_train = 1000;
  std::size_t num_val = 100;
  std::size_t num_test = 200;
  std::size_t steps = 50;
};

struct Dataset {
  DatasetSpec spec;
  MazeMap map;
  std::vector<Trajectory> train;
  std::vector<Trajectory> val;
  std::vector<Trajectory> test;
};

/// Deterministic in (map seed, data seed, counts): trajectory i of a split
/// uses its own forked stream.
Dataset generate_dataset(const DatasetSpec &spec);

/// Writes train.jsonl, val.jsonl, test.jsonl, metadata.json and
/// manifest.json (content hashes) into dir.
void write_dataset(const Dataset &data, const std::filesystem::path &dir);
Dataset load_dataset(const std::filesystem::path &dir);

std::string trajectory_to_json(const Trajectory &traj);
Trajectory trajectory_from_json(const std::string &line);

/// git-style blob SHA-1 of a file, lowercase hex.
std::string file_blob_hash(const std::filesystem::path &file);

} // namespace pfrnn
