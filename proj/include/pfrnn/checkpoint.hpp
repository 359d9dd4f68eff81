// SPDX-License-Identifier: Apache-2.0
/**
 * @file   checkpoint.hpp
 * @brief  Single-file model checkpoints.
 *
 * Layout (little-endian): "PFRNNCKPT", u32 version, u64 blob count, then per
 * blob: u32 name length, name bytes, u32 rank, u64 dims, f64 values. A u64
 * length and a JSON trailer (run config, maze rows, metrics history) close
 * the file.
 */
#pragma once

#include <pfrnn/config.hpp>
#include <pfrnn/model.hpp>
#include <pfrnn/train.hpp>

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace pfrnn {

constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::unique_ptr<Model> model;
  RunConfig config;
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;
};

void save_checkpoint(const std::filesystem::path &file, const Model &model, const RunConfig &config,
                     const TrainResult &result);

/// Throws IoError on unreadable or malformed files.
Checkpoint load_checkpoint(const std::filesystem::path &file);

} // namespace pfrnn
