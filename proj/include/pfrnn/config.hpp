// SPDX-License-Identifier: Apache-2.0
/**
 * @file   config.hpp
 * @brief  Flat key = value run configuration.
 *
 * One setting per line, '#' starts a comment. Keys:
 *   data, out, kind, hidden, particles, alpha, resample, bn_relu,
 *   logstd_min, logstd_max, encoder_width, use_map, map_features,
 *   conv1_channels, conv2_channels, learning_rate, batch_size, clip_norm,
 *   l2, epochs, seed, bptt, beta, pred_weight, eval_seeds
 */
#pragma once

#include <pfrnn/model.hpp>
#include <pfrnn/train.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace pfrnn {

using KeyValues = std::map<std::string, std::string>;

struct RunConfig {
  std::string data_dir;
  std::string out_dir;
  ModelSpec spec;
  TrainConfig train;
};

const std::vector<std::string> &config_keys();

/// Throws ConfigError on malformed lines or duplicate keys.
KeyValues parse_config_text(const std::string &text);
/// Throws IoError when the file cannot be read.
KeyValues read_config_file(const std::filesystem::path &file);

/// Applies settings in key order; unknown keys and bad values throw
/// ConfigError naming the key.
void apply_settings(RunConfig &config, const KeyValues &values);

/// Every key with its resolved value (doubles printed round-trip exact).
KeyValues to_key_values(const RunConfig &config);
std::string to_config_text(const RunConfig &config);

std::string format_double(double v);

} // namespace pfrnn
