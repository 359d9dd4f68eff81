// SPDX-License-Identifier: Apache-2.0
/**
 * @file   plot.hpp
 * @brief  Static SVG export: loss curves, bar comparisons and particle
 *         frames over the maze.
 */
#pragma once

#include <pfrnn/maze.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace pfrnn {

class PlotError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index; throws PlotError naming the missing column.
  std::size_t column(const std::string &name) const;
  bool has_column(const std::string &name) const;
};

/// Throws PlotError when the file is empty or has no data rows.
CsvTable read_csv(const std::filesystem::path &file);

/// One polyline per run of `value_column` against epoch.
std::string loss_curve_svg(const CsvTable &metrics, const std::string &value_column);

/// One bar per row, labelled by `label_column`.
std::string bar_chart_svg(const CsvTable &results, const std::string &label_column, const std::string &value_column);

struct FramePose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
};

/// Maze, true pose, mean prediction and one marker per particle prediction.
std::string particle_frame_svg(const MazeMap &map, const FramePose &truth, const FramePose &mean,
                               const std::vector<FramePose> &particles, std::size_t step);

void write_text_file(const std::filesystem::path &file, const std::string &text);

} // namespace pfrnn
