// SPDX-License-Identifier: Apache-2.0
#include <pfrnn/plot.hpp>

#include <pfrnn/dataset.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace pfrnn {

namespace {

const char *kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::vector<std::string> split_csv_line(const std::string &line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double to_number(const std::string &s) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    return pos == s.size() ? v : std::numeric_limits<double>::quiet_NaN();
  } catch (...) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

std::string escape(const std::string &s) {
  std::string out;
  for (char c : s) {
    switch (c) {
    case '&':
      out += "&amp;";
      break;
    case '<':
      out += "&lt;";
      break;
    case '>':
      out += "&gt;";
      break;
    case '"':
      out += "&quot;";
      break;
    default:
      out += c;
    }
  }
  return out;
}

constexpr double kW = 640, kH = 400, kL = 70, kR = 160, kT = 30, kB = 50;

std::string svg_open(double w, double h) {
  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
    << ' ' << h << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  return s.str();
}

std::string axes(double ymin, double ymax, const std::string &ylabel, const std::string &xlabel) {
  std::ostringstream s;
  s << "<line x1=\"" << kL << "\" y1=\"" << kH - kB << "\" x2=\"" << kW - kR << "\" y2=\"" << kH - kB
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL << "\" y2=\"" << kH - kB
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = ymin + (ymax - ymin) * i / 4.0;
    const double y = kH - kB - (kH - kB - kT) * i / 4.0;
    s << "<text x=\"" << kL - 6 << "\" y=\"" << y + 4 << "\" font-size=\"11\" text-anchor=\"end\">" << v
      << "</text>\n";
  }
  s << "<text x=\"" << (kL + kW - kR) / 2 << "\" y=\"" << kH - 12 << "\" font-size=\"12\" text-anchor=\"middle\">"
    << escape(xlabel) << "</text>\n";
  s << "<text x=\"16\" y=\"" << (kT + kH - kB) / 2 << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << (kT + kH - kB) / 2 << ")\">" << escape(ylabel) << "</text>\n";
  return s.str();
}

} // namespace

std::size_t CsvTable::column(const std::string &name) const {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end())
    throw PlotError("CSV lacks column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

bool CsvTable::has_column(const std::string &name) const {
  return std::find(header.begin(), header.end(), name) != header.end();
}

CsvTable read_csv(const std::filesystem::path &file) {
  std::ifstream in(file);
  if (!in)
    throw IoError("cannot open " + file.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line) || line.empty())
    throw PlotError(file.string() + " is empty");
  t.header = split_csv_line(line);
  while (std::getline(in, line))
    if (!line.empty())
      t.rows.push_back(split_csv_line(line));
  if (t.rows.empty())
    throw PlotError(file.string() + " has no data rows");
  return t;
}

std::string loss_curve_svg(const CsvTable &metrics, const std::string &value_column) {
  const std::size_t rc = metrics.column("run"), ec = metrics.column("epoch"), vc = metrics.column(value_column);
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  std::vector<std::string> order;
  double xmax = 1, ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
  for (const auto &r : metrics.rows) {
    if (r.size() <= std::max({rc, ec, vc}))
      continue;
    const double x = to_number(r[ec]), y = to_number(r[vc]);
    if (!std::isfinite(x) || !std::isfinite(y))
      continue;
    if (!series.count(r[rc]))
      order.push_back(r[rc]);
    series[r[rc]].emplace_back(x, y);
    xmax = std::max(xmax, x);
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  if (order.empty())
    throw PlotError("no numeric rows for column '" + value_column + "'");
  if (ymax <= ymin)
    ymax = ymin + 1.0;
  std::ostringstream s;
  s << svg_open(kW, kH) << axes(ymin, ymax, value_column, "epoch");
  for (std::size_t i = 0; i < order.size(); ++i) {
    const char *col = kPalette[i % std::size(kPalette)];
    s << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
    for (auto [x, y] : series[order[i]]) {
      const double px = kL + (kW - kL - kR) * (xmax > 1 ? (x - 1) / (xmax - 1) : 0.5);
      const double py = kH - kB - (kH - kB - kT) * (y - ymin) / (ymax - ymin);
      s << px << ',' << py << ' ';
    }
    s << "\"/>\n<text x=\"" << kW - kR + 8 << "\" y=\"" << kT + 14 * (i + 1) << "\" font-size=\"11\" fill=\"" << col
      << "\">" << escape(order[i]) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string bar_chart_svg(const CsvTable &results, const std::string &label_column, const std::string &value_column) {
  const std::size_t lc = results.column(label_column), vc = results.column(value_column);
  std::vector<std::pair<std::string, double>> bars;
  double ymax = 0.0;
  for (const auto &r : results.rows) {
    if (r.size() <= std::max(lc, vc))
      continue;
    const double v = to_number(r[vc]);
    if (!std::isfinite(v))
      continue;
    bars.emplace_back(r[lc], v);
    ymax = std::max(ymax, v);
  }
  if (bars.empty())
    throw PlotError("no numeric rows for column '" + value_column + "'");
  if (ymax <= 0)
    ymax = 1.0;
  std::ostringstream s;
  s << svg_open(kW, kH) << axes(0.0, ymax, value_column, label_column);
  const double slot = (kW - kL - kR) / static_cast<double>(bars.size());
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double h = (kH - kB - kT) * bars[i].second / ymax;
    const double x = kL + slot * i + slot * 0.15;
    s << "<rect class=\"bar\" x=\"" << x << "\" y=\"" << kH - kB - h << "\" width=\"" << slot * 0.7 << "\" height=\""
      << h << "\" fill=\"" << kPalette[i % std::size(kPalette)] << "\"/>\n";
    s << "<text x=\"" << x + slot * 0.35 << "\" y=\"" << kH - kB + 14 << "\" font-size=\"10\" text-anchor=\"middle\">"
      << escape(bars[i].first) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string particle_frame_svg(const MazeMap &map, const FramePose &truth, const FramePose &mean,
                               const std::vector<FramePose> &particles, std::size_t step) {
  const double cell = 40.0, n = static_cast<double>(map.n), side = cell * n;
  auto px = [&](double x) { return x * cell; };
  auto py = [&](double y) { return side - y * cell; };
  std::ostringstream s;
  s << svg_open(side, side + 24);
  for (std::size_t cy = 0; cy < map.n; ++cy)
    for (std::size_t cx = 0; cx < map.n; ++cx) {
      const Cell c = map.at(cx, cy);
      if (c == Cell::Free)
        continue;
      s << "<rect x=\"" << px(cx) << "\" y=\"" << py(cy + 1.0) << "\" width=\"" << cell << "\" height=\"" << cell
        << "\" fill=\"" << (c == Cell::Black ? "#222222" : "#999999") << "\"/>\n";
    }
  for (const auto &l : map.landmarks)
    s << "<circle class=\"landmark\" cx=\"" << px(l.x) << "\" cy=\"" << py(l.y)
      << "\" r=\"2.5\" fill=\"#e6ab02\"/>\n";
  for (const auto &p : particles)
    s << "<circle class=\"particle\" cx=\"" << px(p.x) << "\" cy=\"" << py(p.y)
      << "\" r=\"3\" fill=\"#1f77b4\" fill-opacity=\"0.5\"/>\n";
  auto arrow = [&](const FramePose &p, const char *cls, const char *col) {
    const double x2 = p.x + 0.4 * std::cos(p.theta), y2 = p.y + 0.4 * std::sin(p.theta);
    s << "<g class=\"" << cls << "\"><circle cx=\"" << px(p.x) << "\" cy=\"" << py(p.y) << "\" r=\"6\" fill=\"" << col
      << "\"/><line x1=\"" << px(p.x) << "\" y1=\"" << py(p.y) << "\" x2=\"" << px(x2) << "\" y2=\"" << py(y2)
      << "\" stroke=\"" << col << "\" stroke-width=\"2\"/></g>\n";
  };
  arrow(truth, "truth", "#d62728");
  arrow(mean, "mean", "#2ca02c");
  s << "<text x=\"4\" y=\"" << side + 17 << "\" font-size=\"13\">step " << step
    << " (red: true pose, green: mean prediction, blue: particles)</text>\n</svg>\n";
  return s.str();
}

void write_text_file(const std::filesystem::path &file, const std::string &text) {
  if (file.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(file.parent_path(), ec);
  }
  std::ofstream out(file, std::ios::binary);
  if (!out)
    throw IoError("cannot open " + file.string() + " for writing");
  out << text;
  if (!out)
    throw IoError("failed writing " + file.string());
}

} // namespace pfrnn
