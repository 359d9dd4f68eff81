// SPDX-License-Identifier: Apache-2.0
#include <pfrnn/config.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace pfrnn {

namespace {

std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos)
    return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string &key, const std::string &v) {
  double out = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError("setting '" + key + "' expects a number, got '" + v + "'");
  return out;
}

std::uint64_t to_uint(const std::string &key, const std::string &v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError("setting '" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string &key, const std::string &v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on")
    return true;
  if (v == "false" || v == "0" || v == "no" || v == "off")
    return false;
  throw ConfigError("setting '" + key + "' expects true or false, got '" + v + "'");
}

} // namespace

const std::vector<std::string> &config_keys() {
  static const std::vector<std::string> keys = {
      "data",          "out",           "kind",          "hidden",         "particles",      "alpha",
      "resample",      "bn_relu",       "logstd_min",    "logstd_max",     "encoder_width",  "use_map",
      "map_features",  "conv1_channels", "conv2_channels", "learning_rate", "batch_size",     "clip_norm",
      "l2",            "epochs",        "seed",          "bptt",           "beta",           "pred_weight",
      "eval_seeds"};
  return keys;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // prefer the shortest representation that still round-trips
  for (int p = 1; p < 17; ++p) {
    char shorter[32];
    std::snprintf(shorter, sizeof shorter, "%.*g", p, v);
    if (std::strtod(shorter, nullptr) == v)
      return shorter;
  }
  return buf;
}

KeyValues parse_config_text(const std::string &text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos)
      line.erase(hash);
    line = trim(line);
    if (line.empty())
      continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second)
      throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
  }
  return kv;
}

KeyValues read_config_file(const std::filesystem::path &file) {
  std::ifstream in(file);
  if (!in)
    throw IoError("cannot open config file " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

void apply_settings(RunConfig &c, const KeyValues &values) {
  for (const auto &[k, v] : values) {
    ModelSpec &s = c.spec;
    TrainConfig &t = c.train;
    if (k == "data")
      c.data_dir = v;
    else if (k == "out")
      c.out_dir = v;
    else if (k == "kind")
      s.kind = parse_cell_kind(v);
    else if (k == "hidden")
      s.hidden = to_uint(k, v);
    else if (k == "particles")
      s.particles = to_uint(k, v);
    else if (k == "alpha")
      s.alpha = to_double(k, v);
    else if (k == "resample")
      s.resample = to_bool(k, v);
    else if (k == "bn_relu")
      s.bn_relu = to_bool(k, v);
    else if (k == "logstd_min")
      s.logstd_min = to_double(k, v);
    else if (k == "logstd_max")
      s.logstd_max = to_double(k, v);
    else if (k == "encoder_width")
      s.encoder_width = to_uint(k, v);
    else if (k == "use_map")
      s.use_map = to_bool(k, v);
    else if (k == "map_features")
      s.map_features = to_uint(k, v);
    else if (k == "conv1_channels")
      s.conv1_channels = to_uint(k, v);
    else if (k == "conv2_channels")
      s.conv2_channels = to_uint(k, v);
    else if (k == "learning_rate")
      t.learning_rate = to_double(k, v);
    else if (k == "batch_size")
      t.batch_size = to_uint(k, v);
    else if (k == "clip_norm")
      t.clip_norm = to_double(k, v);
    else if (k == "l2")
      t.l2 = to_double(k, v);
    else if (k == "epochs")
      t.epochs = to_uint(k, v);
    else if (k == "seed")
      t.seed = to_uint(k, v);
    else if (k == "bptt")
      t.bptt = to_uint(k, v);
    else if (k == "beta")
      t.beta = to_double(k, v);
    else if (k == "pred_weight")
      t.pred_weight = to_double(k, v);
    else if (k == "eval_seeds")
      t.eval_seeds = to_uint(k, v);
    else
      throw ConfigError("unknown config key '" + k + "'");
  }
}

KeyValues to_key_values(const RunConfig &c) {
  const ModelSpec &s = c.spec;
  const TrainConfig &t = c.train;
  auto b = [](bool x) { return std::string(x ? "true" : "false"); };
  return {
      {"data", c.data_dir},
      {"out", c.out_dir},
      {"kind", to_string(s.kind)},
      {"hidden", std::to_string(s.hidden)},
      {"particles", std::to_string(s.particles)},
      {"alpha", format_double(s.alpha)},
      {"resample", b(s.resample)},
      {"bn_relu", b(s.bn_relu)},
      {"logstd_min", format_double(s.logstd_min)},
      {"logstd_max", format_double(s.logstd_max)},
      {"encoder_width", std::to_string(s.encoder_width)},
      {"use_map", b(s.use_map)},
      {"map_features", std::to_string(s.map_features)},
      {"conv1_channels", std::to_string(s.conv1_channels)},
      {"conv2_channels", std::to_string(s.conv2_channels)},
      {"learning_rate", format_double(t.learning_rate)},
      {"batch_size", std::to_string(t.batch_size)},
      {"clip_norm", format_double(t.clip_norm)},
      {"l2", format_double(t.l2)},
      {"epochs", std::to_string(t.epochs)},
      {"seed", std::to_string(t.seed)},
      {"bptt", std::to_string(t.bptt)},
      {"beta", format_double(t.beta)},
      {"pred_weight", format_double(t.pred_weight)},
      {"eval_seeds", std::to_string(t.eval_seeds)},
  };
}

std::string to_config_text(const RunConfig &config) {
  std::string out;
  for (const auto &[k, v] : to_key_values(config))
    out += k + " = " + v + "\n";
  return out;
}

} // namespace pfrnn
