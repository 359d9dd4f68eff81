// SPDX-License-Identifier: Apache-2.0
#include <pfrnn/dataset.hpp>

#include <json.hpp>
#include <openssl/evp.h>

#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>

namespace pfrnn {

using nlohmann::json;

Trajectory simulate_trajectory(const MazeMap &map, std::size_t steps, RngStream &rng, const SimNoise &noise) {
  Trajectory t;
  t.poses.reserve(steps + 1);
  t.poses.push_back(sample_free_pose(map, rng));
  for (std::size_t s = 0; s < steps; ++s) {
    auto r = step_robot(map, t.poses.back(), rng, noise);
    t.poses.push_back(r.pose);
    t.actions.push_back(r.action);
    t.obs.push_back(observe(map, r.pose, rng, noise));
  }
  return t;
}

std::array<double, kInputDim> encode_input(const Trajectory &traj, std::size_t t) {
  const auto &a = traj.actions.at(t);
  std::array<double, kInputDim> x{a.distance, std::cos(a.turn), std::sin(a.turn)};
  for (std::size_t i = 0; i < kObservedLandmarks; ++i)
    x[3 + i] = traj.obs[t][i];
  return x;
}

std::array<double, kPoseDim> encode_pose(const Pose &pose, std::size_t n) {
  const double s = static_cast<double>(n);
  return {pose.x / s, pose.y / s, std::cos(pose.theta), std::sin(pose.theta)};
}

Dataset generate_dataset(const DatasetSpec &spec) {
  Dataset d;
  d.spec = spec;
  d.map = generate_maze(spec.maze_size, spec.density, spec.map_seed);
  const RngStream base(spec.data_seed);
  auto split = [&](std::size_t count, std::uint64_t id) {
    const RngStream s = base.fork(id);
    std::vector<Trajectory> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      RngStream r = s.fork(i);
      out.push_back(simulate_trajectory(d.map, spec.steps, r));
    }
    return out;
  };
  d.train = split(spec.num_train, 1);
  d.val = split(spec.num_val, 2);
  d.test = split(spec.num_test, 3);
  return d;
}

std::string trajectory_to_json(const Trajectory &traj) {
  json j;
  j["poses"] = json::array();
  for (const auto &p : traj.poses)
    j["poses"].push_back({p.x, p.y, p.theta});
  j["actions"] = json::array();
  for (const auto &a : traj.actions)
    j["actions"].push_back({a.distance, a.turn});
  j["obs"] = json::array();
  for (const auto &o : traj.obs)
    j["obs"].push_back(o);
  return j.dump();
}

Trajectory trajectory_from_json(const std::string &line) {
  Trajectory t;
  try {
    const json j = json::parse(line);
    for (const auto &p : j.at("poses"))
      t.poses.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
    for (const auto &a : j.at("actions"))
      t.actions.push_back({a.at(0).get<double>(), a.at(1).get<double>()});
    for (const auto &o : j.at("obs")) {
      if (o.size() != kObservedLandmarks)
        throw IoError("observation row must hold 5 distances");
      std::array<double, kObservedLandmarks> row;
      for (std::size_t i = 0; i < kObservedLandmarks; ++i)
        row[i] = o.at(i).get<double>();
      t.obs.push_back(row);
    }
  } catch (const json::exception &e) {
    throw IoError(std::string("malformed trajectory record: ") + e.what());
  }
  if (t.poses.size() != t.actions.size() + 1 || t.obs.size() != t.actions.size())
    throw IoError("trajectory record has inconsistent lengths");
  return t;
}

namespace {

void write_text(const std::filesystem::path &file, const std::string &text) {
  std::ofstream out(file, std::ios::binary);
  if (!out)
    throw IoError("cannot open " + file.string() + " for writing");
  out << text;
  if (!out)
    throw IoError("failed writing " + file.string());
}

std::string read_text(const std::filesystem::path &file) {
  std::ifstream in(file, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Trajectory> read_split(const std::filesystem::path &file) {
  std::ifstream in(file);
  if (!in)
    throw IoError("cannot open " + file.string());
  std::vector<Trajectory> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty())
      out.push_back(trajectory_from_json(line));
  return out;
}

const char *kSplits[] = {"train.jsonl", "val.jsonl", "test.jsonl"};

} // namespace

std::string file_blob_hash(const std::filesystem::path &file) {
  const std::string body = read_text(file);
  const std::string header = "blob " + std::to_string(body.size()) + '\0';
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || !EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) ||
      !EVP_DigestUpdate(ctx.get(), header.data(), header.size()) ||
      !EVP_DigestUpdate(ctx.get(), body.data(), body.size()) || !EVP_DigestFinal_ex(ctx.get(), digest, &len))
    throw IoError("hashing failed for " + file.string());
  static const char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    const unsigned char c = digest[i];
    out += hex[c >> 4];
    out += hex[c & 15];
  }
  return out;
}

void write_dataset(const Dataset &data, const std::filesystem::path &dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const std::vector<Trajectory> *splits[] = {&data.train, &data.val, &data.test};
  for (std::size_t s = 0; s < 3; ++s) {
    std::string text;
    for (const auto &t : *splits[s])
      text += trajectory_to_json(t) + "\n";
    write_text(dir / kSplits[s], text);
  }
  json meta;
  meta["maze_size"] = data.map.n;
  meta["density"] = data.map.density;
  meta["map_seed"] = data.spec.map_seed;
  meta["data_seed"] = data.spec.data_seed;
  meta["steps"] = data.spec.steps;
  meta["counts"] = {{"train", data.train.size()}, {"val", data.val.size()}, {"test", data.test.size()}};
  meta["map"] = data.map.rows();
  meta["landmarks"] = json::array();
  for (const auto &l : data.map.landmarks)
    meta["landmarks"].push_back({l.x, l.y});
  meta["coordinate_scale"] = data.map.n;
  meta["step_distance"] = kStepDistance;
  meta["input_dim"] = kInputDim;
  meta["pose_dim"] = kPoseDim;
  write_text(dir / "metadata.json", meta.dump(2) + "\n");

  json manifest;
  for (const char *f : {"metadata.json", "train.jsonl", "val.jsonl", "test.jsonl"})
    manifest["files"][f] = file_blob_hash(dir / f);
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path &dir) {
  Dataset d;
  json meta;
  try {
    meta = json::parse(read_text(dir / "metadata.json"));
    d.spec.maze_size = meta.at("maze_size").get<std::size_t>();
    d.spec.density = meta.at("density").get<double>();
    d.spec.map_seed = meta.at("map_seed").get<std::uint64_t>();
    d.spec.data_seed = meta.at("data_seed").get<std::uint64_t>();
    d.spec.steps = meta.at("steps").get<std::size_t>();
    d.map = MazeMap::from_rows(meta.at("map").get<std::vector<std::string>>(), d.spec.map_seed, d.spec.density);
  } catch (const json::exception &e) {
    throw IoError("malformed metadata in " + dir.string() + ": " + e.what());
  } catch (const MazeError &e) {
    throw IoError("malformed map in " + dir.string() + ": " + e.what());
  }
  d.train = read_split(dir / kSplits[0]);
  d.val = read_split(dir / kSplits[1]);
  d.test = read_split(dir / kSplits[2]);
  d.spec.num_train = d.train.size();
  d.spec.num_val = d.val.size();
  d.spec.num_test = d.test.size();
  return d;
}

} // namespace pfrnn
