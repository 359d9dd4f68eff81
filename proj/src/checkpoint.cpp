// SPDX-License-Identifier: Apache-2.0
#include <pfrnn/checkpoint.hpp>

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

namespace pfrnn {

using nlohmann::json;

namespace {

constexpr char kMagic[] = "PFRNNCKPT";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

template <typename T> void put(std::ostream &out, T v) { out.write(reinterpret_cast<const char *>(&v), sizeof v); }

template <typename T> T get(std::istream &in, const std::string &file) {
  T v{};
  in.read(reinterpret_cast<char *>(&v), sizeof v);
  if (!in)
    throw IoError("truncated checkpoint " + file);
  return v;
}

json history_json(const std::vector<EpochMetrics> &h) {
  json a = json::array();
  for (const auto &e : h)
    a.push_back({{"epoch", e.epoch},
                 {"train_loss", e.train_loss},
                 {"train_pred", e.train_pred},
                 {"train_elbo", e.train_elbo},
                 {"grad_norm", e.grad_norm},
                 {"val_last_step_mse", e.val_last_step_mse},
                 {"val_mse", e.val_mse}});
  return a;
}

} // namespace

void save_checkpoint(const std::filesystem::path &file, const Model &model, const RunConfig &config,
                     const TrainResult &result) {
  if (file.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(file.parent_path(), ec);
  }
  std::ofstream out(file, std::ios::binary);
  if (!out)
    throw IoError("cannot open " + file.string() + " for writing");
  ParameterList blobs = model.parameters();
  for (auto &b : model.buffers())
    blobs.push_back(b);
  out.write(kMagic, kMagicLen);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, blobs.size());
  for (const auto &b : blobs) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(b.name.size()));
    out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    const Shape &s = b.tensor.shape();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    for (auto d : s)
      put<std::uint64_t>(out, d);
    const auto v = b.tensor.values();
    out.write(reinterpret_cast<const char *>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  json trailer;
  trailer["config"] = to_key_values(config);
  trailer["map"] = model.map().rows();
  trailer["map_seed"] = model.map().seed;
  trailer["map_density"] = model.map().density;
  trailer["history"] = history_json(result.history);
  trailer["best_epoch"] = result.best_epoch;
  const std::string text = trailer.dump();
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out)
    throw IoError("failed writing " + file.string());
}

Checkpoint load_checkpoint(const std::filesystem::path &file) {
  const std::string name = file.string();
  std::ifstream in(file, std::ios::binary);
  if (!in)
    throw IoError("cannot open checkpoint " + name);
  char magic[kMagicLen];
  in.read(magic, kMagicLen);
  if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0)
    throw IoError(name + " is not a checkpoint");
  const auto version = get<std::uint32_t>(in, name);
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));

  struct Blob {
    Shape shape;
    std::vector<double> values;
  };
  std::map<std::string, Blob> blobs;
  const auto count = get<std::uint64_t>(in, name);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in, name);
    if (len > 4096)
      throw IoError("corrupt blob name in " + name);
    std::string bname(len, '\0');
    in.read(bname.data(), len);
    Blob b;
    const auto rank = get<std::uint32_t>(in, name);
    if (rank > 8)
      throw IoError("corrupt blob rank in " + name);
    for (std::uint32_t r = 0; r < rank; ++r)
      b.shape.push_back(get<std::uint64_t>(in, name));
    const std::size_t n = numel(b.shape);
    if (n > (std::size_t{1} << 32))
      throw IoError("corrupt blob size in " + name);
    b.values.resize(n);
    in.read(reinterpret_cast<char *>(b.values.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in)
      throw IoError("truncated checkpoint " + name);
    blobs.emplace(std::move(bname), std::move(b));
  }
  const auto tlen = get<std::uint64_t>(in, name);
  std::string text(tlen, '\0');
  in.read(text.data(), static_cast<std::streamsize>(tlen));
  if (!in)
    throw IoError("truncated checkpoint " + name);

  Checkpoint ck;
  MazeMap map;
  try {
    const json t = json::parse(text);
    apply_settings(ck.config, t.at("config").get<KeyValues>());
    map = MazeMap::from_rows(t.at("map").get<std::vector<std::string>>(), t.at("map_seed").get<std::uint64_t>(),
                             t.at("map_density").get<double>());
    for (const auto &e : t.at("history"))
      ck.history.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                            e.at("train_pred").get<double>(), e.at("train_elbo").get<double>(),
                            e.at("grad_norm").get<double>(), e.at("val_last_step_mse").get<double>(),
                            e.at("val_mse").get<double>()});
    ck.best_epoch = t.at("best_epoch").get<std::size_t>();
  } catch (const json::exception &e) {
    throw IoError("malformed checkpoint trailer in " + name + ": " + e.what());
  } catch (const MazeError &e) {
    throw IoError("malformed map in " + name + ": " + e.what());
  }
  ck.config.spec.map_size = map.n;
  RngStream unused(0);
  ck.model = std::make_unique<Model>(ck.config.spec, map, unused);
  ParameterList all = ck.model->parameters();
  for (auto &b : ck.model->buffers())
    all.push_back(b);
  for (auto &p : all) {
    auto it = blobs.find(p.name);
    if (it == blobs.end())
      throw IoError("checkpoint " + name + " lacks tensor " + p.name);
    if (it->second.shape != p.tensor.shape())
      throw IoError("checkpoint tensor " + p.name + " has shape " + to_string(it->second.shape) + ", model expects " +
                    to_string(p.tensor.shape()));
    auto d = p.tensor.data();
    std::copy(it->second.values.begin(), it->second.values.end(), d.begin());
  }
  return ck;
}

} // namespace pfrnn
