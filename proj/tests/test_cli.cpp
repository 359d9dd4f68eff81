// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <pfrnn/cli.hpp>
#include <pfrnn/dataset.hpp>
#include <pfrnn/plot.hpp>

#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

using namespace pfrnn;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "pfrnn");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string &name) {
  fs::path p = fs::temp_directory_path() / ("pfrnn_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::size_t line_count(const fs::path &file) {
  std::ifstream in(file);
  std::size_t n = 0;
  for (std::string l; std::getline(in, l);)
    n += !l.empty();
  return n;
}

std::string slurp(const fs::path &file) {
  std::ifstream in(file, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

/// Tag-balance check: every element opened is closed in order.
bool well_formed_xml(const std::string &s) {
  std::vector<std::string> stack;
  const std::regex tag(R"(<(/?)([A-Za-z_][\w:.-]*)[^>]*?(/?)>)");
  bool root_seen = false;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), tag); it != std::sregex_iterator(); ++it) {
    const auto &m = *it;
    if (m[1].length()) {
      if (stack.empty() || stack.back() != m[2].str())
        return false;
      stack.pop_back();
    } else if (!m[3].length()) {
      if (stack.empty() && root_seen)
        return false;
      root_seen = true;
      stack.push_back(m[2].str());
    }
  }
  return root_seen && stack.empty();
}

const fs::path &smoke_data() {
  static const fs::path dir = [] {
    fs::path d = scratch("data");
    const CliRun r = cli({"gen-data", "--num-traj", "10", "--traj-len", "8", "--seed", "5", "--out", d.string()});
    EXPECT_EQ(r.code, 0) << r.err;
    return d;
  }();
  return dir;
}

std::vector<std::string> tiny_model_flags() {
  return {"--hidden", "6", "--particles", "3", "--encoder-width", "8", "--map-features", "8", "--batch-size", "4",
          "--eval-seeds", "2"};
}

} // namespace

TEST(GenData, CountsLandmarksAndDeterminism) {
  const fs::path a = scratch("gen_a"), b = scratch("gen_b");
  const std::vector<std::string> base = {"gen-data", "--num-traj", "100", "--traj-len", "5", "--seed", "9"};
  auto args_a = base, args_b = base;
  args_a.insert(args_a.end(), {"--out", a.string()});
  args_b.insert(args_b.end(), {"--out", b.string()});
  ASSERT_EQ(cli(args_a).code, 0);
  ASSERT_EQ(cli(args_b).code, 0);
  EXPECT_EQ(line_count(a / "train.jsonl"), 100u);
  EXPECT_EQ(line_count(a / "val.jsonl"), 10u);
  EXPECT_EQ(line_count(a / "test.jsonl"), 20u);
  for (const char *f : {"train.jsonl", "val.jsonl", "test.jsonl", "metadata.json", "manifest.json"})
    EXPECT_EQ(file_blob_hash(a / f), file_blob_hash(b / f)) << f;
  EXPECT_GE(load_dataset(a).map.landmarks.size(), 5u);
  EXPECT_TRUE(fs::exists(a / "run_manifest.json"));
}

TEST(GenData, SeedFallsBackToEnvironment) {
  const fs::path a = scratch("env_a"), b = scratch("env_b");
  ASSERT_EQ(cli({"gen-data", "--num-traj", "10", "--traj-len", "3", "--seed", "42", "--out", a.string()}).code, 0);
  ::setenv("PFRNN_SEED", "42", 1);
  const CliRun r = cli({"gen-data", "--num-traj", "10", "--traj-len", "3", "--out", b.string()});
  ::unsetenv("PFRNN_SEED");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(file_blob_hash(a / "train.jsonl"), file_blob_hash(b / "train.jsonl"));
}

TEST(GenData, BadArgumentsAndIoFailure) {
  EXPECT_EQ(cli({"gen-data", "--num-traj", "ten", "--out", "x"}).code, 2);
  EXPECT_EQ(cli({"gen-data", "--num-traj", "10"}).code, 2);
  EXPECT_EQ(cli({"gen-data", "--maze-size", "3", "--out", scratch("small").string()}).code, 2);
  EXPECT_EQ(cli({"gen-data", "--unknown-flag", "--out", "x"}).code, 2);
  const fs::path blocker = scratch("io") / "file";
  write_text_file(blocker, "x");
  const CliRun r = cli({"gen-data", "--num-traj", "4", "--traj-len", "2", "--out", (blocker / "sub").string()});
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_FALSE(r.err.empty());
}

TEST(Cli, HelpListsEveryFlag) {
  const CliRun r = cli({"train", "--help"});
  EXPECT_EQ(r.code, 0);
  for (const char *f : {"--config", "--hidden", "--particles", "--learning-rate", "--batch-size", "--clip-norm", "--l2",
                        "--bptt", "--beta", "--pred-weight", "--eval-seeds", "--data", "--out"})
    EXPECT_NE(r.out.find(f), std::string::npos) << f;
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"fly"}).code, 2);
}

TEST(Cli, TrainEvalSmoke) {
  const fs::path out = scratch("train");
  std::vector<std::string> args = {"train", "--data", smoke_data().string(), "--out", out.string(), "--epochs", "2"};
  for (const auto &f : tiny_model_flags())
    args.push_back(f);
  const auto t0 = std::chrono::steady_clock::now();
  const CliRun r = cli(args);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 60.0);
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char *f : {"checkpoint.bin", "metrics.csv", "config.txt", "run_manifest.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  EXPECT_EQ(line_count(out / "metrics.csv"), 3u);
  const auto manifest = nlohmann::json::parse(slurp(out / "run_manifest.json"));
  EXPECT_EQ(manifest["command"], "train");
  EXPECT_EQ(manifest["inputs"].size(), 4u);

  const std::vector<std::string> ev = {"eval", "--checkpoint", (out / "checkpoint.bin").string(), "--data",
                                       smoke_data().string(), "--seed", "3"};
  const CliRun e1 = cli(ev), e2 = cli(ev);
  ASSERT_EQ(e1.code, 0) << e1.err;
  const auto j = nlohmann::json::parse(e1.out);
  EXPECT_TRUE(j.contains("last_step_mse"));
  EXPECT_TRUE(std::isfinite(j["last_step_mse"].get<double>()));
  EXPECT_EQ(e1.out, e2.out);
  EXPECT_EQ(cli({"eval", "--checkpoint", (out / "missing.bin").string(), "--data", smoke_data().string()}).code, 3);
}

TEST(Cli, ConfigFileWithOverrides) {
  const fs::path dir = scratch("cfg");
  write_text_file(dir / "run.cfg", "data = " + smoke_data().string() + "\nout = " + (dir / "run").string() +
                                       "\nkind = gru\nhidden = 5\nencoder_width = 8\nmap_features = 8\nepochs = 3\n"
                                       "batch_size = 4\n");
  const CliRun r = cli({"train", "--config", (dir / "run.cfg").string(), "--epochs", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(line_count(dir / "run" / "metrics.csv"), 2u);
  EXPECT_NE(slurp(dir / "run" / "config.txt").find("kind = gru"), std::string::npos);

  write_text_file(dir / "bad.cfg", "hiden = 5\n");
  EXPECT_EQ(cli({"train", "--config", (dir / "bad.cfg").string()}).code, 2);
  EXPECT_EQ(cli({"train", "--config", (dir / "none.cfg").string()}).code, 3);
  EXPECT_EQ(cli({"train", "--data", smoke_data().string(), "--out", (dir / "x").string(), "--alpha", "2"}).code, 2);
}

TEST(Cli, NumericBlowupExitsFourWithLastGood) {
  const fs::path out = scratch("nan");
  std::vector<std::string> args = {"train", "--data", smoke_data().string(), "--out", out.string(), "--epochs", "3",
                                   "--learning-rate", "1e300", "--clip-norm", "1e300"};
  for (const auto &f : tiny_model_flags())
    args.push_back(f);
  const CliRun r = cli(args);
  EXPECT_EQ(r.code, 4) << r.err;
  EXPECT_TRUE(fs::exists(out / "checkpoint.last_good.bin"));
}

TEST(Cli, AblateEmitsTenRows) {
  const fs::path out = scratch("ablate");
  std::vector<std::string> args = {"ablate", "--data", smoke_data().string(), "--out", out.string(), "--epochs", "1"};
  for (const auto &f : tiny_model_flags())
    args.push_back(f);
  const CliRun r = cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(line_count(out / "ablation.csv"), 11u);
  const CsvTable t = read_csv(out / "ablation.csv");
  EXPECT_EQ(t.rows.size(), 10u);
}

TEST(Plot, MetricsToValidSvg) {
  const fs::path dir = scratch("plot");
  write_text_file(dir / "m.csv", "run,epoch,train_loss,train_pred,train_elbo,grad_norm,val_last_step_mse,val_mse\n"
                                 "a,1,3,2,1,0.5,0.9,1\na,2,2,1.5,0.5,0.4,0.7,0.8\nb,1,4,3,1,0.6,1.0,1.1\n");
  const CliRun r = cli({"plot", "--metrics", (dir / "m.csv").string(), "--out", (dir / "svg").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char *f : {"train_loss.svg", "val_last_step_mse.svg"}) {
    const std::string svg = slurp(dir / "svg" / f);
    EXPECT_TRUE(well_formed_xml(svg)) << f;
    EXPECT_NE(svg.find("<svg"), std::string::npos);
  }
  write_text_file(dir / "r.csv", "run,test_last_step_mse\nP1,0.5\nP10,0.3\n");
  ASSERT_EQ(cli({"plot", "--metrics", (dir / "r.csv").string(), "--out", (dir / "bars").string()}).code, 0);
  EXPECT_TRUE(well_formed_xml(slurp(dir / "bars" / "test_last_step_mse.svg")));
}

TEST(Plot, EmptyOrMalformedCsvExitsTwo) {
  const fs::path dir = scratch("plot_bad");
  write_text_file(dir / "empty.csv", "");
  const CliRun r = cli({"plot", "--metrics", (dir / "empty.csv").string(), "--out", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(r.err.empty());
  write_text_file(dir / "cols.csv", "a,b\n1,2\n");
  EXPECT_EQ(cli({"plot", "--metrics", (dir / "cols.csv").string(), "--out", dir.string()}).code, 2);
  EXPECT_EQ(cli({"plot", "--out", dir.string()}).code, 2);
}

TEST(Plot, ParticleFramesHaveKMarkers) {
  const fs::path out = scratch("frames");
  std::vector<std::string> args = {"train", "--data", smoke_data().string(), "--out", (out / "run").string(),
                                   "--epochs", "1"};
  for (const auto &f : tiny_model_flags())
    args.push_back(f);
  ASSERT_EQ(cli(args).code, 0);
  const CliRun r = cli({"plot", "--checkpoint", (out / "run" / "checkpoint.bin").string(), "--data",
                     smoke_data().string(), "--out", (out / "svg").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t frames = 0;
  for (const auto &e : fs::directory_iterator(out / "svg")) {
    const std::string svg = slurp(e.path());
    EXPECT_TRUE(well_formed_xml(svg));
    std::size_t markers = 0;
    for (std::size_t p = svg.find("class=\"particle\""); p != std::string::npos;
         p = svg.find("class=\"particle\"", p + 1))
      ++markers;
    EXPECT_EQ(markers, 3u);
    ++frames;
  }
  EXPECT_EQ(frames, 8u);
}

TEST(Plot, FrameSvgDirect) {
  MazeMap m = generate_maze(10, 0.25, 1);
  const std::string svg = particle_frame_svg(m, {1, 1, 0}, {2, 2, 0}, {{1, 2, 0}, {3, 3, 1}}, 4);
  EXPECT_TRUE(well_formed_xml(svg));
}
