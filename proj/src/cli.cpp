// SPDX-License-Identifier: Apache-2.0
#include <pfrnn/cli.hpp>

#include <pfrnn/bootstrap_pf.hpp>
#include <pfrnn/checkpoint.hpp>
#include <pfrnn/config.hpp>
#include <pfrnn/dataset.hpp>
#include <pfrnn/plot.hpp>
#include <pfrnn/train.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <iostream>

namespace pfrnn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string flag_name(const std::string &key) {
  std::string f = "--" + key;
  std::replace(f.begin(), f.end(), '_', '-');
  return f;
}

/// Adds one string flag per config key, collected into overrides.
void add_config_flags(CLI::App &cmd, KeyValues &overrides, std::vector<std::string> &storage) {
  const auto &keys = config_keys();
  storage.resize(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const std::string key = keys[i];
    cmd.add_option_function<std::string>(
        flag_name(key), [&overrides, key](const std::string &v) { overrides[key] = v; },
        "override config key '" + key + "'");
  }
}

RunConfig resolve_config(const std::string &config_file, const KeyValues &overrides) {
  RunConfig rc;
  KeyValues merged;
  if (!config_file.empty())
    merged = read_config_file(config_file);
  if (!merged.count("seed") && !overrides.count("seed"))
    if (const char *env = std::getenv("PFRNN_SEED"))
      merged["seed"] = env;
  for (const auto &[k, v] : overrides)
    merged[k] = v;
  apply_settings(rc, merged);
  rc.spec.validate();
  rc.train.validate();
  return rc;
}

json dataset_hashes(const fs::path &dir) {
  json h = json::object();
  for (const char *f : {"metadata.json", "train.jsonl", "val.jsonl", "test.jsonl"})
    if (fs::exists(dir / f))
      h[(dir / f).string()] = file_blob_hash(dir / f);
  return h;
}

void write_manifest(const fs::path &dir, const std::string &command, const std::vector<std::string> &args,
                    const std::string &config_file, const KeyValues &resolved, const json &seeds,
                    const json &inputs) {
  json m;
  m["command"] = command;
  m["argv"] = args;
  m["config_file"] = config_file;
  m["config"] = resolved;
  m["seeds"] = seeds;
  m["inputs"] = inputs;
  m["started"] = now_utc();
  write_text_file(dir / "run_manifest.json", m.dump(2) + "\n");
}

Dataset load_for(const RunConfig &rc) {
  if (rc.data_dir.empty())
    throw ConfigError("no dataset directory given (config key 'data' or --data)");
  return load_dataset(rc.data_dir);
}

json eval_json(const EvalSummary &s, const std::string &split, std::size_t seeds) {
  json j;
  j["split"] = split;
  j["seeds"] = seeds;
  j["last_step_mse"] = s.last_step_mse_mean;
  j["last_step_mse_std"] = s.last_step_mse_std;
  j["mse"] = s.mse_mean;
  j["mse_std"] = s.mse_std;
  return j;
}

int cmd_gen_data(std::size_t maze_size, std::size_t num_traj, int num_val, int num_test, std::size_t len,
                 double density, std::uint64_t seed, const std::string &out_dir, const std::vector<std::string> &args,
                 std::ostream &out) {
  DatasetSpec spec;
  spec.maze_size = maze_size;
  spec.density = density;
  spec.map_seed = seed;
  spec.data_seed = splitmix64(seed);
  spec.num_train = num_traj;
  spec.num_val = num_val >= 0 ? static_cast<std::size_t>(num_val) : num_traj / 10;
  spec.num_test = num_test >= 0 ? static_cast<std::size_t>(num_test) : num_traj / 5;
  spec.steps = len;
  if (len == 0)
    throw ConfigError("trajectory length must be positive");
  const Dataset d = generate_dataset(spec);
  write_dataset(d, out_dir);
  json seeds = {{"map_seed", spec.map_seed}, {"data_seed", spec.data_seed}};
  write_manifest(out_dir, "gen-data", args, "", {}, seeds, json::object());
  out << "wrote " << d.train.size() << "/" << d.val.size() << "/" << d.test.size()
      << " train/val/test trajectories on a " << maze_size << "x" << maze_size << " maze with "
      << d.map.landmarks.size() << " landmarks to " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const std::string &config_file, const KeyValues &overrides, const std::vector<std::string> &args,
              std::ostream &out, std::ostream &err) {
  RunConfig rc = resolve_config(config_file, overrides);
  if (rc.out_dir.empty())
    throw ConfigError("no output directory given (config key 'out' or --out)");
  const Dataset data = load_for(rc);
  const fs::path dir = rc.out_dir;
  fs::create_directories(dir);
  write_manifest(dir, "train", args, config_file, to_key_values(rc), {{"seed", rc.train.seed}},
                 dataset_hashes(rc.data_dir));
  write_text_file(dir / "config.txt", to_config_text(rc));

  auto model = build_model(rc.spec, data, rc.train.seed);
  rc.spec = model->spec();
  RunResult rr;
  rr.name = to_string(rc.spec.kind);
  rr.spec = rc.spec;
  rr.config = rc.train;
  try {
    TrainResult tr = train(*model, data, rc.train, &err);
    rr.history = tr.history;
    save_checkpoint(dir / "checkpoint.bin", *model, rc, tr);
    write_metrics_csv(dir / "metrics.csv", {rr});
    const EncodedSplit te = encode_split(data.test.empty() ? data.val : data.test, data.map.n);
    const auto s = evaluate_seeds(*model, te, splitmix64(rc.train.seed ^ 0x7e57), rc.train.eval_seeds);
    json j = eval_json(s, data.test.empty() ? "val" : "test", rc.train.eval_seeds);
    j["best_epoch"] = tr.best_epoch;
    j["val_last_step_mse"] = tr.best_val;
    j["parameters"] = count_parameters(model->parameters());
    write_text_file(dir / "eval.json", j.dump(2) + "\n");
    out << j.dump() << "\n";
  } catch (const TrainingAborted &e) {
    rr.history = e.partial().history;
    save_checkpoint(dir / "checkpoint.last_good.bin", *model, rc, e.partial());
    write_metrics_csv(dir / "metrics.csv", {rr});
    throw;
  }
  return kExitOk;
}

int cmd_eval(const std::string &checkpoint, const std::string &data_dir, const std::string &split,
             std::size_t seeds, std::uint64_t seed, std::ostream &out) {
  Checkpoint ck = load_checkpoint(checkpoint);
  const Dataset data = load_dataset(data_dir);
  if (data.map.rows() != ck.model->map().rows())
    throw ConfigError("dataset maze does not match the checkpoint's maze");
  const std::vector<Trajectory> *trajs = split == "train" ? &data.train : split == "val" ? &data.val : &data.test;
  const EncodedSplit es = encode_split(*trajs, data.map.n);
  const std::size_t n = seeds ? seeds : ck.config.train.eval_seeds;
  const auto s = evaluate_seeds(*ck.model, es, seed, n);
  json j = eval_json(s, split, n);
  j["kind"] = to_string(ck.config.spec.kind);
  out << j.dump() << "\n";
  return kExitOk;
}

int cmd_ablate(const std::string &config_file, const KeyValues &overrides, const std::vector<std::string> &args,
               std::ostream &out, std::ostream &err) {
  RunConfig rc = resolve_config(config_file, overrides);
  if (rc.out_dir.empty())
    throw ConfigError("no output directory given (config key 'out' or --out)");
  if (!is_particle_cell(rc.spec.kind))
    throw ConfigError("ablations need a particle cell kind (pf_lstm or pf_gru)");
  const Dataset data = load_for(rc);
  const fs::path dir = rc.out_dir;
  fs::create_directories(dir);
  write_manifest(dir, "ablate", args, config_file, to_key_values(rc), {{"seed", rc.train.seed}},
                 dataset_hashes(rc.data_dir));
  const auto results = ablation_suite(rc.spec, rc.train, data, &err);
  write_results_csv(dir / "ablation.csv", results);
  write_metrics_csv(dir / "metrics.csv", results);
  for (const auto &r : results)
    out << r.name << " test_last_step_mse " << r.test_last_step_mse << " +- " << r.test_last_step_mse_std
        << (r.error.empty() ? "" : " (failed: " + r.error + ")") << "\n";
  return kExitOk;
}

int cmd_grid(const std::string &config_file, const KeyValues &overrides, const std::vector<double> &lrs,
             const std::vector<std::size_t> &batches, const std::vector<double> &clips, const std::vector<double> &l2s,
             const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  RunConfig rc = resolve_config(config_file, overrides);
  if (rc.out_dir.empty())
    throw ConfigError("no output directory given (config key 'out' or --out)");
  const Dataset data = load_for(rc);
  std::vector<TrainConfig> configs;
  auto or_default = [](auto v, auto d) { return v.empty() ? decltype(v){d} : v; };
  for (double lr : or_default(lrs, rc.train.learning_rate))
    for (std::size_t b : or_default(batches, rc.train.batch_size))
      for (double c : or_default(clips, rc.train.clip_norm))
        for (double l2 : or_default(l2s, rc.train.l2)) {
          TrainConfig t = rc.train;
          t.learning_rate = lr;
          t.batch_size = b;
          t.clip_norm = c;
          t.l2 = l2;
          t.validate();
          configs.push_back(t);
        }
  const fs::path dir = rc.out_dir;
  fs::create_directories(dir);
  write_manifest(dir, "grid", args, config_file, to_key_values(rc), {{"seed", rc.train.seed}},
                 dataset_hashes(rc.data_dir));
  const auto results = grid_search({rc.spec}, configs, data, &err);
  write_results_csv(dir / "grid.csv", results);
  write_metrics_csv(dir / "metrics.csv", results);
  out << "best " << results.front().name << " val_last_step_mse " << results.front().val_last_step_mse << "\n";
  return kExitOk;
}

int cmd_plot_metrics(const std::string &metrics, const std::string &out_dir, std::ostream &out) {
  const CsvTable t = read_csv(metrics);
  const fs::path dir = out_dir;
  std::vector<std::string> written;
  if (t.has_column("epoch")) {
    for (const char *col : {"train_loss", "val_last_step_mse"}) {
      write_text_file(dir / (std::string(col) + ".svg"), loss_curve_svg(t, col));
      written.push_back(col);
    }
  } else if (t.has_column("test_last_step_mse")) {
    write_text_file(dir / "test_last_step_mse.svg", bar_chart_svg(t, "run", "test_last_step_mse"));
    written.push_back("test_last_step_mse");
  } else {
    throw PlotError("CSV needs either run/epoch metric columns or a test_last_step_mse column");
  }
  for (const auto &w : written)
    out << "wrote " << (dir / (w + ".svg")).string() << "\n";
  return kExitOk;
}

int cmd_plot_frames(const std::string &checkpoint, const std::string &data_dir, std::size_t index,
                    std::uint64_t seed, const std::string &out_dir, std::ostream &out) {
  Checkpoint ck = load_checkpoint(checkpoint);
  const Dataset data = load_dataset(data_dir);
  const auto &trajs = data.test.empty() ? data.val : data.test;
  if (index >= trajs.size())
    throw ConfigError("trajectory index " + std::to_string(index) + " out of range");
  const Trajectory &traj = trajs[index];
  const EncodedSplit es = encode_split({traj}, data.map.n);
  std::vector<Tensor> inputs;
  for (std::size_t t = 0; t < es.steps; ++t)
    inputs.emplace_back(Shape{1, kInputDim},
                        std::vector<double>(es.inputs.begin() + t * kInputDim, es.inputs.begin() + (t + 1) * kInputDim));
  RngStream rng(seed);
  const auto outs = ck.model->forward(inputs, Mode::Eval, rng, true);
  const double n = static_cast<double>(data.map.n);
  auto decode = [&](std::span<const double> v) { return FramePose{v[0] * n, v[1] * n, std::atan2(v[3], v[2])}; };
  for (std::size_t t = 0; t < outs.size(); ++t) {
    const auto mp = outs[t].mean_pred.values();
    const auto pp = outs[t].particle_preds.values();
    std::vector<FramePose> particles;
    for (std::size_t k = 0; k + kPoseDim <= pp.size(); k += kPoseDim)
      particles.push_back(decode(pp.subspan(k, kPoseDim)));
    const Pose &tp = traj.poses[t + 1];
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu.svg", t + 1);
    write_text_file(fs::path(out_dir) / name,
                    particle_frame_svg(data.map, {tp.x, tp.y, tp.theta}, decode(mp), particles, t + 1));
  }
  out << "wrote " << outs.size() << " frames to " << out_dir << "\n";
  return kExitOk;
}

int cmd_oracle(const std::string &data_dir, std::size_t particles, std::size_t count, std::uint64_t seed,
               std::ostream &out) {
  const Dataset data = load_dataset(data_dir);
  const auto &trajs = data.test.empty() ? data.val : data.test;
  std::vector<double> errs;
  for (std::size_t i = 0; i < std::min(count, trajs.size()); ++i) {
    BootstrapConfig c;
    c.particles = particles;
    c.seed = RngStream(seed).fork(i).next_u64();
    const auto r = bootstrap_pf(data.map, trajs[i].actions, trajs[i].obs, c);
    errs.push_back(position_error(r.estimates.back(), trajs[i].poses.back()));
  }
  if (errs.empty())
    throw ConfigError("no trajectories to filter");
  std::vector<double> sorted = errs;
  std::sort(sorted.begin(), sorted.end());
  const double median = 0.5 * (sorted[sorted.size() / 2] + sorted[(sorted.size() - 1) / 2]);
  json j = {{"particles", particles}, {"trajectories", errs.size()}, {"median_last_step_position_error", median}};
  out << j.dump() << "\n";
  return kExitOk;
}

} // namespace

int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  CLI::App app{"Particle-filter recurrent networks: data generation, training, evaluation and plots", "pfrnn"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every command");

  // gen-data
  auto *gen = app.add_subcommand("gen-data", "generate a maze localization dataset");
  std::size_t maze_size = 10, num_traj = 1000, traj_len = 50;
  int num_val = -1, num_test = -1;
  double density = 0.25;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  gen->add_option("--maze-size", maze_size, "grid size n (n x n cells)")->capture_default_str();
  gen->add_option("--num-traj", num_traj, "training trajectories (val = N/10, test = N/5 unless set)")
      ->capture_default_str();
  gen->add_option("--num-val", num_val, "validation trajectories");
  gen->add_option("--num-test", num_test, "test trajectories");
  gen->add_option("--traj-len", traj_len, "steps per trajectory")->capture_default_str();
  gen->add_option("--density", density, "obstacle density in the generated half")->capture_default_str();
  auto *gen_seed_opt = gen->add_option("--seed", gen_seed, "maze and data seed (default PFRNN_SEED or 1)");
  gen->add_option("--out", gen_out, "output directory")->required();

  // train / ablate / grid share config flags
  std::string train_cfg, ablate_cfg, grid_cfg;
  KeyValues train_over, ablate_over, grid_over;
  std::vector<std::string> s1, s2, s3;
  auto *tr = app.add_subcommand("train", "train one model");
  tr->add_option("--config", train_cfg, "key = value config file");
  add_config_flags(*tr, train_over, s1);

  std::string ck_path, eval_data, eval_split = "test";
  std::size_t eval_seeds = 0;
  std::uint64_t eval_seed = 0;
  auto *ev = app.add_subcommand("eval", "evaluate a checkpoint; prints metric JSON");
  ev->add_option("--checkpoint", ck_path, "checkpoint file")->required();
  ev->add_option("--data", eval_data, "dataset directory")->required();
  ev->add_option("--split", eval_split, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  ev->add_option("--seeds", eval_seeds, "number of sampling seeds (default from checkpoint config)");
  ev->add_option("--seed", eval_seed, "base sampling seed")->capture_default_str();

  auto *ab = app.add_subcommand("ablate", "run the 10-variant ablation table");
  ab->add_option("--config", ablate_cfg, "key = value config file");
  add_config_flags(*ab, ablate_over, s2);

  std::vector<double> g_lr, g_clip, g_l2;
  std::vector<std::size_t> g_batch;
  auto *gr = app.add_subcommand("grid", "grid search over optimizer settings");
  gr->add_option("--config", grid_cfg, "key = value config file");
  add_config_flags(*gr, grid_over, s3);
  gr->add_option("--learning-rates", g_lr, "learning-rate values")->delimiter(',');
  gr->add_option("--batch-sizes", g_batch, "batch-size values")->delimiter(',');
  gr->add_option("--clip-norms", g_clip, "clip-norm values")->delimiter(',');
  gr->add_option("--l2s", g_l2, "L2 weight values")->delimiter(',');

  std::string plot_metrics, plot_out, plot_ck, plot_data;
  std::size_t plot_traj = 0;
  std::uint64_t plot_seed = 0;
  auto *pl = app.add_subcommand("plot", "export SVG charts or particle frames");
  pl->add_option("--metrics", plot_metrics, "metrics or results CSV");
  pl->add_option("--checkpoint", plot_ck, "checkpoint for particle frames");
  pl->add_option("--data", plot_data, "dataset directory for particle frames");
  pl->add_option("--traj", plot_traj, "test trajectory index for particle frames")->capture_default_str();
  pl->add_option("--seed", plot_seed, "sampling seed for particle frames")->capture_default_str();
  pl->add_option("--out", plot_out, "output directory")->required();

  std::string or_data;
  std::size_t or_particles = 500, or_count = 100;
  std::uint64_t or_seed = 0;
  auto *orc = app.add_subcommand("oracle", "run the bootstrap particle filter on test trajectories");
  orc->add_option("--data", or_data, "dataset directory")->required();
  orc->add_option("--particles", or_particles, "particle count")->capture_default_str();
  orc->add_option("--count", or_count, "number of trajectories")->capture_default_str();
  orc->add_option("--seed", or_seed, "filter seed")->capture_default_str();

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  if (!argv_rev.empty())
    argv_rev.pop_back(); // program name
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError &e) {
    if (e.get_exit_code() == 0) {
      out << (dynamic_cast<const CLI::CallForAllHelp *>(&e) ? app.help("", CLI::AppFormatMode::All)
              : app.get_subcommands().empty()                ? app.help()
                                                             : app.get_subcommands().front()->help());
      return kExitOk;
    }
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      if (gen_seed_opt->count() == 0)
        if (const char *env = std::getenv("PFRNN_SEED"))
          gen_seed = std::stoull(env);
      return cmd_gen_data(maze_size, num_traj, num_val, num_test, traj_len, density, gen_seed, gen_out, args, out);
    }
    if (tr->parsed())
      return cmd_train(train_cfg, train_over, args, out, err);
    if (ev->parsed())
      return cmd_eval(ck_path, eval_data, eval_split, eval_seeds, eval_seed, out);
    if (ab->parsed())
      return cmd_ablate(ablate_cfg, ablate_over, args, out, err);
    if (gr->parsed())
      return cmd_grid(grid_cfg, grid_over, g_lr, g_batch, g_clip, g_l2, args, out, err);
    if (pl->parsed()) {
      if (!plot_metrics.empty())
        return cmd_plot_metrics(plot_metrics, plot_out, out);
      if (!plot_ck.empty() && !plot_data.empty())
        return cmd_plot_frames(plot_ck, plot_data, plot_traj, plot_seed, plot_out, out);
      throw ConfigError("plot needs --metrics, or --checkpoint with --data");
    }
    if (orc->parsed())
      return cmd_oracle(or_data, or_particles, or_count, or_seed, out);
  } catch (const TrainingAborted &e) {
    err << "error: training aborted: " << e.what() << " (last good parameters saved)\n";
    return kExitNumeric;
  } catch (const NumericError &e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DegenerateBelief &e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError &e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error &e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument &e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const MazeError &e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

int run_cli(int argc, char **argv) { return run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr); }

} // namespace pfrnn
