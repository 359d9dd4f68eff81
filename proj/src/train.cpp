// SPDX-License-Identifier: Apache-2.0
#include <pfrnn/train.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

namespace pfrnn {

namespace {

constexpr std::uint64_t kModelStream = 1;
constexpr std::uint64_t kOrderStream = 2;
constexpr std::uint64_t kNoiseStream = 3;
constexpr std::uint64_t kValStream = 4;
constexpr std::uint64_t kTestStream = 5;

struct Batch {
  std::vector<Tensor> inputs;
  std::vector<Tensor> targets;
};

Batch make_batch(const EncodedSplit &s, std::span<const std::size_t> rows, std::size_t t0, std::size_t t1) {
  Batch b;
  const std::size_t B = rows.size();
  for (std::size_t t = t0; t < t1; ++t) {
    std::vector<double> x(B * kInputDim), y(B * kPoseDim);
    for (std::size_t i = 0; i < B; ++i) {
      const std::size_t base = rows[i] * s.steps + t;
      std::copy_n(s.inputs.begin() + base * kInputDim, kInputDim, x.begin() + i * kInputDim);
      std::copy_n(s.targets.begin() + base * kPoseDim, kPoseDim, y.begin() + i * kPoseDim);
    }
    b.inputs.emplace_back(Shape{B, kInputDim}, std::move(x));
    b.targets.emplace_back(Shape{B, kPoseDim}, std::move(y));
  }
  return b;
}

double sample_std(const std::vector<double> &v, double mean) {
  if (v.size() < 2)
    return 0.0;
  double acc = 0.0;
  for (double x : v)
    acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

} // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0))
    throw ConfigError("learning rate must be positive");
  if (batch_size < 2)
    throw ConfigError("batch size must be at least 2");
  if (!(clip_norm > 0.0))
    throw ConfigError("gradient clip norm must be positive");
  if (!(l2 >= 0.0))
    throw ConfigError("L2 weight must be non-negative");
  if (epochs == 0)
    throw ConfigError("epochs must be positive");
  if (!(beta >= 0.0) || !(pred_weight >= 0.0))
    throw ConfigError("loss weights must be non-negative");
  if (eval_seeds == 0)
    throw ConfigError("eval_seeds must be positive");
}

EncodedSplit encode_split(const std::vector<Trajectory> &trajs, std::size_t maze_size) {
  EncodedSplit s;
  s.count = trajs.size();
  s.steps = trajs.empty() ? 0 : trajs.front().steps();
  s.inputs.reserve(s.count * s.steps * kInputDim);
  s.targets.reserve(s.count * s.steps * kPoseDim);
  for (const auto &t : trajs) {
    if (t.steps() != s.steps)
      throw IoError("trajectories in a split must share one length");
    for (std::size_t k = 0; k < s.steps; ++k) {
      const auto x = encode_input(t, k);
      const auto y = encode_pose(t.poses[k + 1], maze_size);
      s.inputs.insert(s.inputs.end(), x.begin(), x.end());
      s.targets.insert(s.targets.end(), y.begin(), y.end());
    }
  }
  return s;
}

void feature_stats(const std::vector<double> &rows, std::size_t dim, std::vector<double> &mean,
                   std::vector<double> &stddev) {
  const std::size_t n = rows.size() / dim;
  mean.assign(dim, 0.0);
  stddev.assign(dim, 0.0);
  if (n == 0)
    return;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < dim; ++j)
      mean[j] += rows[r * dim + j];
  for (auto &m : mean)
    m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < dim; ++j)
      stddev[j] += (rows[r * dim + j] - mean[j]) * (rows[r * dim + j] - mean[j]);
  for (auto &s : stddev)
    s = std::sqrt(s / static_cast<double>(n));
}

std::unique_ptr<Model> build_model(const ModelSpec &spec, const Dataset &data, std::uint64_t seed) {
  RngStream rng = RngStream(seed).fork(kModelStream);
  ModelSpec sized = spec;
  sized.map_size = data.map.n;
  auto model = std::make_unique<Model>(sized, data.map, rng);
  const EncodedSplit tr = encode_split(data.train, data.map.n);
  std::vector<double> m, s;
  feature_stats(tr.inputs, kInputDim, m, s);
  model->set_input_stats(m, s);
  feature_stats(tr.targets, kPoseDim, m, s);
  model->set_output_stats(m, s);
  return model;
}

LossConfig loss_config_for(const ModelSpec &spec, const TrainConfig &config, std::size_t steps) {
  LossConfig lc;
  lc.task = Task::Regression;
  lc.beta = is_particle_cell(spec.kind) ? config.beta : 0.0;
  lc.pred_weight = config.pred_weight;
  if (!is_particle_cell(spec.kind) && lc.pred_weight == 0.0)
    lc.pred_weight = 1.0;
  lc.output_steps.resize(steps);
  std::iota(lc.output_steps.begin(), lc.output_steps.end(), 0);
  return lc;
}

EvalMetrics evaluate(Model &model, const EncodedSplit &split, std::uint64_t seed, std::size_t batch) {
  if (split.count == 0)
    throw IoError("cannot evaluate on an empty split");
  RngStream rng(seed);
  EvalMetrics m;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < split.count; start += batch) {
    rows.resize(std::min(batch, split.count - start));
    std::iota(rows.begin(), rows.end(), start);
    Batch b = make_batch(split, rows, 0, split.steps);
    auto outs = model.forward(b.inputs, Mode::Eval, rng, false);
    for (std::size_t t = 0; t < split.steps; ++t) {
      const auto p = outs[t].mean_pred.values();
      const auto y = b.targets[t].values();
      double se = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i)
        se += (p[i] - y[i]) * (p[i] - y[i]);
      m.mse += se;
      if (t + 1 == split.steps)
        m.last_step_mse += se;
    }
  }
  m.last_step_mse /= static_cast<double>(split.count);
  m.mse /= static_cast<double>(split.count * split.steps);
  return m;
}

EvalSummary evaluate_seeds(Model &model, const EncodedSplit &split, std::uint64_t base_seed, std::size_t seeds) {
  EvalSummary s;
  std::vector<double> last, full;
  for (std::size_t i = 0; i < seeds; ++i) {
    s.per_seed.push_back(evaluate(model, split, RngStream(base_seed).fork(i).next_u64()));
    last.push_back(s.per_seed.back().last_step_mse);
    full.push_back(s.per_seed.back().mse);
  }
  s.last_step_mse_mean = std::accumulate(last.begin(), last.end(), 0.0) / static_cast<double>(seeds);
  s.mse_mean = std::accumulate(full.begin(), full.end(), 0.0) / static_cast<double>(seeds);
  s.last_step_mse_std = sample_std(last, s.last_step_mse_mean);
  s.mse_std = sample_std(full, s.mse_mean);
  return s;
}

TrainResult train(Model &model, const Dataset &data, const TrainConfig &config, std::ostream *log) {
  config.validate();
  const EncodedSplit tr = encode_split(data.train, data.map.n);
  const EncodedSplit va = encode_split(data.val, data.map.n);
  if (tr.count < 2)
    throw ConfigError("training split needs at least 2 trajectories");
  const std::size_t T = tr.steps;
  const std::size_t window = config.bptt == 0 ? T : std::min(config.bptt, T);
  const bool particles = is_particle_cell(model.spec().kind);

  const RngStream root(config.seed);
  RngStream order_rng = root.fork(kOrderStream);
  RngStream noise_rng = root.fork(kNoiseStream);
  const std::uint64_t val_seed = root.fork(kValStream).next_u64();

  ParameterList params = model.parameters();
  RmsProp opt({config.learning_rate, 0.99, 1e-8});

  TrainResult result;
  Model::Snapshot best = model.snapshot();
  Model::Snapshot last_good = best;
  result.best_val = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(tr.count);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) try {
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[order_rng.uniform_index(i + 1)]);

    EpochMetrics em;
    em.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t B = std::min(config.batch_size, order.size() - start);
      if (B < 2)
        continue; // batch-norm statistics need two rows
      std::span<const std::size_t> rows(order.data() + start, B);
      for (auto &p : params)
        p.tensor.zero_grad();

      RecurrentState state = model.initial_state(B);
      double loss_sum = 0.0, pred_sum = 0.0, elbo_sum = 0.0;
      for (std::size_t t0 = 0; t0 < T; t0 += window) {
        const std::size_t t1 = std::min(T, t0 + window);
        Batch b = make_batch(tr, rows, t0, t1);
        const LossConfig lc = loss_config_for(model.spec(), config, t1 - t0);
        const bool need_particles = particles && lc.beta > 0.0;
        const Tensor mf = model.map_features();
        std::vector<StepOutputs> outs;
        outs.reserve(t1 - t0);
        for (const auto &x : b.inputs)
          outs.push_back(model.step(state, model.encode(x, mf), Mode::Train, noise_rng, need_particles));
        LossTerms terms = combined_loss(outs, b.targets, lc);
        const double lv = terms.total.item();
        if (!std::isfinite(lv)) {
          model.restore(last_good);
          throw TrainingAborted("non-finite loss at epoch " + std::to_string(epoch), result);
        }
        loss_sum += lv;
        pred_sum += terms.pred.defined() ? terms.pred.item() : 0.0;
        elbo_sum += terms.elbo.defined() ? terms.elbo.item() : 0.0;
        backward(terms.total);
        state = state.detached();
      }

      GradientSet grads = collect_gradients(params);
      em.grad_norm += clip_grad_norm(grads, config.clip_norm);
      if (config.l2 > 0.0)
        for (std::size_t i = 0; i < params.size(); ++i) {
          const auto v = params[i].tensor.values();
          for (std::size_t j = 0; j < v.size(); ++j)
            grads[i][j] += config.l2 * v[j];
        }
      try {
        opt.step(params, grads);
      } catch (const NumericError &e) {
        model.restore(last_good);
        throw TrainingAborted(std::string(e.what()) + " at epoch " + std::to_string(epoch), result);
      }
      em.train_loss += loss_sum;
      em.train_pred += pred_sum;
      em.train_elbo += elbo_sum;
      ++batches;
    }
    const double nb = static_cast<double>(std::max<std::size_t>(batches, 1));
    em.train_loss /= nb;
    em.train_pred /= nb;
    em.train_elbo /= nb;
    em.grad_norm /= nb;

    const EvalMetrics vm = evaluate(model, va.count ? va : tr, val_seed);
    em.val_last_step_mse = vm.last_step_mse;
    em.val_mse = vm.mse;
    if (!std::isfinite(vm.last_step_mse)) {
      model.restore(last_good);
      throw TrainingAborted("non-finite validation metric at epoch " + std::to_string(epoch), result);
    }
    last_good = model.snapshot();
    result.history.push_back(em);
    if (vm.last_step_mse < result.best_val) {
      result.best_val = vm.last_step_mse;
      result.best_epoch = epoch;
      best = last_good;
    }
    if (log)
      *log << "epoch " << epoch << " loss " << em.train_loss << " val_last_step_mse " << em.val_last_step_mse
           << " val_mse " << em.val_mse << "\n"
           << std::flush;
  } catch (const DegenerateBelief &e) {
    model.restore(last_good);
    throw TrainingAborted(std::string(e.what()) + " at epoch " + std::to_string(epoch), result);
  }
  model.restore(best);
  return result;
}

RunResult run_one(const RunSpec &run, const Dataset &data, std::ostream *log) {
  RunResult r;
  r.name = run.name;
  r.spec = run.spec;
  r.config = run.config;
  ModelSpec sized = run.spec;
  sized.map_size = data.map.n;
  r.parameters = model_param_count(sized);
  if (log)
    *log << "== run " << run.name << " (" << to_string(run.spec.kind) << ", H=" << run.spec.hidden
         << ", K=" << run.spec.particles << ", " << r.parameters << " params)\n";
  try {
    auto model = build_model(run.spec, data, run.config.seed);
    TrainResult tr = train(*model, data, run.config, log);
    r.history = tr.history;
    r.val_last_step_mse = tr.best_val;
    if (!tr.history.empty()) {
      r.final_loss = tr.history.back().train_loss;
      r.final_pred = tr.history.back().train_pred;
    }
    const EncodedSplit te = encode_split(data.test.empty() ? data.val : data.test, data.map.n);
    const auto s = evaluate_seeds(*model, te, RngStream(run.config.seed).fork(kTestStream).next_u64(),
                                  run.config.eval_seeds);
    r.test_last_step_mse = s.last_step_mse_mean;
    r.test_last_step_mse_std = s.last_step_mse_std;
  } catch (const TrainingAborted &e) {
    r.error = e.what();
    r.history = e.partial().history;
    r.val_last_step_mse = std::numeric_limits<double>::infinity();
  } catch (const std::exception &e) {
    r.error = e.what();
    r.val_last_step_mse = std::numeric_limits<double>::infinity();
  }
  if (log && !r.error.empty())
    *log << "run " << run.name << " failed: " << r.error << "\n";
  return r;
}

std::vector<RunResult> grid_search(const std::vector<ModelSpec> &specs, const std::vector<TrainConfig> &configs,
                                   const Dataset &data, std::ostream *log) {
  std::vector<RunResult> out;
  for (std::size_t i = 0; i < specs.size(); ++i)
    for (std::size_t j = 0; j < configs.size(); ++j) {
      std::ostringstream name;
      name << to_string(specs[i].kind) << "_h" << specs[i].hidden << "_lr" << configs[j].learning_rate << "_b"
           << configs[j].batch_size << "_c" << configs[j].clip_norm << "_l2" << configs[j].l2;
      out.push_back(run_one({name.str(), specs[i], configs[j]}, data, log));
    }
  std::stable_sort(out.begin(), out.end(), [](const RunResult &a, const RunResult &b) {
    if (a.error.empty() != b.error.empty())
      return a.error.empty();
    return a.val_last_step_mse < b.val_last_step_mse;
  });
  return out;
}

std::size_t parity_hidden(const ModelSpec &pf_spec, CellKind baseline) {
  const std::size_t target = cell_param_count(pf_spec);
  ModelSpec b = pf_spec;
  b.kind = baseline;
  std::size_t best = 1;
  std::size_t best_gap = std::numeric_limits<std::size_t>::max();
  for (std::size_t h = 1; h <= 4 * pf_spec.hidden + 64; ++h) {
    b.hidden = h;
    const std::size_t c = cell_param_count(b);
    const std::size_t gap = c > target ? c - target : target - c;
    if (gap < best_gap) {
      best_gap = gap;
      best = h;
    }
  }
  return best;
}

std::vector<RunSpec> ablation_variants(const ModelSpec &base, const TrainConfig &config) {
  std::vector<RunSpec> v;
  for (std::size_t k : {1, 5, 10, 20, 30}) {
    ModelSpec s = base;
    s.particles = k;
    v.push_back({"P" + std::to_string(k), s, config});
  }
  ModelSpec s = base;
  s.resample = false;
  v.push_back({"NoResample", s, config});
  s = base;
  s.bn_relu = false;
  v.push_back({"NoBNReLU", s, config});
  TrainConfig c = config;
  c.beta = 0.0;
  v.push_back({"NoELBO", base, c});
  c = config;
  c.pred_weight = 0.0;
  v.push_back({"ELBOonly", base, c});
  s = base;
  s.kind = base.kind == CellKind::PfGru ? CellKind::GruBnRelu : CellKind::LstmBnRelu;
  s.hidden = parity_hidden(base, s.kind);
  v.push_back({base.kind == CellKind::PfGru ? "GRU-BNReLU" : "LSTM-BNReLU", s, config});
  return v;
}

std::vector<RunResult> ablation_suite(const ModelSpec &base, const TrainConfig &config, const Dataset &data,
                                      std::ostream *log) {
  std::vector<RunResult> out;
  for (const auto &r : ablation_variants(base, config))
    out.push_back(run_one(r, data, log));
  return out;
}

namespace {

std::ofstream open_csv(const std::filesystem::path &file) {
  if (file.has_parent_path())
    std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out)
    throw IoError("cannot open " + file.string() + " for writing");
  out << std::setprecision(17);
  return out;
}

} // namespace

void write_results_csv(const std::filesystem::path &file, const std::vector<RunResult> &results) {
  auto out = open_csv(file);
  out << "run,kind,hidden,particles,alpha,resample,bn_relu,learning_rate,batch_size,clip_norm,l2,beta,pred_weight,"
         "seed,parameters,val_last_step_mse,test_last_step_mse,test_last_step_mse_std,final_loss,final_pred,error\n";
  for (const auto &r : results) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << r.name << ',' << to_string(r.spec.kind) << ',' << r.spec.hidden << ',' << r.spec.particles << ','
        << r.spec.alpha << ',' << r.spec.resample << ',' << r.spec.bn_relu << ',' << r.config.learning_rate << ','
        << r.config.batch_size << ',' << r.config.clip_norm << ',' << r.config.l2 << ',' << r.config.beta << ','
        << r.config.pred_weight << ',' << r.config.seed << ',' << r.parameters << ',' << r.val_last_step_mse << ','
        << r.test_last_step_mse << ',' << r.test_last_step_mse_std << ',' << r.final_loss << ',' << r.final_pred
        << ',' << err << '\n';
  }
  if (!out)
    throw IoError("failed writing " + file.string());
}

void write_metrics_csv(const std::filesystem::path &file, const std::vector<RunResult> &results) {
  auto out = open_csv(file);
  out << "run,epoch,train_loss,train_pred,train_elbo,grad_norm,val_last_step_mse,val_mse\n";
  for (const auto &r : results)
    for (const auto &e : r.history)
      out << r.name << ',' << e.epoch << ',' << e.train_loss << ',' << e.train_pred << ',' << e.train_elbo << ','
          << e.grad_norm << ',' << e.val_last_step_mse << ',' << e.val_mse << '\n';
  if (!out)
    throw IoError("failed writing " + file.string());
}

} // namespace pfrnn
