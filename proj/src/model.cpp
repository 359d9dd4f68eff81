// SPDX-License-Identifier: Apache-2.0
#include <pfrnn/model.hpp>

#include <cmath>

namespace pfrnn {

namespace {

const std::pair<CellKind, const char *> kKindNames[] = {
    {CellKind::PfLstm, "pf_lstm"}, {CellKind::PfGru, "pf_gru"},           {CellKind::Lstm, "lstm"},
    {CellKind::Gru, "gru"},        {CellKind::LstmBnRelu, "lstm_bnrelu"}, {CellKind::GruBnRelu, "gru_bnrelu"},
};

bool uses_bn(const ModelSpec &s) {
  switch (s.kind) {
  case CellKind::PfLstm:
  case CellKind::PfGru:
    return s.bn_relu;
  case CellKind::LstmBnRelu:
  case CellKind::GruBnRelu:
    return true;
  default:
    return false;
  }
}

std::size_t conv_out(std::size_t n) { return n - 4; }

Tensor conv_bias(const Tensor &x, const Tensor &b) {
  // x: C x H x W, b: C
  const std::size_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
  return reshape(add_rowwise(reshape(x, {C, HW}), b), x.shape());
}

} // namespace

std::string to_string(CellKind kind) {
  for (auto [k, n] : kKindNames)
    if (k == kind)
      return n;
  return "?";
}

CellKind parse_cell_kind(const std::string &name) {
  for (auto [k, n] : kKindNames)
    if (name == n)
      return k;
  throw ConfigError("unknown cell kind '" + name + "' (pf_lstm, pf_gru, lstm, gru, lstm_bnrelu, gru_bnrelu)");
}

bool is_particle_cell(CellKind kind) { return kind == CellKind::PfLstm || kind == CellKind::PfGru; }

CellConfig ModelSpec::cell_config() const {
  CellConfig c;
  c.particles = particles;
  c.alpha = alpha;
  c.resample = resample;
  c.bn_relu = bn_relu;
  c.logstd_min = logstd_min;
  c.logstd_max = logstd_max;
  return c;
}

void ModelSpec::validate() const {
  if (hidden == 0 || input_dim == 0 || encoder_width == 0 || output_dim == 0)
    throw ConfigError("model dimensions must be positive");
  if (use_map && (map_size < 6 || map_features == 0 || conv1_channels == 0 || conv2_channels == 0))
    throw ConfigError("map encoder needs a map of size >= 6 and positive widths");
  if (is_particle_cell(kind))
    cell_config().validate();
}

std::size_t cell_param_count(const ModelSpec &s) {
  const std::size_t F = s.feature_dim(), H = s.hidden;
  const bool bn = uses_bn(s);
  switch (s.kind) {
  case CellKind::PfLstm:
    return pf_lstm_param_count(F, H, bn);
  case CellKind::PfGru:
    return pf_gru_param_count(F, H, bn);
  case CellKind::Lstm:
  case CellKind::LstmBnRelu:
    return lstm_param_count(F, H, bn);
  default:
    return gru_param_count(F, H, bn);
  }
}

std::size_t model_param_count(const ModelSpec &s) {
  std::size_t n = (s.input_dim + 1) * s.encoder_width + (s.encoder_width + 1) * s.encoder_width;
  if (s.use_map) {
    const std::size_t side = conv_out(s.map_size);
    n += s.conv1_channels * (2 * 9 + 1) + s.conv2_channels * (s.conv1_channels * 9 + 1);
    n += (s.conv2_channels * side * side + 1) * s.map_features;
  }
  return n + cell_param_count(s) + (s.hidden + 1) * s.output_dim;
}

RecurrentState RecurrentState::detached() const {
  RecurrentState r;
  if (belief.hidden.defined()) {
    r.belief.hidden = belief.hidden.detach();
    if (belief.cell.defined())
      r.belief.cell = belief.cell.detach();
    r.belief.log_weights = belief.log_weights.detach();
  }
  if (lstm.hidden.defined())
    r.lstm = {lstm.hidden.detach(), lstm.cell.detach()};
  if (gru.defined())
    r.gru = gru.detach();
  return r;
}

Model::Model(const ModelSpec &spec, const MazeMap &map, RngStream &rng) : spec_(spec), map_(map) {
  spec_.validate();
  if (spec_.use_map && map_.n != spec_.map_size)
    throw ConfigError("model map size " + std::to_string(spec_.map_size) + " does not match maze size " +
                      std::to_string(map_.n));
  enc1_ = make_linear(spec_.input_dim, spec_.encoder_width, rng);
  enc2_ = make_linear(spec_.encoder_width, spec_.encoder_width, rng);
  if (spec_.use_map) {
    const std::size_t n = map_.n;
    std::vector<double> img(2 * n * n, 0.0);
    for (std::size_t cy = 0; cy < n; ++cy)
      for (std::size_t cx = 0; cx < n; ++cx) {
        img[cy * n + cx] = map_.free(cx, cy) ? 0.0 : 1.0;
        img[n * n + cy * n + cx] = map_.at(cx, cy) == Cell::Black ? 1.0 : 0.0;
      }
    map_input_ = Tensor({2, n, n}, img);
    conv1_w_ = init_params({spec_.conv1_channels, 2, 3, 3}, rng);
    conv1_b_ = Tensor::zeros({spec_.conv1_channels}, true);
    conv2_w_ = init_params({spec_.conv2_channels, spec_.conv1_channels, 3, 3}, rng);
    conv2_b_ = Tensor::zeros({spec_.conv2_channels}, true);
    const std::size_t side = conv_out(n);
    map_fc_ = make_linear(spec_.conv2_channels * side * side, spec_.map_features, rng);
  }
  const std::size_t F = spec_.feature_dim(), H = spec_.hidden;
  const bool bn = uses_bn(spec_);
  switch (spec_.kind) {
  case CellKind::PfLstm:
    pf_lstm_ = make_pf_lstm_params(F, H, bn, rng);
    break;
  case CellKind::PfGru:
    pf_gru_ = make_pf_gru_params(F, H, bn, rng);
    break;
  case CellKind::Lstm:
  case CellKind::LstmBnRelu:
    lstm_ = make_lstm_params(F, H, bn, rng);
    break;
  default:
    gru_ = make_gru_params(F, H, bn, rng);
  }
  head_ = make_linear(H, spec_.output_dim, rng);
  in_mean_ = Tensor::zeros({spec_.input_dim});
  in_inv_std_ = Tensor::full({spec_.input_dim}, 1.0);
  out_mean_ = Tensor::zeros({spec_.output_dim});
  out_std_ = Tensor::full({spec_.output_dim}, 1.0);
}

ParameterList Model::parameters() const {
  ParameterList p;
  enc1_.append_parameters("encoder.fc1", p);
  enc2_.append_parameters("encoder.fc2", p);
  if (spec_.use_map) {
    p.push_back({"map.conv1.weight", conv1_w_});
    p.push_back({"map.conv1.bias", conv1_b_});
    p.push_back({"map.conv2.weight", conv2_w_});
    p.push_back({"map.conv2.bias", conv2_b_});
    map_fc_.append_parameters("map.fc", p);
  }
  if (pf_lstm_)
    pf_lstm_->append_parameters("cell", p);
  if (pf_gru_)
    pf_gru_->append_parameters("cell", p);
  if (lstm_)
    lstm_->append_parameters("cell", p);
  if (gru_)
    gru_->append_parameters("cell", p);
  head_.append_parameters("head", p);
  return p;
}

ParameterList Model::buffers() const {
  ParameterList p;
  if (pf_lstm_)
    pf_lstm_->append_buffers("cell", p);
  if (pf_gru_)
    pf_gru_->append_buffers("cell", p);
  if (lstm_)
    lstm_->append_buffers("cell", p);
  if (gru_)
    gru_->append_buffers("cell", p);
  p.push_back({"norm.input_mean", in_mean_});
  p.push_back({"norm.input_inv_std", in_inv_std_});
  p.push_back({"norm.output_mean", out_mean_});
  p.push_back({"norm.output_std", out_std_});
  return p;
}

void Model::set_input_stats(const std::vector<double> &mean, const std::vector<double> &stddev) {
  if (mean.size() != spec_.input_dim || stddev.size() != spec_.input_dim)
    throw ShapeError("input statistics must have " + std::to_string(spec_.input_dim) + " entries");
  auto m = in_mean_.data();
  auto s = in_inv_std_.data();
  for (std::size_t i = 0; i < mean.size(); ++i) {
    m[i] = mean[i];
    s[i] = stddev[i] > 1e-8 ? 1.0 / stddev[i] : 1.0;
  }
}

void Model::set_output_stats(const std::vector<double> &mean, const std::vector<double> &stddev) {
  if (mean.size() != spec_.output_dim || stddev.size() != spec_.output_dim)
    throw ShapeError("output statistics must have " + std::to_string(spec_.output_dim) + " entries");
  auto m = out_mean_.data();
  auto s = out_std_.data();
  for (std::size_t i = 0; i < mean.size(); ++i) {
    m[i] = mean[i];
    s[i] = stddev[i] > 1e-8 ? stddev[i] : 1.0;
  }
}

RecurrentState Model::initial_state(std::size_t batch) const {
  RecurrentState s;
  const std::size_t H = spec_.hidden;
  switch (spec_.kind) {
  case CellKind::PfLstm:
    s.belief = initial_belief(batch, spec_.particles, H, true);
    break;
  case CellKind::PfGru:
    s.belief = initial_belief(batch, spec_.particles, H, false);
    break;
  case CellKind::Lstm:
  case CellKind::LstmBnRelu:
    s.lstm = {Tensor::zeros({batch, H}), Tensor::zeros({batch, H})};
    break;
  default:
    s.gru = Tensor::zeros({batch, H});
  }
  return s;
}

Tensor Model::map_features() const {
  if (!spec_.use_map)
    return {};
  Tensor a = relu(conv_bias(conv2d(map_input_, conv1_w_), conv1_b_));
  Tensor b = relu(conv_bias(conv2d(a, conv2_w_), conv2_b_));
  return relu(map_fc_.forward(reshape(b, {1, b.size()})));
}

Tensor Model::encode(const Tensor &raw_inputs, const Tensor &map_feat) const {
  Tensor x = mul(sub(raw_inputs, in_mean_), in_inv_std_);
  Tensor e = relu(enc2_.forward(relu(enc1_.forward(x))));
  if (!spec_.use_map)
    return e;
  std::vector<std::size_t> rows(raw_inputs.dim(0), 0);
  return concat({e, gather_rows(map_feat, rows)}, 1);
}

Tensor Model::head(const Tensor &hidden) const { return add(mul(head_.forward(hidden), out_std_), out_mean_); }

StepOutputs Model::step(RecurrentState &state, const Tensor &features, Mode mode, RngStream &rng,
                        bool with_particles) {
  StepOutputs out;
  const std::size_t B = features.dim(0), D = spec_.output_dim;
  if (is_particle_cell(spec_.kind)) {
    const CellConfig cfg = spec_.cell_config();
    StepResult r = pf_lstm_ ? pf_lstm_step(state.belief, features, *pf_lstm_, cfg, rng, mode)
                            : pf_gru_step(state.belief, features, *pf_gru_, cfg, rng, mode);
    state.belief = std::move(r.belief);
    last_ancestors_ = std::move(r.aux.ancestors);
    out.mean_pred = head(mean_particle(state.belief));
    out.log_weights = state.belief.log_weights;
    if (with_particles) {
      const std::size_t K = state.belief.particles(), H = spec_.hidden;
      out.particle_preds = reshape(head(reshape(state.belief.hidden, {B * K, H})), {B, K, D});
    }
    return out;
  }
  const bool bn_relu = spec_.kind == CellKind::LstmBnRelu || spec_.kind == CellKind::GruBnRelu;
  Tensor h;
  if (lstm_) {
    state.lstm = lstm_step(state.lstm, features, *lstm_, bn_relu, mode);
    h = state.lstm.hidden;
  } else {
    state.gru = gru_step(state.gru, features, *gru_, bn_relu, mode);
    h = state.gru;
  }
  out.mean_pred = head(h);
  out.log_weights = Tensor::zeros({B, 1});
  if (with_particles)
    out.particle_preds = reshape(out.mean_pred, {B, 1, D});
  return out;
}

std::vector<StepOutputs> Model::forward(const std::vector<Tensor> &inputs, Mode mode, RngStream &rng,
                                        bool with_particles) {
  if (inputs.empty())
    throw ShapeError("forward needs at least one step");
  RecurrentState state = initial_state(inputs.front().dim(0));
  const Tensor mf = map_features();
  std::vector<StepOutputs> outs;
  outs.reserve(inputs.size());
  for (const auto &x : inputs)
    outs.push_back(step(state, encode(x, mf), mode, rng, with_particles));
  return outs;
}

Model::Snapshot Model::snapshot() const {
  Snapshot s;
  ParameterList all = parameters();
  for (auto &b : buffers())
    all.push_back(b);
  for (const auto &p : all)
    s.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return s;
}

void Model::restore(const Snapshot &snap) {
  std::size_t i = 0;
  ParameterList all = parameters();
  for (auto &b : buffers())
    all.push_back(b);
  if (snap.size() != all.size())
    throw ShapeError("snapshot does not match model structure");
  for (auto &p : all) {
    auto d = p.tensor.data();
    if (d.size() != snap[i].size())
      throw ShapeError("snapshot entry size mismatch for " + p.name);
    std::copy(snap[i].begin(), snap[i].end(), d.begin());
    ++i;
  }
}

} // namespace pfrnn
