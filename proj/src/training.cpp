#include "cignn/training.hpp"

#include "cignn/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <random>
#include <set>

namespace cignn {

nlohmann::json graph_options_to_json(const GraphOptions& o) {
  return {{"multimesh", o.multimesh},
          {"ratio", o.ratio},
          {"min_nodes", o.min_nodes},
          {"k_neighbors", o.k_neighbors},
          {"seed", o.seed}};
}

GraphOptions graph_options_from_json(const nlohmann::json& j) {
  require(j.is_object(), "graph options must be a JSON object");
  static const std::set<std::string> known = {"multimesh", "ratio", "min_nodes", "k_neighbors", "seed"};
  for (const auto& [key, _] : j.items())
    require(known.count(key) == 1, "graph options: unknown key '" + key + "'");
  GraphOptions o;
  try {
    o.multimesh = j.value("multimesh", o.multimesh);
    o.ratio = j.value("ratio", o.ratio);
    o.min_nodes = j.value("min_nodes", o.min_nodes);
    o.k_neighbors = j.value("k_neighbors", o.k_neighbors);
    o.seed = j.value("seed", o.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("graph options: ") + e.what());
  }
  return o;
}

ModelGraph prepare_model_graph(const MeshGraph& base, const GraphOptions& opt) {
  require(base.ghost_map.empty(), "prepare_model_graph: base graph already has ghost nodes");
  MeshGraph g = base;
  if (opt.multimesh) {
    const int k = opt.k_neighbors > 0 ? opt.k_neighbors : default_k_neighbors(base.space_dim());
    g = build_multimesh(base, opt.ratio, opt.min_nodes, k, opt.seed);
  }
  auto ghosts = add_periodic_ghosts(g, base.domain_extent);
  return {std::move(ghosts.graph), std::move(ghosts.warning)};
}

template <class T>
Matrix<T> extend_to_graph(const GraphContext<T>& ctx, const Matrix<T>& real_state) {
  if (real_state.rows() != static_cast<Eigen::Index>(ctx.num_real))
    throw ValidationError("state has " + std::to_string(real_state.rows()) + " rows, graph has " +
                          std::to_string(ctx.num_real) + " real nodes");
  Matrix<T> out(static_cast<Eigen::Index>(ctx.num_nodes), real_state.cols());
  out.topRows(real_state.rows()) = real_state;
  pad_periodic(ctx, out);
  return out;
}

template <class T>
void apply_bc_padding(const GraphContext<T>& ctx, Matrix<T>& state, BcMode mode, const Matrix<T>* truth) {
  if (mode == BcMode::periodic) {
    pad_periodic(ctx, state);
    return;
  }
  require(truth != nullptr, "apply_bc_padding: Dirichlet padding needs the truth frame");
  require(truth->rows() == state.rows() && truth->cols() == state.cols(),
          "apply_bc_padding: truth frame shape differs from state");
  for (auto i : ctx.dirichlet_nodes) state.row(i) = truth->row(i);
}

template <class T>
void pad_state(const GraphContext<T>& ctx, Matrix<T>& state, const Matrix<T>* truth) {
  // Dirichlet first so ghosts of boundary nodes copy the imposed value.
  if (!ctx.dirichlet_nodes.empty()) apply_bc_padding(ctx, state, BcMode::dirichlet, truth);
  if (!ctx.ghosts.empty()) apply_bc_padding(ctx, state, BcMode::periodic, truth);
}

namespace {

// Transpose of pad_state applied to a gradient w.r.t. the padded state.
template <class T>
void pad_state_backward(const GraphContext<T>& ctx, Matrix<T>& grad) {
  for (const auto& link : ctx.ghosts) {
    grad.row(link.source) += grad.row(link.ghost);
    grad.row(link.ghost).setZero();
  }
  for (auto i : ctx.dirichlet_nodes) grad.row(i).setZero();
}

}  // namespace

template <class T>
double rollout_loss(const Model<T>& model, const GraphContext<T>& ctx, std::span<const Matrix<T>> window,
                    ModelParams<T>* grad) {
  require(window.size() >= 2, "rollout_loss: window needs at least two frames");
  const int steps = static_cast<int>(window.size()) - 1;
  const auto nr = static_cast<Eigen::Index>(ctx.num_real);
  const double scale = 1.0 / (static_cast<double>(model.config.state_dim) * static_cast<double>(nr) * steps);

  const auto enc = encode_edges(model, ctx, grad != nullptr);
  std::vector<StepTape<T>> tapes(grad ? steps : 0);
  std::vector<Matrix<T>> residuals;
  Matrix<T> u = window[0];
  double loss = 0.0;
  for (int s = 1; s <= steps; ++s) {
    Matrix<T> pred = forward_step(model, ctx, enc.e0, u, grad ? &tapes[s - 1] : nullptr);
    pad_state(ctx, pred, &window[s]);
    Matrix<T> diff = pred.topRows(nr) - window[s].topRows(nr);
    loss += diff.template cast<double>().squaredNorm();
    if (grad) residuals.push_back(std::move(diff));
    u = std::move(pred);
  }
  loss *= scale;
  if (!grad) return loss;

  Matrix<T> d_e0;
  Matrix<T> d_next;
  for (int s = steps; s >= 1; --s) {
    Matrix<T> du = Matrix<T>::Zero(u.rows(), u.cols());
    du.topRows(nr) = static_cast<T>(2.0 * scale) * residuals[s - 1];
    if (s < steps) du += d_next;
    pad_state_backward(ctx, du);
    d_next = backward_step(model, ctx, tapes[s - 1], du, *grad, d_e0);
  }
  backward_edges(model, enc, d_e0, *grad);
  return loss;
}

template <class T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::int64_t t,
                 double lr, const AdamHyper& h) {
  require(param.size() == grad.size() && m.size() == param.size() && v.size() == param.size(),
          "adam_update: size mismatch");
  require(t >= 1, "adam_update: step count starts at 1");
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double mi = h.beta1 * m[i] + (1.0 - h.beta1) * g;
    const double vi = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    param[i] = static_cast<T>(param[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + h.eps));
  }
}

template <class T>
AdamState<T> make_adam_state(const Model<T>& model) {
  AdamState<T> s;
  s.m = zeros_like(model.params);
  s.v = zeros_like(model.params);
  return s;
}

template <class T>
void adam_step(Model<T>& model, const ModelParams<T>& grad, AdamState<T>& state, double lr) {
  std::vector<Matrix<T>*> p, m, v;
  std::vector<const Matrix<T>*> g;
  std::vector<bool> trainable;
  model.params.visit([&](const std::string& name, Matrix<T>& x) {
    p.push_back(&x);
    trainable.push_back(model.trainable(name));
  });
  grad.visit([&](const std::string&, const Matrix<T>& x) { g.push_back(&x); });
  state.m.visit([&](const std::string&, Matrix<T>& x) { m.push_back(&x); });
  state.v.visit([&](const std::string&, Matrix<T>& x) { v.push_back(&x); });
  require(g.size() == p.size() && m.size() == p.size() && v.size() == p.size(), "adam_step: layout mismatch");
  ++state.t;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (!trainable[k]) continue;
    const auto n = static_cast<std::size_t>(p[k]->size());
    require(static_cast<std::size_t>(g[k]->size()) == n, "adam_step: gradient shape mismatch");
    adam_update<T>({p[k]->data(), n}, {g[k]->data(), n}, {m[k]->data(), n}, {v[k]->data(), n}, state.t, lr,
                   state.hyper);
  }
}

PlateauScheduler::PlateauScheduler(double lr, double factor, int patience)
    : lr_(lr), factor_(factor), patience_(patience), best_(std::numeric_limits<double>::infinity()) {
  require(factor > 0.0 && factor < 1.0, "plateau scheduler: factor must lie in (0, 1)");
  require(patience >= 1, "plateau scheduler: patience must be >= 1");
}

double PlateauScheduler::step(double metric) {
  if (!started_ || metric < best_) {
    started_ = true;
    best_ = metric;
    bad_ = 0;
    return lr_;
  }
  if (++bad_ >= patience_) {
    lr_ *= factor_;
    bad_ = 0;
  }
  return lr_;
}

double plateau_scheduler(std::span<const double> history, double lr, double factor, int patience) {
  PlateauScheduler s(lr, factor, patience);
  for (double h : history) s.step(h);
  return s.lr();
}

bool early_stop(std::span<const double> history, int patience) {
  require(patience >= 1, "early_stop: patience must be >= 1");
  if (history.empty()) return false;
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i)
    if (history[i] < history[best]) best = i;
  return history.size() - 1 - best >= static_cast<std::size_t>(patience);
}

double rmse(std::span<const double> truth, std::span<const double> pred) {
  require(truth.size() == pred.size(), "rmse: shape mismatch");
  require(!truth.empty(), "rmse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(s / static_cast<double>(truth.size()));
}

double pcc(std::span<const double> truth, std::span<const double> pred) {
  require(truth.size() == pred.size(), "pcc: shape mismatch");
  require(truth.size() >= 2, "pcc: need at least two values");
  const auto n = static_cast<double>(truth.size());
  double mt = 0.0, mp = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    mt += truth[i];
    mp += pred[i];
  }
  mt /= n;
  mp /= n;
  double stt = 0.0, spp = 0.0, stp = 0.0, scale_t = 0.0, scale_p = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double a = truth[i] - mt;
    const double b = pred[i] - mp;
    stt += a * a;
    spp += b * b;
    stp += a * b;
    scale_t = std::max(scale_t, std::abs(truth[i]));
    scale_p = std::max(scale_p, std::abs(pred[i]));
  }
  // Variance below rounding level of the data counts as zero.
  const double tiny = 1e-28 * n;
  if (stt <= tiny * scale_t * scale_t || stt == 0.0) throw ValidationError("pcc: truth has zero variance");
  if (spp <= tiny * scale_p * scale_p || spp == 0.0) throw ValidationError("pcc: prediction has zero variance");
  return stp / std::sqrt(stt * spp);
}

std::vector<int> rollout_starts(std::size_t length, int horizon, int count) {
  require(horizon >= 1, "rollout: horizon must be >= 1");
  require(length > static_cast<std::size_t>(horizon),
          "rollout: trajectory of " + std::to_string(length) + " frames is too short for horizon " +
              std::to_string(horizon));
  const int last = static_cast<int>(length) - 1 - horizon;
  if (count <= 1 || last == 0) return {0};
  std::vector<int> out;
  for (int i = 0; i < count; ++i) {
    const int s = static_cast<int>(static_cast<long long>(i) * last / (count - 1));
    if (out.empty() || out.back() != s) out.push_back(s);
  }
  return out;
}

namespace {

struct MetricAccumulator {
  std::vector<std::vector<double>> truth, pred;
  explicit MetricAccumulator(int horizon) : truth(horizon), pred(horizon) {}

  void add(int step, const MatrixD& t, const MatrixD& p) {
    truth[step].insert(truth[step].end(), t.data(), t.data() + t.size());
    pred[step].insert(pred[step].end(), p.data(), p.data() + p.size());
  }

  RolloutMetrics finish(int windows) const {
    RolloutMetrics r;
    r.windows = windows;
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t s = 0; s < truth.size(); ++s) {
      const double e = rmse(truth[s], pred[s]);
      r.rmse_per_step.push_back(e);
      // pcc itself rejects degenerate inputs; an aggregate report records
      // such a step as undefined instead of failing the whole evaluation.
      double c = std::numeric_limits<double>::quiet_NaN();
      try {
        c = pcc(truth[s], pred[s]);
      } catch (const ValidationError&) {
      }
      r.pcc_per_step.push_back(c);
      total += e * e * static_cast<double>(truth[s].size());
      count += truth[s].size();
    }
    r.rmse = std::sqrt(total / static_cast<double>(count));
    return r;
  }
};

}  // namespace

RolloutMetrics persistence_baseline(std::span<const Trajectory> trajs, int horizon, int starts_per_trajectory) {
  require(!trajs.empty(), "persistence baseline: no trajectories");
  MetricAccumulator acc(horizon);
  int windows = 0;
  for (const auto& t : trajs) {
    for (int start : rollout_starts(t.length(), horizon, starts_per_trajectory)) {
      for (int s = 1; s <= horizon; ++s) acc.add(s - 1, t.frames[start + s], t.frames[start]);
      ++windows;
    }
  }
  return acc.finish(windows);
}

RolloutMetrics evaluate_rollouts(const Model<float>& model, const GraphContext<float>& ctx, const Normalization& norm,
                                 std::span<const Trajectory> trajs, int horizon, int starts_per_trajectory) {
  require(!trajs.empty(), "evaluate: no trajectories");
  const auto nr = static_cast<Eigen::Index>(ctx.num_real);
  auto to_model = [&](const MatrixD& raw) { return extend_to_graph<float>(ctx, normalize(raw, norm).cast<float>()); };
  MetricAccumulator acc(horizon);
  int windows = 0;
  for (const auto& t : trajs) {
    for (int start : rollout_starts(t.length(), horizon, starts_per_trajectory)) {
      std::function<void(int, MatrixF&)> pad = [&](int s, MatrixF& state) {
        if (ctx.dirichlet_nodes.empty()) {
          pad_state<float>(ctx, state, nullptr);
          return;
        }
        const MatrixF truth = to_model(t.frames[start + s + 1]);
        pad_state(ctx, state, &truth);
      };
      const auto preds = rollout(model, ctx, to_model(t.frames[start]), horizon, pad);
      for (int s = 0; s < horizon; ++s)
        acc.add(s, t.frames[start + s + 1], denormalize(preds[s].topRows(nr).cast<double>(), norm));
      ++windows;
    }
  }
  return acc.finish(windows);
}

void TrainConfig::validate() const {
  require(epochs >= 1, "train: epochs must be >= 1");
  require(early_stop_patience >= 1, "train: early-stop patience must be >= 1");
  require(lr > 0.0, "train: learning rate must be positive");
  require(plateau_factor > 0.0 && plateau_factor < 1.0, "train: plateau factor must lie in (0, 1)");
  require(plateau_patience >= 1, "train: plateau patience must be >= 1");
  require(rollout_steps >= 1, "train: rollout steps must be >= 1");
  require(noise_sigma_rel >= 0.0, "train: noise level must be >= 0");
  require(windows_per_trajectory >= 1, "train: windows per trajectory must be >= 1");
  require(val_horizon >= 1 && val_starts >= 1, "train: validation horizon and starts must be >= 1");
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"early_stop_patience", c.early_stop_patience},
          {"lr", c.lr},
          {"plateau_factor", c.plateau_factor},
          {"plateau_patience", c.plateau_patience},
          {"rollout_steps", c.rollout_steps},
          {"noise_sigma_rel", c.noise_sigma_rel},
          {"seed", c.seed},
          {"one_step_only", c.one_step_only},
          {"windows_per_trajectory", c.windows_per_trajectory},
          {"val_horizon", c.val_horizon},
          {"val_starts", c.val_starts}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  require(j.is_object(), "train config must be a JSON object");
  const auto defaults = train_config_to_json(TrainConfig{});
  for (const auto& [key, _] : j.items())
    require(defaults.contains(key), "train config: unknown key '" + key + "'");
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.lr = j.value("lr", c.lr);
    c.plateau_factor = j.value("plateau_factor", c.plateau_factor);
    c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
    c.rollout_steps = j.value("rollout_steps", c.rollout_steps);
    c.noise_sigma_rel = j.value("noise_sigma_rel", c.noise_sigma_rel);
    c.seed = j.value("seed", c.seed);
    c.one_step_only = j.value("one_step_only", c.one_step_only);
    c.windows_per_trajectory = j.value("windows_per_trajectory", c.windows_per_trajectory);
    c.val_horizon = j.value("val_horizon", c.val_horizon);
    c.val_starts = j.value("val_starts", c.val_starts);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

TrainResult train(const ModelConfig& model_config, const TrainConfig& config, const TrainData& data,
                  const EpochCallback& on_epoch) {
  model_config.validate();
  config.validate();
  require(data.model_graph != nullptr, "train: model graph missing");
  require(!data.train.empty(), "train: no training trajectories");
  const auto d = static_cast<std::size_t>(model_config.state_dim);
  require(data.normalization.mean.size() == d && data.normalization.std.size() == d,
          "train: normalization width differs from state_dim");
  require(data.model_graph->space_dim() == model_config.space_dim, "train: graph dimension differs from space_dim");

  const auto ctx = make_graph_context<float>(*data.model_graph);
  const int steps = config.one_step_only ? 1 : config.rollout_steps;

  std::vector<std::vector<MatrixF>> frames;
  for (const auto& t : data.train) {
    require(t.channels() == d, "train: trajectory channel count differs from state_dim");
    require(t.length() >= static_cast<std::size_t>(steps) + 1, "train: trajectory shorter than the rollout window");
    std::vector<MatrixF> f;
    f.reserve(t.length());
    for (const auto& raw : t.frames)
      f.push_back(extend_to_graph<float>(ctx, normalize(raw, data.normalization).cast<float>()));
    frames.push_back(std::move(f));
  }
  int val_horizon = config.val_horizon;
  for (const auto& t : data.validation)
    val_horizon = std::min(val_horizon, static_cast<int>(t.length()) - 1);
  require(data.validation.empty() || val_horizon >= 1, "train: validation trajectories need at least two frames");

  TrainResult result;
  Model<float> model = build_variant<float>(model_config, config.seed);
  auto adam = make_adam_state(model);
  auto grad = zeros_like(model.params);
  PlateauScheduler scheduler(config.lr, config.plateau_factor, config.plateau_patience);
  std::mt19937_64 rng(config.seed ^ 0x5bd1e9955bd1e995ULL);
  std::normal_distribution<double> noise(0.0, 1.0);
  // Normalized channels have unit std, so the relative noise level is the
  // absolute noise std in model units.
  const double sigma = config.noise_sigma_rel;

  result.best = model;
  result.best_val_rmse = std::numeric_limits<double>::infinity();
  std::vector<double> metric_history;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<MatrixF> window(steps + 1);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::pair<std::size_t, int>> draws;
    for (std::size_t k = 0; k < frames.size(); ++k) {
      std::uniform_int_distribution<int> pick(0, static_cast<int>(frames[k].size()) - steps - 1);
      for (int w = 0; w < config.windows_per_trajectory; ++w) draws.emplace_back(k, pick(rng));
    }
    std::shuffle(draws.begin(), draws.end(), rng);

    const double lr = scheduler.lr();
    double loss_sum = 0.0;
    for (const auto& [k, start] : draws) {
      for (int s = 0; s <= steps; ++s) window[s] = frames[k][start + s];
      if (sigma > 0.0) {
        auto head = window[0].topRows(static_cast<Eigen::Index>(ctx.num_real));
        for (Eigen::Index i = 0; i < head.size(); ++i) head.data()[i] += static_cast<float>(sigma * noise(rng));
        pad_state(ctx, window[0], &frames[k][start]);
      }
      grad.visit([](const std::string&, MatrixF& m) { m.setZero(); });
      const double loss = rollout_loss<float>(model, ctx, window, &grad);
      if (!std::isfinite(loss)) {
        result.aborted = true;
        result.abort_reason = "non-finite training loss at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(result.optimizer_steps + 1);
        return result;
      }
      loss_sum += loss;
      adam_step(model, grad, adam, lr);
      ++result.optimizer_steps;
      const Eigen::MatrixXd a = normalized_alpha<double>(model.params.alpha.cast<double>());
      const double dev = std::abs(a.sum() - 1.0);
      result.max_alpha_deviation = std::max(result.max_alpha_deviation, dev);
      if (dev > 1e-12)
        throw NumericalError("time block weights no longer sum to 1 after step " +
                             std::to_string(result.optimizer_steps));
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(draws.size());
    rec.lr = lr;
    double metric = rec.loss;
    if (!data.validation.empty()) {
      try {
        const auto m = evaluate_rollouts(model, ctx, data.normalization, data.validation, val_horizon,
                                         config.val_starts);
        rec.val_rmse = m.rmse;
        double p = 0.0;
        for (double v : m.pcc_per_step) p += v;
        rec.pcc = p / static_cast<double>(m.pcc_per_step.size());
      } catch (const NumericalError& e) {
        result.aborted = true;
        result.abort_reason = std::string("validation rollout diverged at epoch ") + std::to_string(epoch) + ": " +
                              e.what();
        return result;
      }
      metric = rec.val_rmse;
    } else {
      rec.val_rmse = std::numeric_limits<double>::quiet_NaN();
      rec.pcc = std::numeric_limits<double>::quiet_NaN();
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (metric < result.best_val_rmse) {
      result.best_val_rmse = metric;
      result.best_epoch = epoch;
      result.best = model;
    }
    scheduler.step(metric);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    metric_history.push_back(metric);
    if (early_stop(metric_history, config.early_stop_patience)) break;
  }
  return result;
}

#define CIGNN_INSTANTIATE_TRAINING(T)                                                                          \
  template Matrix<T> extend_to_graph<T>(const GraphContext<T>&, const Matrix<T>&);                             \
  template void apply_bc_padding<T>(const GraphContext<T>&, Matrix<T>&, BcMode, const Matrix<T>*);             \
  template void pad_state<T>(const GraphContext<T>&, Matrix<T>&, const Matrix<T>*);                            \
  template double rollout_loss<T>(const Model<T>&, const GraphContext<T>&, std::span<const Matrix<T>>,          \
                                  ModelParams<T>*);                                                            \
  template void adam_update<T>(std::span<T>, std::span<const T>, std::span<T>, std::span<T>, std::int64_t,     \
                               double, const AdamHyper&);                                                      \
  template AdamState<T> make_adam_state<T>(const Model<T>&);                                                   \
  template void adam_step<T>(Model<T>&, const ModelParams<T>&, AdamState<T>&, double);

CIGNN_INSTANTIATE_TRAINING(float)
CIGNN_INSTANTIATE_TRAINING(double)

}  // namespace cignn
