#pragma once

#include "cignn/dataset_store.hpp"
#include "cignn/mesh_graph.hpp"
#include "cignn/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cignn {

// ---- model graph -----------------------------------------------------------

struct GraphOptions {
  bool multimesh = true;
  double ratio = 0.1;
  int min_nodes = 10;
  int k_neighbors = 0;  // 0 selects default_k_neighbors(space_dim)
  std::uint64_t seed = 0;

  friend bool operator==(const GraphOptions&, const GraphOptions&) = default;
};

nlohmann::json graph_options_to_json(const GraphOptions& opt);
GraphOptions graph_options_from_json(const nlohmann::json& j);

struct ModelGraph {
  MeshGraph graph;
  std::optional<std::string> warning;
};

/// Multimesh over the dataset lattice (optional), then the periodic ghost halo.
ModelGraph prepare_model_graph(const MeshGraph& base, const GraphOptions& opt);

/// Appends ghost rows (copied from their sources) to an N_real x d state.
template <class T>
Matrix<T> extend_to_graph(const GraphContext<T>& ctx, const Matrix<T>& real_state);

// ---- boundary padding --------------------------------------------------------

enum class BcMode { periodic, dirichlet };

/// periodic: ghost rows <- source rows. dirichlet: dirichlet_boundary rows <-
/// rows of `truth` (required).
template <class T>
void apply_bc_padding(const GraphContext<T>& ctx, Matrix<T>& state, BcMode mode, const Matrix<T>* truth);

/// Every padding the graph calls for: periodic when it has ghosts, Dirichlet
/// when it has Dirichlet nodes.
template <class T>
void pad_state(const GraphContext<T>& ctx, Matrix<T>& state, const Matrix<T>* truth);

// ---- loss ----------------------------------------------------------------------

/// Mean squared error over the rollout, real nodes only:
/// sum_s sum_{i real} |u_s(i) - window[s](i)|^2 / (d * N_real * steps).
/// `window` holds steps+1 full-graph states in normalized units; window[0] is
/// the (possibly noisy) input. Adds parameter gradients into `grad` when given.
template <class T>
double rollout_loss(const Model<T>& model, const GraphContext<T>& ctx, std::span<const Matrix<T>> window,
                    ModelParams<T>* grad = nullptr);

// ---- optimization ------------------------------------------------------------

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of a flat tensor; `t` is the 1-based step.
template <class T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v, std::int64_t t,
                 double lr, const AdamHyper& hyper = {});

template <class T>
struct AdamState {
  ModelParams<T> m;
  ModelParams<T> v;
  std::int64_t t = 0;
  AdamHyper hyper;
};

template <class T>
AdamState<T> make_adam_state(const Model<T>& model);

/// Updates every trainable tensor of `model`; frozen tensors are untouched.
template <class T>
void adam_step(Model<T>& model, const ModelParams<T>& grad, AdamState<T>& state, double lr);

/// Reduce-on-plateau: an evaluation that is not strictly better than the best
/// so far counts as bad; after `patience` bad evaluations lr *= factor and the
/// count restarts.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, int patience);
  double step(double metric);
  double lr() const { return lr_; }

 private:
  double lr_;
  double factor_;
  int patience_;
  double best_;
  int bad_ = 0;
  bool started_ = false;
};

/// lr after replaying `history` through a PlateauScheduler.
double plateau_scheduler(std::span<const double> history, double lr, double factor, int patience);

/// True once `patience` evaluations have passed since the best one.
bool early_stop(std::span<const double> history, int patience);

// ---- metrics -------------------------------------------------------------------

double rmse(std::span<const double> truth, std::span<const double> pred);
/// Throws ValidationError when either argument has zero variance.
double pcc(std::span<const double> truth, std::span<const double> pred);

struct RolloutMetrics {
  double rmse = 0.0;                 // over every window, step, node and channel
  std::vector<double> rmse_per_step;  // step s = 1..horizon
  std::vector<double> pcc_per_step;   // NaN where pcc is undefined (zero variance)
  int windows = 0;
};

/// Start indices 0 and evenly spaced up to length-1-horizon, `count` of them.
std::vector<int> rollout_starts(std::size_t length, int horizon, int count);

/// Predicts u(t_{k+i}) = u(t_k) for i = 1..horizon from every start.
RolloutMetrics persistence_baseline(std::span<const Trajectory> trajs, int horizon, int starts_per_trajectory = 1);

/// Rollout of a trained model on raw-unit trajectories (real nodes only).
RolloutMetrics evaluate_rollouts(const Model<float>& model, const GraphContext<float>& ctx, const Normalization& norm,
                                 std::span<const Trajectory> trajs, int horizon, int starts_per_trajectory = 1);

// ---- training loop -------------------------------------------------------------

struct TrainConfig {
  int epochs = 1000;
  int early_stop_patience = 100;
  double lr = 1e-3;
  double plateau_factor = 0.8;
  int plateau_patience = 10;
  int rollout_steps = 4;  // T~
  double noise_sigma_rel = 0.02;
  std::uint64_t seed = 0;
  bool one_step_only = false;
  int windows_per_trajectory = 5;
  int val_horizon = 10;
  int val_starts = 4;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double val_rmse = 0.0;
  double pcc = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  Model<float> best;
  double best_val_rmse = 0.0;
  int best_epoch = 0;
  std::vector<EpochRecord> history;
  std::int64_t optimizer_steps = 0;
  double max_alpha_deviation = 0.0;  // max |sum(alpha_norm) - 1| over all steps
  bool aborted = false;
  std::string abort_reason;
};

struct TrainData {
  const MeshGraph* model_graph = nullptr;
  Normalization normalization;
  std::span<const Trajectory> train;
  std::span<const Trajectory> validation;  // empty: training loss drives selection
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Keeps freed buffers in the process heap. Training allocates many large
/// short-lived temporaries; without this each costs an mmap/munmap pair.
/// Call once at program start.
void tune_allocator();

/// Full-graph training with Adam, plateau decay and early stopping. Keeps the
/// model with the best validation RMSE. A non-finite loss stops training with
/// `aborted` set and the best model so far retained.
TrainResult train(const ModelConfig& model_config, const TrainConfig& config, const TrainData& data,
                  const EpochCallback& on_epoch = nullptr);

}  // namespace cignn
