// cignn: dataset generation, training, evaluation and verification.
//
// Exit codes: 0 success, 1 verification failure, 2 invalid input,
// 3 numerical abort.

#include "cignn/checkpoint.hpp"
#include "cignn/dataset_store.hpp"
#include "cignn/error.hpp"
#include "cignn/training.hpp"
#include "cignn/verify.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cignn;

namespace {

constexpr int kExitVerifyFailed = 1;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(path.string() + ": cannot open config file");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ValidationError(path.string() + ": cannot write");
  out << text;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<Trajectory> load_split(const Dataset& ds, const std::vector<int>& indices) {
  std::vector<Trajectory> out;
  for (int i : indices) out.push_back(ds.load(static_cast<std::size_t>(i)));
  return out;
}

// ---- datagen -------------------------------------------------------------

struct DatagenArgs {
  std::string out;
  std::string system = "burgers2d";
  std::string preset = "desk";
  std::optional<int> trajectories;
  std::optional<std::string> split;
  std::optional<int> steps;
  std::optional<int> save_every;
  std::optional<int> grid;
  std::optional<std::uint64_t> seed;
  std::optional<double> rt;
};

int cmd_datagen(const DatagenArgs& a) {
  DatagenSpec spec = datagen_preset(system_from_string(a.system), a.preset);
  if (a.split) {
    int tr = 0, va = 0, te = 0;
    char s1 = 0, s2 = 0;
    std::istringstream in(*a.split);
    if (!(in >> tr >> s1 >> va >> s2 >> te) || s1 != '/' || s2 != '/')
      throw ValidationError("--split must look like TRAIN/VAL/TEST, e.g. 5/1/1");
    spec.n_train = tr;
    spec.n_validation = va;
    spec.n_test = te;
  }
  if (a.trajectories) {
    if (a.split) require(*a.trajectories == spec.trajectories(), "--trajectories disagrees with --split");
    else {
      // Keep the preset's validation/test counts, give the rest to training.
      spec.n_train = *a.trajectories - spec.n_validation - spec.n_test;
      require(spec.n_train >= 1, "--trajectories too small for the validation and test splits");
    }
  }
  if (a.steps) spec.steps = *a.steps;
  if (a.save_every) spec.save_every = *a.save_every;
  if (a.grid) spec.grid = *a.grid;
  if (a.seed) spec.seed = *a.seed;
  if (a.rt) spec.grayscott.rt = *a.rt;

  const auto ds = generate_dataset(spec);
  write_dataset(a.out, ds.manifest, ds.graph, ds.trajectories);
  std::cout << "wrote " << ds.trajectories.size() << " trajectories of " << ds.trajectories.front().length()
            << " frames (" << ds.graph.num_nodes() << " nodes) to " << a.out << "\n";
  return 0;
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
  std::optional<std::string> config;
  std::optional<std::string> data;
  std::optional<std::string> out;
  std::optional<std::string> variant;
  bool no_time_block = false;
  bool no_multimesh = false;
  bool no_flux = false;
  bool one_step = false;
  bool global_features = false;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<int> latent;
  std::optional<int> layers;
  std::optional<int> rollout_steps;
  std::optional<int> windows;
  std::optional<int> patience;
  std::vector<std::uint64_t> seeds;
};

struct RunConfig {
  std::string data;
  std::string out;
  ModelConfig model;
  TrainConfig train;
  GraphOptions graph;
  std::vector<std::uint64_t> seeds{0};
};

json run_config_to_json(const RunConfig& r) {
  return {{"data", r.data},
          {"out", r.out},
          {"model", model_config_to_json(r.model)},
          {"train", train_config_to_json(r.train)},
          {"graph", graph_options_to_json(r.graph)},
          {"seeds", r.seeds}};
}

RunConfig resolve_train_config(const TrainArgs& a) {
  RunConfig r;
  if (a.config) {
    const json j = read_json_file(*a.config);
    require(j.is_object(), "config file must hold a JSON object");
    for (const auto& [key, _] : j.items())
      require(key == "data" || key == "out" || key == "model" || key == "train" || key == "graph" || key == "seeds",
              "config: unknown key '" + key + "'");
    try {
      r.data = j.value("data", r.data);
      r.out = j.value("out", r.out);
      if (j.contains("seeds")) r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    } catch (const json::exception& e) {
      throw ValidationError(std::string("config: ") + e.what());
    }
    if (j.contains("model")) r.model = model_config_from_json(j.at("model"));
    if (j.contains("train")) r.train = train_config_from_json(j.at("train"));
    if (j.contains("graph")) r.graph = graph_options_from_json(j.at("graph"));
  }
  if (a.data) r.data = *a.data;
  if (a.out) r.out = *a.out;
  if (a.variant) r.model.variant = variant_from_string(*a.variant);
  if (a.no_flux) {
    require(!a.variant || r.model.variant == Variant::minus, "--no-flux selects the minus variant");
    r.model.variant = Variant::minus;
  }
  if (a.no_time_block) r.model.time_block = false;
  if (a.global_features) r.model.global_features = true;
  if (a.no_multimesh) r.graph.multimesh = false;
  if (a.one_step) r.train.one_step_only = true;
  if (a.epochs) r.train.epochs = *a.epochs;
  if (a.lr) r.train.lr = *a.lr;
  if (a.latent) r.model.latent = *a.latent;
  if (a.layers) r.model.layers = *a.layers;
  if (a.rollout_steps) r.train.rollout_steps = *a.rollout_steps;
  if (a.windows) r.train.windows_per_trajectory = *a.windows;
  if (a.patience) r.train.early_stop_patience = *a.patience;
  if (!a.seeds.empty()) r.seeds = a.seeds;

  require(!r.data.empty(), "train: no dataset given (--data or \"data\" in the config)");
  require(!r.out.empty(), "train: no output directory given (--out or \"out\" in the config)");
  require(!r.seeds.empty(), "train: the seed list is empty");
  r.model.validate();
  r.train.validate();
  return r;
}

int cmd_train(const TrainArgs& a) {
  const RunConfig rc = resolve_train_config(a);
  const Dataset ds = read_dataset(rc.data);
  const auto& man = ds.manifest();
  ModelConfig mc = rc.model;
  mc.state_dim = static_cast<int>(man.channels.size());
  const MeshGraph base = ds.graph();
  mc.space_dim = base.space_dim();

  const auto model_graph = prepare_model_graph(base, rc.graph);
  if (model_graph.warning) std::cerr << "warning: " << *model_graph.warning << "\n";
  const auto train_set = load_split(ds, man.split.train);
  const auto val_set = load_split(ds, man.split.validation);
  const auto test_set = load_split(ds, man.split.test);

  const fs::path out = rc.out;
  fs::create_directories(out / "checkpoints");
  RunConfig resolved = rc;
  resolved.model = mc;
  write_text(out / "config.resolved.json", run_config_to_json(resolved).dump(2) + "\n");

  std::ofstream csv(out / "metrics.csv");
  csv << "seed,epoch,loss,val_rmse,pcc,lr,wall_seconds\n";

  const auto ctx = make_graph_context<float>(model_graph.graph);
  json report;
  report["seeds"] = json::array();
  std::vector<double> selection;
  std::vector<fs::path> ckpt_paths;
  bool aborted = false;
  std::string abort_reason;

  const int eval_horizon = test_set.empty() ? 0 : std::min<int>(rc.train.val_horizon,
                                                                static_cast<int>(test_set.front().length()) - 1);
  for (auto seed : rc.seeds) {
    TrainConfig tc = rc.train;
    tc.seed = seed;
    TrainData data{&model_graph.graph, man.normalization, train_set, val_set};
    auto result = train(mc, tc, data, [&](const EpochRecord& e) {
      csv << seed << ',' << e.epoch << ',' << fmt(e.loss) << ',' << fmt(e.val_rmse) << ',' << fmt(e.pcc) << ','
          << fmt(e.lr) << ',' << fmt(e.wall_seconds) << '\n';
      csv.flush();
      std::cout << "seed " << seed << " epoch " << e.epoch << " loss " << fmt(e.loss) << " val_rmse "
                << fmt(e.val_rmse) << " lr " << fmt(e.lr) << "\n";
    });

    Checkpoint ck;
    ck.config = mc;
    ck.params = result.best.params;
    ck.step = result.optimizer_steps;
    ck.normalization = man.normalization;
    ck.metrics = {{"best_val_rmse", result.best_val_rmse}, {"best_epoch", result.best_epoch}};
    ck.run = {{"graph", graph_options_to_json(rc.graph)}, {"train", train_config_to_json(tc)}};
    json entry = {{"seed", seed},
                  {"best_epoch", result.best_epoch},
                  {"best_val_rmse", result.best_val_rmse},
                  {"optimizer_steps", result.optimizer_steps},
                  {"max_alpha_deviation", result.max_alpha_deviation},
                  {"aborted", result.aborted}};
    if (result.aborted) {
      aborted = true;
      abort_reason = result.abort_reason;
      entry["abort_reason"] = result.abort_reason;
    } else if (!test_set.empty()) {
      const auto m = evaluate_rollouts(result.best, ctx, man.normalization, test_set, eval_horizon, 1);
      entry["test_rmse"] = m.rmse;
      ck.metrics["test_rmse"] = m.rmse;
    }
    const fs::path path = out / "checkpoints" / ("seed-" + std::to_string(seed) + ".ckpt");
    save_checkpoint(path, ck);
    ckpt_paths.push_back(path);
    selection.push_back(result.best_val_rmse);
    report["seeds"].push_back(entry);
    if (aborted) break;
  }

  // The median-by-validation seed becomes the run's model.
  std::vector<std::size_t> order(selection.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto x, auto y) { return selection[x] < selection[y]; });
  const std::size_t pick = order[(order.size() - 1) / 2];
  fs::copy_file(ckpt_paths[pick], out / "checkpoints" / "best.ckpt", fs::copy_options::overwrite_existing);
  report["selected_seed"] = rc.seeds[pick];
  report["median_val_rmse"] = median(selection);
  if (!test_set.empty()) {
    report["test_horizon"] = eval_horizon;
    if (eval_horizon >= 1) report["persistence_test_rmse"] = persistence_baseline(test_set, eval_horizon).rmse;
    std::vector<double> tests;
    for (const auto& e : report["seeds"])
      if (e.contains("test_rmse")) tests.push_back(e["test_rmse"].get<double>());
    if (!tests.empty()) report["median_test_rmse"] = median(tests);
  }
  report["aborted"] = aborted;
  write_text(out / "report.json", report.dump(2) + "\n");
  if (aborted) {
    std::cerr << "error: " << abort_reason << " (best model so far kept in " << (out / "checkpoints").string()
              << ")\n";
    return kExitNumerical;
  }
  return 0;
}

// ---- eval ----------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string split = "test";
  std::optional<int> horizon;
  int starts = 1;
};

int cmd_eval(const EvalArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Dataset ds = read_dataset(a.data);
  const auto& man = ds.manifest();
  require(static_cast<int>(man.channels.size()) == ck.config.state_dim, "eval: dataset channels differ from model");
  const std::vector<int>* indices = a.split == "test"         ? &man.split.test
                                    : a.split == "validation" ? &man.split.validation
                                    : a.split == "train"      ? &man.split.train
                                                              : nullptr;
  require(indices != nullptr, "--split must be train, validation or test");
  require(!indices->empty(), "eval: the " + a.split + " split is empty");
  const auto trajs = load_split(ds, *indices);
  std::size_t shortest = trajs.front().length();
  for (const auto& t : trajs) shortest = std::min(shortest, t.length());
  const int horizon = a.horizon ? *a.horizon : static_cast<int>(shortest) - 1;

  const GraphOptions gopt = graph_options_from_json(ck.run.value("graph", json::object()));
  const auto model_graph = prepare_model_graph(ds.graph(), gopt);
  const auto ctx = make_graph_context<float>(model_graph.graph);
  Model<float> model{ck.config, ck.params};

  const auto m = evaluate_rollouts(model, ctx, ck.normalization, trajs, horizon, a.starts);
  const auto base = persistence_baseline(trajs, horizon, a.starts);

  fs::create_directories(a.out);
  std::ofstream csv(fs::path(a.out) / "metrics.csv");
  csv << "step,rmse,pcc,persistence_rmse,persistence_pcc\n";
  for (int s = 0; s < horizon; ++s)
    csv << s + 1 << ',' << fmt(m.rmse_per_step[s]) << ',' << fmt(m.pcc_per_step[s]) << ','
        << fmt(base.rmse_per_step[s]) << ',' << fmt(base.pcc_per_step[s]) << '\n';
  const json report = {{"split", a.split},
                       {"horizon", horizon},
                       {"windows", m.windows},
                       {"rmse", m.rmse},
                       {"persistence_rmse", base.rmse},
                       {"final_pcc", m.pcc_per_step.back()}};
  write_text(fs::path(a.out) / "report.json", report.dump(2) + "\n");
  std::cout << "rmse " << fmt(m.rmse) << " (persistence " << fmt(base.rmse) << ") over " << horizon << " steps, "
            << m.windows << " windows\n";
  return 0;
}

// ---- verify / gradcheck -------------------------------------------------

int cmd_verify(std::uint64_t seed, bool flip_skew, const std::optional<std::string>& out) {
  FaultInjection fault;
  fault.flip_skew_sign = flip_skew;
  const auto results = verify::run_suite(seed, fault);
  bool ok = true;
  json report = json::array();
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
    ok = ok && r.passed;
    report.push_back({{"name", r.name}, {"passed", r.passed}, {"value", r.value}, {"detail", r.detail}});
  }
  if (out) {
    fs::create_directories(*out);
    write_text(fs::path(*out) / "report.json", report.dump(2) + "\n");
  }
  return ok ? 0 : kExitVerifyFailed;
}

int cmd_gradcheck(std::uint64_t seed, double epsilon) {
  bool ok = true;
  for (const auto& cfg : verify::gradient_check_configs()) {
    const auto rep = verify::gradient_check(cfg, seed, epsilon);
    std::cout << "model " << rep.model << " (eps " << rep.epsilon << ")\n";
    for (const auto& g : rep.groups) {
      if (!g.trainable) {
        std::cout << "  frozen " << g.name << ": gradient 0\n";
        continue;
      }
      const bool pass = g.max_rel_error < 1e-5;
      ok = ok && pass;
      std::cout << "  " << (pass ? "ok   " : "FAIL ") << g.name << ": max rel error " << g.max_rel_error << "\n";
    }
  }
  return ok ? 0 : kExitVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  cignn::tune_allocator();
  CLI::App app{"cignn: conservation-informed graph network for spatiotemporal dynamics"};
  app.require_subcommand(1);

  DatagenArgs dg;
  auto* datagen = app.add_subcommand("datagen", "Generate a synthetic dataset with the reference solvers");
  datagen->add_option("--out", dg.out, "Output dataset directory")->required();
  datagen->add_option("--system", dg.system, "burgers2d or grayscott3d")->check(CLI::IsMember({"burgers2d", "grayscott3d"}));
  datagen->add_option("--preset", dg.preset, "desk or table2")->check(CLI::IsMember({"desk", "table2"}));
  datagen->add_option("--trajectories", dg.trajectories, "Total trajectory count");
  datagen->add_option("--split", dg.split, "TRAIN/VAL/TEST trajectory counts");
  datagen->add_option("--steps", dg.steps, "Solver steps per trajectory");
  datagen->add_option("--save-every", dg.save_every, "Solver steps between stored frames");
  datagen->add_option("--grid", dg.grid, "Nodes per axis");
  datagen->add_option("--seed", dg.seed, "Seed of the first trajectory");
  datagen->add_option("--rt", dg.rt, "Gray-Scott initial noise ratio");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model (one or more seeds)");
  train_cmd->add_option("--config", tr.config, "JSON run config; flags override it");
  train_cmd->add_option("--data", tr.data, "Dataset directory");
  train_cmd->add_option("--out", tr.out, "Output directory");
  train_cmd->add_option("--variant", tr.variant, "full, minus or star")->check(CLI::IsMember({"full", "minus", "star"}));
  train_cmd->add_flag("--no-time-block", tr.no_time_block, "Use the last layer output instead of the time block");
  train_cmd->add_flag("--no-multimesh", tr.no_multimesh, "Single-level graph");
  train_cmd->add_flag("--no-flux", tr.no_flux, "Drop the symmetric flux branch (minus variant)");
  train_cmd->add_flag("--one-step", tr.one_step, "One-step training loss");
  train_cmd->add_flag("--global-features", tr.global_features, "Enable the global feature path");
  train_cmd->add_option("--epochs", tr.epochs);
  train_cmd->add_option("--lr", tr.lr);
  train_cmd->add_option("--latent", tr.latent, "Latent width c");
  train_cmd->add_option("--layers", tr.layers, "Processor layers L");
  train_cmd->add_option("--rollout-steps", tr.rollout_steps, "Training rollout length");
  train_cmd->add_option("--windows", tr.windows, "Windows per trajectory per epoch");
  train_cmd->add_option("--patience", tr.patience, "Early-stopping patience");
  train_cmd->add_option("--seeds", tr.seeds, "Seeds; the median-by-validation run is selected")->delimiter(',');

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint with full rollouts");
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required();
  eval_cmd->add_option("--data", ev.data)->required();
  eval_cmd->add_option("--out", ev.out)->required();
  eval_cmd->add_option("--split", ev.split, "train, validation or test");
  eval_cmd->add_option("--horizon", ev.horizon, "Rollout steps (default: full trajectory)");
  eval_cmd->add_option("--starts", ev.starts, "Evenly spaced rollout starts per trajectory");

  std::uint64_t verify_seed = 0;
  bool flip_skew = false;
  std::optional<std::string> verify_out;
  auto* verify_cmd = app.add_subcommand("verify", "Run the invariant suite");
  verify_cmd->add_option("--seed", verify_seed);
  verify_cmd->add_option("--out", verify_out, "Write report.json here");
  verify_cmd->add_flag("--inject-skew-sign-flip", flip_skew, "Corrupt the asymmetric branch (mutation test)");

  std::uint64_t grad_seed = 0;
  double grad_eps = 1e-5;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient check on tiny models");
  grad_cmd->add_option("--seed", grad_seed);
  grad_cmd->add_option("--epsilon", grad_eps);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*datagen) return cmd_datagen(dg);
    if (*train_cmd) return cmd_train(tr);
    if (*eval_cmd) return cmd_eval(ev);
    if (*verify_cmd) return cmd_verify(verify_seed, flip_skew, verify_out);
    if (*grad_cmd) return cmd_gradcheck(grad_seed, grad_eps);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return 0;
}
