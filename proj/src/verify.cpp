#include "cignn/verify.hpp"

#include "cignn/error.hpp"
#include "cignn/graph_calculus.hpp"
#include "cignn/reference_solvers.hpp"
#include "cignn/training.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace cignn::verify {

MeshGraph random_graph(int num_nodes, int space_dim, double edge_probability, std::mt19937_64& rng) {
  require(num_nodes >= 2, "random_graph: need at least two nodes");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> type(0, 2);
  MeshGraph g;
  g.positions.resize(num_nodes, space_dim);
  for (Eigen::Index i = 0; i < g.positions.size(); ++i) g.positions.data()[i] = unit(rng);
  for (int i = 0; i < num_nodes; ++i) g.node_type.push_back(static_cast<NodeType>(type(rng)));
  auto link = [&g](std::uint32_t a, std::uint32_t b) {
    g.edges.push_back({a, b});
    g.edges.push_back({b, a});
  };
  link(0, 1);
  for (int i = 0; i < num_nodes; ++i)
    for (int j = i + 1; j < num_nodes; ++j)
      if ((i != 0 || j != 1) && unit(rng) < edge_probability)
        link(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
  g.edge_level.assign(g.edges.size(), 0);
  g.node_max_level.assign(num_nodes, 0);
  g.domain_extent.assign(space_dim, 1.0);
  return g;
}

template <class T>
std::vector<LayerConservation> conservation_sums(const Model<T>& model, const MeshGraph& graph, const Matrix<T>& u,
                                                 const FaultInjection& fault) {
  const auto ctx = make_graph_context<T>(graph);
  const auto enc = encode_edges(model, ctx, false);
  StepTape<T> tape;
  forward_step(model, ctx, enc.e0, u, &tape, fault);
  std::vector<LayerConservation> out;
  for (std::size_t l = 0; l < tape.layers.size(); ++l) {
    const Eigen::MatrixXd skew = tape.layers[l].skew.template cast<double>();
    LayerConservation c;
    c.layer = static_cast<int>(l);
    c.abs_sum = skew.colwise().sum().cwiseAbs().maxCoeff();
    c.reference = skew.cwiseAbs().colwise().sum().maxCoeff();
    out.push_back(c);
  }
  return out;
}

namespace {

std::string format_value(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

template <class T>
double worst_conservation(Variant variant, int instances, std::uint64_t seed, const FaultInjection& fault) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> nodes(2, 64);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  for (int k = 0; k < instances; ++k) {
    const int n = nodes(rng);
    const int m = k % 2 == 0 ? 2 : 3;
    const MeshGraph g = random_graph(n, m, std::min(1.0, 5.0 / n), rng);
    ModelConfig cfg;
    cfg.state_dim = 2;
    cfg.space_dim = m;
    cfg.latent = 8;
    cfg.layers = 3;
    cfg.variant = variant;
    auto model = build_variant<T>(cfg, rng());
    // Random gains so zero-initialized branches take part.
    model.params.visit([&](const std::string& name, Matrix<T>& p) {
      if (name.ends_with(".norm.gain"))
        for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = static_cast<T>(normal(rng));
    });
    Matrix<T> u(n, cfg.state_dim);
    for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = static_cast<T>(normal(rng));
    for (const auto& layer : conservation_sums(model, g, u, fault)) worst = std::max(worst, layer.relative());
  }
  return worst;
}

}  // namespace

CheckResult check_conservation(Variant variant, int instances, std::uint64_t seed, const FaultInjection& fault) {
  const double w64 = worst_conservation<double>(variant, instances, seed, fault);
  const double w32 = worst_conservation<float>(variant, instances, seed + 1, fault);
  CheckResult r;
  r.name = "conservation[" + to_string(variant) + "]";
  r.value = w64;
  r.threshold = 1e-12;
  r.passed = w64 <= 1e-12 && w32 <= 1e-6;
  r.detail = "max relative global skew sum: float64 " + format_value(w64) + " (tol 1e-12), float32 " +
             format_value(w32) + " (tol 1e-6) over " + std::to_string(instances) + " graphs";
  return r;
}

CheckResult check_adjointness(int instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> nodes(2, 64);
  std::uniform_real_distribution<double> weight(0.0, 2.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  for (int k = 0; k < instances; ++k) {
    const int n = nodes(rng);
    const MeshGraph g = random_graph(n, 2, std::min(1.0, 5.0 / n), rng);
    const int d = 1 + k % 3;
    calculus::NodeField f(n, d);
    calculus::EdgeField F(static_cast<Eigen::Index>(g.num_edges()), d);
    calculus::EdgeWeights w(static_cast<Eigen::Index>(g.num_edges()));
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = normal(rng);
    for (Eigen::Index i = 0; i < F.size(); ++i) F.data()[i] = normal(rng);
    for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = weight(rng);
    const auto gf = calculus::weighted_gradient(f, g, w);
    const double scale = std::sqrt(calculus::inner_edges(gf, gf) * calculus::inner_edges(F, F));
    const double res = calculus::adjointness_residual(f, F, g, w);
    worst = std::max(worst, scale > 0.0 ? res / scale : res);
  }
  return {"adjointness", worst <= 1e-12, worst, 1e-12,
          "max relative residual " + format_value(worst) + " over " + std::to_string(instances) + " instances"};
}

double GradientReport::worst() const {
  double w = 0.0;
  for (const auto& g : groups)
    if (g.trainable) w = std::max(w, g.max_rel_error);
  return w;
}

std::vector<ModelConfig> gradient_check_configs() {
  ModelConfig base;
  base.latent = 8;
  base.layers = 2;
  base.mlp_hidden_layers = 2;
  ModelConfig full = base;
  ModelConfig star = base;
  star.variant = Variant::star;
  star.global_features = true;
  ModelConfig plain = base;
  plain.variant = Variant::minus;
  plain.time_block = false;
  return {full, star, plain};
}

GradientReport gradient_check(const ModelConfig& config, std::uint64_t seed, double epsilon) {
  require(config.space_dim == 2, "gradient_check: the tiny instance is two-dimensional");
  require(epsilon > 0.0, "gradient_check: epsilon must be positive");
  const MeshGraph grid = build_grid_graph({3, 4}, {1.0 / 3.0, 0.25}, {true, true});
  const MeshGraph graph = build_multimesh(grid, 0.5, 3, 2, seed);
  const auto ctx = make_graph_context<double>(graph);

  std::mt19937_64 rng(seed);
  auto model = build_variant<double>(config, rng());
  // Move the unit-initialized scalars off 1 so their gradients are generic.
  std::uniform_real_distribution<double> jitter(0.6, 1.4);
  model.params.visit([&](const std::string& name, MatrixD& m) {
    const bool unit_init = name.ends_with(".gate") || name.ends_with(".norm.gain") || name == "time.beta" ||
                           name == "time.alpha";
    if (unit_init)
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = jitter(rng);
  });
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<MatrixD> window(3, MatrixD(ctx.num_nodes, config.state_dim));
  for (auto& f : window)
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = normal(rng);

  auto grad = zeros_like(model.params);
  rollout_loss<double>(model, ctx, window, &grad);

  std::vector<const MatrixD*> analytic;
  grad.visit([&](const std::string&, const MatrixD& m) { analytic.push_back(&m); });
  GradientReport report;
  report.epsilon = epsilon;
  report.model = to_string(config.variant) + (config.time_block ? "+time" : "") +
                 (config.global_features ? "+global" : "");
  std::size_t k = 0;
  model.params.visit([&](const std::string& name, MatrixD& p) {
    const MatrixD& a = *analytic[k++];
    GradientGroup group;
    group.name = name;
    group.trainable = model.trainable(name);
    if (!group.trainable) {
      report.groups.push_back(group);
      return;
    }
    MatrixD numeric(p.rows(), p.cols());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double saved = p.data()[i];
      p.data()[i] = saved + epsilon;
      const double up = rollout_loss<double>(model, ctx, window);
      p.data()[i] = saved - epsilon;
      const double down = rollout_loss<double>(model, ctx, window);
      p.data()[i] = saved;
      numeric.data()[i] = (up - down) / (2.0 * epsilon);
    }
    group.max_abs_analytic = a.cwiseAbs().maxCoeff();
    const double denom = std::max({group.max_abs_analytic, numeric.cwiseAbs().maxCoeff(), 1e-10});
    group.max_rel_error = (a - numeric).cwiseAbs().maxCoeff() / denom;
    report.groups.push_back(group);
  });
  return report;
}

double rk4_empirical_order(double dt, double t_final, std::uint64_t seed) {
  BurgersParams p;
  p.seed = seed;
  const MatrixD ic = burgers_ic(p);
  auto solve = [&](double h) {
    BurgersParams q = p;
    q.dt = h;
    const int steps = static_cast<int>(std::lround(t_final / h));
    return simulate(q, ic, steps, steps).frames.back();
  };
  const MatrixD coarse = solve(4.0 * dt);
  const MatrixD mid = solve(2.0 * dt);
  const MatrixD fine = solve(dt);
  return std::log2((coarse - mid).cwiseAbs().maxCoeff() / (mid - fine).cwiseAbs().maxCoeff());
}

MultimeshStructure multimesh_structure(int nx, int ny, double r, int min_nodes, std::uint64_t seed) {
  const MeshGraph grid = build_grid_graph({nx, ny}, {1.0 / nx, 1.0 / ny}, {true, true});
  const MeshGraph a = build_multimesh(grid, r, min_nodes, default_k_neighbors(2), seed);
  const MeshGraph b = build_multimesh(grid, r, min_nodes, default_k_neighbors(2), seed);
  MultimeshStructure s;
  s.deterministic = a == b;
  std::vector<std::set<std::uint32_t>> levels;
  for (int l = 0; l < a.level_count(); ++l) {
    const auto nodes = level_nodes(a, l);
    levels.emplace_back(nodes.begin(), nodes.end());
    s.level_sizes.push_back(nodes.size());
  }
  for (std::size_t l = 1; l < levels.size(); ++l) {
    const bool subset = std::includes(levels[l - 1].begin(), levels[l - 1].end(), levels[l].begin(), levels[l].end());
    s.nested = s.nested && subset && levels[l].size() < levels[l - 1].size();
  }
  for (std::size_t e = 0; e < a.num_edges(); ++e) {
    const auto& lv = levels.at(a.edge_level[e]);
    s.nested = s.nested && lv.count(a.edges[e].src) == 1 && lv.count(a.edges[e].dst) == 1;
  }
  return s;
}

double gray_scott_fixed_point_deviation(int steps) {
  GrayScottParams p;
  p.rt = 0.0;
  const auto traj = simulate(p, gs_ic(p), steps, 1);
  double worst = 0.0;
  for (const auto& f : traj.frames) {
    worst = std::max(worst, (f.col(0).array() - 1.0).abs().maxCoeff());
    worst = std::max(worst, f.col(1).cwiseAbs().maxCoeff());
  }
  return worst;
}

double time_block_invariance_error(int layers, int nodes, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> positive(0.1, 2.0);
  MatrixD h0(nodes, width), k(nodes, width), alpha(1, layers);
  for (Eigen::Index i = 0; i < h0.size(); ++i) h0.data()[i] = normal(rng);
  for (Eigen::Index i = 0; i < k.size(); ++i) k.data()[i] = normal(rng);
  for (Eigen::Index i = 0; i < alpha.size(); ++i) alpha.data()[i] = positive(rng);
  std::vector<MatrixD> K(layers + 1, h0 + k);
  K[0] = h0;
  return (time_block(K, alpha) - (h0 + k)).cwiseAbs().maxCoeff();
}

std::vector<CheckResult> run_suite(std::uint64_t seed, const FaultInjection& fault) {
  std::vector<CheckResult> out;
  out.push_back(check_conservation(Variant::full, 100, seed, fault));
  out.push_back(check_conservation(Variant::minus, 100, seed + 7, fault));
  out.push_back(check_adjointness(100, seed + 11));

  double grad_worst = 0.0;
  std::string grad_detail;
  for (const auto& cfg : gradient_check_configs()) {
    const auto rep = gradient_check(cfg, seed + 13);
    grad_worst = std::max(grad_worst, rep.worst());
    for (const auto& g : rep.groups)
      if (g.trainable && g.max_rel_error >= 1e-5) grad_detail += " " + rep.model + ":" + g.name;
  }
  out.push_back({"gradient_check", grad_worst < 1e-5, grad_worst, 1e-5,
                 grad_detail.empty() ? "max relative error " + format_value(grad_worst) + " (eps 1e-5)"
                                     : "groups over tolerance:" + grad_detail});

  const double order = rk4_empirical_order(1e-4, 0.04, seed);
  out.push_back({"rk4_order", order >= 3.8, order, 3.8, "empirical order " + format_value(order)});

  const auto mm = multimesh_structure(50, 50, 0.1, 10, seed);
  const bool sizes_ok = mm.level_sizes == std::vector<std::size_t>{2500, 250, 25};
  std::string sizes;
  for (auto s : mm.level_sizes) sizes += (sizes.empty() ? "" : "/") + std::to_string(s);
  out.push_back({"multimesh_nesting", sizes_ok && mm.nested && mm.deterministic, 0.0, 0.0,
                 "levels " + sizes + (mm.nested ? ", nested" : ", NOT nested") +
                     (mm.deterministic ? ", deterministic" : ", NOT deterministic")});

  const double gs = gray_scott_fixed_point_deviation(100);
  out.push_back({"grayscott_fixed_point", gs < 1e-12, gs, 1e-12, "max deviation " + format_value(gs)});

  const double tb = time_block_invariance_error(4, 16, 8, seed);
  out.push_back({"time_block_invariance", tb <= 1e-12, tb, 1e-12, "max deviation " + format_value(tb)});
  return out;
}

template std::vector<LayerConservation> conservation_sums<float>(const Model<float>&, const MeshGraph&,
                                                                 const MatrixF&, const FaultInjection&);
template std::vector<LayerConservation> conservation_sums<double>(const Model<double>&, const MeshGraph&,
                                                                  const MatrixD&, const FaultInjection&);

}  // namespace cignn::verify
