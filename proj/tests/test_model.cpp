#include "cignn/error.hpp"
#include "cignn/model.hpp"
#include "cignn/verify.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

namespace cignn {
namespace {

ModelConfig small_config(Variant v, int c = 8, int layers = 3) {
  ModelConfig cfg;
  cfg.latent = c;
  cfg.layers = layers;
  cfg.variant = v;
  return cfg;
}

MatrixD random_state(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixD u(static_cast<Eigen::Index>(n), 2);
  for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = normal(rng);
  return u;
}

MeshGraph test_graph(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return verify::random_graph(12, 2, 0.4, rng);
}

Mlp<double> linear(MatrixD w) {
  Mlp<double> m;
  m.biases = {MatrixD::Zero(1, w.cols())};
  m.weights = {std::move(w)};
  return m;
}

void zero_mlp(Mlp<double>& m) {
  for (auto& w : m.weights) w.setZero();
  for (auto& b : m.biases) b.setZero();
  if (m.has_layer_norm()) m.ln_bias.setZero();
}

TEST(ModelConfig, EncoderWidthsFor2D) {
  ModelConfig cfg;
  EXPECT_EQ(cfg.node_input_dim(), 8);
  EXPECT_EQ(cfg.edge_input_dim(), 5);
  EXPECT_EQ(cfg.latent, 128);
  EXPECT_EQ(cfg.layers, 4);
  cfg.layers = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  EXPECT_EQ(variant_from_string(to_string(Variant::star)), Variant::star);
  EXPECT_THROW(variant_from_string("plus"), ValidationError);
}

TEST(Model, EncoderOutputsHaveLatentWidth) {
  const auto g = test_graph(1);
  const auto model = build_variant<double>(small_config(Variant::full, 16), 3);
  const auto ctx = make_graph_context<double>(g);
  EXPECT_EQ(ctx.node_static.cols(), 6);
  EXPECT_EQ(ctx.edge_inputs.cols(), 5);
  const auto enc = encode_edges(model, ctx, false);
  EXPECT_EQ(enc.e0.rows(), static_cast<Eigen::Index>(g.num_edges()));
  EXPECT_EQ(enc.e0.cols(), 16);
  const auto h0 = encode_nodes(model, ctx, random_state(g.num_nodes(), 1));
  EXPECT_EQ(h0.rows(), 12);
  EXPECT_EQ(h0.cols(), 16);
  EXPECT_THROW(encode_nodes(model, ctx, MatrixD(MatrixD::Zero(12, 3))), ValidationError);
}

TEST(SymmpnnLayer, TwoNodeHandExample) {
  MeshGraph g;
  g.positions = MatrixD(2, 2);
  g.positions << 0.0, 0.0, 1.0, 0.0;
  g.node_type.assign(2, NodeType::interior);
  g.edges = {{0, 1}, {1, 0}};
  g.edge_level = {0, 0};
  g.node_max_level = {0, 0};
  const auto ctx = make_graph_context<double>(g);

  // c = 1; e*_ij = h_i, so e*_12 = a and e*_21 = b; w = 1 and phi(x) = x.
  LayerParams<double> p;
  MatrixD w0(3, 1);
  w0 << 1.0, 0.0, 0.0;
  p.edge = linear(w0);
  p.flux = linear(MatrixD::Ones(1, 1));
  p.node = linear(MatrixD::Zero(2, 1));
  p.gate = MatrixD::Ones(1, 1);
  const double a = 0.8, b = -2.25;
  MatrixD x(2, 1);
  x << a, b;
  LayerTape<double> tape;
  const auto out = symmpnn_layer<double>(p, ctx, x, MatrixD(MatrixD::Zero(2, 1)), nullptr, &tape);
  EXPECT_DOUBLE_EQ(out.e(0, 0), 2 * b);
  EXPECT_DOUBLE_EQ(out.e(1, 0), 2 * a);
  EXPECT_DOUBLE_EQ(tape.skew(0, 0), b - a);
  EXPECT_EQ(out.x, x);

  // Symmetric messages leave nothing in the asymmetric branch.
  x << a, a;
  symmpnn_layer<double>(p, ctx, x, MatrixD(MatrixD::Zero(2, 1)), nullptr, &tape);
  EXPECT_EQ(tape.skew.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Model, FullWithZeroFluxEqualsMinus) {
  const auto g = test_graph(2);
  const auto ctx = make_graph_context<double>(g);
  auto full = build_variant<double>(small_config(Variant::full), 7);
  for (auto& layer : full.params.layers) zero_mlp(layer.flux);
  auto minus = full;
  minus.config.variant = Variant::minus;
  for (auto& layer : minus.params.layers) layer.flux = {};
  const auto u = random_state(g.num_nodes(), 2);
  EXPECT_EQ(forward_step(full, ctx, u), forward_step(minus, ctx, u));
}

TEST(Model, FreshFullModelHasSilentFlux) {
  const auto g = test_graph(2);
  const auto ctx = make_graph_context<double>(g);
  const auto full = build_variant<double>(small_config(Variant::full), 8);
  auto minus = full;
  minus.config.variant = Variant::minus;
  for (auto& layer : minus.params.layers) layer.flux = {};
  for (const auto& layer : full.params.layers) EXPECT_EQ(layer.flux.ln_gain, MatrixD::Zero(1, 8));
  const auto u = random_state(g.num_nodes(), 2);
  EXPECT_EQ(forward_step(full, ctx, u), forward_step(minus, ctx, u));
}

TEST(Model, StarEqualsMinusAtInitialization) {
  const auto g = test_graph(3);
  const auto ctx = make_graph_context<double>(g);
  const auto minus = build_variant<double>(small_config(Variant::minus), 9);
  const auto star_fresh = build_variant<double>(small_config(Variant::star), 9);
  for (const auto& layer : star_fresh.params.layers) EXPECT_EQ(layer.gate, MatrixD::Ones(1, 8));
  auto star = minus;
  star.config.variant = Variant::star;
  const auto u = random_state(g.num_nodes(), 3);
  EXPECT_EQ(forward_step(star, ctx, u), forward_step(minus, ctx, u));
  EXPECT_TRUE(star.trainable("layer0.gate"));
  EXPECT_FALSE(minus.trainable("layer0.gate"));
  EXPECT_TRUE(minus.trainable("layer0.edge.linear0.weight"));
}

TEST(Model, ParameterCountDifferenceIsTheFluxMlp) {
  const auto full = build_variant<double>(small_config(Variant::full), 1);
  const auto minus = build_variant<double>(small_config(Variant::minus), 1);
  std::size_t flux = 0;
  for (const auto& layer : full.params.layers) flux += layer.flux.parameter_count();
  EXPECT_GT(flux, 0u);
  EXPECT_EQ(full.params.parameter_count() - minus.params.parameter_count(), flux);
  std::vector<std::string> names;
  full.params.visit([&](const std::string& n, const MatrixD&) { names.push_back(n); });
  EXPECT_NE(std::find(names.begin(), names.end(), "layer2.flux.linear0.weight"), names.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "time.alpha"), names.end());
}

TEST(Model, DecoderHasNoLayerNormAndZeroDecoderIsIdentity) {
  const auto g = test_graph(4);
  const auto ctx = make_graph_context<double>(g);
  auto model = build_variant<double>(small_config(Variant::full), 5);
  EXPECT_FALSE(model.params.decoder.has_layer_norm());
  EXPECT_TRUE(model.params.encoder_node.has_layer_norm());
  zero_mlp(model.params.decoder);
  const auto u = random_state(g.num_nodes(), 4);
  EXPECT_EQ(forward_step(model, ctx, u), u);
  const auto frames = rollout(model, ctx, u, 2);
  ASSERT_EQ(frames.size(), 2u);
  EXPECT_EQ(frames[0], u);
  EXPECT_EQ(frames[1], u);
}

TEST(Model, ForwardIsDeterministicAndSeedDependent) {
  const auto g = test_graph(5);
  const auto ctx = make_graph_context<double>(g);
  const auto u = random_state(g.num_nodes(), 5);
  const auto a = build_variant<double>(small_config(Variant::full), 11);
  const auto b = build_variant<double>(small_config(Variant::full), 11);
  const auto c = build_variant<double>(small_config(Variant::full), 12);
  EXPECT_EQ(forward_step(a, ctx, u), forward_step(b, ctx, u));
  EXPECT_NE(forward_step(a, ctx, u), forward_step(c, ctx, u));
}

TEST(Model, PermutationEquivariance) {
  const auto g = test_graph(6);
  const auto n = g.num_nodes();
  std::vector<std::uint32_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0u);
  std::mt19937_64 rng(6);
  std::shuffle(perm.begin(), perm.end(), rng);
  // perm[old] = new
  MeshGraph h = g;
  for (std::size_t i = 0; i < n; ++i) {
    h.positions.row(perm[i]) = g.positions.row(i);
    h.node_type[perm[i]] = g.node_type[i];
    h.node_max_level[perm[i]] = g.node_max_level[i];
  }
  for (auto& e : h.edges) e = {perm[e.src], perm[e.dst]};
  for (auto v : {Variant::full, Variant::minus, Variant::star}) {
    auto cfg = small_config(v);
    cfg.global_features = v == Variant::star;
    const auto model = build_variant<double>(cfg, 13);
    const auto u = random_state(n, 6);
    MatrixD up(u.rows(), u.cols());
    for (std::size_t i = 0; i < n; ++i) up.row(perm[i]) = u.row(i);
    const auto a = forward_step(model, make_graph_context<double>(g), u);
    const auto b = forward_step(model, make_graph_context<double>(h), up);
    for (std::size_t i = 0; i < n; ++i)
      EXPECT_LT((a.row(i) - b.row(perm[i])).cwiseAbs().maxCoeff(), 1e-12) << to_string(v);
  }
}

TEST(TimeBlock, EqualIncrementsGiveTheCommonIncrement) {
  const MatrixD h0 = MatrixD::Random(5, 3);
  const MatrixD k = MatrixD::Random(5, 3);
  std::vector<MatrixD> K = {h0, h0 + k, h0 + k, h0 + k, h0 + k};
  MatrixD alpha(1, 4);
  alpha << 0.3, 2.1, -0.4, 1.7;
  EXPECT_LT((time_block(K, alpha) - (h0 + k)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(TimeBlock, UniformAlphaAveragesTheIncrements) {
  const MatrixD h0 = MatrixD::Random(4, 2);
  std::vector<MatrixD> K = {h0};
  MatrixD mean = MatrixD::Zero(4, 2);
  for (int j = 0; j < 4; ++j) {
    K.push_back(MatrixD::Random(4, 2));
    mean += (K.back() - h0) / 4.0;
  }
  EXPECT_LT((time_block(K, MatrixD(MatrixD::Constant(1, 4, 0.37))) - (h0 + mean)).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_THROW(time_block(K, MatrixD(MatrixD::Ones(1, 3))), ValidationError);
}

TEST(TimeBlock, NormalizationSumsToOneAndFallsBack) {
  MatrixD alpha(1, 4);
  alpha << 0.3, 2.1, -0.4, 1.7;
  bool fell_back = true;
  EXPECT_NEAR(normalized_alpha(alpha, &fell_back).sum(), 1.0, 1e-15);
  EXPECT_FALSE(fell_back);
  alpha << 1.0, -1.0, 0.5, -0.5;
  const auto a = normalized_alpha(alpha, &fell_back);
  EXPECT_TRUE(fell_back);
  EXPECT_EQ(a, MatrixD::Constant(1, 4, 0.25));
}

TEST(TimeBlock, OffUsesTheLastLayer) {
  const auto g = test_graph(7);
  const auto ctx = make_graph_context<double>(g);
  auto cfg = small_config(Variant::full);
  cfg.time_block = false;
  const auto model = build_variant<double>(cfg, 3);
  const auto enc = encode_edges(model, ctx, false);
  StepTape<double> tape;
  forward_step(model, ctx, enc.e0, random_state(g.num_nodes(), 7), &tape);
  EXPECT_EQ(tape.h_final, tape.K.back());
}

TEST(Model, FloatAndDoubleAgree) {
  const auto g = test_graph(8);
  const auto model = build_variant<double>(small_config(Variant::full), 2);
  Model<float> mf{model.config, cast_params<float>(model.params)};
  const auto u = random_state(g.num_nodes(), 8);
  const auto a = forward_step(model, make_graph_context<double>(g), u);
  const auto b = forward_step(mf, make_graph_context<float>(g), MatrixF(u.cast<float>()));
  EXPECT_LT((a - b.cast<double>()).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Rollout, NonFiniteStepIsReported) {
  const auto g = test_graph(9);
  const auto ctx = make_graph_context<double>(g);
  const auto model = build_variant<double>(small_config(Variant::full), 2);
  MatrixD u = random_state(g.num_nodes(), 9);
  u(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(rollout(model, ctx, u, 3), NumericalError);
  EXPECT_THROW(rollout(model, ctx, random_state(g.num_nodes(), 9), 0), ValidationError);
}

TEST(Rollout, GhostsFollowTheirSources) {
  auto base = build_grid_graph({4, 4}, {0.25, 0.25}, {true, true});
  const auto g = add_periodic_ghosts(base, {1.0, 1.0}).graph;
  const auto ctx = make_graph_context<double>(g);
  const auto model = build_variant<double>(small_config(Variant::full), 2);
  MatrixD u = random_state(g.num_nodes(), 10);
  pad_periodic(ctx, u);
  for (const auto& frame : rollout(model, ctx, u, 3))
    for (const auto& link : g.ghost_map) EXPECT_EQ(frame.row(link.ghost), frame.row(link.source));
}

}  // namespace
}  // namespace cignn
