#include "cignn/error.hpp"
#include "cignn/graph_calculus.hpp"
#include "cignn/verify.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace cignn {
namespace {

using namespace calculus;

MeshGraph pair_graph() {
  MeshGraph g;
  g.positions = MatrixD(2, 1);
  g.positions << 0.0, 1.0;
  g.node_type.assign(2, NodeType::interior);
  g.edges = {{0, 1}, {1, 0}};
  g.edge_level = {0, 0};
  g.node_max_level = {0, 0};
  return g;
}

MatrixD random_field(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  MatrixD m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

EdgeWeights random_weights(std::size_t e, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 3.0);
  EdgeWeights w(static_cast<Eigen::Index>(e));
  for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = u(rng);
  return w;
}

TEST(WeightedGradient, TwoNodeExample) {
  const auto g = pair_graph();
  NodeField f(2, 1);
  f << 0.0, 3.0;
  const auto out = weighted_gradient(f, g, EdgeWeights::Constant(2, 4.0));
  EXPECT_DOUBLE_EQ(out(0, 0), 6.0);
  EXPECT_DOUBLE_EQ(out(1, 0), -6.0);
}

TEST(WeightedGradient, ConstantFieldAndZeroWeightsGiveZero) {
  std::mt19937_64 rng(1);
  const auto g = verify::random_graph(20, 2, 0.3, rng);
  const auto w = random_weights(g.num_edges(), rng);
  EXPECT_EQ(weighted_gradient(NodeField::Constant(20, 2, 1.7), g, w).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(weighted_gradient(random_field(20, 2, rng), g, EdgeWeights::Zero(w.size())).cwiseAbs().maxCoeff(), 0.0);
}

TEST(WeightedGradient, RejectsNegativeWeights) {
  const auto g = pair_graph();
  EdgeWeights w(2);
  w << 1.0, -0.5;
  EXPECT_THROW(weighted_gradient(NodeField::Zero(2, 1), g, w), ValidationError);
}

TEST(Divergence, TwoNodeExample) {
  const auto g = pair_graph();
  EdgeField F(2, 1);
  const double a = 1.25, b = -0.5;
  F << a, b;
  const auto out = divergence(F, g, EdgeWeights::Ones(2));
  EXPECT_DOUBLE_EQ(out(0, 0), 0.5 * (b - a));
  EXPECT_DOUBLE_EQ(out(1, 0), 0.5 * (a - b));
}

TEST(Divergence, SymmetricFluxWithSymmetricWeightsVanishes) {
  std::mt19937_64 rng(2);
  const auto g = verify::random_graph(25, 2, 0.3, rng);
  const auto rev = reverse_edge_index(g);
  EdgeField F = random_field(static_cast<Eigen::Index>(g.num_edges()), 3, rng);
  EdgeWeights w = random_weights(g.num_edges(), rng);
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    F.row(rev[e]) = F.row(e);
    w[rev[e]] = w[e];
  }
  EXPECT_LT(divergence(F, g, w).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Divergence, SumsToZeroOnRandomGraphs) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 100; ++k) {
    const auto g = verify::random_graph(2 + k % 40, 2, 0.25, rng);
    const auto rev = reverse_edge_index(g);
    const EdgeField F = random_field(static_cast<Eigen::Index>(g.num_edges()), 2, rng);
    EdgeWeights w = random_weights(g.num_edges(), rng);
    for (std::size_t e = 0; e < g.num_edges(); ++e) w[rev[e]] = w[e];
    const auto div = divergence(F, g, w);
    EXPECT_LT(div.colwise().sum().cwiseAbs().maxCoeff(), 1e-12 * (1.0 + F.cwiseAbs().sum()));
  }
}

TEST(Divergence, RejectsMissingReverse) {
  auto g = pair_graph();
  g.edges.pop_back();
  g.edge_level.pop_back();
  EXPECT_THROW(divergence(EdgeField::Zero(1, 1), g, EdgeWeights::Ones(1)), ValidationError);
}

// Independent oracle: both inner products summed edge by edge straight from
// the definitions, weights directed.
double brute_residual(const NodeField& f, const EdgeField& F, const MeshGraph& g, const EdgeWeights& w) {
  const auto rev = reverse_edge_index(g);
  double lhs = 0.0;
  for (std::size_t e = 0; e < g.num_edges(); ++e)
    lhs += 0.5 * std::sqrt(w[e]) * (f.row(g.edges[e].dst) - f.row(g.edges[e].src)).dot(F.row(e));
  NodeField adj = NodeField::Zero(f.rows(), f.cols());
  for (std::size_t e = 0; e < g.num_edges(); ++e)
    adj.row(g.edges[e].src) += 0.5 * (std::sqrt(w[rev[e]]) * F.row(rev[e]) - std::sqrt(w[e]) * F.row(e));
  double rhs = 0.0;
  for (Eigen::Index i = 0; i < f.rows(); ++i) rhs += f.row(i).dot(adj.row(i));
  return std::abs(lhs - rhs);
}

TEST(Adjointness, RandomInstancesOnTenNodeGraphs) {
  std::mt19937_64 rng(4);
  for (int k = 0; k < 100; ++k) {
    const auto g = verify::random_graph(10, 2, 0.4, rng);
    const auto f = random_field(10, 2, rng);
    const auto F = random_field(static_cast<Eigen::Index>(g.num_edges()), 2, rng);
    const auto w = random_weights(g.num_edges(), rng);
    const auto gf = weighted_gradient(f, g, w);
    const double scale = std::sqrt(inner_edges(gf, gf) * inner_edges(F, F));
    EXPECT_LE(adjointness_residual(f, F, g, w), 1e-12 * scale);
    EXPECT_LE(brute_residual(f, F, g, w), 1e-12 * scale);
  }
}

TEST(Adjointness, ZeroFieldsGiveZeroResidual) {
  std::mt19937_64 rng(5);
  const auto g = verify::random_graph(10, 2, 0.4, rng);
  const auto w = random_weights(g.num_edges(), rng);
  const auto E = static_cast<Eigen::Index>(g.num_edges());
  EXPECT_EQ(adjointness_residual(NodeField::Zero(10, 1), random_field(E, 1, rng), g, w), 0.0);
  EXPECT_EQ(adjointness_residual(random_field(10, 1, rng), EdgeField::Zero(E, 1), g, w), 0.0);
}

TEST(Adjointness, DivergenceMatchesTheAdjointOfTheGradient) {
  // Build both operators as dense matrices; the adjoint relation is
  // D = -M_V^{-1} G^T M_E with M_V = I and M_E = I / 2.
  std::mt19937_64 rng(6);
  const auto g = verify::random_graph(8, 2, 0.5, rng);
  const auto w = random_weights(g.num_edges(), rng);
  const auto n = 8;
  const auto E = static_cast<Eigen::Index>(g.num_edges());
  Eigen::MatrixXd G(E, n), D(n, E);
  for (int i = 0; i < n; ++i) {
    NodeField f = NodeField::Zero(n, 1);
    f(i, 0) = 1.0;
    G.col(i) = weighted_gradient(f, g, w).col(0);
  }
  for (Eigen::Index e = 0; e < E; ++e) {
    EdgeField F = EdgeField::Zero(E, 1);
    F(e, 0) = 1.0;
    D.col(e) = divergence(F, g, w).col(0);
  }
  EXPECT_LT((D - 0.5 * G.transpose()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Linearity, GradientAndDivergenceAreLinear) {
  std::mt19937_64 rng(7);
  const auto g = verify::random_graph(15, 2, 0.3, rng);
  const auto w = random_weights(g.num_edges(), rng);
  const auto E = static_cast<Eigen::Index>(g.num_edges());
  const auto f1 = random_field(15, 2, rng), f2 = random_field(15, 2, rng);
  const auto F1 = random_field(E, 2, rng), F2 = random_field(E, 2, rng);
  const double a = 0.7, b = -1.9;
  EXPECT_LT((weighted_gradient((a * f1 + b * f2).eval(), g, w) -
             (a * weighted_gradient(f1, g, w) + b * weighted_gradient(f2, g, w)))
                .cwiseAbs()
                .maxCoeff(),
            1e-13);
  EXPECT_LT((divergence((a * F1 + b * F2).eval(), g, w) - (a * divergence(F1, g, w) + b * divergence(F2, g, w)))
                .cwiseAbs()
                .maxCoeff(),
            1e-13);
}

TEST(SymSkew, Examples) {
  const auto g = pair_graph();
  EdgeField c(2, 1);
  c << 2.5, 2.5;
  const auto s1 = sym_skew_decompose(c, g);
  EXPECT_EQ(s1.skew.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_DOUBLE_EQ(s1.sym(0, 0), 5.0);
  EdgeField F(2, 1);
  F << 1.0, -1.0;
  const auto s2 = sym_skew_decompose(F, g);
  EXPECT_DOUBLE_EQ(s2.skew(0, 0), -2.0);
  EXPECT_DOUBLE_EQ(s2.sym(0, 0), 0.0);
}

TEST(SymSkew, ParityAndReconstructionOnRandomGraphs) {
  std::mt19937_64 rng(8);
  for (int k = 0; k < 20; ++k) {
    const auto g = verify::random_graph(20, 2, 0.3, rng);
    const auto rev = reverse_edge_index(g);
    const auto F = random_field(static_cast<Eigen::Index>(g.num_edges()), 2, rng);
    const auto [skew, sym] = sym_skew_decompose(F, g);
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
      EXPECT_EQ(skew.row(rev[e]), (-skew.row(e)).eval());
      EXPECT_EQ(sym.row(rev[e]), sym.row(e));
      // F_ji = (skew_ij + sym_ij) / 2
      EXPECT_LT((0.5 * (skew.row(e) + sym.row(e)) - F.row(rev[e])).cwiseAbs().maxCoeff(), 1e-15);
    }
  }
}

TEST(GlobalSkewSum, VanishesForAnyField) {
  std::mt19937_64 rng(9);
  for (int k = 0; k < 100; ++k) {
    const auto g = verify::random_graph(2 + k % 60, 2, 0.2, rng);
    const auto F = random_field(static_cast<Eigen::Index>(g.num_edges()), 3, rng);
    const auto skew = sym_skew_decompose(F, g).skew;
    EXPECT_LE(global_skew_sum(skew, g).cwiseAbs().maxCoeff(), 1e-12 * F.norm());
  }
  MeshGraph empty;
  empty.positions = MatrixD::Zero(3, 2);
  empty.node_type.assign(3, NodeType::interior);
  empty.node_max_level.assign(3, 0);
  EXPECT_EQ(global_skew_sum(EdgeField::Zero(0, 2), empty).cwiseAbs().sum(), 0.0);
}

}  // namespace
}  // namespace cignn
