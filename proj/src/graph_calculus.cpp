#include "cignn/graph_calculus.hpp"

#include "cignn/error.hpp"

#include <cmath>

namespace cignn::calculus {
namespace {

void check_weights(const EdgeWeights& w, const MeshGraph& g) {
  require(static_cast<std::size_t>(w.size()) == g.num_edges(), "edge weights: size must equal edge count");
  for (Eigen::Index e = 0; e < w.size(); ++e)
    require(w[e] >= 0.0, "edge weights: negative weight on edge " + std::to_string(e));
}

void check_edge_field(const EdgeField& F, const MeshGraph& g) {
  require(static_cast<std::size_t>(F.rows()) == g.num_edges(), "edge field: rows must equal edge count");
}

}  // namespace

EdgeField weighted_gradient(const NodeField& f, const MeshGraph& g, const EdgeWeights& w) {
  require(static_cast<std::size_t>(f.rows()) == g.num_nodes(), "node field: rows must equal node count");
  check_weights(w, g);
  EdgeField out(static_cast<Eigen::Index>(g.num_edges()), f.cols());
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    const auto [i, j] = g.edges[e];
    out.row(e) = std::sqrt(w[e]) * (f.row(j) - f.row(i));
  }
  return out;
}

NodeField divergence(const EdgeField& F, const MeshGraph& g, const EdgeWeights& w) {
  check_edge_field(F, g);
  check_weights(w, g);
  const auto rev = reverse_edge_index(g);
  NodeField out = NodeField::Zero(static_cast<Eigen::Index>(g.num_nodes()), F.cols());
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    const auto r = rev[e];
    out.row(g.edges[e].src) += 0.5 * (std::sqrt(w[r]) * F.row(r) - std::sqrt(w[e]) * F.row(e));
  }
  return out;
}

double inner_nodes(const NodeField& a, const NodeField& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "inner_nodes: shape mismatch");
  return a.cwiseProduct(b).sum();
}

double inner_edges(const EdgeField& a, const EdgeField& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "inner_edges: shape mismatch");
  return 0.5 * a.cwiseProduct(b).sum();
}

double adjointness_residual(const NodeField& f, const EdgeField& F, const MeshGraph& g,
                            const EdgeWeights& w) {
  require(f.cols() == F.cols(), "adjointness_residual: channel mismatch");
  const double lhs = inner_edges(weighted_gradient(f, g, w), F);
  const double rhs = inner_nodes(f, divergence(F, g, w));
  return std::abs(lhs - rhs);
}

SkewSym sym_skew_decompose(const EdgeField& F, const MeshGraph& g) {
  check_edge_field(F, g);
  const auto rev = reverse_edge_index(g);
  SkewSym out{EdgeField(F.rows(), F.cols()), EdgeField(F.rows(), F.cols())};
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    out.skew.row(e) = F.row(rev[e]) - F.row(e);
    out.sym.row(e) = F.row(rev[e]) + F.row(e);
  }
  return out;
}

Eigen::RowVectorXd global_skew_sum(const EdgeField& skew, const MeshGraph& g) {
  check_edge_field(skew, g);
  if (skew.rows() == 0) return Eigen::RowVectorXd::Zero(skew.cols());
  return skew.colwise().sum();
}

}  // namespace cignn::calculus
