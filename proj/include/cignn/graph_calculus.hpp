#pragma once

#include "cignn/mesh_graph.hpp"
#include "cignn/tensor.hpp"

#include <Eigen/Dense>

#include <utility>

// Discrete calculus on weighted directed graphs whose edges come in reverse
// pairs. All node sums run over edges by their `src` node.
namespace cignn::calculus {

using NodeField = MatrixD;           // N x d
using EdgeField = MatrixD;           // E x d
using EdgeWeights = Eigen::VectorXd;  // E, nonnegative

/// out(i->j) = sqrt(w_ij) * (f_j - f_i)
EdgeField weighted_gradient(const NodeField& f, const MeshGraph& g, const EdgeWeights& w);

/// out(i) = 1/2 * sum_j (sqrt(w_ji) F_ji - sqrt(w_ij) F_ij)
///
/// This is the net flux into node i that drives du_i/dt in the conservation
/// form, i.e. the adjoint of weighted_gradient (the graph divergence is its
/// negative). Summed over all nodes it vanishes for any F and any w.
NodeField divergence(const EdgeField& F, const MeshGraph& g, const EdgeWeights& w);

/// Node inner product: plain sum of elementwise products.
double inner_nodes(const NodeField& a, const NodeField& b);

/// Edge inner product: half the plain sum over directed edges, i.e. each
/// undirected link counted once across its two orientations. With this
/// measure divergence() is exactly the adjoint of weighted_gradient().
double inner_edges(const EdgeField& a, const EdgeField& b);

/// |<grad_w f, F>_E - <f, div F>_V|
double adjointness_residual(const NodeField& f, const EdgeField& F, const MeshGraph& g,
                            const EdgeWeights& w);

struct SkewSym {
  EdgeField skew;  // F_ji - F_ij
  EdgeField sym;   // F_ji + F_ij
};

SkewSym sym_skew_decompose(const EdgeField& F, const MeshGraph& g);

/// Sum over every directed edge of the skew field.
Eigen::RowVectorXd global_skew_sum(const EdgeField& skew, const MeshGraph& g);

}  // namespace cignn::calculus
