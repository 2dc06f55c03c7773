#pragma once

#include "cignn/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cignn {

enum class NodeType : std::uint8_t {
  interior = 0,
  periodic_boundary = 1,
  dirichlet_boundary = 2,
  ghost = 3,
};
inline constexpr int kNodeTypeCount = 4;

/// Directed edge. Per-node sums in the calculus and the network run over the
/// edges whose `src` is that node.
struct Edge {
  std::uint32_t src = 0;
  std::uint32_t dst = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

struct GhostLink {
  std::uint32_t ghost = 0;
  std::uint32_t source = 0;
  friend bool operator==(const GhostLink&, const GhostLink&) = default;
};

/// Regular lattice the graph was built from. Node index is
/// ix + nx * (iy + ny * iz) for the real (non-ghost) nodes.
struct LatticeInfo {
  std::vector<int> dims;
  std::vector<double> spacing;
  std::vector<bool> periodic;
  friend bool operator==(const LatticeInfo&, const LatticeInfo&) = default;
};

/// Discretization graph. Ghost nodes, when present, are stored after all real
/// nodes, so indices [0, num_real_nodes()) address the physical lattice.
struct MeshGraph {
  MatrixD positions;  // N x m
  std::vector<NodeType> node_type;
  std::vector<Edge> edges;
  std::vector<std::uint16_t> edge_level;
  std::vector<std::uint16_t> node_max_level;
  std::vector<GhostLink> ghost_map;
  std::vector<double> domain_extent;
  std::optional<LatticeInfo> lattice;

  std::size_t num_nodes() const { return node_type.size(); }
  std::size_t num_edges() const { return edges.size(); }
  std::size_t num_real_nodes() const { return num_nodes() - ghost_map.size(); }
  int space_dim() const { return static_cast<int>(positions.cols()); }
  int level_count() const;

  friend bool operator==(const MeshGraph&, const MeshGraph&) = default;
};

struct EdgeGeometry {
  MatrixD rel_pos;  // E x m, x_dst - x_src
  std::vector<double> distance;
  std::vector<double> angle_x;
  std::vector<double> angle_y;
};

struct GhostResult {
  MeshGraph graph;
  std::optional<std::string> warning;
};

/// Lattice with axis-aligned nearest-neighbour edges in both directions.
/// Periodic axes get no wrap-around edges; wrap-around is realized by ghost
/// nodes (add_periodic_ghosts).
MeshGraph build_grid_graph(const std::vector<int>& dims, const std::vector<double>& spacing,
                           const std::vector<bool>& periodic);

/// Nested random coarsening. Level k+1 keeps floor(r * |V^k|) nodes of level k
/// and connects them by symmetric k-nearest-neighbour edges. Stops as soon as
/// the next level would have fewer than `min_nodes` nodes.
MeshGraph build_multimesh(const MeshGraph& base, double r, int min_nodes, int k_neighbors,
                          std::uint64_t seed);

EdgeGeometry compute_edge_geometry(const MeshGraph& graph);

/// One-node halo of ghost nodes around every periodic face (corners included).
GhostResult add_periodic_ghosts(const MeshGraph& graph, const std::vector<double>& domain_extent);

/// Index of the reverse edge (same level) for every edge. Throws ValidationError
/// when some edge has no stored reverse.
std::vector<std::uint32_t> reverse_edge_index(const MeshGraph& graph);

/// Checks every structural invariant; throws ValidationError naming the first
/// violation.
void validate_graph(const MeshGraph& graph);

/// Default k for coarse-level kNN: 4 in 2D, 6 in 3D.
int default_k_neighbors(int space_dim);

/// Nodes whose node_max_level >= level (non-ghost only).
std::vector<std::uint32_t> level_nodes(const MeshGraph& graph, int level);

// Graph container: magic, u32 header length, JSON header, then little-endian
// blocks positions(f64) node_type(u8) edges(u32 pairs) edge_level(u16)
// ghost_map(u32 pairs).
void write_graph(const std::filesystem::path& path, const MeshGraph& graph);
MeshGraph read_graph(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_graph(const MeshGraph& graph);
MeshGraph decode_graph(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>");

}  // namespace cignn
