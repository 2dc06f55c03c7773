#include "cignn/mesh_graph.hpp"

#include "cignn/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <tuple>

namespace cignn {
namespace {

struct LatticeIndexer {
  std::vector<int> dims;

  std::size_t count() const {
    std::size_t n = 1;
    for (int d : dims) n *= static_cast<std::size_t>(d);
    return n;
  }
  std::size_t flatten(const std::vector<int>& c) const {
    std::size_t idx = 0;
    for (int a = static_cast<int>(dims.size()) - 1; a >= 0; --a) idx = idx * dims[a] + c[a];
    return idx;
  }
  std::vector<int> unflatten(std::size_t idx) const {
    std::vector<int> c(dims.size());
    for (std::size_t a = 0; a < dims.size(); ++a) {
      c[a] = static_cast<int>(idx % dims[a]);
      idx /= dims[a];
    }
    return c;
  }
};

}  // namespace

int MeshGraph::level_count() const {
  int top = 0;
  for (auto l : node_max_level) top = std::max<int>(top, l);
  return num_nodes() == 0 ? 0 : top + 1;
}

int default_k_neighbors(int space_dim) { return space_dim == 3 ? 6 : 4; }

MeshGraph build_grid_graph(const std::vector<int>& dims, const std::vector<double>& spacing,
                           const std::vector<bool>& periodic) {
  const std::size_t m = dims.size();
  require(m == 2 || m == 3, "build_grid_graph: dims must have 2 or 3 entries");
  require(spacing.size() == m && periodic.size() == m,
          "build_grid_graph: spacing/periodic must match dims");
  for (std::size_t a = 0; a < m; ++a) {
    require(dims[a] >= 3, "build_grid_graph: every dim must be >= 3 (stencils undefined)");
    require(spacing[a] > 0.0, "build_grid_graph: spacing must be positive");
  }

  LatticeIndexer ix{dims};
  const std::size_t n = ix.count();
  MeshGraph g;
  g.positions.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  g.node_type.resize(n, NodeType::interior);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = ix.unflatten(i);
    bool on_periodic = false;
    bool on_dirichlet = false;
    for (std::size_t a = 0; a < m; ++a) {
      g.positions(i, a) = c[a] * spacing[a];
      if (c[a] == 0 || c[a] == dims[a] - 1) (periodic[a] ? on_periodic : on_dirichlet) = true;
    }
    if (on_dirichlet)
      g.node_type[i] = NodeType::dirichlet_boundary;
    else if (on_periodic)
      g.node_type[i] = NodeType::periodic_boundary;
  }

  for (std::size_t i = 0; i < n; ++i) {
    auto c = ix.unflatten(i);
    for (std::size_t a = 0; a < m; ++a) {
      if (c[a] + 1 >= dims[a]) continue;
      ++c[a];
      const auto j = static_cast<std::uint32_t>(ix.flatten(c));
      --c[a];
      g.edges.push_back({static_cast<std::uint32_t>(i), j});
      g.edges.push_back({j, static_cast<std::uint32_t>(i)});
    }
  }
  g.edge_level.assign(g.edges.size(), 0);
  g.node_max_level.assign(n, 0);
  g.domain_extent.resize(m);
  for (std::size_t a = 0; a < m; ++a) g.domain_extent[a] = dims[a] * spacing[a];
  g.lattice = LatticeInfo{dims, spacing, periodic};
  return g;
}

std::vector<std::uint32_t> level_nodes(const MeshGraph& graph, int level) {
  std::vector<std::uint32_t> out;
  for (std::size_t i = 0; i < graph.num_nodes(); ++i) {
    if (graph.node_type[i] == NodeType::ghost) continue;
    if (graph.node_max_level[i] >= level) out.push_back(static_cast<std::uint32_t>(i));
  }
  return out;
}

MeshGraph build_multimesh(const MeshGraph& base, double r, int min_nodes, int k_neighbors,
                          std::uint64_t seed) {
  require(r > 0.0 && r < 1.0, "build_multimesh: r must lie in (0, 1)");
  require(k_neighbors >= 1, "build_multimesh: k_neighbors must be >= 1");
  require(min_nodes >= k_neighbors + 1, "build_multimesh: min_nodes must be >= k_neighbors + 1");
  require(std::all_of(base.edge_level.begin(), base.edge_level.end(), [](auto l) { return l == 0; }),
          "build_multimesh: base graph must carry level-0 edges only");

  MeshGraph g = base;
  std::mt19937_64 rng(seed);
  std::vector<std::uint32_t> current = level_nodes(base, 0);
  const int m = base.space_dim();

  for (int level = 1;; ++level) {
    const auto next_size =
        static_cast<std::size_t>(std::floor(r * static_cast<double>(current.size())));
    if (next_size < static_cast<std::size_t>(min_nodes)) break;

    std::vector<std::uint32_t> shuffled = current;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    std::vector<std::uint32_t> kept(shuffled.begin(), shuffled.begin() + next_size);
    std::sort(kept.begin(), kept.end());

    std::set<std::pair<std::uint32_t, std::uint32_t>> links;
    std::vector<std::pair<double, std::size_t>> dist(kept.size());
    for (std::size_t a = 0; a < kept.size(); ++a) {
      for (std::size_t b = 0; b < kept.size(); ++b) {
        double d2 = 0.0;
        for (int k = 0; k < m; ++k) {
          const double diff = g.positions(kept[a], k) - g.positions(kept[b], k);
          d2 += diff * diff;
        }
        dist[b] = {b == a ? std::numeric_limits<double>::infinity() : d2, b};
      }
      const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k_neighbors), kept.size() - 1);
      std::partial_sort(dist.begin(), dist.begin() + kk, dist.end());
      for (std::size_t q = 0; q < kk; ++q) {
        const auto u = kept[a];
        const auto v = kept[dist[q].second];
        links.insert({std::min(u, v), std::max(u, v)});
      }
    }
    const auto lvl = static_cast<std::uint16_t>(level);
    for (const auto& [u, v] : links) {
      g.edges.push_back({u, v});
      g.edges.push_back({v, u});
      g.edge_level.push_back(lvl);
      g.edge_level.push_back(lvl);
    }
    for (auto i : kept) g.node_max_level[i] = lvl;
    current = std::move(kept);
  }
  return g;
}

EdgeGeometry compute_edge_geometry(const MeshGraph& graph) {
  const auto m = graph.positions.cols();
  require(m == 2 || m == 3, "compute_edge_geometry: positions must be 2D or 3D");
  require(graph.positions.allFinite(), "compute_edge_geometry: non-finite positions");
  EdgeGeometry geo;
  const auto ne = graph.num_edges();
  geo.rel_pos.resize(static_cast<Eigen::Index>(ne), m);
  geo.distance.resize(ne);
  geo.angle_x.resize(ne);
  geo.angle_y.resize(ne);
  for (std::size_t e = 0; e < ne; ++e) {
    const auto [s, d] = graph.edges[e];
    geo.rel_pos.row(e) = graph.positions.row(d) - graph.positions.row(s);
    const double dist = geo.rel_pos.row(e).norm();
    if (!(dist > 0.0))
      throw ValidationError("compute_edge_geometry: edge " + std::to_string(e) +
                            " has coincident endpoints");
    geo.distance[e] = dist;
    const double rx = geo.rel_pos(e, 0);
    const double ry = geo.rel_pos(e, 1);
    geo.angle_x[e] = std::atan2(ry, rx);
    // 3D: second angle lives in the (x, z) plane.
    geo.angle_y[e] = m == 3 ? std::atan2(geo.rel_pos(e, 2), rx) : std::atan2(rx, ry);
  }
  return geo;
}

GhostResult add_periodic_ghosts(const MeshGraph& graph, const std::vector<double>& domain_extent) {
  const bool any_periodic = graph.lattice && std::any_of(graph.lattice->periodic.begin(),
                                                         graph.lattice->periodic.end(),
                                                         [](bool p) { return p; });
  if (!any_periodic)
    return {graph, std::string("add_periodic_ghosts: no periodic axis; graph returned unchanged")};
  require(graph.ghost_map.empty(), "add_periodic_ghosts: graph already has ghost nodes");
  const auto& lat = *graph.lattice;
  const std::size_t m = lat.dims.size();
  require(domain_extent.size() == m, "add_periodic_ghosts: domain_extent must match dimension");

  // Extended lattice: periodic axes grow by one node on each side.
  std::vector<int> ext_dims(m);
  std::vector<int> offset(m);
  for (std::size_t a = 0; a < m; ++a) {
    offset[a] = lat.periodic[a] ? 1 : 0;
    ext_dims[a] = lat.dims[a] + 2 * offset[a];
  }
  LatticeIndexer ext{ext_dims};
  LatticeIndexer real{lat.dims};

  MeshGraph g = graph;
  const std::size_t n_real = graph.num_nodes();
  std::vector<std::int64_t> ext_to_node(ext.count(), -1);
  std::vector<Eigen::RowVectorXd> ghost_pos;
  for (std::size_t e = 0; e < ext.count(); ++e) {
    auto c = ext.unflatten(e);
    bool inside = true;
    std::vector<int> wrapped(m);
    Eigen::RowVectorXd pos(m);
    for (std::size_t a = 0; a < m; ++a) {
      const int rc = c[a] - offset[a];
      if (rc < 0 || rc >= lat.dims[a]) inside = false;
      wrapped[a] = (rc + lat.dims[a]) % lat.dims[a];
      pos[a] = graph.positions(real.flatten(wrapped), a) +
               (rc < 0 ? -domain_extent[a] : rc >= lat.dims[a] ? domain_extent[a] : 0.0);
    }
    if (inside) {
      ext_to_node[e] = static_cast<std::int64_t>(real.flatten(wrapped));
      continue;
    }
    const auto gi = static_cast<std::uint32_t>(n_real + ghost_pos.size());
    ext_to_node[e] = gi;
    ghost_pos.push_back(pos);
    g.ghost_map.push_back({gi, static_cast<std::uint32_t>(real.flatten(wrapped))});
  }

  const auto n_total = n_real + ghost_pos.size();
  g.positions.conservativeResize(static_cast<Eigen::Index>(n_total), static_cast<Eigen::Index>(m));
  for (std::size_t k = 0; k < ghost_pos.size(); ++k) g.positions.row(n_real + k) = ghost_pos[k];
  g.node_type.resize(n_total, NodeType::ghost);
  g.node_max_level.resize(n_total, 0);

  // Nearest-neighbour links of the extended lattice that touch at least one ghost.
  for (std::size_t e = 0; e < ext.count(); ++e) {
    auto c = ext.unflatten(e);
    for (std::size_t a = 0; a < m; ++a) {
      if (c[a] + 1 >= ext_dims[a]) continue;
      ++c[a];
      const auto f = ext.flatten(c);
      --c[a];
      const auto u = static_cast<std::uint32_t>(ext_to_node[e]);
      const auto v = static_cast<std::uint32_t>(ext_to_node[f]);
      if (u < n_real && v < n_real) continue;
      g.edges.push_back({u, v});
      g.edges.push_back({v, u});
      g.edge_level.push_back(0);
      g.edge_level.push_back(0);
    }
  }
  return {std::move(g), std::nullopt};
}

std::vector<std::uint32_t> reverse_edge_index(const MeshGraph& graph) {
  std::map<std::tuple<std::uint32_t, std::uint32_t, std::uint16_t>, std::uint32_t> lookup;
  for (std::size_t e = 0; e < graph.num_edges(); ++e)
    lookup.emplace(std::make_tuple(graph.edges[e].src, graph.edges[e].dst, graph.edge_level[e]),
                   static_cast<std::uint32_t>(e));
  std::vector<std::uint32_t> rev(graph.num_edges());
  for (std::size_t e = 0; e < graph.num_edges(); ++e) {
    const auto it =
        lookup.find(std::make_tuple(graph.edges[e].dst, graph.edges[e].src, graph.edge_level[e]));
    if (it == lookup.end())
      throw ValidationError("edge " + std::to_string(e) + " (" + std::to_string(graph.edges[e].src) +
                            "->" + std::to_string(graph.edges[e].dst) + ") has no reverse edge");
    rev[e] = it->second;
  }
  return rev;
}

void validate_graph(const MeshGraph& g) {
  const auto n = g.num_nodes();
  require(static_cast<std::size_t>(g.positions.rows()) == n, "graph: positions/node_type size mismatch");
  require(g.edge_level.size() == g.num_edges(), "graph: edge_level size mismatch");
  require(g.node_max_level.size() == n, "graph: node_max_level size mismatch");
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    const auto [s, d] = g.edges[e];
    require(s < n && d < n, "graph: edge endpoint out of range");
    require(s != d, "graph: self-edge at node " + std::to_string(s));
    require(g.node_max_level[s] >= g.edge_level[e] && g.node_max_level[d] >= g.edge_level[e],
            "graph: node_max_level below incident edge level");
  }
  reverse_edge_index(g);
  std::set<std::uint32_t> seen;
  for (const auto& [ghost, source] : g.ghost_map) {
    require(ghost < n && source < n, "graph: ghost_map index out of range");
    require(g.node_type[ghost] == NodeType::ghost, "graph: ghost_map entry is not a ghost node");
    require(g.node_type[source] != NodeType::ghost, "graph: ghost mirrors another ghost");
    require(seen.insert(ghost).second, "graph: ghost listed twice in ghost_map");
  }
  const auto ghosts = static_cast<std::size_t>(
      std::count(g.node_type.begin(), g.node_type.end(), NodeType::ghost));
  require(ghosts == g.ghost_map.size(), "graph: ghost node missing from ghost_map");
  for (std::size_t i = g.num_real_nodes(); i < n; ++i)
    require(g.node_type[i] == NodeType::ghost, "graph: ghost nodes must be stored last");
}

}  // namespace cignn
