#include "binary_io.hpp"
#include "cignn/mesh_graph.hpp"

#include <json.hpp>
#include <zlib.h>

#include <algorithm>

namespace cignn {

namespace detail {

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, bytes.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("short write to " + path.string());
}

}  // namespace detail

namespace {

constexpr char kGraphMagic[8] = {'C', 'I', 'G', 'R', 'A', 'P', 'H', '\0'};
constexpr int kGraphVersion = 1;

}  // namespace

std::vector<std::uint8_t> encode_graph(const MeshGraph& g) {
  validate_graph(g);
  nlohmann::json header;
  header["version"] = kGraphVersion;
  header["N"] = g.num_nodes();
  header["m"] = g.space_dim();
  header["E"] = g.num_edges();
  header["G"] = g.ghost_map.size();
  header["level_count"] = g.level_count();
  header["domain_extent"] = g.domain_extent;
  if (g.lattice) {
    header["lattice"] = {{"dims", g.lattice->dims},
                         {"spacing", g.lattice->spacing},
                         {"periodic", g.lattice->periodic}};
  }
  const std::string text = header.dump();

  detail::ByteWriter w;
  w.put_bytes(std::string_view(kGraphMagic, 8));
  w.put(static_cast<std::uint32_t>(text.size()));
  w.put_bytes(text);
  w.put_span(std::span<const double>(g.positions.data(), static_cast<std::size_t>(g.positions.size())));
  for (auto t : g.node_type) w.put(static_cast<std::uint8_t>(t));
  for (const auto& e : g.edges) {
    w.put(e.src);
    w.put(e.dst);
  }
  w.put_span(std::span<const std::uint16_t>(g.edge_level));
  for (const auto& link : g.ghost_map) {
    w.put(link.ghost);
    w.put(link.source);
  }
  return std::move(w.bytes());
}

MeshGraph decode_graph(std::span<const std::uint8_t> bytes, const std::string& origin) {
  detail::ByteReader r(bytes, origin);
  if (r.get_string(8) != std::string(kGraphMagic, 8)) throw FormatError(origin + ": not a graph file");
  const auto header_len = r.get<std::uint32_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.get_string(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(origin + ": bad graph header: " + e.what());
  }
  if (header.value("version", -1) != kGraphVersion)
    throw FormatError(origin + ": unsupported graph version " + header.value("version", nlohmann::json()).dump());

  std::size_t n = 0, ne = 0, ng = 0;
  int m = 0, level_count = 0;
  MeshGraph g;
  try {
    n = header.at("N").get<std::size_t>();
    m = header.at("m").get<int>();
    ne = header.at("E").get<std::size_t>();
    ng = header.at("G").get<std::size_t>();
    level_count = header.at("level_count").get<int>();
    g.domain_extent = header.at("domain_extent").get<std::vector<double>>();
    if (header.contains("lattice")) {
      const auto& lat = header["lattice"];
      g.lattice = LatticeInfo{lat.at("dims").get<std::vector<int>>(),
                              lat.at("spacing").get<std::vector<double>>(),
                              lat.at("periodic").get<std::vector<bool>>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(origin + ": bad graph header: " + e.what());
  }
  if (m < 1 || m > 3) throw FormatError(origin + ": unsupported space dimension");
  g.positions.resize(static_cast<Eigen::Index>(n), m);
  r.get_into(std::span<double>(g.positions.data(), n * static_cast<std::size_t>(m)));
  g.node_type.resize(n);
  for (auto& t : g.node_type) {
    const auto raw = r.get<std::uint8_t>();
    if (raw >= kNodeTypeCount) throw FormatError(origin + ": invalid node type");
    t = static_cast<NodeType>(raw);
  }
  g.edges.resize(ne);
  for (auto& e : g.edges) {
    e.src = r.get<std::uint32_t>();
    e.dst = r.get<std::uint32_t>();
  }
  g.edge_level.resize(ne);
  r.get_into(std::span<std::uint16_t>(g.edge_level));
  g.ghost_map.resize(ng);
  for (auto& link : g.ghost_map) {
    link.ghost = r.get<std::uint32_t>();
    link.source = r.get<std::uint32_t>();
  }
  if (r.remaining() != 0) throw FormatError(origin + ": trailing bytes after graph payload");

  // node_max_level is not stored; it is the highest level of any incident edge.
  g.node_max_level.assign(n, 0);
  for (std::size_t e = 0; e < ne; ++e) {
    if (g.edges[e].src >= n || g.edges[e].dst >= n) throw FormatError(origin + ": edge index out of range");
    for (auto v : {g.edges[e].src, g.edges[e].dst})
      g.node_max_level[v] = std::max(g.node_max_level[v], g.edge_level[e]);
  }
  if (g.level_count() != level_count && n > 0)
    throw FormatError(origin + ": level_count does not match edge levels");
  validate_graph(g);
  return g;
}

void write_graph(const std::filesystem::path& path, const MeshGraph& graph) {
  detail::write_file(path, encode_graph(graph));
}

MeshGraph read_graph(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  return decode_graph(bytes, path.string());
}

}  // namespace cignn
