#include "cignn/error.hpp"
#include "cignn/mesh_graph.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

namespace cignn {
namespace {

const std::filesystem::path kGolden = std::filesystem::path(CIGNN_GOLDEN_DIR) / "grid3x3_periodic_x.cgg";

std::vector<std::uint8_t> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

template <class T>
void append(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

MeshGraph two_node_graph() {
  MeshGraph g;
  g.positions = MatrixD(2, 2);
  g.positions << 0.0, 0.5, 1.0, 0.5;
  g.node_type = {NodeType::interior, NodeType::dirichlet_boundary};
  g.edges = {{0, 1}, {1, 0}};
  g.edge_level = {0, 0};
  g.node_max_level = {0, 0};
  g.domain_extent = {1.0, 1.0};
  return g;
}

TEST(GraphFile, LayoutMatchesHandAssembledBytes) {
  const auto g = two_node_graph();
  const auto bytes = encode_graph(g);

  const std::string header =
      R"({"E":2,"G":0,"N":2,"domain_extent":[1.0,1.0],"level_count":1,"m":2,"version":1})";
  std::vector<std::uint8_t> expected = {'C', 'I', 'G', 'R', 'A', 'P', 'H', 0};
  append<std::uint32_t>(expected, static_cast<std::uint32_t>(header.size()));
  expected.insert(expected.end(), header.begin(), header.end());
  for (double v : {0.0, 0.5, 1.0, 0.5}) append(expected, v);
  expected.push_back(0);
  expected.push_back(2);
  for (std::uint32_t v : {0u, 1u, 1u, 0u}) append(expected, v);
  append<std::uint16_t>(expected, 0);
  append<std::uint16_t>(expected, 0);
  EXPECT_EQ(bytes, expected);
}

TEST(GraphFile, RoundTripIsExact) {
  auto base = build_grid_graph({5, 4}, {0.2, 0.25}, {true, true});
  base = build_multimesh(base, 0.5, 3, 2, 4);
  const auto g = add_periodic_ghosts(base, {1.0, 1.0}).graph;
  EXPECT_EQ(decode_graph(encode_graph(g)), g);
  const auto dir = std::filesystem::temp_directory_path() / "cignn_graph_io_test";
  std::filesystem::create_directories(dir);
  write_graph(dir / "g.cgg", g);
  EXPECT_EQ(read_graph(dir / "g.cgg"), g);
}

TEST(GraphFile, GoldenFileIsStable) {
  const auto g = build_grid_graph({3, 3}, {0.5, 0.25}, {true, false});
  ASSERT_TRUE(std::filesystem::exists(kGolden)) << kGolden;
  EXPECT_EQ(read_graph(kGolden), g);
  EXPECT_EQ(encode_graph(g), slurp(kGolden));
}

TEST(GraphFile, RejectsCorruptContainers) {
  auto bytes = encode_graph(two_node_graph());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_graph(bad_magic), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(decode_graph(truncated), FormatError);
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(decode_graph(extra), FormatError);
}

TEST(GraphFile, RejectsUnknownVersion) {
  auto bytes = encode_graph(two_node_graph());
  const std::string needle = "\"version\":1";
  auto it = std::search(bytes.begin(), bytes.end(), needle.begin(), needle.end());
  ASSERT_NE(it, bytes.end());
  *(it + static_cast<long>(needle.size()) - 1) = '7';
  EXPECT_THROW(decode_graph(bytes), FormatError);
}

}  // namespace
}  // namespace cignn
