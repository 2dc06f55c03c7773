#include "cignn/checkpoint.hpp"

#include "binary_io.hpp"
#include "cignn/error.hpp"

#include <set>

namespace cignn {
namespace {

constexpr char kMagic[8] = {'C', 'I', 'G', 'N', 'C', 'K', 'P', 'T'};
constexpr int kVersion = 1;

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"state_dim", c.state_dim},
          {"space_dim", c.space_dim},
          {"latent", c.latent},
          {"layers", c.layers},
          {"mlp_hidden_layers", c.mlp_hidden_layers},
          {"variant", to_string(c.variant)},
          {"time_block", c.time_block},
          {"global_features", c.global_features}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  require(j.is_object(), "model config must be a JSON object");
  static const std::set<std::string> known = {"state_dim", "space_dim", "latent", "layers",
                                              "mlp_hidden_layers", "variant", "time_block",
                                              "global_features"};
  for (const auto& [key, _] : j.items())
    require(known.count(key) == 1, "model config: unknown key '" + key + "'");
  ModelConfig c;
  try {
    c.state_dim = j.value("state_dim", c.state_dim);
    c.space_dim = j.value("space_dim", c.space_dim);
    c.latent = j.value("latent", c.latent);
    c.layers = j.value("layers", c.layers);
    c.mlp_hidden_layers = j.value("mlp_hidden_layers", c.mlp_hidden_layers);
    if (j.contains("variant")) c.variant = variant_from_string(j.at("variant").get<std::string>());
    c.time_block = j.value("time_block", c.time_block);
    c.global_features = j.value("global_features", c.global_features);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["version"] = kVersion;
  header["config"] = model_config_to_json(ckpt.config);
  header["step"] = ckpt.step;
  header["metrics"] = ckpt.metrics;
  header["normalization"] = {{"mean", ckpt.normalization.mean}, {"std", ckpt.normalization.std}};
  header["run"] = ckpt.run;
  auto& table = header["tensors"] = nlohmann::json::array();
  ckpt.params.visit([&table](const std::string& name, const MatrixF& m) {
    table.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  });
  const std::string text = header.dump();

  detail::ByteWriter w;
  w.put_bytes(std::string_view(kMagic, sizeof(kMagic)));
  w.put(static_cast<std::uint32_t>(text.size()));
  w.put_bytes(text);
  ckpt.params.visit([&w](const std::string&, const MatrixF& m) {
    w.put_span(std::span<const float>(m.data(), static_cast<std::size_t>(m.size())));
  });
  w.put(detail::crc32(w.bytes()));
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& origin) {
  if (bytes.size() < sizeof(kMagic) + 8) throw FormatError(origin + ": truncated file");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw FormatError(origin + ": not a checkpoint file");
  const auto body = bytes.first(bytes.size() - 4);
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + body.size(), 4);
  if (detail::crc32(body) != stored) throw FormatError(origin + ": checksum mismatch");

  detail::ByteReader r(body, origin);
  r.get_string(sizeof(kMagic));
  const auto header_len = r.get<std::uint32_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.get_string(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(origin + ": malformed header: " + e.what());
  }

  Checkpoint ckpt;
  std::vector<std::tuple<std::string, Eigen::Index, Eigen::Index>> table;
  try {
    if (header.at("version").get<int>() != kVersion) throw FormatError(origin + ": unsupported checkpoint version");
    ckpt.config = model_config_from_json(header.at("config"));
    ckpt.step = header.at("step").get<std::int64_t>();
    ckpt.metrics = header.at("metrics").get<std::map<std::string, double>>();
    ckpt.normalization = {header.at("normalization").at("mean").get<std::vector<double>>(),
                          header.at("normalization").at("std").get<std::vector<double>>()};
    ckpt.run = header.value("run", nlohmann::json::object());
    for (const auto& t : header.at("tensors"))
      table.emplace_back(t.at("name").get<std::string>(), t.at("rows").get<Eigen::Index>(),
                         t.at("cols").get<Eigen::Index>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(origin + ": malformed header: " + e.what());
  }

  ckpt.params = build_variant<float>(ckpt.config, 0).params;
  std::size_t k = 0;
  ckpt.params.visit([&](const std::string& name, MatrixF& m) {
    if (k >= table.size()) throw FormatError(origin + ": missing tensor '" + name + "'");
    const auto& [tname, rows, cols] = table[k++];
    if (tname != name || rows != m.rows() || cols != m.cols())
      throw FormatError(origin + ": tensor '" + tname + "' does not match the model layout (expected '" + name + "')");
    r.get_into(std::span<float>(m.data(), static_cast<std::size_t>(m.size())));
  });
  if (k != table.size()) throw FormatError(origin + ": unexpected extra tensors");
  if (r.remaining() != 0) throw FormatError(origin + ": trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  detail::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  return decode_checkpoint(bytes, path.string());
}

}  // namespace cignn
