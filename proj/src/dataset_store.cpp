#include "cignn/dataset_store.hpp"

#include "binary_io.hpp"
#include "cignn/error.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <set>

namespace cignn {
namespace {

constexpr char kTrajMagic[8] = {'C', 'I', 'G', 'N', 'T', 'R', 'A', 'J'};
constexpr std::uint32_t kTrajVersion = 1;

nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["version"] = m.version;
  j["system"] = to_string(m.system);
  j["graph"] = m.graph_file;
  j["dt_dataset"] = m.dt_dataset;
  j["channels"] = m.channels;
  auto& trajs = j["trajectories"] = nlohmann::json::array();
  for (const auto& t : m.trajectories)
    trajs.push_back({{"file", t.file}, {"seed", t.seed}, {"meta", t.physics_meta}});
  j["split"] = {{"train", m.split.train}, {"validation", m.split.validation}, {"test", m.split.test}};
  j["normalization"] = {{"mean", m.normalization.mean}, {"std", m.normalization.std}};
  return j;
}

DatasetManifest manifest_from_json(const nlohmann::json& j, const std::string& origin) {
  DatasetManifest m;
  try {
    m.version = j.at("version").get<int>();
    if (m.version != kManifestVersion)
      throw FormatError(origin + ": unsupported manifest version " + std::to_string(m.version));
    m.system = system_from_string(j.at("system").get<std::string>());
    m.graph_file = j.at("graph").get<std::string>();
    m.dt_dataset = j.at("dt_dataset").get<double>();
    m.channels = j.at("channels").get<std::vector<std::string>>();
    for (const auto& t : j.at("trajectories"))
      m.trajectories.push_back({t.at("file").get<std::string>(), t.at("seed").get<std::uint64_t>(),
                                t.value("meta", std::map<std::string, double>{})});
    const auto& s = j.at("split");
    m.split = {s.at("train").get<std::vector<int>>(), s.at("validation").get<std::vector<int>>(),
               s.at("test").get<std::vector<int>>()};
    m.normalization = {j.at("normalization").at("mean").get<std::vector<double>>(),
                       j.at("normalization").at("std").get<std::vector<double>>()};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(origin + ": malformed manifest: " + e.what());
  }
  return m;
}

}  // namespace

std::string to_string(SystemKind kind) {
  switch (kind) {
    case SystemKind::burgers2d: return "burgers2d";
    case SystemKind::grayscott3d: return "grayscott3d";
    case SystemKind::external: return "external";
  }
  return "external";
}

SystemKind system_from_string(const std::string& name) {
  if (name == "burgers2d") return SystemKind::burgers2d;
  if (name == "grayscott3d") return SystemKind::grayscott3d;
  if (name == "external") return SystemKind::external;
  throw ValidationError("unknown system '" + name + "'");
}

void validate_manifest(const DatasetManifest& m) {
  require(m.version == kManifestVersion, "manifest: unsupported version");
  require(m.dt_dataset > 0.0, "manifest: dt_dataset must be positive");
  require(!m.channels.empty(), "manifest: no channels");
  const auto n = static_cast<int>(m.trajectories.size());
  std::set<int> seen;
  for (const auto* part : {&m.split.train, &m.split.validation, &m.split.test}) {
    for (int idx : *part) {
      require(idx >= 0 && idx < n, "manifest: split index " + std::to_string(idx) + " out of range");
      require(seen.insert(idx).second, "manifest: trajectory " + std::to_string(idx) + " appears in more than one split");
    }
  }
  require(m.normalization.mean.size() == m.channels.size() &&
              m.normalization.std.size() == m.channels.size(),
          "manifest: normalization must have one entry per channel");
  for (double s : m.normalization.std) require(s > 0.0, "manifest: channel std must be positive");
}

std::vector<std::uint8_t> encode_trajectory(const Trajectory& traj) {
  require(traj.length() >= 1, "trajectory: no frames");
  const auto n = traj.num_nodes();
  const auto d = traj.channels();
  detail::ByteWriter w;
  w.put_bytes(std::string_view(kTrajMagic, 8));
  w.put(kTrajVersion);
  w.put(std::uint32_t{0});
  w.put(static_cast<std::uint64_t>(traj.length()));
  w.put(static_cast<std::uint64_t>(n));
  w.put(static_cast<std::uint64_t>(d));
  w.put(traj.dt_dataset);
  for (const auto& f : traj.frames) {
    require(static_cast<std::size_t>(f.rows()) == n && static_cast<std::size_t>(f.cols()) == d,
            "trajectory: frames must share one shape");
    w.put_span(std::span<const double>(f.data(), n * d));
  }
  const auto crc = detail::crc32(w.bytes());
  w.put(crc);
  return std::move(w.bytes());
}

Trajectory decode_trajectory(std::span<const std::uint8_t> bytes, const std::string& origin) {
  if (bytes.size() < 4) throw FormatError(origin + ": truncated file");
  detail::ByteReader r(bytes, origin);
  if (r.get_string(8) != std::string(kTrajMagic, 8)) throw FormatError(origin + ": not a trajectory file");
  const auto version = r.get<std::uint32_t>();
  if (version != kTrajVersion)
    throw FormatError(origin + ": unsupported trajectory version " + std::to_string(version));
  r.get<std::uint32_t>();
  const auto t = r.get<std::uint64_t>();
  const auto n = r.get<std::uint64_t>();
  const auto d = r.get<std::uint64_t>();
  Trajectory traj;
  traj.dt_dataset = r.get<double>();
  const std::size_t payload = t * n * d * sizeof(double);
  if (r.remaining() != payload + sizeof(std::uint32_t)) throw FormatError(origin + ": truncated file");
  const auto body_end = r.position() + payload;
  traj.frames.resize(t);
  for (auto& f : traj.frames) {
    f.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    r.get_into(std::span<double>(f.data(), n * d));
  }
  const auto stored = r.get<std::uint32_t>();
  if (detail::crc32(bytes.subspan(0, body_end)) != stored)
    throw FormatError(origin + ": checksum mismatch");
  return traj;
}

void write_dataset(const std::filesystem::path& dir, const DatasetManifest& manifest,
                   const MeshGraph& graph, std::span<const Trajectory> trajectories) {
  validate_manifest(manifest);
  require(trajectories.size() == manifest.trajectories.size(),
          "write_dataset: trajectory count does not match manifest");
  std::filesystem::create_directories(dir);
  write_graph(dir / manifest.graph_file, graph);
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    require(trajectories[k].channels() == manifest.channels.size(),
            "write_dataset: channel count does not match manifest");
    detail::write_file(dir / manifest.trajectories[k].file, encode_trajectory(trajectories[k]));
  }
  const std::string text = manifest_to_json(manifest).dump(2);
  detail::write_file(dir / "manifest.json",
                     std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Dataset::Dataset(std::filesystem::path dir) : dir_(std::move(dir)) {
  const auto path = dir_ / "manifest.json";
  if (!std::filesystem::exists(path)) throw ValidationError(path.string() + ": no such manifest");
  const auto bytes = detail::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  manifest_ = manifest_from_json(j, path.string());
  validate_manifest(manifest_);
  require(std::filesystem::exists(dir_ / manifest_.graph_file), "dataset: missing graph file " + manifest_.graph_file);
  for (const auto& t : manifest_.trajectories)
    require(std::filesystem::exists(dir_ / t.file), "dataset: missing trajectory file " + t.file);
}

MeshGraph Dataset::graph() const { return read_graph(dir_ / manifest_.graph_file); }

Trajectory Dataset::load(std::size_t index) const {
  require(index < size(), "dataset: trajectory index out of range");
  const auto& entry = manifest_.trajectories[index];
  const auto path = dir_ / entry.file;
  auto traj = decode_trajectory(detail::read_file(path), path.string());
  traj.graph_ref = manifest_.graph_file;
  traj.physics_meta = entry.physics_meta;
  return traj;
}

Dataset read_dataset(const std::filesystem::path& dir) { return Dataset(resolve_dataset_path(dir)); }

std::filesystem::path resolve_dataset_path(const std::filesystem::path& path) {
  if (path.is_absolute() || std::filesystem::exists(path)) return path;
  if (const char* root = std::getenv("DATASET_ROOT"); root && *root) return std::filesystem::path(root) / path;
  return path;
}

Normalization compute_normalization(std::span<const Trajectory> train) {
  require(!train.empty(), "compute_normalization: empty train split");
  const auto d = static_cast<Eigen::Index>(train.front().channels());
  Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(d);
  Eigen::ArrayXd sq = Eigen::ArrayXd::Zero(d);
  double count = 0.0;
  for (const auto& t : train) {
    for (const auto& f : t.frames) {
      require(f.cols() == d, "compute_normalization: channel mismatch");
      sum += f.colwise().sum().transpose().array();
      count += static_cast<double>(f.rows());
    }
  }
  const Eigen::ArrayXd mean = sum / count;
  for (const auto& t : train)
    for (const auto& f : t.frames)
      sq += (f.rowwise() - mean.transpose().matrix()).array().square().colwise().sum().transpose();
  const Eigen::ArrayXd var = sq / count;
  Normalization out;
  for (Eigen::Index c = 0; c < d; ++c) {
    out.mean.push_back(mean[c]);
    out.std.push_back(std::max(std::sqrt(var[c]), kStdFloor));
  }
  return out;
}

Normalization compute_normalization(const Dataset& dataset, std::span<const int> train_indices) {
  std::vector<Trajectory> train;
  for (int idx : train_indices) train.push_back(dataset.load(static_cast<std::size_t>(idx)));
  return compute_normalization(train);
}

MatrixD normalize(const MatrixD& state, const Normalization& norm) {
  require(static_cast<std::size_t>(state.cols()) == norm.mean.size(), "normalize: channel mismatch");
  MatrixD out(state.rows(), state.cols());
  for (Eigen::Index c = 0; c < state.cols(); ++c)
    out.col(c) = (state.col(c).array() - norm.mean[c]) / norm.std[c];
  return out;
}

MatrixD denormalize(const MatrixD& state, const Normalization& norm) {
  require(static_cast<std::size_t>(state.cols()) == norm.mean.size(), "denormalize: channel mismatch");
  MatrixD out(state.rows(), state.cols());
  for (Eigen::Index c = 0; c < state.cols(); ++c)
    out.col(c) = state.col(c).array() * norm.std[c] + norm.mean[c];
  return out;
}

MatrixD add_training_noise(const MatrixD& state, double sigma_rel, std::span<const double> channel_std,
                           std::mt19937_64& rng) {
  require(sigma_rel >= 0.0 && sigma_rel < 1.0, "noise: sigma_rel must lie in [0, 1)");
  require(channel_std.size() == static_cast<std::size_t>(state.cols()), "noise: one std per channel required");
  if (sigma_rel == 0.0) return state;
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixD out = state;
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (Eigen::Index c = 0; c < out.cols(); ++c) out(i, c) += sigma_rel * channel_std[c] * normal(rng);
  return out;
}

MatrixD add_training_noise(const MatrixD& state, const NoiseSpec& spec, std::span<const double> channel_std) {
  std::mt19937_64 rng(spec.seed);
  return add_training_noise(state, spec.sigma_rel, channel_std, rng);
}

Trajectory temporal_downsample(const Trajectory& traj, int factor) {
  require(factor >= 1, "temporal_downsample: factor must be >= 1");
  Trajectory out;
  out.dt_dataset = traj.dt_dataset * factor;
  out.graph_ref = traj.graph_ref;
  out.physics_meta = traj.physics_meta;
  for (std::size_t t = 0; t < traj.length(); t += static_cast<std::size_t>(factor)) out.frames.push_back(traj.frames[t]);
  return out;
}

DatagenSpec datagen_preset(SystemKind system, const std::string& preset) {
  DatagenSpec spec;
  spec.system = system;
  if (system == SystemKind::burgers2d) {
    if (preset == "desk") return spec;
    if (preset == "table2") {
      spec.grid = 50;
      spec.n_train = 50;
      spec.n_validation = 5;
      spec.n_test = 5;
      spec.steps = 4995;
      return spec;
    }
  } else if (system == SystemKind::grayscott3d) {
    spec.save_every = 5;
    if (preset == "desk") {
      spec.grid = 16;
      spec.steps = 995;
      return spec;
    }
    if (preset == "table2") {
      spec.grid = 24;
      spec.grayscott.dx = 4.0;
      spec.n_train = 5;
      spec.n_validation = 3;
      spec.n_test = 2;
      spec.steps = 14995;
      return spec;
    }
  }
  throw ValidationError("unknown preset '" + preset + "' for system " + to_string(system));
}

GeneratedDataset generate_dataset(const DatagenSpec& spec) {
  require(spec.n_train >= 1 && spec.n_validation >= 0 && spec.n_test >= 0, "datagen: invalid split sizes");
  require(spec.steps >= 1 && spec.save_every >= 1 && spec.steps % spec.save_every == 0,
          "datagen: steps must be a positive multiple of save_every");
  require(spec.grid >= 3, "datagen: grid must be >= 3");
  GeneratedDataset out;
  auto& m = out.manifest;
  m.system = spec.system;
  m.channels = {"u", "v"};
  const int total = spec.trajectories();
  for (int k = 0; k < total; ++k) {
    const std::uint64_t seed = spec.seed + static_cast<std::uint64_t>(k);
    Trajectory traj;
    if (spec.system == SystemKind::burgers2d) {
      BurgersParams p = spec.burgers;
      p.nx = p.ny = spec.grid;
      p.dx = p.dy = 1.0 / spec.grid;
      p.seed = seed;
      require(p.diffusion_stable(), "datagen: solver dt violates the diffusion limit dx^2 / (4 nu)");
      traj = simulate(p, burgers_ic(p), spec.steps, spec.save_every);
    } else if (spec.system == SystemKind::grayscott3d) {
      GrayScottParams p = spec.grayscott;
      p.n = spec.grid;
      p.seed = seed;
      traj = simulate(p, gs_ic(p), spec.steps, spec.save_every);
    } else {
      throw ValidationError("datagen: system must be burgers2d or grayscott3d");
    }
    char name[32];
    std::snprintf(name, sizeof(name), "traj_%04d.bin", k);
    traj.graph_ref = m.graph_file;
    m.trajectories.push_back({name, seed, traj.physics_meta});
    out.trajectories.push_back(std::move(traj));
  }
  m.dt_dataset = out.trajectories.front().dt_dataset;
  for (int k = 0; k < total; ++k) {
    auto& part = k < spec.n_train ? m.split.train
                 : k < spec.n_train + spec.n_validation ? m.split.validation
                                                        : m.split.test;
    part.push_back(k);
  }
  m.normalization = compute_normalization(std::span<const Trajectory>(out.trajectories.data(), spec.n_train));

  if (spec.system == SystemKind::burgers2d) {
    const double h = 1.0 / spec.grid;
    out.graph = build_grid_graph({spec.grid, spec.grid}, {h, h}, {true, true});
  } else {
    const double h = spec.grayscott.dx;
    out.graph = build_grid_graph({spec.grid, spec.grid, spec.grid}, {h, h, h}, {true, true, true});
  }
  validate_manifest(m);
  return out;
}

}  // namespace cignn
