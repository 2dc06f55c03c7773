#pragma once

#include "cignn/mesh_graph.hpp"
#include "cignn/reference_solvers.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cignn {

enum class SystemKind { burgers2d, grayscott3d, external };

std::string to_string(SystemKind kind);
SystemKind system_from_string(const std::string& name);

struct TrajectoryEntry {
  std::string file;
  std::uint64_t seed = 0;
  std::map<std::string, double> physics_meta;
};

struct DatasetSplit {
  std::vector<int> train;
  std::vector<int> validation;
  std::vector<int> test;
};

struct Normalization {
  std::vector<double> mean;
  std::vector<double> std;
};

inline constexpr double kStdFloor = 1e-8;
inline constexpr int kManifestVersion = 1;

struct DatasetManifest {
  int version = kManifestVersion;
  SystemKind system = SystemKind::external;
  std::string graph_file = "graph.cgg";
  std::vector<TrajectoryEntry> trajectories;
  double dt_dataset = 0.0;
  std::vector<std::string> channels;
  DatasetSplit split;
  Normalization normalization;
};

/// Disjoint splits, indices in range, one std > 0 per channel.
void validate_manifest(const DatasetManifest& manifest);

// Trajectory file: magic, u32 version, u32 reserved, u64 T, u64 N, u64 d,
// f64 dt, row-major [T, N, d] float64 payload, u32 CRC32 of everything before.
std::vector<std::uint8_t> encode_trajectory(const Trajectory& traj);
Trajectory decode_trajectory(std::span<const std::uint8_t> bytes, const std::string& origin);

/// One directory per dataset: manifest.json, the graph file and one binary per
/// trajectory.
void write_dataset(const std::filesystem::path& dir, const DatasetManifest& manifest,
                   const MeshGraph& graph, std::span<const Trajectory> trajectories);

/// Read-only handle; trajectories are loaded one at a time on request.
class Dataset {
 public:
  explicit Dataset(std::filesystem::path dir);

  const DatasetManifest& manifest() const { return manifest_; }
  const std::filesystem::path& directory() const { return dir_; }
  std::size_t size() const { return manifest_.trajectories.size(); }
  MeshGraph graph() const;
  Trajectory load(std::size_t index) const;

 private:
  std::filesystem::path dir_;
  DatasetManifest manifest_;
};

Dataset read_dataset(const std::filesystem::path& dir);

/// Relative paths are resolved against $DATASET_ROOT when it is set.
std::filesystem::path resolve_dataset_path(const std::filesystem::path& path);

/// Per-channel mean and (population) std over every frame and node of the
/// given trajectories. std is floored at kStdFloor.
Normalization compute_normalization(std::span<const Trajectory> train);
Normalization compute_normalization(const Dataset& dataset, std::span<const int> train_indices);

MatrixD normalize(const MatrixD& state, const Normalization& norm);
MatrixD denormalize(const MatrixD& state, const Normalization& norm);

struct NoiseSpec {
  double sigma_rel = 0.02;
  std::uint64_t seed = 0;
};

/// x + eps, eps ~ N(0, (sigma_rel * std_c)^2) independently per entry.
MatrixD add_training_noise(const MatrixD& state, const NoiseSpec& spec, std::span<const double> channel_std);
MatrixD add_training_noise(const MatrixD& state, double sigma_rel, std::span<const double> channel_std,
                           std::mt19937_64& rng);

/// Keeps frames 0, factor, 2*factor, ...; dt_dataset grows by `factor`.
Trajectory temporal_downsample(const Trajectory& traj, int factor);

/// Synthetic dataset recipe. Trajectory k uses seed + k; the split takes the
/// first n_train trajectories for training, then validation, then test.
struct DatagenSpec {
  SystemKind system = SystemKind::burgers2d;
  int grid = 32;
  int n_train = 5;
  int n_validation = 1;
  int n_test = 1;
  int steps = 995;  // solver steps per trajectory
  int save_every = 5;
  std::uint64_t seed = 0;
  BurgersParams burgers;
  GrayScottParams grayscott;

  int trajectories() const { return n_train + n_validation + n_test; }
};

/// "desk": 32^2 Burgers (16^3 Gray-Scott), 5/1/1 trajectories of 200 frames.
/// "table2": 50^2 Burgers, 50/5/5 trajectories of 1001 frames.
DatagenSpec datagen_preset(SystemKind system, const std::string& preset);

struct GeneratedDataset {
  DatasetManifest manifest;
  MeshGraph graph;  // periodic lattice without ghosts
  std::vector<Trajectory> trajectories;
};

/// Runs the reference solver for every trajectory; normalization comes from
/// the training split.
GeneratedDataset generate_dataset(const DatagenSpec& spec);

}  // namespace cignn
