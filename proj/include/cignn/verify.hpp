#pragma once

#include "cignn/mesh_graph.hpp"
#include "cignn/model.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

// Invariant checks shared by `cignn verify` and the acceptance binary.
namespace cignn::verify {

/// Undirected random graph stored as reverse edge pairs, single level, no
/// ghosts, random node types among the real ones, distinct positions in [0,1]^m.
MeshGraph random_graph(int num_nodes, int space_dim, double edge_probability, std::mt19937_64& rng);

struct LayerConservation {
  int layer = 0;
  double abs_sum = 0.0;       // max over channels |sum over edges of skew|
  double reference = 0.0;     // max over channels sum over edges of |skew|
  double relative() const { return reference > 0.0 ? abs_sum / reference : abs_sum; }
};

/// Global sum of the asymmetric edge messages at every layer for one forward
/// step of `model` from state `u`.
template <class T>
std::vector<LayerConservation> conservation_sums(const Model<T>& model, const MeshGraph& graph, const Matrix<T>& u,
                                                 const FaultInjection& fault = {});

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;  // the measured quantity compared against the threshold
  double threshold = 0.0;
  std::string detail;
};

/// `instances` random graphs (N <= 64) with random float64 and float32 models
/// of the given variant.
CheckResult check_conservation(Variant variant, int instances, std::uint64_t seed, const FaultInjection& fault = {});

/// Max relative residual |<grad f, F> - <f, div F>| / (|grad f| |F|).
CheckResult check_adjointness(int instances, std::uint64_t seed);

struct GradientGroup {
  std::string name;
  bool trainable = true;
  double max_rel_error = 0.0;  // |analytic - numeric|_inf / max(|analytic|_inf, |numeric|_inf, 1e-10)
  double max_abs_analytic = 0.0;
};

struct GradientReport {
  double epsilon = 1e-5;
  std::string model;  // short description of the checked configuration
  std::vector<GradientGroup> groups;
  double worst() const;
};

/// Central-difference check of every trainable tensor of a float64 model on a
/// 3x4 multimesh grid (12 nodes) with a two-step rollout loss. Frozen tensors
/// are listed with a zero analytic gradient and skipped.
GradientReport gradient_check(const ModelConfig& config, std::uint64_t seed, double epsilon = 1e-5);

/// Tiny configurations that together exercise every parameter group.
std::vector<ModelConfig> gradient_check_configs();

/// Richardson estimate log2(|u_4h - u_2h| / |u_2h - u_h|) for 32x32 Burgers.
double rk4_empirical_order(double dt, double t_final, std::uint64_t seed);

struct MultimeshStructure {
  std::vector<std::size_t> level_sizes;
  bool nested = true;
  bool deterministic = true;
};

MultimeshStructure multimesh_structure(int nx, int ny, double r, int min_nodes, std::uint64_t seed);

/// Max |state - (1, 0)| of a noise-free Gray-Scott trajectory.
double gray_scott_fixed_point_deviation(int steps);

/// Time block output vs h0 + k when every K_j equals h0 + k.
double time_block_invariance_error(int layers, int nodes, int width, std::uint64_t seed);

/// The full verify suite run by the CLI.
std::vector<CheckResult> run_suite(std::uint64_t seed, const FaultInjection& fault = {});

}  // namespace cignn::verify
