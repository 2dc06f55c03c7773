#pragma once

#include "cignn/tensor.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace cignn {

/// 2D viscous Burgers on a periodic lattice; state columns are (u, v).
struct BurgersParams {
  double nu = 0.01;
  int nx = 32;
  int ny = 32;
  double dx = 1.0 / 32.0;
  double dy = 1.0 / 32.0;
  double dt = 2e-4;  // solver step
  int n_a = 10;
  int n_b = 10;
  std::uint64_t seed = 0;

  /// Explicit diffusion guard dt <= min(dx,dy)^2 / (4 nu).
  bool diffusion_stable() const;
  std::size_t num_nodes() const { return static_cast<std::size_t>(nx) * ny; }
};

/// 3D Gray-Scott reaction-diffusion on a periodic n^3 lattice; state (u, v).
struct GrayScottParams {
  double Du = 0.2;
  double Dv = 0.1;
  double alpha = 0.025;  // in-flow rate of u
  double beta = 0.055;   // conversion rate
  int n = 16;
  double dx = 2.0;
  double dt = 0.25;
  double rt = 0.1;  // IC noise ratio
  std::uint64_t seed = 0;

  std::size_t num_nodes() const { return static_cast<std::size_t>(n) * n * n; }
};

struct Trajectory {
  std::vector<MatrixD> frames;  // T frames of N x d
  double dt_dataset = 0.0;
  std::string graph_ref;
  std::map<std::string, double> physics_meta;

  std::size_t length() const { return frames.size(); }
  std::size_t num_nodes() const { return frames.empty() ? 0 : frames.front().rows(); }
  std::size_t channels() const { return frames.empty() ? 0 : frames.front().cols(); }
};

using RateFunction = std::function<MatrixD(const MatrixD&)>;

MatrixD burgers_rhs(const MatrixD& state, const BurgersParams& p);
MatrixD gs_rhs(const MatrixD& state, const GrayScottParams& p);

/// Classical fourth-order Runge-Kutta step. Throws NumericalError when any
/// stage becomes non-finite.
MatrixD rk4_step(const RateFunction& rhs, const MatrixD& state, double dt);

MatrixD burgers_ic(const BurgersParams& p);
MatrixD gs_ic(const GrayScottParams& p);

/// Integrates `total_steps` RK4 steps of size dt and keeps every
/// `save_every`-th state (initial condition included). Aborts with
/// NumericalError naming the step when any |value| exceeds 1e6.
Trajectory simulate(const RateFunction& rhs, const MatrixD& ic, double dt, int total_steps,
                    int save_every);

Trajectory simulate(const BurgersParams& p, const MatrixD& ic, int total_steps, int save_every);
Trajectory simulate(const GrayScottParams& p, const MatrixD& ic, int total_steps, int save_every);

inline constexpr double kBlowUpThreshold = 1e6;

}  // namespace cignn
