#include "cignn/reference_solvers.hpp"

#include "cignn/error.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace cignn {

bool BurgersParams::diffusion_stable() const {
  const double h = std::min(dx, dy);
  return dt <= h * h / (4.0 * nu);
}

MatrixD burgers_rhs(const MatrixD& s, const BurgersParams& p) {
  require(static_cast<std::size_t>(s.rows()) == p.num_nodes() && s.cols() == 2,
          "burgers_rhs: state must be (nx*ny) x 2");
  if (!s.allFinite()) throw NumericalError("burgers_rhs: non-finite state");
  const int nx = p.nx;
  const int ny = p.ny;
  const double idx2 = 1.0 / (p.dx * p.dx);
  const double idy2 = 1.0 / (p.dy * p.dy);
  const double i2dx = 0.5 / p.dx;
  const double i2dy = 0.5 / p.dy;
  MatrixD rate(s.rows(), 2);
  for (int iy = 0; iy < ny; ++iy) {
    const int ym = (iy + ny - 1) % ny;
    const int yp = (iy + 1) % ny;
    for (int ix = 0; ix < nx; ++ix) {
      const int xm = (ix + nx - 1) % nx;
      const int xp = (ix + 1) % nx;
      const auto c = ix + nx * iy;
      const auto w = xm + nx * iy;
      const auto e = xp + nx * iy;
      const auto so = ix + nx * ym;
      const auto no = ix + nx * yp;
      const double u = s(c, 0);
      const double v = s(c, 1);
      for (int k = 0; k < 2; ++k) {
        const double lap = (s(e, k) - 2.0 * s(c, k) + s(w, k)) * idx2 +
                           (s(no, k) - 2.0 * s(c, k) + s(so, k)) * idy2;
        const double ddx = (s(e, k) - s(w, k)) * i2dx;
        const double ddy = (s(no, k) - s(so, k)) * i2dy;
        rate(c, k) = p.nu * lap - u * ddx - v * ddy;
      }
    }
  }
  return rate;
}

MatrixD gs_rhs(const MatrixD& s, const GrayScottParams& p) {
  require(static_cast<std::size_t>(s.rows()) == p.num_nodes() && s.cols() == 2,
          "gs_rhs: state must be n^3 x 2");
  if (!s.allFinite()) throw NumericalError("gs_rhs: non-finite state");
  const int n = p.n;
  const double idx2 = 1.0 / (p.dx * p.dx);
  auto at = [n](int x, int y, int z) { return x + n * (y + n * z); };
  MatrixD rate(s.rows(), 2);
  for (int z = 0; z < n; ++z) {
    const int zm = (z + n - 1) % n, zp = (z + 1) % n;
    for (int y = 0; y < n; ++y) {
      const int ym = (y + n - 1) % n, yp = (y + 1) % n;
      for (int x = 0; x < n; ++x) {
        const int xm = (x + n - 1) % n, xp = (x + 1) % n;
        const auto c = at(x, y, z);
        double lap[2];
        for (int k = 0; k < 2; ++k) {
          lap[k] = (s(at(xp, y, z), k) + s(at(xm, y, z), k) + s(at(x, yp, z), k) +
                    s(at(x, ym, z), k) + s(at(x, y, zp), k) + s(at(x, y, zm), k) - 6.0 * s(c, k)) *
                   idx2;
        }
        const double u = s(c, 0);
        const double v = s(c, 1);
        const double uvv = u * v * v;
        rate(c, 0) = p.Du * lap[0] - uvv + p.alpha * (1.0 - u);
        rate(c, 1) = p.Dv * lap[1] + uvv - (p.beta + p.alpha) * v;
      }
    }
  }
  return rate;
}

MatrixD rk4_step(const RateFunction& rhs, const MatrixD& y, double dt) {
  require(dt > 0.0, "rk4_step: dt must be positive");
  auto checked = [](MatrixD k, const char* stage) {
    if (!k.allFinite()) throw NumericalError(std::string("rk4_step: non-finite rate at stage ") + stage);
    return k;
  };
  const MatrixD k1 = checked(rhs(y), "k1");
  const MatrixD k2 = checked(rhs(y + 0.5 * dt * k1), "k2");
  const MatrixD k3 = checked(rhs(y + 0.5 * dt * k2), "k3");
  const MatrixD k4 = checked(rhs(y + dt * k3), "k4");
  return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

namespace {

// Truncated random Fourier series over modes (a, b) in [0, n_a] x [0, n_b],
// normalized to (2 * s / max|s| + c) / 3 with c ~ U[-1, 1].
Eigen::VectorXd burgers_component(const BurgersParams& p, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> offset(-1.0, 1.0);
  const auto n = static_cast<Eigen::Index>(p.num_nodes());
  Eigen::VectorXd field = Eigen::VectorXd::Zero(n);
  for (int a = 0; a <= p.n_a; ++a) {
    for (int b = 0; b <= p.n_b; ++b) {
      const double lam = normal(rng);
      const double gam = normal(rng);
      const double ka = a - 0.5 * p.n_a;
      const double kb = b - 0.5 * p.n_b;
      for (int iy = 0; iy < p.ny; ++iy) {
        for (int ix = 0; ix < p.nx; ++ix) {
          const double arg = 2.0 * std::numbers::pi * (ka * ix * p.dx + kb * iy * p.dy);
          field[ix + p.nx * iy] += lam * std::cos(arg) + gam * std::sin(arg);
        }
      }
    }
  }
  const double c = offset(rng);
  const double peak = field.cwiseAbs().maxCoeff();
  if (!(peak > 0.0)) return {};
  return (2.0 * field / peak + Eigen::VectorXd::Constant(n, c)) / 3.0;
}

}  // namespace

MatrixD burgers_ic(const BurgersParams& p) {
  require(p.nx >= 3 && p.ny >= 3, "burgers_ic: grid too small");
  for (std::uint64_t seed = p.seed;; ++seed) {
    std::mt19937_64 rng(seed);
    const Eigen::VectorXd u = burgers_component(p, rng);
    if (u.size() == 0) continue;
    const Eigen::VectorXd v = burgers_component(p, rng);
    if (v.size() == 0) continue;
    MatrixD out(u.size(), 2);
    out.col(0) = u;
    out.col(1) = v;
    return out;
  }
}

MatrixD gs_ic(const GrayScottParams& p) {
  require(p.rt >= 0.0 && p.rt <= 1.0, "gs_ic: rt must lie in [0, 1]");
  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto n = static_cast<Eigen::Index>(p.num_nodes());
  MatrixD out(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double lu = normal(rng);
    const double lv = normal(rng);
    out(i, 0) = (1.0 - p.rt) + p.rt * lu;
    out(i, 1) = p.rt * lv;
  }
  return out;
}

Trajectory simulate(const RateFunction& rhs, const MatrixD& ic, double dt, int total_steps,
                    int save_every) {
  require(total_steps >= 1 && save_every >= 1, "simulate: steps must be positive");
  require(total_steps % save_every == 0, "simulate: total_steps must be divisible by save_every");
  Trajectory traj;
  traj.dt_dataset = dt * save_every;
  traj.frames.reserve(static_cast<std::size_t>(total_steps / save_every + 1));
  traj.frames.push_back(ic);
  MatrixD state = ic;
  for (int step = 1; step <= total_steps; ++step) {
    try {
      state = rk4_step(rhs, state, dt);
    } catch (const NumericalError& e) {
      throw NumericalError("simulate: blow-up at step " + std::to_string(step) + " (" + e.what() + ")");
    }
    if (!(state.cwiseAbs().maxCoeff() <= kBlowUpThreshold))
      throw NumericalError("simulate: blow-up at step " + std::to_string(step) +
                           " (|value| > 1e6)");
    if (step % save_every == 0) traj.frames.push_back(state);
  }
  return traj;
}

Trajectory simulate(const BurgersParams& p, const MatrixD& ic, int total_steps, int save_every) {
  require(p.nu > 0.0 && p.dt > 0.0, "burgers: nu and dt must be positive");
  auto traj = simulate([&p](const MatrixD& s) { return burgers_rhs(s, p); }, ic, p.dt, total_steps,
                       save_every);
  traj.physics_meta = {{"nu", p.nu}, {"nx", p.nx}, {"ny", p.ny}, {"dx", p.dx}, {"dy", p.dy},
                       {"solver_dt", p.dt}, {"n_a", p.n_a}, {"n_b", p.n_b},
                       {"seed", static_cast<double>(p.seed)}};
  return traj;
}

Trajectory simulate(const GrayScottParams& p, const MatrixD& ic, int total_steps, int save_every) {
  require(p.Du > 0.0 && p.Dv > 0.0 && p.dt > 0.0, "gray-scott: Du, Dv and dt must be positive");
  auto traj = simulate([&p](const MatrixD& s) { return gs_rhs(s, p); }, ic, p.dt, total_steps,
                       save_every);
  traj.physics_meta = {{"Du", p.Du}, {"Dv", p.Dv}, {"alpha", p.alpha}, {"beta", p.beta},
                       {"n", p.n}, {"dx", p.dx}, {"solver_dt", p.dt}, {"rt", p.rt},
                       {"seed", static_cast<double>(p.seed)}};
  return traj;
}

}  // namespace cignn
