#include "cignn/error.hpp"
#include "cignn/reference_solvers.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

namespace cignn {
namespace {

constexpr double kPi = std::numbers::pi;

BurgersParams small_burgers(int n = 16) {
  BurgersParams p;
  p.nx = p.ny = n;
  p.dx = p.dy = 1.0 / n;
  p.n_a = p.n_b = 4;
  return p;
}

MatrixD shift_x(const MatrixD& s, int nx, int ny) {
  MatrixD out(s.rows(), s.cols());
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) out.row((ix + 1) % nx + nx * iy) = s.row(ix + nx * iy);
  return out;
}

TEST(BurgersRhs, ConstantFieldHasZeroRate) {
  const auto p = small_burgers();
  MatrixD s(p.num_nodes(), 2);
  s.col(0).setConstant(0.3);
  s.col(1).setConstant(-1.2);
  EXPECT_EQ(burgers_rhs(s, p).cwiseAbs().maxCoeff(), 0.0);
}

TEST(BurgersRhs, SineModeMatchesDiscreteLaplacianSymbol) {
  auto p = small_burgers(32);
  MatrixD s = MatrixD::Zero(p.num_nodes(), 2);
  for (int iy = 0; iy < p.ny; ++iy)
    for (int ix = 0; ix < p.nx; ++ix) s(ix + p.nx * iy, 0) = std::sin(2 * kPi * ix * p.dx);
  const auto rate = burgers_rhs(s, p);
  // The discrete symbol of the 3-point second difference on sin(kx).
  const double symbol = -4.0 / (p.dx * p.dx) * std::pow(std::sin(kPi * p.dx), 2);
  const double continuum = -std::pow(2 * kPi, 2);
  EXPECT_NEAR(symbol, continuum, std::pow(2 * kPi, 4) * p.dx * p.dx / 12.0 * 1.01);
  // At the peak x = 0.25 the advection term u * du/dx vanishes.
  const int peak = p.nx / 4;
  EXPECT_NEAR(rate(peak, 0), p.nu * symbol * s(peak, 0), 1e-12);
  EXPECT_EQ(rate.col(1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(BurgersRhs, PerturbationStaysInsideTheFivePointStencil) {
  const auto p = small_burgers(8);
  MatrixD s = MatrixD::Zero(p.num_nodes(), 2);
  const int cx = 3, cy = 5;
  s(cx + p.nx * cy, 0) = 0.7;
  const auto rate = burgers_rhs(s, p);
  for (int iy = 0; iy < p.ny; ++iy) {
    for (int ix = 0; ix < p.nx; ++ix) {
      const bool inside = std::abs(ix - cx) + std::abs(iy - cy) <= 1;
      if (!inside) {
        EXPECT_EQ(rate(ix + p.nx * iy, 0), 0.0) << ix << "," << iy;
      }
    }
  }
  EXPECT_NE(rate(cx + p.nx * cy, 0), 0.0);
  EXPECT_NE(rate(cx + 1 + p.nx * cy, 0), 0.0);
  EXPECT_NE(rate(cx + p.nx * (cy + 1), 0), 0.0);
}

TEST(BurgersRhs, RejectsNonFiniteState) {
  const auto p = small_burgers(4);
  MatrixD s = MatrixD::Zero(p.num_nodes(), 2);
  s(2, 1) = std::nan("");
  EXPECT_THROW(burgers_rhs(s, p), NumericalError);
  EXPECT_THROW(burgers_rhs(MatrixD::Zero(5, 2), p), ValidationError);
}

TEST(BurgersParams, StabilityGuard) {
  BurgersParams p;
  p.dx = p.dy = 0.02;
  p.dt = 1e-3;
  EXPECT_TRUE(p.diffusion_stable());
  p.dt = 0.02 * 0.02 / (4 * p.nu) * 1.01;
  EXPECT_FALSE(p.diffusion_stable());
}

TEST(GrayScottRhs, ReactionExamples) {
  GrayScottParams p;
  p.n = 4;
  MatrixD s(p.num_nodes(), 2);
  s.col(0).setOnes();
  s.col(1).setZero();
  EXPECT_EQ(gs_rhs(s, p).cwiseAbs().maxCoeff(), 0.0);
  s.setZero();
  const auto r = gs_rhs(s, p);
  EXPECT_EQ((r.col(0).array() - p.alpha).abs().maxCoeff(), 0.0);
  EXPECT_EQ(r.col(1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(GrayScottRhs, UniformStateHasNoDiffusion) {
  GrayScottParams p;
  p.n = 5;
  MatrixD s(p.num_nodes(), 2);
  const double u = 0.4, v = 0.3;
  s.col(0).setConstant(u);
  s.col(1).setConstant(v);
  const auto r = gs_rhs(s, p);
  EXPECT_NEAR(r(7, 0), -u * v * v + p.alpha * (1 - u), 1e-15);
  EXPECT_NEAR(r(7, 1), u * v * v - (p.alpha + p.beta) * v, 1e-15);
}

TEST(GrayScottRhs, LaplacianUsesSevenPointStencil) {
  GrayScottParams p;
  p.n = 6;
  MatrixD s = MatrixD::Zero(p.num_nodes(), 2);
  auto at = [&](int x, int y, int z) { return x + p.n * (y + p.n * z); };
  s(at(2, 2, 2), 1) = 1.0;
  const auto r = gs_rhs(s, p);
  int nonzero = 0;
  for (Eigen::Index i = 0; i < r.rows(); ++i) nonzero += r(i, 1) != 0.0;
  EXPECT_EQ(nonzero, 7);
  EXPECT_DOUBLE_EQ(r(at(3, 2, 2), 1), p.Dv / (p.dx * p.dx));
}

TEST(Rk4, LinearOdeIsTheFourTermTruncation) {
  const double lam = -1.7, dt = 0.3;
  MatrixD y(2, 1);
  y << 1.0, -2.5;
  const auto out = rk4_step([lam](const MatrixD& s) -> MatrixD { return lam * s; }, y, dt);
  const double z = lam * dt;
  const double factor = 1 + z + z * z / 2 + z * z * z / 6 + z * z * z * z / 24;
  EXPECT_NEAR(out(0, 0), factor * y(0, 0), 1e-15);
  EXPECT_NEAR(out(1, 0), factor * y(1, 0), 1e-15);
}

TEST(Rk4, ZeroRateLeavesStateUnchanged) {
  MatrixD y = MatrixD::Random(4, 3);
  const auto out = rk4_step([](const MatrixD& s) -> MatrixD { return MatrixD::Zero(s.rows(), s.cols()); }, y, 0.1);
  EXPECT_EQ(out, y);
}

TEST(Rk4, RejectsBadStepAndNonFiniteStages) {
  MatrixD y = MatrixD::Ones(2, 1);
  auto f = [](const MatrixD& s) -> MatrixD { return s; };
  EXPECT_THROW(rk4_step(f, y, 0.0), ValidationError);
  auto bad = [](const MatrixD& s) -> MatrixD { return s * std::numeric_limits<double>::infinity(); };
  EXPECT_THROW(rk4_step(bad, y, 0.1), NumericalError);
}

TEST(Rk4, ObservedOrderOnBurgers) {
  // Richardson oracle: errors against a dt/8 reference at dt and dt/2.
  auto p = small_burgers(32);
  p.seed = 3;
  const auto ic = burgers_ic(p);
  const double t_final = 0.02;
  auto run = [&](double dt) {
    auto q = p;
    q.dt = dt;
    const int steps = static_cast<int>(std::lround(t_final / dt));
    return simulate(q, ic, steps, steps).frames.back();
  };
  const double dt = 2e-3;
  const auto ref = run(dt / 8);
  const double e1 = (run(dt) - ref).cwiseAbs().maxCoeff();
  const double e2 = (run(dt / 2) - ref).cwiseAbs().maxCoeff();
  EXPECT_GE(std::log2(e1 / e2), 3.8);
}

TEST(BurgersIc, RangeAndDeterminism) {
  for (std::uint64_t seed : {0u, 1u, 17u}) {
    auto p = small_burgers();
    p.seed = seed;
    const auto a = burgers_ic(p);
    EXPECT_EQ(a, burgers_ic(p));
    // |u0| <= (2 + |c|) / 3 <= 1 with c in [-1, 1]
    EXPECT_LE(a.cwiseAbs().maxCoeff(), 1.0 + 1e-15);
    // The normalized series reaches +-2/3 around its offset somewhere.
    for (int k = 0; k < 2; ++k) {
      const double span = a.col(k).maxCoeff() - a.col(k).minCoeff();
      EXPECT_GE(span, 2.0 / 3.0 - 1e-12);
      EXPECT_LE(span, 4.0 / 3.0 + 1e-12);
    }
  }
  auto p = small_burgers();
  p.seed = 1;
  auto q = p;
  q.seed = 2;
  EXPECT_NE(burgers_ic(p), burgers_ic(q));
}

TEST(BurgersIc, SingleModeIsConstant) {
  auto p = small_burgers();
  p.n_a = p.n_b = 0;
  const auto a = burgers_ic(p);
  for (int k = 0; k < 2; ++k) {
    EXPECT_EQ(a.col(k).maxCoeff(), a.col(k).minCoeff());
    // (2 * sign(lambda) + c) / 3 with c in [-1, 1]
    const double m = std::abs(a(0, k));
    EXPECT_GE(m, 1.0 / 3.0 - 1e-15);
    EXPECT_LE(m, 1.0 + 1e-15);
  }
}

TEST(GrayScottIc, NoiseRatioExamples) {
  GrayScottParams p;
  p.n = 8;
  p.rt = 0.0;
  const auto a = gs_ic(p);
  EXPECT_TRUE((a.col(0).array() == 1.0).all());
  EXPECT_TRUE((a.col(1).array() == 0.0).all());

  p.rt = 1.0;
  const auto b = gs_ic(p);
  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < b.rows(); ++i) {
    const double lu = normal(rng);
    const double lv = normal(rng);
    EXPECT_EQ(b(i, 0), lu);
    EXPECT_EQ(b(i, 1), lv);
  }

  p.rt = 1.5;
  EXPECT_THROW(gs_ic(p), ValidationError);
}

TEST(GrayScottIc, MomentsMatchAffineGaussian) {
  GrayScottParams p;
  p.n = 40;
  p.rt = 0.1;
  const auto a = gs_ic(p);
  const double n = static_cast<double>(a.rows());
  const double mean = a.col(0).mean();
  const double var = (a.col(0).array() - mean).square().sum() / (n - 1);
  // 64000 samples: standard errors 4e-4 (mean) and 5.6e-5 (variance).
  EXPECT_NEAR(mean, 0.9, 2e-3);
  EXPECT_NEAR(var, 0.01, 3e-4);
  EXPECT_NEAR(a.col(1).mean(), 0.0, 2e-3);
}

TEST(Simulate, FrameCountAndDatasetStep) {
  auto p = small_burgers(8);
  const auto traj = simulate(p, burgers_ic(p), 20, 5);
  EXPECT_EQ(traj.length(), 5u);
  EXPECT_DOUBLE_EQ(traj.dt_dataset, 5 * p.dt);
  EXPECT_DOUBLE_EQ(BurgersParams{}.dt * 5, 0.001);
  EXPECT_EQ(traj.physics_meta.at("nu"), p.nu);
  EXPECT_EQ(traj.frames.front(), burgers_ic(p));
  EXPECT_THROW(simulate(p, burgers_ic(p), 21, 5), ValidationError);
}

TEST(Simulate, GrayScottFixedPointIsPreserved) {
  GrayScottParams p;
  p.n = 6;
  p.rt = 0.0;
  const auto traj = simulate(p, gs_ic(p), 100, 10);
  for (const auto& f : traj.frames) {
    EXPECT_LT((f.col(0).array() - 1.0).abs().maxCoeff(), 1e-14);
    EXPECT_LT(f.col(1).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Simulate, PeriodicShiftEquivariance) {
  auto p = small_burgers(12);
  p.seed = 5;
  const auto ic = burgers_ic(p);
  const auto a = simulate(p, ic, 30, 10);
  const auto b = simulate(p, shift_x(ic, p.nx, p.ny), 30, 10);
  for (std::size_t t = 0; t < a.length(); ++t)
    EXPECT_LE((shift_x(a.frames[t], p.nx, p.ny) - b.frames[t]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Simulate, DeterministicUnderFixedSeed) {
  auto p = small_burgers(8);
  p.seed = 9;
  EXPECT_EQ(simulate(p, burgers_ic(p), 10, 5).frames, simulate(p, burgers_ic(p), 10, 5).frames);
}

TEST(Simulate, BlowUpNamesTheStep) {
  MatrixD y = MatrixD::Ones(3, 1);
  auto growth = [](const MatrixD& s) -> MatrixD { return 50.0 * s; };
  try {
    simulate(growth, y, 0.1, 100, 1);
    FAIL() << "expected blow-up";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

}  // namespace
}  // namespace cignn
