#include "cignn/error.hpp"
#include "cignn/mlp.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace cignn {
namespace {

double gelu_oracle(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

TEST(Mlp, ZeroWeightsGiveZeroOutputBeforeNormalization) {
  std::mt19937_64 rng(1);
  auto mlp = zeros_like(make_mlp<double>({3, 5, 4, 2, false}, rng));
  const MatrixD x = MatrixD::Random(6, 3);
  EXPECT_EQ(mlp_forward(mlp, x).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mlp, HandComposedTwoLayerCase) {
  Mlp<double> mlp;
  mlp.weights = {MatrixD::Identity(2, 2), MatrixD(2, 2)};
  mlp.weights[1] << 1.5, -2.0, 0.25, 3.0;
  mlp.biases = {MatrixD::Zero(1, 2), MatrixD(1, 2)};
  mlp.biases[1] << 0.1, -0.3;
  MatrixD x(1, 2);
  x << 0.7, -1.3;
  const auto y = mlp_forward(mlp, x);
  const double g0 = gelu_oracle(0.7), g1 = gelu_oracle(-1.3);
  EXPECT_NEAR(y(0, 0), g0 * 1.5 + g1 * 0.25 + 0.1, 1e-15);
  EXPECT_NEAR(y(0, 1), g0 * -2.0 + g1 * 3.0 - 0.3, 1e-15);
}

TEST(Mlp, GeluAndDerivativeMatchOracles) {
  MatrixD x(1, 5);
  x << -3.0, -0.5, 0.0, 0.4, 2.5;
  const auto g = gelu(x);
  const auto d = gelu_derivative(x);
  for (int k = 0; k < 5; ++k) {
    EXPECT_NEAR(g(0, k), gelu_oracle(x(0, k)), 1e-15);
    const double h = 1e-6;
    EXPECT_NEAR(d(0, k), (gelu_oracle(x(0, k) + h) - gelu_oracle(x(0, k) - h)) / (2 * h), 1e-9);
  }
}

TEST(Mlp, OutputShapeAndLayerNormStatistics) {
  std::mt19937_64 rng(2);
  const auto mlp = make_mlp<double>({7, 16, 9, 2, true}, rng);
  EXPECT_EQ(mlp.weights.size(), 3u);
  const MatrixD x = MatrixD::Random(11, 7);
  const auto y = mlp_forward(mlp, x);
  EXPECT_EQ(y.rows(), 11);
  EXPECT_EQ(y.cols(), 9);
  // Gain 1 and bias 0 at initialization: each row has mean 0 and unit variance.
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    EXPECT_NEAR(y.row(r).mean(), 0.0, 1e-12);
    EXPECT_NEAR(y.row(r).squaredNorm() / 9.0, 1.0, 1e-3);
  }
  EXPECT_THROW(mlp_forward(mlp, MatrixD(MatrixD::Zero(2, 6))), ValidationError);
}

TEST(Mlp, ParameterCountAndInitializationRange) {
  std::mt19937_64 rng(3);
  const auto mlp = make_mlp<double>({4, 8, 3, 2, true}, rng);
  EXPECT_EQ(mlp.parameter_count(), 4u * 8 + 8 + 8 * 8 + 8 + 8 * 3 + 3 + 3 + 3);
  EXPECT_LE(mlp.weights[0].cwiseAbs().maxCoeff(), 1.0 / std::sqrt(4.0));
  EXPECT_LE(mlp.weights[1].cwiseAbs().maxCoeff(), 1.0 / std::sqrt(8.0));
  EXPECT_EQ(mlp.ln_gain, MatrixD::Ones(1, 3));
}

// Central differences on every parameter and input entry of a small MLP.
TEST(Mlp, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  auto mlp = make_mlp<double>({3, 6, 4, 2, true}, rng);
  mlp.ln_gain.setRandom();
  const MatrixD x = MatrixD::Random(5, 3);
  const MatrixD w = MatrixD::Random(5, 4);
  auto loss = [&](const Mlp<double>& m, const MatrixD& in) { return mlp_forward(m, in).cwiseProduct(w).sum(); };
  MlpTape<double> tape;
  mlp_forward(mlp, x, &tape);
  auto grad = zeros_like(mlp);
  const MatrixD dx = mlp_backward(mlp, tape, w, grad);
  const double eps = 1e-6;
  double worst = 0.0;
  std::vector<MatrixD*> params, grads;
  mlp.visit("m", [&](const std::string&, MatrixD& t) { params.push_back(&t); });
  grad.visit("m", [&](const std::string&, MatrixD& t) { grads.push_back(&t); });
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (Eigen::Index i = 0; i < params[k]->size(); ++i) {
      double& v = params[k]->data()[i];
      const double keep = v;
      v = keep + eps;
      const double up = loss(mlp, x);
      v = keep - eps;
      const double down = loss(mlp, x);
      v = keep;
      worst = std::max(worst, std::abs((up - down) / (2 * eps) - grads[k]->data()[i]));
    }
  }
  MatrixD xp = x;
  for (Eigen::Index i = 0; i < xp.size(); ++i) {
    const double keep = xp.data()[i];
    xp.data()[i] = keep + eps;
    const double up = loss(mlp, xp);
    xp.data()[i] = keep - eps;
    const double down = loss(mlp, xp);
    xp.data()[i] = keep;
    worst = std::max(worst, std::abs((up - down) / (2 * eps) - dx.data()[i]));
  }
  EXPECT_LT(worst, 1e-7);
}

TEST(Mlp, PreActivationEntryMatchesFullForward) {
  std::mt19937_64 rng(5);
  const auto mlp = make_mlp<double>({3, 6, 4, 2, true}, rng);
  const MatrixD x = MatrixD::Random(5, 3);
  MatrixD z0 = x * mlp.weights[0];
  z0.rowwise() += mlp.biases[0].row(0);
  EXPECT_LT((mlp_forward_pre<double>(mlp, z0, nullptr) - mlp_forward(mlp, x)).cwiseAbs().maxCoeff(), 1e-14);
}

}  // namespace
}  // namespace cignn
