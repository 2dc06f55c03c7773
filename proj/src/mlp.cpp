#include "cignn/mlp.hpp"

#include "cignn/error.hpp"

#include <unsupported/Eigen/SpecialFunctions>

#include <cmath>
#include <numbers>

namespace cignn {

template <class T>
std::size_t Mlp<T>::parameter_count() const {
  std::size_t n = 0;
  visit("", [&n](const std::string&, const Matrix<T>& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

template <class T>
Mlp<T> make_mlp(const MlpSpec& spec, std::mt19937_64& rng) {
  require(spec.in >= 1 && spec.out >= 1 && spec.hidden_layers >= 0, "make_mlp: invalid sizes");
  require(spec.hidden_layers == 0 || spec.hidden >= 1, "make_mlp: hidden width must be positive");
  Mlp<T> mlp;
  int fan_in = spec.in;
  for (int k = 0; k <= spec.hidden_layers; ++k) {
    const int fan_out = k == spec.hidden_layers ? spec.out : spec.hidden;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix<T> w(fan_in, fan_out);
    Matrix<T> b(1, fan_out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(dist(rng));
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = static_cast<T>(dist(rng));
    mlp.weights.push_back(std::move(w));
    mlp.biases.push_back(std::move(b));
    fan_in = fan_out;
  }
  if (spec.layer_norm) {
    mlp.ln_gain = Matrix<T>::Ones(1, spec.out);
    mlp.ln_bias = Matrix<T>::Zero(1, spec.out);
  }
  return mlp;
}

template <class T>
Mlp<T> zeros_like(const Mlp<T>& mlp) {
  Mlp<T> z = mlp;
  z.visit("", [](const std::string&, Matrix<T>& m) { m.setZero(); });
  return z;
}

template <class T>
Matrix<T> gelu(const Matrix<T>& x) {
  const T s = static_cast<T>(std::numbers::sqrt2 / 2.0);
  return (x.array() * T(0.5) * (T(1) + (x.array() * s).erf())).matrix();
}

template <class T>
Matrix<T> gelu_derivative(const Matrix<T>& x) {
  const T s = static_cast<T>(std::numbers::sqrt2 / 2.0);
  const T inv_sqrt_2pi = static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  const auto a = x.array();
  return (T(0.5) * (T(1) + (a * s).erf()) + a * inv_sqrt_2pi * (-T(0.5) * a.square()).exp()).matrix();
}

namespace {

template <class T>
Matrix<T> apply_norm(const Mlp<T>& mlp, Matrix<T> h, MlpTape<T>* tape) {
  if (!mlp.has_layer_norm()) return h;
  const auto width = static_cast<T>(h.cols());
  const auto mean = (h.rowwise().sum() / width).eval();
  Matrix<T> centered = h.colwise() - mean;
  const auto var = (centered.array().square().rowwise().sum() / width).eval();
  const Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std = (var + static_cast<T>(kLayerNormEps)).rsqrt().matrix();
  Matrix<T> xhat = centered.array().colwise() * inv_std.array();
  Matrix<T> y = xhat.array().rowwise() * mlp.ln_gain.row(0).array();
  y.rowwise() += mlp.ln_bias.row(0);
  if (tape) {
    tape->xhat = std::move(xhat);
    tape->inv_std = inv_std;
  }
  return y;
}

// Runs linear layers [first, end) on `h`, the input of layer `first`.
template <class T>
Matrix<T> forward_tail(const Mlp<T>& mlp, Matrix<T> h, std::size_t first, MlpTape<T>* tape) {
  const std::size_t n_linear = mlp.weights.size();
  for (std::size_t k = first; k < n_linear; ++k) {
    Matrix<T> z = h * mlp.weights[k];
    z.rowwise() += mlp.biases[k].row(0);
    if (tape) tape->inputs[k] = std::move(h);
    if (k + 1 < n_linear) {
      h = gelu(z);
      if (tape) tape->pre[k] = std::move(z);
    } else {
      h = std::move(z);
    }
  }
  return apply_norm(mlp, std::move(h), tape);
}

template <class T>
void start_tape(const Mlp<T>& mlp, MlpTape<T>* tape) {
  if (!tape) return;
  tape->inputs.assign(mlp.weights.size(), {});
  tape->pre.assign(mlp.weights.size() - 1, {});
}

// Shared reverse pass. With `pre_only` it stops at the first pre-activation
// and leaves W0's gradient to the caller.
template <class T>
Matrix<T> backward_impl(const Mlp<T>& mlp, const MlpTape<T>& tape, const Matrix<T>& dy, Mlp<T>& grad, bool pre_only) {
  Matrix<T> dz;
  if (mlp.has_layer_norm()) {
    grad.ln_gain.row(0) += (dy.array() * tape.xhat.array()).colwise().sum().matrix();
    grad.ln_bias.row(0) += dy.colwise().sum();
    const Matrix<T> dxhat = dy.array().rowwise() * mlp.ln_gain.row(0).array();
    const auto width = static_cast<T>(dy.cols());
    const auto sum_dxhat = dxhat.rowwise().sum().eval();
    const auto sum_dxhat_xhat = (dxhat.array() * tape.xhat.array()).rowwise().sum().eval();
    dz = (dxhat * width).colwise() - sum_dxhat;
    dz.array() -= tape.xhat.array().colwise() * sum_dxhat_xhat.array();
    dz.array().colwise() *= tape.inv_std.array() / width;
  } else {
    dz = dy;
  }
  for (std::size_t k = mlp.weights.size(); k-- > 0;) {
    grad.biases[k].row(0) += dz.colwise().sum();
    if (k == 0 && pre_only) return dz;
    grad.weights[k].noalias() += tape.inputs[k].transpose() * dz;
    Matrix<T> dh = dz * mlp.weights[k].transpose();
    if (k == 0) return dh;
    dz = dh.cwiseProduct(gelu_derivative(tape.pre[k - 1]));
  }
  return dz;
}

}  // namespace

template <class T>
Matrix<T> mlp_forward(const Mlp<T>& mlp, const Matrix<T>& x, MlpTape<T>* tape) {
  require(!mlp.empty(), "mlp_forward: empty MLP");
  if (x.cols() != mlp.in_dim())
    throw ValidationError("mlp_forward: input width " + std::to_string(x.cols()) + " != " +
                          std::to_string(mlp.in_dim()));
  start_tape(mlp, tape);
  return forward_tail(mlp, x, 0, tape);
}

template <class T>
Matrix<T> mlp_forward_pre(const Mlp<T>& mlp, Matrix<T> z0, MlpTape<T>* tape) {
  require(!mlp.empty(), "mlp_forward_pre: empty MLP");
  require(z0.cols() == mlp.weights.front().cols(), "mlp_forward_pre: pre-activation width mismatch");
  start_tape(mlp, tape);
  if (mlp.weights.size() == 1) return apply_norm(mlp, std::move(z0), tape);
  Matrix<T> h = gelu(z0);
  if (tape) tape->pre[0] = std::move(z0);
  return forward_tail(mlp, std::move(h), 1, tape);
}

template <class T>
Matrix<T> mlp_backward(const Mlp<T>& mlp, const MlpTape<T>& tape, const Matrix<T>& dy, Mlp<T>& grad) {
  return backward_impl(mlp, tape, dy, grad, false);
}

template <class T>
Matrix<T> mlp_backward_pre(const Mlp<T>& mlp, const MlpTape<T>& tape, const Matrix<T>& dy, Mlp<T>& grad) {
  return backward_impl(mlp, tape, dy, grad, true);
}

#define CIGNN_INSTANTIATE_MLP(T)                                                                    \
  template struct Mlp<T>;                                                                           \
  template Mlp<T> make_mlp<T>(const MlpSpec&, std::mt19937_64&);                                    \
  template Mlp<T> zeros_like<T>(const Mlp<T>&);                                                     \
  template Matrix<T> gelu<T>(const Matrix<T>&);                                                     \
  template Matrix<T> gelu_derivative<T>(const Matrix<T>&);                                          \
  template Matrix<T> mlp_forward<T>(const Mlp<T>&, const Matrix<T>&, MlpTape<T>*);                  \
  template Matrix<T> mlp_backward<T>(const Mlp<T>&, const MlpTape<T>&, const Matrix<T>&, Mlp<T>&);     \
  template Matrix<T> mlp_forward_pre<T>(const Mlp<T>&, Matrix<T>, MlpTape<T>*);                     \
  template Matrix<T> mlp_backward_pre<T>(const Mlp<T>&, const MlpTape<T>&, const Matrix<T>&, Mlp<T>&);

CIGNN_INSTANTIATE_MLP(float)
CIGNN_INSTANTIATE_MLP(double)

}  // namespace cignn
