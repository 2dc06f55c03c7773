#pragma once

#include "cignn/tensor.hpp"

#include <random>
#include <string>
#include <vector>

namespace cignn {

struct MlpSpec {
  int in = 0;
  int hidden = 0;
  int out = 0;
  int hidden_layers = 2;
  bool layer_norm = true;
};

/// hidden_layers x (Linear + GELU), then a linear output layer, then an
/// optional LayerNorm with learnable gain and bias.
template <class T>
struct Mlp {
  std::vector<Matrix<T>> weights;  // in x out
  std::vector<Matrix<T>> biases;   // 1 x out
  Matrix<T> ln_gain;               // 1 x out; empty without layer norm
  Matrix<T> ln_bias;

  bool empty() const { return weights.empty(); }
  bool has_layer_norm() const { return ln_gain.size() > 0; }
  Eigen::Index in_dim() const { return weights.front().rows(); }
  Eigen::Index out_dim() const { return weights.back().cols(); }
  std::size_t parameter_count() const;

  /// f(name, tensor) for every parameter tensor, in a fixed order.
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    visit_impl(*this, prefix, f);
  }
  template <class F>
  void visit(const std::string& prefix, F&& f) const {
    visit_impl(*this, prefix, f);
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& self, const std::string& prefix, F& f) {
    for (std::size_t k = 0; k < self.weights.size(); ++k) {
      f(prefix + ".linear" + std::to_string(k) + ".weight", self.weights[k]);
      f(prefix + ".linear" + std::to_string(k) + ".bias", self.biases[k]);
    }
    if (self.has_layer_norm()) {
      f(prefix + ".norm.gain", self.ln_gain);
      f(prefix + ".norm.bias", self.ln_bias);
    }
  }
};

/// Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); gain 1, bias 0.
template <class T>
Mlp<T> make_mlp(const MlpSpec& spec, std::mt19937_64& rng);

template <class T>
Mlp<T> zeros_like(const Mlp<T>& mlp);

template <class T>
struct MlpTape {
  std::vector<Matrix<T>> inputs;  // input of each linear layer
  std::vector<Matrix<T>> pre;     // pre-activation of each hidden layer
  Matrix<T> xhat;                 // normalized output before gain/bias
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std;
};

inline constexpr double kLayerNormEps = 1e-5;

template <class T>
Matrix<T> gelu(const Matrix<T>& x);
template <class T>
Matrix<T> gelu_derivative(const Matrix<T>& x);

/// Row-wise forward pass. Fills `tape` when given.
template <class T>
Matrix<T> mlp_forward(const Mlp<T>& mlp, const Matrix<T>& x, MlpTape<T>* tape = nullptr);

/// Accumulates parameter gradients into `grad` and returns dL/dx.
template <class T>
Matrix<T> mlp_backward(const Mlp<T>& mlp, const MlpTape<T>& tape, const Matrix<T>& dy, Mlp<T>& grad);

/// Forward pass that starts from the first layer's pre-activation
/// z0 = x W0 + b0, for callers that assemble x W0 without materializing x.
template <class T>
Matrix<T> mlp_forward_pre(const Mlp<T>& mlp, Matrix<T> z0, MlpTape<T>* tape);

/// Reverse of mlp_forward_pre: accumulates every gradient except that of W0
/// and returns dL/dz0.
template <class T>
Matrix<T> mlp_backward_pre(const Mlp<T>& mlp, const MlpTape<T>& tape, const Matrix<T>& dy, Mlp<T>& grad);

}  // namespace cignn
