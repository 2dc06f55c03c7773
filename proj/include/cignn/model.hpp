#pragma once

#include "cignn/mesh_graph.hpp"
#include "cignn/mlp.hpp"
#include "cignn/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace cignn {

/// full: asymmetric + symmetric flux branch, gate frozen at 1.
/// minus: asymmetric branch only, gate frozen at 1.
/// star: asymmetric branch only, gate trainable (initialized to 1).
enum class Variant { full, minus, star };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& name);

struct ModelConfig {
  int state_dim = 2;  // d
  int space_dim = 2;  // m
  int latent = 128;   // c
  int layers = 4;     // L
  int mlp_hidden_layers = 2;
  Variant variant = Variant::full;
  bool time_block = true;
  bool global_features = false;

  int node_input_dim() const { return state_dim + space_dim + kNodeTypeCount; }
  int edge_input_dim() const { return space_dim + 3; }
  bool has_flux() const { return variant == Variant::full; }
  bool gate_trainable() const { return variant == Variant::star; }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class T>
struct LayerParams {
  Mlp<T> edge;     // [h_i | h_j | e_ij (| g)] -> c
  Mlp<T> node;     // [h_i | sum_j e_ij (| g)] -> c
  Mlp<T> flux;     // c -> c on e*_ji + e*_ij; empty unless variant full
  Matrix<T> gate;  // 1 x c, multiplies e*_ij in the asymmetric term
  Mlp<T> global;   // [g | sum_i h_i | sum_i ebar_i] -> c; empty unless global features
};

template <class T>
struct ModelParams {
  Mlp<T> encoder_node;
  Mlp<T> encoder_edge;
  std::vector<LayerParams<T>> layers;
  Matrix<T> beta;   // 1 x L, scales K_j - h0 in the input of layer j
  Matrix<T> alpha;  // 1 x L raw increment weights, renormalized to sum 1
  Mlp<T> decoder;

  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }
  std::size_t parameter_count() const;

 private:
  template <class Self, class F>
  static void visit_impl(Self& self, F& f) {
    self.encoder_node.visit("encoder.node", f);
    self.encoder_edge.visit("encoder.edge", f);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      const std::string p = "layer" + std::to_string(l);
      auto& layer = self.layers[l];
      layer.edge.visit(p + ".edge", f);
      layer.node.visit(p + ".node", f);
      if (!layer.flux.empty()) layer.flux.visit(p + ".flux", f);
      f(p + ".gate", layer.gate);
      if (!layer.global.empty()) layer.global.visit(p + ".global", f);
    }
    f(std::string("time.beta"), self.beta);
    f(std::string("time.alpha"), self.alpha);
    self.decoder.visit("decoder", f);
  }
};

template <class T>
ModelParams<T> zeros_like(const ModelParams<T>& params);

template <class T, class U>
ModelParams<T> cast_params(const ModelParams<U>& params);

template <class T>
struct Model {
  ModelConfig config;
  ModelParams<T> params;

  /// Gates are trainable only in the star variant; everything else always.
  bool trainable(const std::string& tensor_name) const;
};

/// Fresh model with seeded initialization; gates and beta start at 1 and
/// alpha uniform.
template <class T>
Model<T> build_variant(const ModelConfig& config, std::uint64_t seed);

/// Precomputed graph topology and static encoder inputs.
template <class T>
struct GraphContext {
  std::vector<std::uint32_t> src;
  std::vector<std::uint32_t> dst;
  std::vector<std::uint32_t> reverse;
  Matrix<T> node_static;  // N x (m + 4): position | one-hot node type
  Matrix<T> edge_inputs;  // E x (m + 3): rel_pos | distance | angle_x | angle_y
  std::vector<GhostLink> ghosts;
  std::vector<std::uint32_t> dirichlet_nodes;
  std::size_t num_nodes = 0;
  std::size_t num_real = 0;

  std::size_t num_edges() const { return src.size(); }
};

template <class T>
GraphContext<T> make_graph_context(const MeshGraph& graph);

/// Test hook that corrupts the asymmetric branch (e*_ji + w o e*_ij instead of
/// e*_ji - w o e*_ij); used to check that the conservation check can fail.
struct FaultInjection {
  bool flip_skew_sign = false;
};

template <class T>
struct LayerTape {
  Matrix<T> x_in;
  Matrix<T> e_in;
  Matrix<T> g_in;  // 1 x c; empty without global features
  MlpTape<T> edge;
  Matrix<T> e_star;
  Matrix<T> skew;  // asymmetric component actually used
  MlpTape<T> flux;
  MlpTape<T> node;
  MlpTape<T> global;
};

template <class T>
struct StepTape {
  MlpTape<T> encoder;
  std::vector<Matrix<T>> K;  // K_0 = h0, K_{l+1} = output of layer l
  std::vector<Matrix<T>> g;  // global state before each layer (when enabled)
  std::vector<LayerTape<T>> layers;
  Matrix<T> h_final;
  MlpTape<T> decoder;
  Eigen::Index state_cols = 0;
};

template <class T>
struct LayerOutput {
  Matrix<T> x;
  Matrix<T> e;
  Matrix<T> g;  // 1 x c; empty without global features
};

/// One processor layer on input node features x and edge features e:
/// e* = phi_e(x_i | x_j | e_ij), e+ = (e*_ji - w o e*_ij) + phi(e*_ji + e*_ij),
/// x+ = x + phi_v(x_i | sum_j e+_ij).
template <class T>
LayerOutput<T> symmpnn_layer(const LayerParams<T>& p, const GraphContext<T>& ctx, const Matrix<T>& x,
                             const Matrix<T>& e, const Matrix<T>* g = nullptr, LayerTape<T>* tape = nullptr,
                             const FaultInjection& fault = {});

template <class T>
struct EdgeEncoding {
  Matrix<T> e0;
  MlpTape<T> tape;
};

template <class T>
EdgeEncoding<T> encode_edges(const Model<T>& model, const GraphContext<T>& ctx, bool keep_tape);

/// Encoder node features h0 = phi_v^en(u | x | onehot(type)).
template <class T>
Matrix<T> encode_nodes(const Model<T>& model, const GraphContext<T>& ctx, const Matrix<T>& u,
                       MlpTape<T>* tape = nullptr);

/// alpha / sum(alpha); falls back to uniform when |sum| < 1e-6.
template <class T>
Matrix<T> normalized_alpha(const Matrix<T>& alpha, bool* fell_back = nullptr);

/// Latent integrator: h0 + sum_j alpha_norm_j (K_{j+1} - h0).
template <class T>
Matrix<T> time_block(const std::vector<Matrix<T>>& K, const Matrix<T>& alpha_raw);

/// One SymMPNN step: encoder, L processor layers, time block, residual decoder.
/// `u` covers every graph node (ghosts included) in normalized units.
template <class T>
Matrix<T> forward_step(const Model<T>& model, const GraphContext<T>& ctx, const Matrix<T>& e0,
                       const Matrix<T>& u, StepTape<T>* tape = nullptr,
                       const FaultInjection& fault = {});

template <class T>
Matrix<T> forward_step(const Model<T>& model, const GraphContext<T>& ctx, const Matrix<T>& u);

/// Reverse pass of forward_step. Accumulates into `grad`, adds dL/de0 into
/// `d_e0` and returns dL/du.
template <class T>
Matrix<T> backward_step(const Model<T>& model, const GraphContext<T>& ctx, const StepTape<T>& tape,
                        const Matrix<T>& d_uhat, ModelParams<T>& grad, Matrix<T>& d_e0);

template <class T>
void backward_edges(const Model<T>& model, const EdgeEncoding<T>& enc, const Matrix<T>& d_e0,
                    ModelParams<T>& grad);

/// Copies each ghost node's state from its source node.
template <class T>
void pad_periodic(const GraphContext<T>& ctx, Matrix<T>& state);

/// Autoregressive prediction of `steps` states. `pad` runs on every
/// prediction before it becomes the next input (default: periodic ghosts).
template <class T>
std::vector<Matrix<T>> rollout(const Model<T>& model, const GraphContext<T>& ctx, const Matrix<T>& u0,
                               int steps,
                               const std::function<void(int, Matrix<T>&)>& pad = nullptr);

}  // namespace cignn
