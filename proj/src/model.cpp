#include "cignn/model.hpp"

#include "cignn/error.hpp"

#include <cmath>

namespace cignn {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::minus: return "minus";
    case Variant::star: return "star";
  }
  return "full";
}

Variant variant_from_string(const std::string& name) {
  if (name == "full") return Variant::full;
  if (name == "minus") return Variant::minus;
  if (name == "star") return Variant::star;
  throw ValidationError("unknown variant '" + name + "' (expected full|minus|star)");
}

void ModelConfig::validate() const {
  require(state_dim >= 1, "model: state_dim must be >= 1");
  require(space_dim == 2 || space_dim == 3, "model: space_dim must be 2 or 3");
  require(latent >= 1, "model: latent width must be >= 1");
  require(layers >= 1, "model: at least one processor layer required");
  require(mlp_hidden_layers >= 0, "model: mlp_hidden_layers must be >= 0");
}

template <class T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  visit([&n](const std::string&, const Matrix<T>& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

template <class T>
ModelParams<T> zeros_like(const ModelParams<T>& params) {
  ModelParams<T> z = params;
  z.visit([](const std::string&, Matrix<T>& m) { m.setZero(); });
  return z;
}

template <class T, class U>
ModelParams<T> cast_params(const ModelParams<U>& params) {
  auto cast_mlp = [](const Mlp<U>& m) {
    Mlp<T> out;
    for (const auto& w : m.weights) out.weights.push_back(w.template cast<T>());
    for (const auto& b : m.biases) out.biases.push_back(b.template cast<T>());
    out.ln_gain = m.ln_gain.template cast<T>();
    out.ln_bias = m.ln_bias.template cast<T>();
    return out;
  };
  ModelParams<T> out;
  out.encoder_node = cast_mlp(params.encoder_node);
  out.encoder_edge = cast_mlp(params.encoder_edge);
  for (const auto& l : params.layers)
    out.layers.push_back({cast_mlp(l.edge), cast_mlp(l.node), cast_mlp(l.flux), l.gate.template cast<T>(),
                          cast_mlp(l.global)});
  out.beta = params.beta.template cast<T>();
  out.alpha = params.alpha.template cast<T>();
  out.decoder = cast_mlp(params.decoder);
  return out;
}

template <class T>
bool Model<T>::trainable(const std::string& name) const {
  const std::string suffix = ".gate";
  const bool is_gate = name.size() > suffix.size() &&
                       name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  return !is_gate || config.gate_trainable();
}

template <class T>
Model<T> build_variant(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const int c = config.latent;
  const int hl = config.mlp_hidden_layers;
  const int g = config.global_features ? c : 0;
  Model<T> model;
  model.config = config;
  auto& p = model.params;
  p.encoder_node = make_mlp<T>({config.node_input_dim(), c, c, hl, true}, rng);
  p.encoder_edge = make_mlp<T>({config.edge_input_dim(), c, c, hl, true}, rng);
  for (int l = 0; l < config.layers; ++l) {
    LayerParams<T> layer;
    layer.edge = make_mlp<T>({3 * c + g, c, c, hl, true}, rng);
    layer.node = make_mlp<T>({2 * c + g, c, c, hl, true}, rng);
    if (config.has_flux()) {
      layer.flux = make_mlp<T>({c, c, c, hl, true}, rng);
      // Zero output gain: the flux branch starts silent, so full equals minus at init.
      layer.flux.ln_gain.setZero();
    }
    layer.gate = Matrix<T>::Ones(1, c);
    if (config.global_features) layer.global = make_mlp<T>({3 * c, c, c, hl, true}, rng);
    p.layers.push_back(std::move(layer));
  }
  p.beta = Matrix<T>::Ones(1, config.layers);
  p.alpha = Matrix<T>::Ones(1, config.layers);
  p.decoder = make_mlp<T>({c, c, config.state_dim, hl, false}, rng);
  return model;
}

template <class T>
GraphContext<T> make_graph_context(const MeshGraph& graph) {
  GraphContext<T> ctx;
  ctx.num_nodes = graph.num_nodes();
  ctx.num_real = graph.num_real_nodes();
  ctx.reverse = reverse_edge_index(graph);
  for (const auto& e : graph.edges) {
    ctx.src.push_back(e.src);
    ctx.dst.push_back(e.dst);
  }
  const int m = graph.space_dim();
  ctx.node_static = Matrix<T>::Zero(static_cast<Eigen::Index>(ctx.num_nodes), m + kNodeTypeCount);
  ctx.node_static.leftCols(m) = graph.positions.cast<T>();
  for (std::size_t i = 0; i < ctx.num_nodes; ++i) {
    ctx.node_static(i, m + static_cast<int>(graph.node_type[i])) = T(1);
    if (graph.node_type[i] == NodeType::dirichlet_boundary)
      ctx.dirichlet_nodes.push_back(static_cast<std::uint32_t>(i));
  }
  const auto geo = compute_edge_geometry(graph);
  ctx.edge_inputs.resize(static_cast<Eigen::Index>(graph.num_edges()), m + 3);
  for (std::size_t e = 0; e < graph.num_edges(); ++e) {
    ctx.edge_inputs.row(e).head(m) = geo.rel_pos.row(e).cast<T>();
    ctx.edge_inputs(e, m) = static_cast<T>(geo.distance[e]);
    ctx.edge_inputs(e, m + 1) = static_cast<T>(geo.angle_x[e]);
    ctx.edge_inputs(e, m + 2) = static_cast<T>(geo.angle_y[e]);
  }
  ctx.ghosts = graph.ghost_map;
  return ctx;
}

template <class T>
EdgeEncoding<T> encode_edges(const Model<T>& model, const GraphContext<T>& ctx, bool keep_tape) {
  EdgeEncoding<T> enc;
  enc.e0 = mlp_forward(model.params.encoder_edge, ctx.edge_inputs, keep_tape ? &enc.tape : nullptr);
  return enc;
}

template <class T>
Matrix<T> encode_nodes(const Model<T>& model, const GraphContext<T>& ctx, const Matrix<T>& u, MlpTape<T>* tape) {
  if (u.rows() != static_cast<Eigen::Index>(ctx.num_nodes) || u.cols() != model.config.state_dim)
    throw ValidationError("encode: state must be N x d with N = " + std::to_string(ctx.num_nodes) +
                          ", d = " + std::to_string(model.config.state_dim));
  Matrix<T> in(u.rows(), u.cols() + ctx.node_static.cols());
  in << u, ctx.node_static;
  return mlp_forward(model.params.encoder_node, in, tape);
}

template <class T>
Matrix<T> normalized_alpha(const Matrix<T>& alpha, bool* fell_back) {
  const T sum = alpha.sum();
  const bool degenerate = !(std::abs(static_cast<double>(sum)) >= 1e-6);
  if (fell_back) *fell_back = degenerate;
  if (degenerate) return Matrix<T>::Constant(1, alpha.cols(), T(1) / static_cast<T>(alpha.cols()));
  return alpha / sum;
}

template <class T>
Matrix<T> time_block(const std::vector<Matrix<T>>& K, const Matrix<T>& alpha_raw) {
  require(K.size() == static_cast<std::size_t>(alpha_raw.cols()) + 1, "time_block: need L+1 stacked states");
  const Matrix<T> a = normalized_alpha(alpha_raw);
  // Width-(L+1) filter over the layer axis: tap 0 carries 1 - sum(a) (zero up
  // to rounding), taps 1..L carry a.
  Matrix<T> out = K[0] * (T(1) - a.sum());
  for (std::size_t j = 1; j < K.size(); ++j) out += a(0, j - 1) * K[j];
  return out;
}

template <class T>
LayerOutput<T> symmpnn_layer(const LayerParams<T>& p, const GraphContext<T>& ctx, const Matrix<T>& x,
                             const Matrix<T>& e, const Matrix<T>* g, LayerTape<T>* tape,
                             const FaultInjection& fault) {
  const auto c = x.cols();
  const auto ne = static_cast<Eigen::Index>(ctx.num_edges());
  const auto nn = x.rows();
  const Eigen::Index gw = g ? c : 0;

  // First edge layer on [x_src | x_dst | e | g], assembled from per-node
  // products so the E x 3c input is never formed.
  const Matrix<T>& w0 = p.edge.weights.front();
  Matrix<T> z0 = e * w0.middleRows(2 * c, c);
  {
    const Matrix<T> xs = x * w0.topRows(c);
    const Matrix<T> xd = x * w0.middleRows(c, c);
    for (Eigen::Index k = 0; k < ne; ++k) z0.row(k) += xs.row(ctx.src[k]) + xd.row(ctx.dst[k]);
  }
  Matrix<T> bias0 = p.edge.biases.front();
  if (g) bias0 += *g * w0.bottomRows(c);
  z0.rowwise() += bias0.row(0);
  Matrix<T> e_star = mlp_forward_pre(p.edge, std::move(z0), tape ? &tape->edge : nullptr);
  const Matrix<T> e_rev = gather_rows(e_star, ctx.reverse);

  const Matrix<T> gated = e_star.array().rowwise() * p.gate.row(0).array();
  Matrix<T> skew = fault.flip_skew_sign ? Matrix<T>(e_rev + gated) : Matrix<T>(e_rev - gated);
  Matrix<T> e_next = skew;
  if (!p.flux.empty()) e_next += mlp_forward(p.flux, Matrix<T>(e_rev + e_star), tape ? &tape->flux : nullptr);

  Matrix<T> agg = Matrix<T>::Zero(nn, c);
  scatter_add_rows(e_next, ctx.src, agg);

  Matrix<T> node_in(nn, 2 * c + gw);
  node_in.leftCols(c) = x;
  node_in.middleCols(c, c) = agg;
  if (g) node_in.rightCols(c).rowwise() = g->row(0);
  Matrix<T> x_next = x + mlp_forward(p.node, node_in, tape ? &tape->node : nullptr);

  LayerOutput<T> out;
  if (g) {
    Matrix<T> g_in(1, 3 * c);
    g_in << *g, x_next.colwise().sum(), agg.colwise().sum();
    out.g = mlp_forward(p.global, g_in, tape ? &tape->global : nullptr);
  }
  if (tape) {
    tape->x_in = x;
    tape->e_in = e;
    if (g) tape->g_in = *g;
    tape->e_star = std::move(e_star);
    tape->skew = std::move(skew);
  }
  out.x = std::move(x_next);
  out.e = std::move(e_next);
  return out;
}

namespace {

template <class T>
struct LayerGrads {
  Matrix<T> dx;
  Matrix<T> de;
  Matrix<T> dg;
};

// dx_next: N x c; de_next: E x c or empty; dg_next: 1 x c or empty.
template <class T>
LayerGrads<T> layer_backward(const LayerParams<T>& p, LayerParams<T>& grad, const GraphContext<T>& ctx,
                             const LayerTape<T>& tape, const Matrix<T>& dx_next, const Matrix<T>& de_next,
                             const Matrix<T>& dg_next, bool has_global, const FaultInjection& fault) {
  const auto c = dx_next.cols();
  const auto nn = dx_next.rows();
  LayerGrads<T> out;
  // Total gradient reaching x_next; it also feeds the global update.
  Matrix<T> dx = dx_next;
  Matrix<T> dagg = Matrix<T>::Zero(nn, c);
  if (has_global) {
    out.dg = Matrix<T>::Zero(1, c);
    if (dg_next.size() > 0) {
      const Matrix<T> dg_in = mlp_backward(p.global, tape.global, dg_next, grad.global);
      out.dg += dg_in.leftCols(c);
      dx.rowwise() += dg_in.middleCols(c, c).row(0);
      dagg.rowwise() += dg_in.rightCols(c).row(0);
    }
  }
  out.dx = dx;

  const Matrix<T> dnode_in = mlp_backward(p.node, tape.node, dx, grad.node);
  out.dx += dnode_in.leftCols(c);
  dagg += dnode_in.middleCols(c, c);
  if (has_global) out.dg += dnode_in.rightCols(c).colwise().sum();

  Matrix<T> de_new = gather_rows(dagg, ctx.src);
  if (de_next.size() > 0) de_new += de_next;

  Matrix<T> de_rev = de_new;
  Matrix<T> de_star;
  const T skew_sign = fault.flip_skew_sign ? T(1) : T(-1);
  if (!p.flux.empty()) {
    const Matrix<T> dsym = mlp_backward(p.flux, tape.flux, de_new, grad.flux);
    de_rev += dsym;
    de_star = dsym;
    de_star += skew_sign * Matrix<T>(de_new.array().rowwise() * p.gate.row(0).array());
  } else {
    de_star = skew_sign * Matrix<T>(de_new.array().rowwise() * p.gate.row(0).array());
  }
  grad.gate.row(0) += skew_sign * (de_new.array() * tape.e_star.array()).colwise().sum().matrix();
  // e_rev[k] = e_star[reverse[k]] and reverse is an involution.
  de_star += gather_rows(de_rev, ctx.reverse);

  const Matrix<T> dz0 = mlp_backward_pre(p.edge, tape.edge, de_star, grad.edge);
  const Matrix<T>& w0 = p.edge.weights.front();
  Matrix<T>& gw0 = grad.edge.weights.front();
  Matrix<T> s_src = Matrix<T>::Zero(nn, c);
  Matrix<T> s_dst = Matrix<T>::Zero(nn, c);
  scatter_add_rows(dz0, ctx.src, s_src);
  scatter_add_rows(dz0, ctx.dst, s_dst);
  gw0.topRows(c).noalias() += tape.x_in.transpose() * s_src;
  gw0.middleRows(c, c).noalias() += tape.x_in.transpose() * s_dst;
  gw0.middleRows(2 * c, c).noalias() += tape.e_in.transpose() * dz0;
  out.dx.noalias() += s_src * w0.topRows(c).transpose();
  out.dx.noalias() += s_dst * w0.middleRows(c, c).transpose();
  out.de = dz0 * w0.middleRows(2 * c, c).transpose();
  if (has_global) {
    const Matrix<T> dz0_sum = dz0.colwise().sum();
    gw0.bottomRows(c).noalias() += tape.g_in.transpose() * dz0_sum;
    out.dg += dz0_sum * w0.bottomRows(c).transpose();
  }
  return out;
}

}  // namespace

template <class T>
Matrix<T> forward_step(const Model<T>& model, const GraphContext<T>& ctx, const Matrix<T>& e0, const Matrix<T>& u,
                       StepTape<T>* tape, const FaultInjection& fault) {
  const auto& cfg = model.config;
  const auto& p = model.params;
  const int L = cfg.layers;
  std::vector<Matrix<T>> K;
  K.reserve(L + 1);
  K.push_back(encode_nodes(model, ctx, u, tape ? &tape->encoder : nullptr));
  const Matrix<T>& h0 = K[0];

  Matrix<T> g;
  if (cfg.global_features) g = Matrix<T>::Zero(1, cfg.latent);
  if (tape) {
    tape->layers.assign(L, {});
    tape->g.clear();
    tape->state_cols = u.cols();
  }
  Matrix<T> e = e0;
  for (int l = 0; l < L; ++l) {
    Matrix<T> x_in = cfg.time_block ? Matrix<T>(h0 + p.beta(0, l) * (K[l] - h0)) : K[l];
    if (tape && cfg.global_features) tape->g.push_back(g);
    auto out = symmpnn_layer(p.layers[l], ctx, x_in, e, cfg.global_features ? &g : nullptr,
                             tape ? &tape->layers[l] : nullptr, fault);
    K.push_back(std::move(out.x));
    e = std::move(out.e);
    if (cfg.global_features) g = std::move(out.g);
  }
  Matrix<T> h_final = cfg.time_block ? time_block(K, p.alpha) : K.back();
  Matrix<T> uhat = u + mlp_forward(p.decoder, h_final, tape ? &tape->decoder : nullptr);
  if (tape) {
    tape->K = std::move(K);
    tape->h_final = std::move(h_final);
  }
  return uhat;
}

template <class T>
Matrix<T> forward_step(const Model<T>& model, const GraphContext<T>& ctx, const Matrix<T>& u) {
  const auto enc = encode_edges(model, ctx, false);
  return forward_step(model, ctx, enc.e0, u);
}

template <class T>
Matrix<T> backward_step(const Model<T>& model, const GraphContext<T>& ctx, const StepTape<T>& tape,
                        const Matrix<T>& d_uhat, ModelParams<T>& grad, Matrix<T>& d_e0) {
  const auto& cfg = model.config;
  const auto& p = model.params;
  const int L = cfg.layers;
  const auto c = static_cast<Eigen::Index>(cfg.latent);
  const auto nn = d_uhat.rows();
  const FaultInjection no_fault;

  Matrix<T> d_u = d_uhat;
  const Matrix<T> d_hfinal = mlp_backward(p.decoder, tape.decoder, d_uhat, grad.decoder);

  // dK[j] is the gradient w.r.t. K_j; dK[0] collects everything reaching h0.
  std::vector<Matrix<T>> dK(L + 1, Matrix<T>::Zero(nn, c));
  const Matrix<T>& h0 = tape.K[0];
  if (cfg.time_block) {
    bool fell_back = false;
    const Matrix<T> a = normalized_alpha(p.alpha, &fell_back);
    dK[0] += (T(1) - a.sum()) * d_hfinal;
    Matrix<T> da_norm(1, L);
    for (int j = 0; j < L; ++j) {
      dK[j + 1] += a(0, j) * d_hfinal;
      da_norm(0, j) = d_hfinal.cwiseProduct(tape.K[j + 1] - h0).sum();
    }
    if (!fell_back) {
      const T sum = p.alpha.sum();
      const T dot = da_norm.cwiseProduct(a).sum();
      grad.alpha += (da_norm.array() - dot).matrix() / sum;
    }
  } else {
    dK[L] += d_hfinal;
  }

  Matrix<T> de;  // gradient w.r.t. the edge state leaving the current layer
  Matrix<T> dg;
  for (int l = L - 1; l >= 0; --l) {
    auto lg = layer_backward(p.layers[l], grad.layers[l], ctx, tape.layers[l], dK[l + 1], de, dg,
                             cfg.global_features, no_fault);
    if (cfg.time_block) {
      // x_in = h0 + beta_l (K_l - h0)
      const T b = p.beta(0, l);
      grad.beta(0, l) += lg.dx.cwiseProduct(tape.K[l] - h0).sum();
      if (l == 0) {
        dK[0] += lg.dx;
      } else {
        dK[l] += b * lg.dx;
        dK[0] += (T(1) - b) * lg.dx;
      }
    } else {
      dK[l] += lg.dx;
    }
    de = std::move(lg.de);
    dg = std::move(lg.dg);
  }
  if (d_e0.size() == 0)
    d_e0 = de;
  else
    d_e0 += de;

  const Matrix<T> d_enc_in = mlp_backward(p.encoder_node, tape.encoder, dK[0], grad.encoder_node);
  d_u += d_enc_in.leftCols(tape.state_cols);
  return d_u;
}

template <class T>
void backward_edges(const Model<T>& model, const EdgeEncoding<T>& enc, const Matrix<T>& d_e0, ModelParams<T>& grad) {
  mlp_backward(model.params.encoder_edge, enc.tape, d_e0, grad.encoder_edge);
}

template <class T>
void pad_periodic(const GraphContext<T>& ctx, Matrix<T>& state) {
  for (const auto& link : ctx.ghosts) state.row(link.ghost) = state.row(link.source);
}

template <class T>
std::vector<Matrix<T>> rollout(const Model<T>& model, const GraphContext<T>& ctx, const Matrix<T>& u0, int steps,
                               const std::function<void(int, Matrix<T>&)>& pad) {
  require(steps >= 1, "rollout: steps must be >= 1");
  const auto enc = encode_edges(model, ctx, false);
  std::vector<Matrix<T>> out;
  out.reserve(steps);
  Matrix<T> u = u0;
  for (int s = 0; s < steps; ++s) {
    Matrix<T> next = forward_step(model, ctx, enc.e0, u);
    if (pad)
      pad(s, next);
    else
      pad_periodic(ctx, next);
    if (!next.allFinite()) throw NumericalError("rollout: non-finite prediction at step " + std::to_string(s + 1));
    out.push_back(next);
    u = std::move(next);
  }
  return out;
}

#define CIGNN_INSTANTIATE_MODEL(T)                                                                         \
  template struct ModelParams<T>;                                                                          \
  template struct Model<T>;                                                                                \
  template ModelParams<T> zeros_like<T>(const ModelParams<T>&);                                            \
  template Model<T> build_variant<T>(const ModelConfig&, std::uint64_t);                                   \
  template GraphContext<T> make_graph_context<T>(const MeshGraph&);                                        \
  template EdgeEncoding<T> encode_edges<T>(const Model<T>&, const GraphContext<T>&, bool);                 \
  template Matrix<T> encode_nodes<T>(const Model<T>&, const GraphContext<T>&, const Matrix<T>&, MlpTape<T>*); \
  template Matrix<T> normalized_alpha<T>(const Matrix<T>&, bool*);                                         \
  template Matrix<T> time_block<T>(const std::vector<Matrix<T>>&, const Matrix<T>&);                       \
  template LayerOutput<T> symmpnn_layer<T>(const LayerParams<T>&, const GraphContext<T>&, const Matrix<T>&,  \
                                           const Matrix<T>&, const Matrix<T>*, LayerTape<T>*,               \
                                           const FaultInjection&);                                          \
  template Matrix<T> forward_step<T>(const Model<T>&, const GraphContext<T>&, const Matrix<T>&,            \
                                     const Matrix<T>&, StepTape<T>*, const FaultInjection&);              \
  template Matrix<T> forward_step<T>(const Model<T>&, const GraphContext<T>&, const Matrix<T>&);           \
  template Matrix<T> backward_step<T>(const Model<T>&, const GraphContext<T>&, const StepTape<T>&,         \
                                      const Matrix<T>&, ModelParams<T>&, Matrix<T>&);                      \
  template void backward_edges<T>(const Model<T>&, const EdgeEncoding<T>&, const Matrix<T>&, ModelParams<T>&); \
  template void pad_periodic<T>(const GraphContext<T>&, Matrix<T>&);                                       \
  template std::vector<Matrix<T>> rollout<T>(const Model<T>&, const GraphContext<T>&, const Matrix<T>&, int, \
                                             const std::function<void(int, Matrix<T>&)>&);

CIGNN_INSTANTIATE_MODEL(float)
CIGNN_INSTANTIATE_MODEL(double)

template ModelParams<float> cast_params<float, double>(const ModelParams<double>&);
template ModelParams<double> cast_params<double, float>(const ModelParams<float>&);
template ModelParams<float> cast_params<float, float>(const ModelParams<float>&);
template ModelParams<double> cast_params<double, double>(const ModelParams<double>&);

}  // namespace cignn
