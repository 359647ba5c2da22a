#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kcln/graph.hpp"
#include "kcln/grounding.hpp"

namespace kcln {

enum class Activation { relu, tanh, sigmoid, identity };
enum class InitScheme { uniform_scaled, zeros };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

struct NetworkConfig {
  int n_layers = 10;   // T
  int hidden_dim = 40; // K
  Activation activation = Activation::relu;
  bool share_parameters = true;
  double z = 1.0;      // context scaling constant, usually average_degree
  int input_dim = 0;   // D
  int n_labels = 0;    // L
  int n_relations = 0;

  void validate() const;
  // width feeding layer t (1-based): D for the first layer, K after
  int prev_dim(int t) const { return t == 1 ? input_dim : hidden_dim; }
};

template <typename S>
using DenseMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using DenseVector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
struct LayerWeightsT {
  DenseMatrix<S> w;               // K x K_prev
  std::vector<DenseMatrix<S>> v;  // per relation, K x K_prev
  DenseVector<S> b;               // K
};

// With shared parameters the slot list is [first layer, shared tail]; without
// sharing there is one slot per layer. The output layer is always separate.
template <typename S>
struct NetworkParamsT {
  std::vector<LayerWeightsT<S>> layers;
  DenseMatrix<S> w_out;  // L x K
  DenseVector<S> b_out;  // L
};
using NetworkParams = NetworkParamsT<double>;

// Slot index inside NetworkParamsT::layers for hidden layer t in 1..T.
inline int layer_slot(const NetworkConfig& cfg, int t) {
  if (t == 1) return 0;
  return cfg.share_parameters ? (cfg.n_layers > 1 ? 1 : 0) : t - 1;
}
inline int n_layer_slots(const NetworkConfig& cfg) {
  return cfg.share_parameters ? (cfg.n_layers > 1 ? 2 : 1) : cfg.n_layers;
}

template <typename S>
struct GatesT {
  DenseVector<S> entity;   // |V|, column gate per entity
  DenseMatrix<S> context;  // |V| x |R|, context gate per entity and relation
};
using Gates = GatesT<double>;

Gates unit_gates(int n_entities, int n_relations);

// Gamma = exp(alpha * advice_grad * flag); exp(0) is exactly 1, so unflagged
// positions keep the vanilla computation bit for bit.
Gates compute_gates(const std::vector<std::uint8_t>& entity_flags,
                    const MaskMatrix& context_flags, const Eigen::VectorXd& advice_grad,
                    double alpha);

template <typename S>
struct ForwardTraceT {
  std::vector<DenseMatrix<S>> hidden;  // hidden[0] = features, hidden[t] |V| x K
  DenseMatrix<S> probs;                // |V| x L, row-stochastic
};
using ForwardTrace = ForwardTraceT<double>;

NetworkParams init_params(const NetworkConfig& cfg, InitScheme scheme, std::uint64_t seed);

// Mean of the previous-layer rows over the in-neighborhood of i under r;
// zero vector when the neighborhood is empty.
Eigen::VectorXd context(const KnowledgeGraph& g, const Eigen::MatrixXd& h_prev,
                        EntityId i, int r);

Eigen::MatrixXd hidden_layer(const NetworkConfig& cfg, const NetworkParams& params,
                             const KnowledgeGraph& g, const Eigen::MatrixXd& h_prev, int t);

Eigen::MatrixXd gated_hidden_layer(const NetworkConfig& cfg, const NetworkParams& params,
                                   const KnowledgeGraph& g, const Eigen::MatrixXd& h_prev,
                                   int t, const Gates& gates);

// Full pass: T gated hidden layers then a softmax readout. Null gates mean
// unit gates (the ungated network follows the identical arithmetic path).
ForwardTrace forward(const NetworkConfig& cfg, const NetworkParams& params,
                     const KnowledgeGraph& g, const Eigen::MatrixXd& features,
                     const Gates* gates = nullptr);

struct Checkpoint {
  NetworkConfig config;
  NetworkParams params;
  std::optional<Gates> gates;
};

void save_checkpoint(const std::string& path, const NetworkConfig& cfg,
                     const NetworkParams& params, const Gates* gates = nullptr);
Checkpoint load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Templated core shared by the f64 and f32 training paths.

namespace net {

template <typename S>
DenseMatrix<S> context_matrix(const KnowledgeGraph& g, const DenseMatrix<S>& h_prev, int r) {
  DenseMatrix<S> c = DenseMatrix<S>::Zero(h_prev.rows(), h_prev.cols());
  for (EntityId i = 0; i < g.n_entities; ++i) {
    const auto& nb = g.in_neighbors[r][i];
    if (nb.empty()) continue;
    for (EntityId j : nb) c.row(i) += h_prev.row(j);
    c.row(i) /= S(nb.size());
  }
  return c;
}

template <typename S>
void apply_activation(Activation a, DenseMatrix<S>& x) {
  switch (a) {
    case Activation::relu:
      x = x.cwiseMax(S(0));
      break;
    case Activation::tanh:
      x = x.array().tanh().matrix();
      break;
    case Activation::sigmoid:
      x = (S(1) / (S(1) + (-x.array()).exp())).matrix();
      break;
    case Activation::identity:
      break;
  }
}

// Derivative of the activation expressed through its output value.
template <typename S>
DenseMatrix<S> activation_grad(Activation a, const DenseMatrix<S>& h) {
  switch (a) {
    case Activation::relu:
      return (h.array() > S(0)).template cast<S>().matrix();
    case Activation::tanh:
      return (S(1) - h.array().square()).matrix();
    case Activation::sigmoid:
      return (h.array() * (S(1) - h.array())).matrix();
    case Activation::identity:
      return DenseMatrix<S>::Ones(h.rows(), h.cols());
  }
  throw std::logic_error("unknown activation");
}

template <typename S>
DenseMatrix<S> softmax_rows(DenseMatrix<S> logits) {
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const S m = logits.row(i).maxCoeff();
    DenseVector<S> e = (logits.row(i).array() - m).exp().matrix().transpose();
    logits.row(i) = (e / e.sum()).transpose();
  }
  return logits;
}

template <typename S>
void check_gates(const GatesT<S>& gates) {
  if ((gates.entity.array() <= S(0)).any() || (gates.context.array() <= S(0)).any())
    throw std::invalid_argument("gates must be strictly positive");
}

template <typename S>
DenseMatrix<S> layer_preactivation(const NetworkConfig& cfg, const LayerWeightsT<S>& lw,
                                   const KnowledgeGraph& g, const DenseMatrix<S>& h_prev,
                                   const GatesT<S>& gates) {
  DenseMatrix<S> a = h_prev * lw.w.transpose();
  a.array().colwise() *= gates.entity.array();
  const S inv_z = S(1) / S(cfg.z);
  for (int r = 0; r < cfg.n_relations; ++r) {
    DenseMatrix<S> ctx = context_matrix<S>(g, h_prev, r) * lw.v[r].transpose();
    ctx.array().colwise() *= gates.context.col(r).array();
    a += inv_z * ctx;
  }
  a.rowwise() += lw.b.transpose();
  return a;
}

template <typename S>
ForwardTraceT<S> forward_pass(const NetworkConfig& cfg, const NetworkParamsT<S>& p,
                              const KnowledgeGraph& g, const DenseMatrix<S>& features,
                              const GatesT<S>& gates) {
  check_gates(gates);
  ForwardTraceT<S> tr;
  tr.hidden.resize(cfg.n_layers + 1);
  tr.hidden[0] = features;
  for (int t = 1; t <= cfg.n_layers; ++t) {
    DenseMatrix<S> a = layer_preactivation<S>(cfg, p.layers[layer_slot(cfg, t)], g,
                                              tr.hidden[t - 1], gates);
    apply_activation<S>(cfg.activation, a);
    if (!a.allFinite())
      throw std::runtime_error("non-finite activations at hidden layer " + std::to_string(t));
    tr.hidden[t] = std::move(a);
  }
  DenseMatrix<S> logits = tr.hidden[cfg.n_layers] * p.w_out.transpose();
  logits.rowwise() += p.b_out.transpose();
  if (!logits.allFinite()) throw std::runtime_error("non-finite output logits");
  tr.probs = softmax_rows<S>(std::move(logits));
  return tr;
}

template <typename S>
NetworkParamsT<S> zero_like(const NetworkParamsT<S>& p) {
  NetworkParamsT<S> z;
  z.layers.resize(p.layers.size());
  for (size_t i = 0; i < p.layers.size(); ++i) {
    z.layers[i].w = DenseMatrix<S>::Zero(p.layers[i].w.rows(), p.layers[i].w.cols());
    z.layers[i].b = DenseVector<S>::Zero(p.layers[i].b.size());
    z.layers[i].v.resize(p.layers[i].v.size());
    for (size_t r = 0; r < p.layers[i].v.size(); ++r)
      z.layers[i].v[r] =
          DenseMatrix<S>::Zero(p.layers[i].v[r].rows(), p.layers[i].v[r].cols());
  }
  z.w_out = DenseMatrix<S>::Zero(p.w_out.rows(), p.w_out.cols());
  z.b_out = DenseVector<S>::Zero(p.b_out.size());
  return z;
}

// Reverse pass for the data loss; dlogits carries the loss gradient at the
// softmax inputs. Gates are constants here: within an epoch they depend only
// on the previous epoch's probabilities.
template <typename S>
NetworkParamsT<S> backward_pass(const NetworkConfig& cfg, const NetworkParamsT<S>& p,
                                const KnowledgeGraph& g, const ForwardTraceT<S>& tr,
                                const GatesT<S>& gates, const DenseMatrix<S>& dlogits) {
  NetworkParamsT<S> grad = zero_like(p);
  grad.w_out = dlogits.transpose() * tr.hidden[cfg.n_layers];
  grad.b_out = dlogits.colwise().sum().transpose();
  DenseMatrix<S> d_h = dlogits * p.w_out;
  const S inv_z = S(1) / S(cfg.z);
  for (int t = cfg.n_layers; t >= 1; --t) {
    const int slot = layer_slot(cfg, t);
    const auto& lw = p.layers[slot];
    auto& gw = grad.layers[slot];
    const DenseMatrix<S>& h_prev = tr.hidden[t - 1];
    DenseMatrix<S> d_a =
        (d_h.array() * activation_grad<S>(cfg.activation, tr.hidden[t]).array()).matrix();
    gw.b += d_a.colwise().sum().transpose();

    DenseMatrix<S> d_aw = d_a;
    d_aw.array().colwise() *= gates.entity.array();
    gw.w += d_aw.transpose() * h_prev;
    DenseMatrix<S> d_h_prev = d_aw * lw.w;

    for (int r = 0; r < cfg.n_relations; ++r) {
      DenseMatrix<S> d_ac = d_a;
      d_ac.array().colwise() *= gates.context.col(r).array();
      d_ac *= inv_z;
      gw.v[r] += d_ac.transpose() * context_matrix<S>(g, h_prev, r);
      DenseMatrix<S> d_ctx = d_ac * lw.v[r];
      for (EntityId i = 0; i < g.n_entities; ++i) {
        const auto& nb = g.in_neighbors[r][i];
        if (nb.empty()) continue;
        const S w = S(1) / S(nb.size());
        for (EntityId j : nb) d_h_prev.row(j) += w * d_ctx.row(i);
      }
    }
    d_h = std::move(d_h_prev);
  }
  return grad;
}

template <typename To, typename From>
NetworkParamsT<To> params_cast(const NetworkParamsT<From>& p) {
  NetworkParamsT<To> out;
  out.layers.resize(p.layers.size());
  for (size_t i = 0; i < p.layers.size(); ++i) {
    out.layers[i].w = p.layers[i].w.template cast<To>();
    out.layers[i].b = p.layers[i].b.template cast<To>();
    out.layers[i].v.resize(p.layers[i].v.size());
    for (size_t r = 0; r < p.layers[i].v.size(); ++r)
      out.layers[i].v[r] = p.layers[i].v[r].template cast<To>();
  }
  out.w_out = p.w_out.template cast<To>();
  out.b_out = p.b_out.template cast<To>();
  return out;
}

template <typename To, typename From>
GatesT<To> gates_cast(const GatesT<From>& g) {
  GatesT<To> out;
  out.entity = g.entity.template cast<To>();
  out.context = g.context.template cast<To>();
  return out;
}

}  // namespace net

}  // namespace kcln
