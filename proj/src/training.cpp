#include "kcln/training.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace kcln {

namespace {

constexpr double kProbClip = 1e-12;

void check_normalized(const Eigen::MatrixXd& probs) {
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const double s = probs.row(i).sum();
    if (std::abs(s - 1.0) > 1e-6)
      throw std::invalid_argument("probability row " + std::to_string(i) +
                                  " is not normalized (sum " + std::to_string(s) + ")");
  }
}

template <typename S>
DenseMatrix<S> make_dlogits(const DenseMatrix<S>& probs, const std::vector<int>& labels,
                            const std::vector<EntityId>& ids, double loss_scale) {
  DenseMatrix<S> d = DenseMatrix<S>::Zero(probs.rows(), probs.cols());
  if (ids.empty()) return d;
  const S w = S(loss_scale / static_cast<double>(ids.size()));
  for (EntityId i : ids) {
    d.row(i) = w * probs.row(i);
    d(i, labels[i]) -= w;
  }
  return d;
}

template <typename S>
void sgd_step(NetworkParamsT<S>& params, NetworkParamsT<S>& velocity,
              const NetworkParamsT<S>& grad, S lr, S momentum) {
  auto step = [lr, momentum](auto& p, auto& v, const auto& g) {
    v = momentum * v - lr * g;
    p += v;
  };
  for (size_t i = 0; i < params.layers.size(); ++i) {
    step(params.layers[i].w, velocity.layers[i].w, grad.layers[i].w);
    step(params.layers[i].b, velocity.layers[i].b, grad.layers[i].b);
    for (size_t r = 0; r < params.layers[i].v.size(); ++r)
      step(params.layers[i].v[r], velocity.layers[i].v[r], grad.layers[i].v[r]);
  }
  step(params.w_out, velocity.w_out, grad.w_out);
  step(params.b_out, velocity.b_out, grad.b_out);
}

// Deterministic validation carve-out: shuffles the train ids with the run
// seed and takes the first 10% when that leaves a sensible train set.
void carve_validation(const std::vector<EntityId>& train_ids, const TrainConfig& tc,
                      std::vector<EntityId>* core, std::vector<EntityId>* val) {
  const auto n = train_ids.size();
  auto n_val = static_cast<std::size_t>(std::floor(tc.validation_fraction * n));
  if (tc.patience <= 0 || n_val < 1 || n - n_val < 2) {
    *core = train_ids;
    val->clear();
    return;
  }
  std::vector<EntityId> ids = train_ids;
  std::mt19937_64 rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
  std::shuffle(ids.begin(), ids.end(), rng);
  val->assign(ids.begin(), ids.begin() + n_val);
  core->assign(ids.begin() + n_val, ids.end());
  std::sort(val->begin(), val->end());
  std::sort(core->begin(), core->end());
}

template <typename S>
TrainResult train_impl(const KnowledgeGraph& g, const SplitSpec& split,
                       const AdviceMasks& masks, const NetworkConfig& net_cfg,
                       const TrainConfig& tc, const EpochHook& hook) {
  const auto entity_flags = entity_gate_flags(masks);
  const MaskMatrix ctx_flags = context_gate_flags(masks, g);

  std::vector<EntityId> core_ids, val_ids;
  carve_validation(split.train_ids, tc, &core_ids, &val_ids);
  if (core_ids.empty()) throw std::invalid_argument("train: zero training entities");

  // Parameters are drawn in double so f32 and f64 runs share a start point.
  NetworkParamsT<S> params =
      net::params_cast<S>(init_params(net_cfg, tc.init, tc.seed));
  NetworkParamsT<S> velocity = net::zero_like(params);
  const DenseMatrix<S> features = g.features.cast<S>();

  const double loss_scale = tc.loss_scaling == LossScaling::data_tradeoff ? 1.0 - tc.alpha : 1.0;

  TrainResult result;
  Eigen::VectorXd stored_grad = Eigen::VectorXd::Zero(g.n_entities);
  double best_val = std::numeric_limits<double>::infinity();
  int epochs_without_improvement = 0;
  const bool early_stop = !val_ids.empty();

  for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    const Gates gates_d = compute_gates(entity_flags, ctx_flags, stored_grad, tc.alpha);
    const GatesT<S> gates = net::gates_cast<S>(gates_d);

    auto tr = net::forward_pass<S>(net_cfg, params, g, features, gates);
    DenseMatrix<S> dlogits = make_dlogits<S>(tr.probs, g.labels, core_ids, loss_scale);
    auto grad = net::backward_pass<S>(net_cfg, params, g, tr, gates, dlogits);
    sgd_step<S>(params, velocity, grad, S(tc.learning_rate), S(tc.momentum));

    // Post-update pass: the per-epoch output probabilities and advice
    // gradients that next epoch's gates are built from.
    auto tr2 = net::forward_pass<S>(net_cfg, params, g, features, gates);
    Eigen::MatrixXd probs = tr2.probs.template cast<double>();
    stored_grad = tc.advice_loss_form == AdviceLossForm::log_likelihood
                      ? advice_gradient(probs, masks)
                      : advice_gradient_squared(probs, masks);

    const double train_loss = data_loss(probs, g.labels, core_ids, tc.alpha, tc.loss_scaling);
    const double val_loss =
        val_ids.empty() ? std::numeric_limits<double>::quiet_NaN()
                        : data_loss(probs, g.labels, val_ids);
    if (!std::isfinite(train_loss))
      throw std::runtime_error("training diverged: non-finite loss at epoch " +
                               std::to_string(epoch));

    result.curve.push_back({epoch, train_loss, val_loss});
    result.state.train_loss_history.push_back(train_loss);
    result.state.val_loss_history.push_back(val_loss);
    result.epochs_run = epoch;

    const bool improved = !early_stop || val_loss < best_val;
    if (improved) {
      if (early_stop) best_val = val_loss;
      epochs_without_improvement = 0;
      result.params = net::params_cast<double>(params);
      result.gates = gates_d;
      result.probs = probs;
      result.state.epoch = epoch;
      result.state.probs = probs;
      result.state.advice_grad = stored_grad;
      result.best_epoch = epoch;
    } else {
      ++epochs_without_improvement;
    }
    if (hook) hook(epoch, probs, train_loss, val_loss);
    if (early_stop && epochs_without_improvement >= tc.patience) break;
  }
  return result;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must be in [0,1]");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw std::invalid_argument("momentum must be in [0,1)");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw std::invalid_argument("validation_fraction must be in [0,1)");
}

Eigen::VectorXd advice_gradient(const Eigen::MatrixXd& probs, const AdviceMasks& masks) {
  check_normalized(probs);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int pref = masks.preferred_label[i];
    if (pref >= 0) {
      grad[i] = 1.0 - probs(i, pref);
    } else {
      for (int l : masks.nonpreferred[i]) grad[i] -= probs(i, l);
    }
  }
  return grad;
}

Eigen::VectorXd advice_gradient_squared(const Eigen::MatrixXd& probs,
                                        const AdviceMasks& masks) {
  check_normalized(probs);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int pref = masks.preferred_label[i];
    if (pref >= 0) {
      const double p = probs(i, pref);
      grad[i] = 2.0 * (1.0 - p) * (1.0 - p) * p;
    } else {
      for (int l : masks.nonpreferred[i]) {
        const double p = probs(i, l);
        grad[i] -= 2.0 * p * (1.0 - p) * p;
      }
    }
  }
  return grad;
}

double data_loss(const Eigen::MatrixXd& probs, const std::vector<int>& labels,
                 const std::vector<EntityId>& ids, double alpha, LossScaling scaling) {
  if (ids.empty()) throw std::invalid_argument("data_loss: no entities to score");
  double total = 0.0;
  for (EntityId i : ids)
    total -= std::log(std::max(probs(i, labels[i]), kProbClip));
  const double scale = scaling == LossScaling::data_tradeoff ? 1.0 - alpha : 1.0;
  return scale * total / static_cast<double>(ids.size());
}

double modified_gradient_check(double data_grad, double advice_grad, double alpha) {
  return (1.0 - alpha) * data_grad + alpha * advice_grad;
}

NetworkParams backward(const NetworkConfig& cfg, const NetworkParams& params,
                       const KnowledgeGraph& g, const ForwardTrace& trace,
                       const std::vector<int>& labels, const std::vector<EntityId>& loss_ids,
                       const Gates& gates, double loss_scale) {
  Eigen::MatrixXd dlogits = make_dlogits<double>(trace.probs, labels, loss_ids, loss_scale);
  return net::backward_pass<double>(cfg, params, g, trace, gates, dlogits);
}

TrainResult train(const KnowledgeGraph& g, const SplitSpec& split, const AdviceMasks& masks,
                  const NetworkConfig& net_cfg, const TrainConfig& train_cfg,
                  const EpochHook& hook) {
  net_cfg.validate();
  train_cfg.validate();
  if (train_cfg.precision == Precision::f32)
    return train_impl<float>(g, split, masks, net_cfg, train_cfg, hook);
  return train_impl<double>(g, split, masks, net_cfg, train_cfg, hook);
}

}  // namespace kcln
