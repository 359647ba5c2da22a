#pragma once

#include <functional>
#include <limits>
#include <vector>

#include "kcln/graph.hpp"
#include "kcln/grounding.hpp"
#include "kcln/network.hpp"

namespace kcln {

enum class LossScaling { data_tradeoff, none };
enum class AdviceLossForm { log_likelihood, squared };
enum class Precision { f64, f32 };

struct TrainConfig {
  double alpha = 0.65;  // trade-off between data (1-alpha) and advice (alpha)
  LossScaling loss_scaling = LossScaling::data_tradeoff;
  AdviceLossForm advice_loss_form = AdviceLossForm::log_likelihood;
  double learning_rate = 0.01;
  double momentum = 0.9;
  int max_epochs = 100;
  int patience = 10;                 // <= 0 disables early stopping
  double validation_fraction = 0.1;  // carved from the train ids
  std::uint64_t seed = 0;
  InitScheme init = InitScheme::uniform_scaled;
  Precision precision = Precision::f64;

  void validate() const;
};

struct TrainState {
  int epoch = 0;                // epoch the stored quantities belong to
  Eigen::MatrixXd probs;        // stored P(y_i), all entities
  Eigen::VectorXd advice_grad;  // stored advice gradients, all entities
  std::vector<double> train_loss_history;
  std::vector<double> val_loss_history;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  NetworkParams params;  // best-validation snapshot (last epoch without one)
  Gates gates;           // gates in effect at the snapshot epoch
  Eigen::MatrixXd probs; // output probabilities at the snapshot
  TrainState state;
  std::vector<EpochRecord> curve;
  int epochs_run = 0;
  int best_epoch = 0;
};

// Called after each epoch's update with the freshly stored probabilities.
using EpochHook = std::function<void(int epoch, const Eigen::MatrixXd& probs,
                                     double train_loss, double val_loss)>;

// Advice gradient of the log-likelihood form: 1 - P(preferred) for entities
// with a resolved preferred label, -sum P over demoted labels for entities
// with only non-preferred advice, 0 outside the advice set.
Eigen::VectorXd advice_gradient(const Eigen::MatrixXd& probs, const AdviceMasks& masks);

// Squared-loss form: 2 (y - P)(1 - P) P at the advised components.
Eigen::VectorXd advice_gradient_squared(const Eigen::MatrixXd& probs,
                                        const AdviceMasks& masks);

// Mean cross-entropy over `ids`, scaled by (1 - alpha) under data_tradeoff.
// Probabilities are clipped at 1e-12 inside the logarithm.
double data_loss(const Eigen::MatrixXd& probs, const std::vector<int>& labels,
                 const std::vector<EntityId>& ids, double alpha = 0.0,
                 LossScaling scaling = LossScaling::none);

// Reference combiner (1 - alpha) * data + alpha * advice.
double modified_gradient_check(double data_grad, double advice_grad, double alpha);

// Exact gradients of the scaled data loss w.r.t. every parameter, with gates
// held constant. `trace` must come from forward() with the same gates.
NetworkParams backward(const NetworkConfig& cfg, const NetworkParams& params,
                       const KnowledgeGraph& g, const ForwardTrace& trace,
                       const std::vector<int>& labels, const std::vector<EntityId>& loss_ids,
                       const Gates& gates, double loss_scale = 1.0);

// Epoch loop: gates for epoch k come from the advice gradients stored at
// epoch k-1 (zero at the start, so epoch 1 runs ungated); each epoch does a
// gated forward/backward, a full-batch update, then recomputes and stores
// P(y_i) and the advice gradients.
TrainResult train(const KnowledgeGraph& g, const SplitSpec& split, const AdviceMasks& masks,
                  const NetworkConfig& net_cfg, const TrainConfig& train_cfg,
                  const EpochHook& hook = {});

}  // namespace kcln
