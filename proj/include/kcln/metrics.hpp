#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kcln/graph.hpp"
#include "kcln/network.hpp"

namespace kcln {

enum class Task { binary, multiclass };

struct EvalReport {
  std::map<std::string, double> metrics;
  Eigen::MatrixXi confusion;  // L x L, rows = truth, cols = prediction
  int n_evaluated = 0;
};

// F1 from globally pooled TP/FP/FN. For single-label multi-class predictions
// this coincides with accuracy.
double micro_f1(const std::vector<int>& y_true, const std::vector<int>& y_pred);

// Unweighted mean of per-class F1 over classes 0..L-1; a class absent from
// both truth and prediction contributes 0.
double macro_f1(const std::vector<int>& y_true, const std::vector<int>& y_pred, int n_labels);

// F1 of class 1; 0 when precision + recall is 0.
double binary_f1(const std::vector<int>& y_true, const std::vector<int>& y_pred);

// Area under the precision-recall curve: descending sweep over unique score
// thresholds with ties grouped, trapezoid rule in recall. The curve is
// anchored at recall 0 with the precision of the first point that has
// positive recall.
double auc_pr(const std::vector<int>& y_true, const std::vector<double>& scores);

// Metrics over the test ids of the split; prediction is the argmax
// probability with ties broken toward the lowest label index.
EvalReport evaluate(const Eigen::MatrixXd& probs, const KnowledgeGraph& g,
                    const SplitSpec& split, Task task);
EvalReport evaluate(const ForwardTrace& trace, const KnowledgeGraph& g,
                    const SplitSpec& split, Task task);

int argmax_label(const Eigen::MatrixXd& probs, EntityId i);

}  // namespace kcln
