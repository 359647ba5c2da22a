#include "kcln/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kcln {

namespace {

void check_lengths(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.empty()) throw std::invalid_argument("empty input");
  if (a.size() != b.size()) throw std::invalid_argument("length mismatch");
}

struct Counts {
  long tp = 0, fp = 0, fn = 0;
};

double f1_from_counts(const Counts& c) {
  const double denom = 2.0 * c.tp + c.fp + c.fn;
  if (denom == 0.0) return 0.0;
  return 2.0 * c.tp / denom;
}

}  // namespace

double micro_f1(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
  check_lengths(y_true, y_pred);
  int n_labels = 0;
  for (size_t i = 0; i < y_true.size(); ++i)
    n_labels = std::max({n_labels, y_true[i] + 1, y_pred[i] + 1});
  Counts pooled;
  for (int c = 0; c < n_labels; ++c) {
    for (size_t i = 0; i < y_true.size(); ++i) {
      const bool t = y_true[i] == c, p = y_pred[i] == c;
      if (t && p) ++pooled.tp;
      else if (p) ++pooled.fp;
      else if (t) ++pooled.fn;
    }
  }
  return f1_from_counts(pooled);
}

double macro_f1(const std::vector<int>& y_true, const std::vector<int>& y_pred, int n_labels) {
  check_lengths(y_true, y_pred);
  if (n_labels < 1) throw std::invalid_argument("n_labels must be >= 1");
  double total = 0.0;
  for (int c = 0; c < n_labels; ++c) {
    Counts k;
    for (size_t i = 0; i < y_true.size(); ++i) {
      if (y_true[i] >= n_labels || y_pred[i] >= n_labels)
        throw std::invalid_argument("label out of range");
      const bool t = y_true[i] == c, p = y_pred[i] == c;
      if (t && p) ++k.tp;
      else if (p) ++k.fp;
      else if (t) ++k.fn;
    }
    total += f1_from_counts(k);
  }
  return total / n_labels;
}

double binary_f1(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
  check_lengths(y_true, y_pred);
  Counts k;
  for (size_t i = 0; i < y_true.size(); ++i) {
    if ((y_true[i] != 0 && y_true[i] != 1) || (y_pred[i] != 0 && y_pred[i] != 1))
      throw std::invalid_argument("binary_f1: labels must be 0/1");
    const bool t = y_true[i] == 1, p = y_pred[i] == 1;
    if (t && p) ++k.tp;
    else if (p) ++k.fp;
    else if (t) ++k.fn;
  }
  return f1_from_counts(k);
}

double auc_pr(const std::vector<int>& y_true, const std::vector<double>& scores) {
  if (y_true.empty() || y_true.size() != scores.size())
    throw std::invalid_argument("auc_pr: bad input lengths");
  long n_pos = 0;
  for (size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] != 0 && y_true[i] != 1)
      throw std::invalid_argument("auc_pr: labels must be 0/1");
    if (!std::isfinite(scores[i])) throw std::invalid_argument("auc_pr: non-finite score");
    n_pos += y_true[i];
  }
  if (n_pos == 0) throw std::invalid_argument("auc_pr: no positive examples");

  std::vector<size_t> order(y_true.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  // Sweep thresholds descending, grouping tied scores into one curve point.
  double area = 0.0;
  double prev_recall = 0.0, prev_precision = 1.0;
  bool have_prev = false;
  long tp = 0, fp = 0;
  size_t i = 0;
  while (i < order.size()) {
    const double threshold = scores[order[i]];
    while (i < order.size() && scores[order[i]] == threshold) {
      if (y_true[order[i]]) ++tp;
      else ++fp;
      ++i;
    }
    if (tp == 0) continue;  // recall still 0; the anchor comes later
    const double recall = static_cast<double>(tp) / n_pos;
    const double precision = static_cast<double>(tp) / (tp + fp);
    if (!have_prev) {
      // anchor at recall 0 with the first reachable precision
      prev_recall = 0.0;
      prev_precision = precision;
      have_prev = true;
    }
    area += (recall - prev_recall) * 0.5 * (precision + prev_precision);
    prev_recall = recall;
    prev_precision = precision;
  }
  return area;
}

int argmax_label(const Eigen::MatrixXd& probs, EntityId i) {
  int best = 0;
  for (Eigen::Index l = 1; l < probs.cols(); ++l)
    if (probs(i, l) > probs(i, best)) best = static_cast<int>(l);
  return best;
}

EvalReport evaluate(const Eigen::MatrixXd& probs, const KnowledgeGraph& g,
                    const SplitSpec& split, Task task) {
  if (split.test_ids.empty()) throw std::invalid_argument("evaluate: empty test split");
  if (probs.rows() != g.n_entities)
    throw std::invalid_argument("evaluate: trace does not cover all entities");
  const int n_labels = g.n_labels();
  if (task == Task::binary && n_labels != 2)
    throw std::invalid_argument("evaluate: binary task requires exactly 2 labels");

  std::vector<int> y_true, y_pred;
  std::vector<double> scores;
  y_true.reserve(split.test_ids.size());
  y_pred.reserve(split.test_ids.size());
  EvalReport report;
  report.confusion = Eigen::MatrixXi::Zero(n_labels, n_labels);
  for (EntityId i : split.test_ids) {
    const int pred = argmax_label(probs, i);
    y_true.push_back(g.labels[i]);
    y_pred.push_back(pred);
    if (task == Task::binary) scores.push_back(probs(i, 1));
    report.confusion(g.labels[i], pred) += 1;
  }
  report.n_evaluated = static_cast<int>(y_true.size());
  report.metrics["micro_f1"] = micro_f1(y_true, y_pred);
  report.metrics["macro_f1"] = macro_f1(y_true, y_pred, n_labels);
  if (task == Task::binary) {
    report.metrics["f1"] = binary_f1(y_true, y_pred);
    report.metrics["auc_pr"] = auc_pr(y_true, scores);
  }
  return report;
}

EvalReport evaluate(const ForwardTrace& trace, const KnowledgeGraph& g,
                    const SplitSpec& split, Task task) {
  return evaluate(trace.probs, g, split, task);
}

}  // namespace kcln
