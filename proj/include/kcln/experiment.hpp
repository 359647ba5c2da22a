#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kcln/datagen.hpp"
#include "kcln/graph.hpp"
#include "kcln/grounding.hpp"
#include "kcln/metrics.hpp"
#include "kcln/network.hpp"
#include "kcln/training.hpp"

namespace kcln {

enum class Protocol { epochs, sample_sweep, alpha_sweep };

Protocol protocol_from_string(const std::string& s);
std::string to_string(Protocol p);

struct ExperimentConfig {
  std::string entities_path;
  std::string edges_path;
  std::string rules_path;  // empty trains the no-advice model only
  NetworkConfig net;       // input_dim / n_labels / n_relations / z set from the graph
  TrainConfig train;
  Protocol protocol = Protocol::epochs;
  std::vector<double> sample_fractions;  // defaults depend on the protocol
  std::vector<double> alphas;            // alpha_sweep grid
  int n_seeds = 5;
  double split_fraction = 0.6;   // train share of the train/test split
  double ground_threshold = 0.0; // attribute-atom threshold for grounding
  bool z_from_graph = true;
  std::string output_dir = ".";

  void validate() const;
};

ExperimentConfig load_experiment_config(const std::string& path);

struct ResultRow {
  std::string protocol;
  std::string model;  // "kcln" or "vanilla"
  double alpha = 0.0;
  double sample_fraction = 1.0;
  std::uint64_t seed = 0;
  int epoch = 0;
  std::string metric;
  double value = 0.0;
};

// Paired per-epoch learning curves for K-CLN and the no-advice baseline at
// each configured sample fraction (default 0.4 of the train split).
std::vector<ResultRow> run_epochs(const ExperimentConfig& cfg);

// Final test metrics per (model, fraction, seed); default fraction grid
// spans 5% to 80% of the training data.
std::vector<ResultRow> run_sample_sweep(const ExperimentConfig& cfg);

// Final test metrics for K-CLN per (alpha, fraction, seed) plus a vanilla
// baseline row per (fraction, seed); default alphas 0.2..1.0.
std::vector<ResultRow> run_alpha_sweep(const ExperimentConfig& cfg);

std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg);

// results.csv in the configured output dir; rows are sorted on the key
// columns so reruns are byte-identical.
std::string write_results_csv(const std::vector<ResultRow>& rows, const std::string& path);

std::vector<ResultRow> read_results_csv(const std::string& path);

struct AggregateRow {
  std::string protocol;
  std::string model;
  double alpha = 0.0;
  double sample_fraction = 1.0;
  int epoch = 0;
  std::string metric;
  double mean = 0.0;
  double sd = 0.0;
  int n = 0;
};

// Mean and sample standard deviation over seeds per result group.
std::vector<AggregateRow> aggregate_results(const std::vector<ResultRow>& rows);
void write_aggregate_csv(const std::vector<AggregateRow>& rows, const std::string& path);

}  // namespace kcln
