#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kcln/graph.hpp"
#include "kcln/rules.hpp"

namespace kcln {

// Synthetic benchmark with planted label structure: label-indicative feature
// blocks, homophilous edges, and optional systematic (predicate-targeted)
// label noise.
struct GenConfig {
  int n_entities = 100;
  int n_features = 12;
  int n_labels = 2;
  int n_relations = 1;
  double homophily = 0.8;        // probability an edge joins same-label entities
  double edges_per_entity = 2.0; // in-edges drawn per entity
  double feature_signal = 2.0;   // mean shift of the true label's feature block
  double noise_rate = 0.0;
  std::string noise_predicate;   // feature name; empty targets all entities
  // store the reverse of every drawn edge as well, the two-directed-edges
  // convention for symmetric relations
  bool symmetric_edges = false;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GeneratedBench {
  KnowledgeGraph graph;
  std::vector<int> clean_labels;
  RuleSet rules_true;
  RuleSet rules_corrupt;
};

// Feature block carrying the signal for a label: n_features is partitioned
// evenly across labels in index order.
std::pair<int, int> feature_block(const GenConfig& cfg, int label);

// Draws labels, block-shifted unit-variance features and homophilous edges.
// Does not inject noise and leaves the rule sets empty.
GeneratedBench generate(const GenConfig& cfg);

// Flips the observed label of ceil(rate * |targets|) entities among those
// with predicate feature > 0 (all entities when the predicate is empty) to a
// uniformly random different label. Clean labels stay untouched.
GeneratedBench inject_noise(const GeneratedBench& bench, double rate,
                            const std::string& predicate, std::uint64_t seed);

// Rules attr(E1,"f"), r(E2,E1) => label(E2,"c")+ where f is generatively
// indicative of c; labels and in-block features are walked round-robin.
RuleSet derive_true_advice(const GeneratedBench& bench, const GenConfig& cfg, int k_rules);

// Replaces every head label with a uniformly random different one; bodies
// are untouched.
RuleSet corrupt_advice(const RuleSet& rs, const std::vector<std::string>& label_names,
                       std::uint64_t seed);

// Writes entities.csv, edges.tsv, rules_true.txt, rules_corrupt.txt and
// manifest.json so the full pipeline runs through the public file formats.
void write_bench(const GeneratedBench& bench, const GenConfig& cfg,
                 const std::string& out_dir);

}  // namespace kcln
