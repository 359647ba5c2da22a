#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kcln/graph.hpp"
#include "kcln/rules.hpp"

namespace kcln {

// Total assignment of a rule's variables to entity ids.
using Substitution = std::map<std::string, EntityId>;

using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// Binary advice masks plus the resolved per-entity label preferences.
// entity_mask is feature-major: rows are features, columns entities.
struct AdviceMasks {
  MaskMatrix entity_mask;   // D x |V|
  MaskMatrix context_mask;  // |V| x |V|; [i][j] marks context j -> i
  MaskMatrix label_mask;    // |V| x L, one-hot rows (or zero)
  std::vector<int> preferred_label;            // -1 when unset
  std::vector<std::vector<int>> nonpreferred;  // sorted unique label indices

  bool empty() const { return label_mask.size() == 0; }
};

AdviceMasks zero_masks(const KnowledgeGraph& g);

// All substitutions under which every body literal holds: a relation atom
// r(X,Y) needs an edge sX -> sY under r, an attribute atom needs the feature
// value strictly above `threshold`. Unknown feature/relation names match
// nothing. Output sorted lexicographically by binding (variables in name
// order).
std::vector<Substitution> ground_rule(const KnowledgeGraph& g, const PreferenceRule& rule,
                                      double threshold = 0.0);

// Grounds every rule and merges the per-firing mask bits. Preferred-label
// votes are counted per firing; the most-voted label wins and an exact tie
// falls back to the entity's data label.
AdviceMasks create_masks(const KnowledgeGraph& g, const RuleSet& rs,
                         double threshold = 0.0);

// flag(i) = 1 iff entity i is touched by advice (entity_mask column or
// label_mask row nonzero); selects where the column gate applies.
std::vector<std::uint8_t> entity_gate_flags(const AdviceMasks& m);

// flag(i,r) = 1 iff some in-neighbor j of i under r has context_mask[i][j]
// set; selects where the context gate applies.
MaskMatrix context_gate_flags(const AdviceMasks& m, const KnowledgeGraph& g);

}  // namespace kcln
