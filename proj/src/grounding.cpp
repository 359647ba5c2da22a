#include "kcln/grounding.hpp"

#include <algorithm>
#include <optional>

namespace kcln {

namespace {

// Out-adjacency built once per grounding call; in-neighbors live on the graph.
struct OutIndex {
  std::vector<std::vector<std::vector<EntityId>>> out;  // [r][src] sorted dsts

  explicit OutIndex(const KnowledgeGraph& g) {
    out.assign(g.n_relations(), {});
    for (int r = 0; r < g.n_relations(); ++r) {
      out[r].assign(g.n_entities, {});
      for (auto [src, dst] : g.edges[r]) out[r][src].push_back(dst);
      for (auto& lst : out[r]) {
        std::sort(lst.begin(), lst.end());
        lst.erase(std::unique(lst.begin(), lst.end()), lst.end());
      }
    }
  }

  bool has_edge(int r, EntityId src, EntityId dst) const {
    const auto& lst = out[r][src];
    return std::binary_search(lst.begin(), lst.end(), dst);
  }
};

class Matcher {
 public:
  Matcher(const KnowledgeGraph& g, const OutIndex& idx, const PreferenceRule& rule,
          double threshold)
      : g_(g), idx_(idx), threshold_(threshold) {
    // Relation atoms first: they prune via neighbor lists before attribute
    // scans ever run.
    for (const auto& lit : rule.body)
      if (lit.kind == BodyLiteral::Kind::relation) literals_.push_back(&lit);
    for (const auto& lit : rule.body)
      if (lit.kind == BodyLiteral::Kind::attribute) literals_.push_back(&lit);
  }

  std::vector<Substitution> run() {
    results_.clear();
    descend(0);
    std::sort(results_.begin(), results_.end());
    return results_;
  }

 private:
  // Value of a term under the current bindings; nullopt for an unbound
  // variable. Constants outside the graph stay "bound" and simply fail the
  // literal checks.
  std::optional<EntityId> value(const Term& t) const {
    if (!t.is_variable) return t.constant;
    auto it = bindings_.find(t.var_name);
    if (it == bindings_.end()) return std::nullopt;
    return it->second;
  }

  bool in_graph(EntityId i) const { return i >= 0 && i < g_.n_entities; }

  void descend(size_t li) {
    if (li == literals_.size()) {
      results_.push_back(bindings_);
      return;
    }
    const BodyLiteral& lit = *literals_[li];
    if (lit.kind == BodyLiteral::Kind::relation)
      match_relation(lit, li);
    else
      match_attribute(lit, li);
  }

  void match_relation(const BodyLiteral& lit, size_t li) {
    int r = g_.relation_index(lit.relation_name);
    if (r < 0) return;
    auto src = value(lit.src);
    auto dst = value(lit.dst);
    if (src && dst) {
      if (in_graph(*src) && in_graph(*dst) && idx_.has_edge(r, *src, *dst))
        descend(li + 1);
      return;
    }
    if (src && !dst) {
      if (!in_graph(*src)) return;
      for (EntityId d : idx_.out[r][*src])
        with_binding(lit.dst.var_name, d, li);
      return;
    }
    if (!src && dst) {
      if (!in_graph(*dst)) return;
      for (EntityId s : g_.in_neighbors[r][*dst])
        with_binding(lit.src.var_name, s, li);
      return;
    }
    // both unbound; same variable on both sides means self-loops only
    if (lit.src.var_name == lit.dst.var_name) {
      for (EntityId s = 0; s < g_.n_entities; ++s)
        if (idx_.has_edge(r, s, s)) with_binding(lit.src.var_name, s, li);
      return;
    }
    for (EntityId s = 0; s < g_.n_entities; ++s) {
      if (idx_.out[r][s].empty()) continue;
      bindings_[lit.src.var_name] = s;
      for (EntityId d : idx_.out[r][s])
        with_binding(lit.dst.var_name, d, li);
      bindings_.erase(lit.src.var_name);
    }
  }

  void match_attribute(const BodyLiteral& lit, size_t li) {
    int f = g_.feature_index(lit.feature_name);
    if (f < 0) return;
    auto e = value(lit.entity);
    if (e) {
      if (in_graph(*e) && g_.features(*e, f) > threshold_) descend(li + 1);
      return;
    }
    for (EntityId i = 0; i < g_.n_entities; ++i)
      if (g_.features(i, f) > threshold_) with_binding(lit.entity.var_name, i, li);
  }

  void with_binding(const std::string& var, EntityId v, size_t li) {
    bindings_[var] = v;
    descend(li + 1);
    bindings_.erase(var);
  }

  const KnowledgeGraph& g_;
  const OutIndex& idx_;
  double threshold_;
  std::vector<const BodyLiteral*> literals_;
  Substitution bindings_;
  std::vector<Substitution> results_;
};

std::optional<EntityId> resolve(const Term& t, const Substitution& sub) {
  if (!t.is_variable) return t.constant;
  auto it = sub.find(t.var_name);
  if (it == sub.end()) return std::nullopt;
  return it->second;
}

}  // namespace

AdviceMasks zero_masks(const KnowledgeGraph& g) {
  AdviceMasks m;
  m.entity_mask = MaskMatrix::Zero(g.n_features(), g.n_entities);
  m.context_mask = MaskMatrix::Zero(g.n_entities, g.n_entities);
  m.label_mask = MaskMatrix::Zero(g.n_entities, g.n_labels());
  m.preferred_label.assign(g.n_entities, -1);
  m.nonpreferred.assign(g.n_entities, {});
  return m;
}

std::vector<Substitution> ground_rule(const KnowledgeGraph& g, const PreferenceRule& rule,
                                      double threshold) {
  OutIndex idx(g);
  return Matcher(g, idx, rule, threshold).run();
}

AdviceMasks create_masks(const KnowledgeGraph& g, const RuleSet& rs, double threshold) {
  AdviceMasks m = zero_masks(g);
  const int n_labels = g.n_labels();
  // votes(i, l) = number of rule firings preferring label l for entity i
  Eigen::MatrixXi votes = Eigen::MatrixXi::Zero(g.n_entities, n_labels);

  OutIndex idx(g);
  for (const auto& rule : rs.rules) {
    auto subs = Matcher(g, idx, rule, threshold).run();
    for (const auto& sub : subs) {
      for (const auto& lit : rule.body) {
        if (lit.kind == BodyLiteral::Kind::attribute) {
          int f = g.feature_index(lit.feature_name);
          auto e = resolve(lit.entity, sub);
          if (f >= 0 && e) m.entity_mask(f, *e) = 1;
        } else {
          auto src = resolve(lit.src, sub);
          auto dst = resolve(lit.dst, sub);
          if (src && dst && *src != *dst) m.context_mask(*dst, *src) = 1;
        }
      }
      for (const auto& pref : rule.head) {
        auto e = resolve(pref.entity, sub);
        int l = g.label_index(pref.label_name);
        if (!e || l < 0 || !(*e >= 0 && *e < g.n_entities)) continue;
        if (pref.polarity == Polarity::preferred) {
          votes(*e, l) += 1;
        } else {
          auto& np = m.nonpreferred[*e];
          if (!std::binary_search(np.begin(), np.end(), l))
            np.insert(std::upper_bound(np.begin(), np.end(), l), l);
        }
      }
    }
  }

  // MAX-vote resolution; an exact tie falls back to the entity's data label.
  for (EntityId i = 0; i < g.n_entities; ++i) {
    int best = -1, best_count = 0, n_at_best = 0;
    for (int l = 0; l < n_labels; ++l) {
      int c = votes(i, l);
      if (c == 0) continue;
      if (c > best_count) {
        best_count = c;
        best = l;
        n_at_best = 1;
      } else if (c == best_count) {
        ++n_at_best;
      }
    }
    if (best_count == 0) continue;
    int resolved = n_at_best > 1 ? g.labels[i] : best;
    m.preferred_label[i] = resolved;
    m.label_mask(i, resolved) = 1;
  }
  return m;
}

std::vector<std::uint8_t> entity_gate_flags(const AdviceMasks& m) {
  const auto n = m.context_mask.rows();
  std::vector<std::uint8_t> flags(n, 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    bool hit = m.label_mask.row(i).any();
    if (!hit && m.entity_mask.rows() > 0) hit = m.entity_mask.col(i).any();
    flags[i] = hit ? 1 : 0;
  }
  return flags;
}

MaskMatrix context_gate_flags(const AdviceMasks& m, const KnowledgeGraph& g) {
  MaskMatrix flags = MaskMatrix::Zero(g.n_entities, g.n_relations());
  for (int r = 0; r < g.n_relations(); ++r)
    for (EntityId i = 0; i < g.n_entities; ++i)
      for (EntityId j : g.in_neighbors[r][i])
        if (m.context_mask(i, j)) {
          flags(i, r) = 1;
          break;
        }
  return flags;
}

}  // namespace kcln
