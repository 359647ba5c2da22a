#include "kcln/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace kcln {

void GenConfig::validate() const {
  if (n_entities < 2) throw std::invalid_argument("n_entities must be >= 2");
  if (n_features < 1) throw std::invalid_argument("n_features must be >= 1");
  if (n_labels < 2) throw std::invalid_argument("n_labels must be >= 2");
  if (n_features < n_labels)
    throw std::invalid_argument("need at least one feature per label");
  if (n_relations < 1) throw std::invalid_argument("n_relations must be >= 1");
  if (!(homophily >= 0.0 && homophily <= 1.0))
    throw std::invalid_argument("homophily must be in [0,1]");
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0))
    throw std::invalid_argument("noise_rate must be in [0,1]");
  if (!(edges_per_entity > 0.0)) throw std::invalid_argument("edges_per_entity must be positive");
  if (std::lround(edges_per_entity) > n_entities - 1)
    throw std::invalid_argument("infeasible edge count: edges_per_entity exceeds n_entities-1");
  if (feature_signal < 0.0) throw std::invalid_argument("feature_signal must be >= 0");
}

std::pair<int, int> feature_block(const GenConfig& cfg, int label) {
  const int lo = static_cast<int>(static_cast<long>(label) * cfg.n_features / cfg.n_labels);
  const int hi =
      static_cast<int>(static_cast<long>(label + 1) * cfg.n_features / cfg.n_labels);
  return {lo, hi};
}

GeneratedBench generate(const GenConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);

  GeneratedBench bench;
  KnowledgeGraph& g = bench.graph;
  g.n_entities = cfg.n_entities;
  for (int d = 0; d < cfg.n_features; ++d) g.feature_names.push_back("f" + std::to_string(d));
  for (int l = 0; l < cfg.n_labels; ++l) g.label_names.push_back("c" + std::to_string(l));
  for (int r = 0; r < cfg.n_relations; ++r) g.relation_names.push_back("r" + std::to_string(r));
  g.edges.resize(cfg.n_relations);

  std::uniform_int_distribution<int> label_dist(0, cfg.n_labels - 1);
  g.labels.resize(cfg.n_entities);
  for (int i = 0; i < cfg.n_entities; ++i) g.labels[i] = label_dist(rng);
  bench.clean_labels = g.labels;

  std::normal_distribution<double> noise(0.0, 1.0);
  g.features.resize(cfg.n_entities, cfg.n_features);
  for (int i = 0; i < cfg.n_entities; ++i) {
    auto [lo, hi] = feature_block(cfg, g.labels[i]);
    for (int d = 0; d < cfg.n_features; ++d) {
      const double shift = (d >= lo && d < hi) ? cfg.feature_signal : 0.0;
      g.features(i, d) = shift + noise(rng);
    }
  }

  // partner pools by label
  std::vector<std::vector<EntityId>> by_label(cfg.n_labels);
  for (int i = 0; i < cfg.n_entities; ++i) by_label[g.labels[i]].push_back(i);

  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::set<std::tuple<int, EntityId, EntityId>> used;
  const long per_entity = std::lround(cfg.edges_per_entity);
  long edge_counter = 0;
  for (EntityId i = 0; i < cfg.n_entities; ++i) {
    for (long e = 0; e < per_entity; ++e) {
      const int r = static_cast<int>(edge_counter++ % cfg.n_relations);
      for (int attempt = 0; attempt < 32; ++attempt) {
        const bool same = coin(rng) < cfg.homophily;
        EntityId j = -1;
        const auto& primary = by_label[g.labels[i]];
        if (same) {
          if (primary.size() < 2) break;  // no same-label partner exists
          std::uniform_int_distribution<size_t> pick(0, primary.size() - 1);
          j = primary[pick(rng)];
          if (j == i) continue;
        } else {
          const size_t n_other = cfg.n_entities - primary.size();
          if (n_other == 0) break;
          std::uniform_int_distribution<size_t> pick(0, n_other - 1);
          size_t k = pick(rng);
          // k-th entity with a different label, in id order
          for (EntityId c = 0; c < cfg.n_entities; ++c) {
            if (g.labels[c] == g.labels[i]) continue;
            if (k == 0) {
              j = c;
              break;
            }
            --k;
          }
        }
        if (j < 0 || used.count({r, j, i})) continue;
        used.insert({r, j, i});
        g.edges[r].emplace_back(j, i);
        break;
      }
    }
  }
  if (cfg.symmetric_edges) {
    for (int r = 0; r < cfg.n_relations; ++r) {
      std::set<std::pair<EntityId, EntityId>> seen;
      std::vector<std::pair<EntityId, EntityId>> sym;
      for (auto [s, d] : g.edges[r]) {
        if (seen.insert({s, d}).second) sym.emplace_back(s, d);
        if (seen.insert({d, s}).second) sym.emplace_back(d, s);
      }
      g.edges[r] = std::move(sym);
    }
  }
  build_neighbor_index(g);
  return bench;
}

GeneratedBench inject_noise(const GeneratedBench& bench, double rate,
                            const std::string& predicate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate <= 1.0))
    throw std::invalid_argument("inject_noise: rate must be in [0,1]");
  GeneratedBench out = bench;
  if (rate == 0.0) return out;
  KnowledgeGraph& g = out.graph;

  std::vector<EntityId> targets;
  if (predicate.empty()) {
    for (EntityId i = 0; i < g.n_entities; ++i) targets.push_back(i);
  } else {
    const int f = g.feature_index(predicate);
    if (f < 0) throw std::invalid_argument("inject_noise: unknown feature '" + predicate + "'");
    for (EntityId i = 0; i < g.n_entities; ++i)
      if (g.features(i, f) > 0.0) targets.push_back(i);
  }
  const auto n_flips =
      static_cast<size_t>(std::ceil(rate * static_cast<double>(targets.size())));
  std::mt19937_64 rng(seed);
  std::shuffle(targets.begin(), targets.end(), rng);
  std::uniform_int_distribution<int> offset(1, g.n_labels() - 1);
  for (size_t k = 0; k < n_flips && k < targets.size(); ++k) {
    const EntityId i = targets[k];
    g.labels[i] = (g.labels[i] + offset(rng)) % g.n_labels();
  }
  return out;
}

RuleSet derive_true_advice(const GeneratedBench& bench, const GenConfig& cfg, int k_rules) {
  if (k_rules < 1) throw std::invalid_argument("derive_true_advice: k_rules must be >= 1");
  const auto& g = bench.graph;
  RuleSet rs;
  for (int m = 0; m < k_rules; ++m) {
    const int label = m % cfg.n_labels;
    const int rank = m / cfg.n_labels;
    auto [lo, hi] = feature_block(cfg, label);
    if (lo + rank >= hi)
      throw std::invalid_argument("derive_true_advice: k_rules exceeds available indicative features");
    PreferenceRule rule;
    BodyLiteral attr;
    attr.kind = BodyLiteral::Kind::attribute;
    attr.entity = Term::variable("E1");
    attr.feature_name = g.feature_names[lo + rank];
    BodyLiteral rel;
    rel.kind = BodyLiteral::Kind::relation;
    rel.relation_name = g.relation_names[m % g.n_relations()];
    rel.src = Term::variable("E2");
    rel.dst = Term::variable("E1");
    rule.body = {attr, rel};
    rule.head = {LabelPreference{Term::variable("E2"), g.label_names[label],
                                 Polarity::preferred}};
    rs.rules.push_back(std::move(rule));
  }
  return rs;
}

RuleSet corrupt_advice(const RuleSet& rs, const std::vector<std::string>& label_names,
                       std::uint64_t seed) {
  if (label_names.size() < 2)
    throw std::invalid_argument("corrupt_advice: need at least 2 labels");
  std::mt19937_64 rng(seed);
  RuleSet out = rs;
  const int n = static_cast<int>(label_names.size());
  for (auto& rule : out.rules) {
    for (auto& pref : rule.head) {
      int current = 0;
      for (int l = 0; l < n; ++l)
        if (label_names[l] == pref.label_name) current = l;
      std::uniform_int_distribution<int> offset(1, n - 1);
      pref.label_name = label_names[(current + offset(rng)) % n];
    }
  }
  return out;
}

void write_bench(const GeneratedBench& bench, const GenConfig& cfg,
                 const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const auto& g = bench.graph;

  {
    std::ofstream out(fs::path(out_dir) / "entities.csv");
    if (!out) throw std::runtime_error("cannot write entities.csv in " + out_dir);
    out << "id,label";
    for (const auto& f : g.feature_names) out << ',' << f;
    out << '\n';
    char buf[64];
    for (EntityId i = 0; i < g.n_entities; ++i) {
      out << i << ',' << g.label_names[g.labels[i]];
      for (int d = 0; d < g.n_features(); ++d) {
        std::snprintf(buf, sizeof buf, "%.17g", g.features(i, d));
        out << ',' << buf;
      }
      out << '\n';
    }
  }
  {
    std::ofstream out(fs::path(out_dir) / "edges.tsv");
    if (!out) throw std::runtime_error("cannot write edges.tsv in " + out_dir);
    for (int r = 0; r < g.n_relations(); ++r)
      for (auto [src, dst] : g.edges[r])
        out << src << '\t' << g.relation_names[r] << '\t' << dst << '\n';
  }
  {
    std::ofstream out(fs::path(out_dir) / "rules_true.txt");
    out << format_rules(bench.rules_true);
  }
  {
    std::ofstream out(fs::path(out_dir) / "rules_corrupt.txt");
    out << format_rules(bench.rules_corrupt);
  }
  {
    nlohmann::json j{{"n_entities", cfg.n_entities},
                     {"n_features", cfg.n_features},
                     {"n_labels", cfg.n_labels},
                     {"n_relations", cfg.n_relations},
                     {"homophily", cfg.homophily},
                     {"edges_per_entity", cfg.edges_per_entity},
                     {"feature_signal", cfg.feature_signal},
                     {"noise_rate", cfg.noise_rate},
                     {"noise_predicate", cfg.noise_predicate},
                     {"symmetric_edges", cfg.symmetric_edges},
                     {"seed", cfg.seed}};
    std::ofstream out(fs::path(out_dir) / "manifest.json");
    out << j.dump(2) << '\n';
  }
}

}  // namespace kcln
