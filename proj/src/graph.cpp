#include "kcln/graph.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace kcln {

namespace {

[[noreturn]] void fail(const std::string& path, int line, const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

bool is_comment_or_blank(const std::string& s) {
  for (char c : s) {
    if (c == '#') return true;
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

std::vector<std::string> split_on(const std::string& s, char delim) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string field;
  while (std::getline(ss, field, delim)) out.push_back(field);
  if (!s.empty() && s.back() == delim) out.push_back("");
  return out;
}

std::string strip(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

long parse_int(const std::string& s, const std::string& path, int line) {
  const std::string t = strip(s);
  long v = 0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size())
    fail(path, line, "expected integer, got '" + t + "'");
  return v;
}

double parse_real(const std::string& s, const std::string& path, int line) {
  const std::string t = strip(s);
  try {
    size_t pos = 0;
    double v = std::stod(t, &pos);
    if (pos != t.size()) throw std::invalid_argument(t);
    return v;
  } catch (const std::exception&) {
    fail(path, line, "expected real number, got '" + t + "'");
  }
}

int index_of(const std::vector<std::string>& names, const std::string& name) {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

}  // namespace

int KnowledgeGraph::feature_index(const std::string& name) const {
  return index_of(feature_names, name);
}
int KnowledgeGraph::relation_index(const std::string& name) const {
  return index_of(relation_names, name);
}
int KnowledgeGraph::label_index(const std::string& name) const {
  return index_of(label_names, name);
}

KnowledgeGraph load_graph(const std::string& entities_path,
                          const std::string& edges_path,
                          const std::vector<std::string>& known_labels) {
  std::ifstream ein(entities_path);
  if (!ein) throw std::runtime_error("cannot open entities file: " + entities_path);

  KnowledgeGraph g;
  std::string line;
  int lineno = 0;

  // Header: id,label,<feature names>
  bool have_header = false;
  while (std::getline(ein, line)) {
    ++lineno;
    if (is_comment_or_blank(line)) continue;
    auto cols = split_on(line, ',');
    if (cols.size() < 2 || strip(cols[0]) != "id" || strip(cols[1]) != "label")
      fail(entities_path, lineno, "header must start with 'id,label'");
    for (size_t c = 2; c < cols.size(); ++c) {
      std::string name = strip(cols[c]);
      if (name.empty()) fail(entities_path, lineno, "empty feature name in header");
      if (index_of(g.feature_names, name) >= 0)
        fail(entities_path, lineno, "duplicate feature name '" + name + "'");
      g.feature_names.push_back(name);
    }
    have_header = true;
    break;
  }
  if (!have_header) throw std::runtime_error(entities_path + ": missing header row");

  const int d = g.n_features();
  g.label_names = known_labels;

  struct Row {
    int label;
    std::vector<double> feats;
  };
  std::unordered_map<long, Row> rows;
  std::unordered_map<long, int> seen_at_line;

  while (std::getline(ein, line)) {
    ++lineno;
    if (is_comment_or_blank(line)) continue;
    auto cols = split_on(line, ',');
    if (static_cast<int>(cols.size()) != 2 + d)
      fail(entities_path, lineno,
           "expected " + std::to_string(2 + d) + " fields, got " + std::to_string(cols.size()));
    long id = parse_int(cols[0], entities_path, lineno);
    if (id < 0) fail(entities_path, lineno, "negative entity id");
    if (seen_at_line.count(id))
      fail(entities_path, lineno,
           "duplicate entity id " + std::to_string(id) + " (first at line " +
               std::to_string(seen_at_line[id]) + ")");
    seen_at_line[id] = lineno;

    std::string label = strip(cols[1]);
    if (label.empty()) fail(entities_path, lineno, "empty label");
    int li = index_of(g.label_names, label);
    if (li < 0) {
      if (!known_labels.empty())
        fail(entities_path, lineno, "unknown label '" + label + "'");
      li = g.n_labels();
      g.label_names.push_back(label);
    }

    Row row;
    row.label = li;
    row.feats.resize(d);
    for (int c = 0; c < d; ++c)
      row.feats[c] = parse_real(cols[2 + c], entities_path, lineno);
    rows.emplace(id, std::move(row));
  }

  const int n = static_cast<int>(rows.size());
  if (n == 0) throw std::runtime_error(entities_path + ": no entities");
  g.n_entities = n;
  g.features.resize(n, d);
  g.labels.resize(n);
  for (auto& [id, row] : rows) {
    if (id >= n)
      throw std::runtime_error(entities_path + ": entity ids must be dense 0.." +
                               std::to_string(n - 1) + ", got " + std::to_string(id));
    g.labels[id] = row.label;
    for (int c = 0; c < d; ++c) g.features(id, c) = row.feats[c];
  }

  // Edges: src \t relation \t dst
  std::ifstream fin(edges_path);
  if (!fin) throw std::runtime_error("cannot open edges file: " + edges_path);
  lineno = 0;
  while (std::getline(fin, line)) {
    ++lineno;
    if (is_comment_or_blank(line)) continue;
    auto cols = split_on(line, '\t');
    if (cols.size() != 3)
      fail(edges_path, lineno, "expected 'src<TAB>relation<TAB>dst'");
    long src = parse_int(cols[0], edges_path, lineno);
    long dst = parse_int(cols[2], edges_path, lineno);
    std::string rel = strip(cols[1]);
    if (rel.empty()) fail(edges_path, lineno, "empty relation name");
    if (src < 0 || src >= n)
      fail(edges_path, lineno, "dangling edge endpoint " + std::to_string(src));
    if (dst < 0 || dst >= n)
      fail(edges_path, lineno, "dangling edge endpoint " + std::to_string(dst));
    int r = index_of(g.relation_names, rel);
    if (r < 0) {
      r = g.n_relations();
      g.relation_names.push_back(rel);
      g.edges.emplace_back();
    }
    g.edges[r].emplace_back(static_cast<EntityId>(src), static_cast<EntityId>(dst));
  }

  build_neighbor_index(g);
  return g;
}

void build_neighbor_index(KnowledgeGraph& g) {
  g.in_neighbors.assign(g.n_relations(), {});
  for (int r = 0; r < g.n_relations(); ++r) {
    g.in_neighbors[r].assign(g.n_entities, {});
    for (auto [src, dst] : g.edges[r]) g.in_neighbors[r][dst].push_back(src);
    for (auto& lst : g.in_neighbors[r]) {
      std::sort(lst.begin(), lst.end());
      lst.erase(std::unique(lst.begin(), lst.end()), lst.end());
    }
  }
}

const std::vector<EntityId>& neighbors(const KnowledgeGraph& g, EntityId i, int r) {
  if (i < 0 || i >= g.n_entities) throw std::out_of_range("entity id out of range");
  if (r < 0 || r >= g.n_relations()) throw std::out_of_range("relation index out of range");
  return g.in_neighbors[r][i];
}

double average_degree(const KnowledgeGraph& g) {
  if (g.n_entities == 0) throw std::invalid_argument("average_degree: empty graph");
  std::size_t total = 0;
  for (const auto& rel : g.in_neighbors)
    for (const auto& lst : rel) total += lst.size();
  if (total == 0) return 1.0;
  return static_cast<double>(total) / g.n_entities;
}

SplitSpec split(const KnowledgeGraph& g, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("split: train_fraction must be in (0,1)");
  std::vector<EntityId> ids(g.n_entities);
  for (int i = 0; i < g.n_entities; ++i) ids[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * g.n_entities));
  SplitSpec s;
  s.seed = seed;
  s.train_ids.assign(ids.begin(), ids.begin() + n_train);
  s.test_ids.assign(ids.begin() + n_train, ids.end());
  std::sort(s.train_ids.begin(), s.train_ids.end());
  std::sort(s.test_ids.begin(), s.test_ids.end());
  return s;
}

SplitSpec subsample(const SplitSpec& s, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("subsample: fraction must be in (0,1]");
  if (fraction == 1.0) return s;
  auto keep = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(s.train_ids.size())));
  std::vector<EntityId> ids = s.train_ids;
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(keep);
  std::sort(ids.begin(), ids.end());
  SplitSpec out;
  out.train_ids = std::move(ids);
  out.test_ids = s.test_ids;
  out.seed = seed;
  return out;
}

}  // namespace kcln
