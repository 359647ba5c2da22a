#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace kcln {

using EntityId = std::int32_t;

struct RelationType {
  std::string name;
  int index = -1;
};

// Multi-relational knowledge graph. Immutable after load; edges are directed
// and neighbor lists hold in-neighbors (sources of edges pointing at an
// entity), sorted ascending and deduplicated.
struct KnowledgeGraph {
  int n_entities = 0;
  std::vector<std::string> feature_names;
  Eigen::MatrixXd features;              // n_entities x D
  std::vector<int> labels;               // label index per entity
  std::vector<std::string> label_names;
  std::vector<std::string> relation_names;
  // edges[r] = list of (src, dst) pairs as loaded
  std::vector<std::vector<std::pair<EntityId, EntityId>>> edges;
  // in_neighbors[r][i] = sorted unique sources of r-edges into i
  std::vector<std::vector<std::vector<EntityId>>> in_neighbors;

  int n_features() const { return static_cast<int>(feature_names.size()); }
  int n_labels() const { return static_cast<int>(label_names.size()); }
  int n_relations() const { return static_cast<int>(relation_names.size()); }

  int feature_index(const std::string& name) const;   // -1 if unknown
  int relation_index(const std::string& name) const;  // -1 if unknown
  int label_index(const std::string& name) const;     // -1 if unknown
};

struct SplitSpec {
  std::vector<EntityId> train_ids;  // sorted
  std::vector<EntityId> test_ids;   // sorted
  std::uint64_t seed = 0;
};

// Entities file: CSV with header `id,label,<feature>...`; edges file: TSV
// `src<TAB>relation<TAB>dst`. `#` starts a comment line in both.
// `known_labels`, when non-empty, fixes the label vocabulary; a label outside
// it is an error. Throws std::runtime_error with the offending line number.
KnowledgeGraph load_graph(const std::string& entities_path,
                          const std::string& edges_path,
                          const std::vector<std::string>& known_labels = {});

// In-neighborhood of entity i under relation r, ascending ids.
const std::vector<EntityId>& neighbors(const KnowledgeGraph& g, EntityId i, int r);

// Rebuilds in_neighbors from the edge lists (sorted, deduplicated). For
// graphs assembled in memory rather than loaded from files.
void build_neighbor_index(KnowledgeGraph& g);

// Mean total in-degree across entities; 1 when the graph has no edges so the
// context scaling stays defined.
double average_degree(const KnowledgeGraph& g);

SplitSpec split(const KnowledgeGraph& g, double train_fraction, std::uint64_t seed);

// Keeps ceil(fraction * |train|) train ids; test ids unchanged.
SplitSpec subsample(const SplitSpec& s, double fraction, std::uint64_t seed);

}  // namespace kcln
