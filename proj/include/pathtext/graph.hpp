#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pathtext/weak_supervision.hpp"

namespace pathtext::graph {

// Directed labeled edge over canonical entity strings.
struct Edge {
  std::string head, rel, tail;
  auto operator<=>(const Edge&) const = default;
};

// Nodes and edges are sorted and unique; every edge endpoint is a node.
struct KnowledgeGraph {
  std::vector<std::string> nodes;
  std::vector<Edge> edges;
  bool operator==(const KnowledgeGraph&) const = default;
};

// Merges nodes with identical canonical strings (lowercase, collapsed
// whitespace) and drops duplicate edges. Relations are canonicalized the
// same way.
KnowledgeGraph assemble(const std::vector<Edge>& triples);

// Number of weakly connected components.
int connected_components(const KnowledgeGraph& g);

// GraphViz rendering of the labeled digraph.
std::string to_dot(const KnowledgeGraph& g, const std::string& name = "g");

// Entity string with its tf-idf character-n-gram vector. Nodes shorter than
// the gram size get the zero vector.
struct NodeFeature {
  std::string node;
  weak::SparseVec vec;
};

// Features fitted over exactly the given node strings.
std::vector<NodeFeature> node_features(const std::vector<std::string>& nodes, int ngram = 3);

// Euclidean distance between the normalized vectors (each has norm 1 or 0).
double feature_distance(const NodeFeature& a, const NodeFeature& b);

// True iff the feature distance is at most the threshold.
bool node_match(const NodeFeature& a, const NodeFeature& b, double threshold = 0.6);

using MatchFn = std::function<bool(const std::string&, const std::string&)>;

// Minimum total edit cost transforming g1 into g2 under unit costs:
// substitutions are free when the predicate accepts the pair and cost 1
// otherwise; insertions and deletions cost 1. Best-first search over node
// mappings with an admissible bound from unmatched node and edge counts.
// Throws TooLarge beyond 24 nodes total.
int64_t exact_ged(const KnowledgeGraph& g1, const KnowledgeGraph& g2, const MatchFn& node_eq,
                  const MatchFn& rel_eq);

// Default matchers: nodes by feature distance (fitted over the union of
// both node sets), relations by exact canonical equality.
int64_t exact_ged(const KnowledgeGraph& g1, const KnowledgeGraph& g2,
                  double node_threshold = 0.6);

struct GedReport {
  std::vector<int64_t> chunk_values;  // exact GED per chunk, all >= 0
  double mean = 0.0;
  int chunk_size = 10;
  std::string cost_model = "unit";
};

// Splits the index-aligned triple lists into consecutive chunks, assembles
// each pair of local graphs, and averages their exact GEDs. Chunks are
// independent; workers > 1 scores them in parallel.
GedReport approx_ged(const std::vector<Edge>& reference, const std::vector<Edge>& generated,
                     int chunk_size = 10, double node_threshold = 0.6, int workers = 1);

std::string ged_report_json(const GedReport& r);

}  // namespace pathtext::graph
