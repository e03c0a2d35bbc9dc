#include "pathtext/graph.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <map>
#include <queue>
#include <set>
#include <thread>
#include <unordered_map>

#include "json.hpp"
#include "pathtext/errors.hpp"

namespace pathtext::graph {

KnowledgeGraph assemble(const std::vector<Edge>& triples) {
  std::set<std::string> nodes;
  std::set<Edge> edges;
  for (const auto& t : triples) {
    Edge e{weak::normalize_text(t.head), weak::normalize_text(t.rel),
           weak::normalize_text(t.tail)};
    nodes.insert(e.head);
    nodes.insert(e.tail);
    edges.insert(std::move(e));
  }
  KnowledgeGraph g;
  g.nodes.assign(nodes.begin(), nodes.end());
  g.edges.assign(edges.begin(), edges.end());
  return g;
}

namespace {

int find_root(std::vector<int>& parent, int i) {
  while (parent[i] != i) {
    parent[i] = parent[parent[i]];
    i = parent[i];
  }
  return i;
}

}  // namespace

int connected_components(const KnowledgeGraph& g) {
  std::unordered_map<std::string, int> index;
  for (const auto& n : g.nodes) index.emplace(n, static_cast<int>(index.size()));
  std::vector<int> parent(g.nodes.size());
  for (size_t i = 0; i < parent.size(); ++i) parent[i] = static_cast<int>(i);
  for (const auto& e : g.edges) {
    const int a = find_root(parent, index.at(e.head));
    const int b = find_root(parent, index.at(e.tail));
    if (a != b) parent[a] = b;
  }
  int roots = 0;
  for (size_t i = 0; i < parent.size(); ++i) {
    if (find_root(parent, static_cast<int>(i)) == static_cast<int>(i)) ++roots;
  }
  return roots;
}

namespace {

std::string dot_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out;
}

}  // namespace

std::string to_dot(const KnowledgeGraph& g, const std::string& name) {
  std::string out = "digraph " + name + " {\n";
  for (const auto& n : g.nodes) out += "  \"" + dot_escape(n) + "\";\n";
  for (const auto& e : g.edges) {
    out += "  \"" + dot_escape(e.head) + "\" -> \"" + dot_escape(e.tail) + "\" [label=\"" +
           dot_escape(e.rel) + "\"];\n";
  }
  out += "}\n";
  return out;
}

std::vector<NodeFeature> node_features(const std::vector<std::string>& nodes, int ngram) {
  std::vector<NodeFeature> out;
  out.reserve(nodes.size());
  if (nodes.empty()) return out;
  try {
    const weak::TfIdfModel model = weak::fit_tfidf(nodes, ngram);
    for (const auto& n : nodes) out.push_back({n, weak::vectorize(model, n)});
  } catch (const EmptyCorpus&) {
    // every node is shorter than the gram size: all features are zero
    for (const auto& n : nodes) out.push_back({n, weak::SparseVec{}});
  }
  return out;
}

double feature_distance(const NodeFeature& a, const NodeFeature& b) {
  double dot = 0.0;
  size_t i = 0, j = 0;
  while (i < a.vec.entries.size() && j < b.vec.entries.size()) {
    const auto& [gi, wi] = a.vec.entries[i];
    const auto& [gj, wj] = b.vec.entries[j];
    if (gi == gj) {
      dot += wi * wj;
      ++i;
      ++j;
    } else if (gi < gj) {
      ++i;
    } else {
      ++j;
    }
  }
  const double na = a.vec.zero() ? 0.0 : 1.0;
  const double nb = b.vec.zero() ? 0.0 : 1.0;
  return std::sqrt(std::max(0.0, na + nb - 2.0 * dot));
}

bool node_match(const NodeFeature& a, const NodeFeature& b, double threshold) {
  return feature_distance(a, b) <= threshold;
}

namespace {

// Relation-label lists per ordered node pair, over a shared label table.
struct Adjacency {
  int n = 0;
  std::vector<std::vector<int>> labels;

  const std::vector<int>& at(int i, int j) const { return labels[i * n + j]; }
};

Adjacency build_adjacency(const KnowledgeGraph& g, std::map<std::string, int>& rel_ids,
                          std::vector<std::string>& rel_names) {
  Adjacency adj;
  adj.n = static_cast<int>(g.nodes.size());
  adj.labels.resize(static_cast<size_t>(adj.n) * adj.n);
  std::unordered_map<std::string, int> index;
  for (const auto& n : g.nodes) index.emplace(n, static_cast<int>(index.size()));
  for (const auto& e : g.edges) {
    auto [it, fresh] = rel_ids.emplace(e.rel, static_cast<int>(rel_names.size()));
    if (fresh) rel_names.push_back(e.rel);
    adj.labels[index.at(e.head) * adj.n + index.at(e.tail)].push_back(it->second);
  }
  return adj;
}

// Edit cost between the label lists of one aligned node pair: maximum
// matching of acceptable labels is free, the rest substitute or delete.
int64_t pair_cost(const std::vector<int>& l1, const std::vector<int>& l2,
                  const std::vector<std::vector<char>>& ok) {
  const int a = static_cast<int>(l1.size()), b = static_cast<int>(l2.size());
  if (a == 0 || b == 0) return a + b;
  std::vector<int> owner(b, -1);
  std::vector<char> visited(b);
  std::function<bool(int)> augment = [&](int i) {
    for (int j = 0; j < b; ++j) {
      if (visited[j] || !ok[l1[i]][l2[j]]) continue;
      visited[j] = 1;
      if (owner[j] == -1 || augment(owner[j])) {
        owner[j] = i;
        return true;
      }
    }
    return false;
  };
  int matched = 0;
  for (int i = 0; i < a; ++i) {
    visited.assign(b, 0);
    if (augment(i)) ++matched;
  }
  return std::max(a, b) - matched;
}

struct SearchState {
  int64_t f = 0;
  int64_t g = 0;
  int k = 0;  // g1 nodes assigned so far
  uint32_t used2 = 0;
  std::vector<int8_t> map;  // size k, -1 deletes the node
  uint64_t seq = 0;
};

struct WorseThan {
  bool operator()(const SearchState& a, const SearchState& b) const {
    if (a.f != b.f) return a.f > b.f;
    if (a.k != b.k) return a.k < b.k;
    return a.seq > b.seq;
  }
};

}  // namespace

int64_t exact_ged(const KnowledgeGraph& g1, const KnowledgeGraph& g2, const MatchFn& node_eq,
                  const MatchFn& rel_eq) {
  const int n1 = static_cast<int>(g1.nodes.size());
  const int n2 = static_cast<int>(g2.nodes.size());
  if (n1 + n2 > 24) {
    throw TooLarge("exact_ged: " + std::to_string(n1 + n2) + " nodes total exceeds 24");
  }

  std::map<std::string, int> rel_ids;
  std::vector<std::string> rel_names;
  const Adjacency adj1 = build_adjacency(g1, rel_ids, rel_names);
  const Adjacency adj2 = build_adjacency(g2, rel_ids, rel_names);

  const int n_rels = static_cast<int>(rel_names.size());
  std::vector<std::vector<char>> rel_ok(n_rels, std::vector<char>(n_rels));
  for (int a = 0; a < n_rels; ++a) {
    for (int b = 0; b < n_rels; ++b) rel_ok[a][b] = rel_eq(rel_names[a], rel_names[b]) ? 1 : 0;
  }
  std::vector<std::vector<int64_t>> node_cost(n1, std::vector<int64_t>(n2));
  for (int i = 0; i < n1; ++i) {
    for (int w = 0; w < n2; ++w) node_cost[i][w] = node_eq(g1.nodes[i], g2.nodes[w]) ? 0 : 1;
  }

  // Labels on g1 pairs touching any node >= k; none are charged before
  // node k is assigned.
  std::vector<int64_t> e1_rem(n1 + 1, 0);
  for (int k = 0; k <= n1; ++k) {
    for (int i = 0; i < n1; ++i) {
      for (int j = 0; j < n1; ++j) {
        if (i >= k || j >= k) e1_rem[k] += static_cast<int64_t>(adj1.at(i, j).size());
      }
    }
  }
  // Collapsed g2 pair list for the per-state remainder count.
  struct Pair2 {
    int i, j;
    int64_t count;
  };
  std::vector<Pair2> pairs2;
  for (int i = 0; i < n2; ++i) {
    for (int j = 0; j < n2; ++j) {
      if (!adj2.at(i, j).empty()) {
        pairs2.push_back({i, j, static_cast<int64_t>(adj2.at(i, j).size())});
      }
    }
  }

  auto e2_rem = [&](uint32_t used2) {
    int64_t total = 0;
    for (const auto& p : pairs2) {
      if (!(used2 >> p.i & 1) || !(used2 >> p.j & 1)) total += p.count;
    }
    return total;
  };
  auto lower_bound = [&](int k, uint32_t used2) {
    const int64_t r1 = n1 - k;
    const int64_t r2 = n2 - std::popcount(used2);
    return std::abs(r1 - r2) + std::abs(e1_rem[k] - e2_rem(used2));
  };
  // Insertion cost of everything g2 still holds once g1 is exhausted.
  auto completion = [&](uint32_t used2) {
    int64_t total = n2 - std::popcount(used2);
    total += e2_rem(used2);
    return total;
  };

  std::priority_queue<SearchState, std::vector<SearchState>, WorseThan> open;
  uint64_t seq = 0;
  SearchState init;
  if (n1 == 0) {
    init.g = completion(0);
    init.f = init.g;
  } else {
    init.f = lower_bound(0, 0);
  }
  open.push(init);

  while (!open.empty()) {
    SearchState cur = open.top();
    open.pop();
    if (cur.k == n1) return cur.g;

    const int k = cur.k;
    auto edge_delta = [&](int w) {  // w = -1 deletes node k
      int64_t cost = 0;
      const auto& self1 = adj1.at(k, k);
      if (w == -1) {
        cost += static_cast<int64_t>(self1.size());
      } else {
        cost += pair_cost(self1, adj2.at(w, w), rel_ok);
      }
      for (int j = 0; j < k; ++j) {
        const int mj = cur.map[j];
        const auto& fwd = adj1.at(k, j);
        const auto& bwd = adj1.at(j, k);
        if (w == -1 || mj == -1) {
          cost += static_cast<int64_t>(fwd.size() + bwd.size());
        } else {
          cost += pair_cost(fwd, adj2.at(w, mj), rel_ok);
          cost += pair_cost(bwd, adj2.at(mj, w), rel_ok);
        }
      }
      return cost;
    };
    auto push_child = [&](int w, int64_t delta) {
      SearchState next;
      next.g = cur.g + delta;
      next.k = k + 1;
      next.used2 = w == -1 ? cur.used2 : cur.used2 | (1u << w);
      next.map = cur.map;
      next.map.push_back(static_cast<int8_t>(w));
      next.seq = ++seq;
      if (next.k == n1) {
        next.g += completion(next.used2);
        next.f = next.g;
      } else {
        next.f = next.g + lower_bound(next.k, next.used2);
      }
      open.push(next);
    };

    for (int w = 0; w < n2; ++w) {
      if (cur.used2 >> w & 1) continue;
      push_child(w, node_cost[k][w] + edge_delta(w));
    }
    push_child(-1, 1 + edge_delta(-1));
  }
  return 0;  // unreachable: the deletion branch always reaches k == n1
}

int64_t exact_ged(const KnowledgeGraph& g1, const KnowledgeGraph& g2, double node_threshold) {
  std::set<std::string> union_nodes(g1.nodes.begin(), g1.nodes.end());
  union_nodes.insert(g2.nodes.begin(), g2.nodes.end());
  const std::vector<std::string> all(union_nodes.begin(), union_nodes.end());
  const std::vector<NodeFeature> feats = node_features(all);
  std::unordered_map<std::string, size_t> index;
  for (size_t i = 0; i < all.size(); ++i) index.emplace(all[i], i);

  MatchFn node_eq = [feats, index, node_threshold](const std::string& a, const std::string& b) {
    return node_match(feats[index.at(a)], feats[index.at(b)], node_threshold);
  };
  MatchFn rel_eq = [](const std::string& a, const std::string& b) { return a == b; };
  return exact_ged(g1, g2, node_eq, rel_eq);
}

GedReport approx_ged(const std::vector<Edge>& reference, const std::vector<Edge>& generated,
                     int chunk_size, double node_threshold, int workers) {
  if (reference.size() != generated.size()) {
    throw LengthMismatch("approx_ged: " + std::to_string(reference.size()) +
                         " reference vs " + std::to_string(generated.size()) +
                         " generated triples");
  }
  if (reference.empty()) throw EmptyInput("approx_ged: no aligned triples");
  if (chunk_size < 1) throw ConfigError("chunk_size must be >= 1");
  if (workers < 1) throw ConfigError("workers must be >= 1");

  const int64_t n = static_cast<int64_t>(reference.size());
  const int64_t n_chunks = (n + chunk_size - 1) / chunk_size;

  GedReport report;
  report.chunk_size = chunk_size;
  report.chunk_values.assign(n_chunks, 0);

  auto score_chunk = [&](int64_t c) {
    const int64_t lo = c * chunk_size;
    const int64_t hi = std::min(n, lo + chunk_size);
    const std::vector<Edge> ref_chunk(reference.begin() + lo, reference.begin() + hi);
    const std::vector<Edge> gen_chunk(generated.begin() + lo, generated.begin() + hi);
    report.chunk_values[c] =
        exact_ged(assemble(ref_chunk), assemble(gen_chunk), node_threshold);
  };

  const int n_workers = static_cast<int>(std::min<int64_t>(workers, n_chunks));
  if (n_workers <= 1) {
    for (int64_t c = 0; c < n_chunks; ++c) score_chunk(c);
  } else {
    std::vector<std::exception_ptr> errors(n_workers);
    std::vector<std::thread> pool;
    for (int t = 0; t < n_workers; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (int64_t c = t; c < n_chunks; c += n_workers) score_chunk(c);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  int64_t sum = 0;
  for (int64_t v : report.chunk_values) sum += v;
  report.mean = static_cast<double>(sum) / static_cast<double>(n_chunks);
  return report;
}

std::string ged_report_json(const GedReport& r) {
  nlohmann::json j;
  j["chunk_values"] = r.chunk_values;
  j["mean"] = r.mean;
  j["chunk_size"] = r.chunk_size;
  j["cost_model"] = r.cost_model;
  return j.dump();
}

}  // namespace pathtext::graph
