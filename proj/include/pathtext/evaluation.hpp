#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_set>
#include <vector>

#include "pathtext/corpus.hpp"

namespace pathtext::eval {

// Truth tuple (surface strings) with one entity hidden from the model.
struct CompletionQuery {
  std::string head, rel, tail;
  int side = 1;  // 0 = head masked, 1 = tail masked
};

struct CandidatePool {
  std::vector<std::string> nodes;                // deduplicated entity strings
  std::unordered_set<std::string> known_tuples;  // flattened tuples of every split
};

// Nodes and known tuples across all provided splits (train/dev/test).
CandidatePool build_pool(const std::vector<const std::vector<corpus::RawPath>*>& splits);

struct RankingOutcome {
  int64_t query_id = -1;
  int64_t rank = 1;
  int64_t candidates_after_filter = 0;
  bool malformed = false;
  int side = 1;
};

// Ranks the truth against all substituted candidates, scored by tf-idf
// cosine to the generated tuple. Malformed generations take the worst-case
// rank. Ties against the truth are counted as ahead of it.
RankingOutcome rank_generated(const std::vector<int>& generated, const CompletionQuery& q,
                              const CandidatePool& pool, const corpus::Vocabulary& vocab);

// Produces the masked serialized input for q, runs the generator on it, and
// ranks the output. The generator is the model's masked-path-reconstruction
// direction in eval mode.
using Generator = std::function<std::vector<int>(const std::vector<int>&)>;
RankingOutcome rank_query(const Generator& generate, const CompletionQuery& q,
                          const CandidatePool& pool, const corpus::Vocabulary& vocab);

struct KbcMetrics {
  double mrr = 0.0, hits1 = 0.0, hits3 = 0.0, hits10 = 0.0;  // all x100
  int64_t n_queries = 0;
  int64_t n_malformed = 0;
};
KbcMetrics mrr_hits(const std::vector<RankingOutcome>& outcomes);

// Geometric mean of modified 1..n-gram precisions times the brevity
// penalty; zero precisions are smoothed to 1e-9. Empty candidate scores 0.
double bleu_n(const std::vector<int>& candidate, const std::vector<int>& reference, int n);

// LCS F-measure; 0 when either side is empty.
double rouge_l(const std::vector<int>& candidate, const std::vector<int>& reference);

struct TextMetrics {
  double bleu2 = 0.0, bleu3 = 0.0, rouge_l = 0.0;
  int64_t n = 0;
};

// Corpus means over parallel candidate/reference lists. Empty candidates
// score 0 on all metrics and stay in the mean.
TextMetrics text_metrics(const std::vector<std::vector<int>>& candidates,
                         const std::vector<std::vector<int>>& references);

// Generates from each source and scores against the paired reference.
TextMetrics evaluate_text(const Generator& generate,
                          const std::vector<std::vector<int>>& sources,
                          const std::vector<std::vector<int>>& references);

}  // namespace pathtext::eval
