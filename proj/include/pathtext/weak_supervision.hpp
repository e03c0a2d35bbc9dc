#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "pathtext/corpus.hpp"

namespace pathtext::weak {

// L2-normalized tf-idf vector; entries sorted by gram index.
struct SparseVec {
  std::vector<std::pair<int, double>> entries;
  bool zero() const { return entries.empty(); }
};

struct TfIdfModel {
  int ngram_size = 3;
  std::unordered_map<std::string, int> gram_to_index;
  std::vector<double> idf;  // parallel to gram indices
  int64_t corpus_size = 0;
};

// Character n-grams of the lowercased strings, spaces retained;
// idf(g) = ln((1 + N) / (1 + df(g))) + 1.
TfIdfModel fit_tfidf(const std::vector<std::string>& strings, int n = 3);

// Raw-count tf times idf, L2-normalized. Strings sharing no grams with the
// fitted corpus vectorize to the zero vector.
SparseVec vectorize(const TfIdfModel& model, const std::string& s);

double cosine(const SparseVec& u, const SparseVec& v);

// Lowercase with whitespace runs collapsed to single spaces, trimmed.
std::string normalize_text(const std::string& s);

// normalize_text("head rel tail").
std::string flatten_path(const std::string& head, const std::string& rel,
                         const std::string& tail);

struct MatchResult {
  std::vector<corpus::RawPair> pairs;     // top-1 per sentence, score > threshold
  std::vector<int> unmatched_sentences;   // sentence indices with no kept pair
  std::vector<int> unmatched_paths;       // path indices absent from every kept pair
};

// Fits tf-idf over the union of sentences and flattened paths, then keeps
// each sentence's single best path when its score exceeds the threshold.
// Uses an inverted index over grams; results equal the exhaustive scan.
MatchResult match(const std::vector<corpus::RawSentence>& sentences,
                  const std::vector<corpus::RawPath>& paths, double threshold = 0.6,
                  int ngram = 3);

struct SupervisionPlan {
  double rho = 0.0;
  std::unordered_set<int64_t> supervised_ids;
  bool covers(int64_t pair_id) const { return supervised_ids.count(pair_id) > 0; }
};

// Uniform sample without replacement of round(rho * n_pairs) pair ids.
SupervisionPlan plan_supervision(int64_t n_pairs, double rho, uint64_t seed);

}  // namespace pathtext::weak
