#include "pathtext/weak_supervision.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "pathtext/errors.hpp"
#include "pathtext/rng.hpp"

namespace pathtext::weak {

namespace {

std::string lowercased(const std::string& s) {
  std::string out = s;
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Gram counts of one string, keyed by gram index; unknown grams are skipped.
std::unordered_map<int, int> gram_counts(const TfIdfModel& model, const std::string& s) {
  std::unordered_map<int, int> counts;
  const std::string low = lowercased(s);
  const int n = model.ngram_size;
  if (static_cast<int>(low.size()) < n) return counts;
  for (size_t i = 0; i + n <= low.size(); ++i) {
    auto it = model.gram_to_index.find(low.substr(i, n));
    if (it != model.gram_to_index.end()) ++counts[it->second];
  }
  return counts;
}

}  // namespace

TfIdfModel fit_tfidf(const std::vector<std::string>& strings, int n) {
  if (n < 1) throw ConfigError("n-gram size must be >= 1");
  if (strings.empty()) throw EmptyCorpus("fit_tfidf: no documents");
  TfIdfModel model;
  model.ngram_size = n;
  model.corpus_size = static_cast<int64_t>(strings.size());

  std::vector<int64_t> df;
  for (const auto& s : strings) {
    const std::string low = lowercased(s);
    std::unordered_set<int> seen;
    if (static_cast<int>(low.size()) < n) continue;
    for (size_t i = 0; i + n <= low.size(); ++i) {
      std::string gram = low.substr(i, n);
      auto [it, fresh] = model.gram_to_index.emplace(std::move(gram),
                                                     static_cast<int>(df.size()));
      if (fresh) df.push_back(0);
      if (seen.insert(it->second).second) ++df[it->second];
    }
  }
  if (model.gram_to_index.empty()) {
    throw EmptyCorpus("fit_tfidf: no document long enough to yield an n-gram");
  }

  model.idf.resize(df.size());
  const double num = 1.0 + static_cast<double>(model.corpus_size);
  for (size_t g = 0; g < df.size(); ++g) {
    model.idf[g] = std::log(num / (1.0 + static_cast<double>(df[g]))) + 1.0;
  }
  return model;
}

SparseVec vectorize(const TfIdfModel& model, const std::string& s) {
  SparseVec v;
  double sq = 0.0;
  for (const auto& [g, tf] : gram_counts(model, s)) {
    const double w = static_cast<double>(tf) * model.idf[g];
    v.entries.emplace_back(g, w);
    sq += w * w;
  }
  if (v.entries.empty()) return v;
  const double norm = std::sqrt(sq);
  for (auto& [g, w] : v.entries) w /= norm;
  std::sort(v.entries.begin(), v.entries.end());
  return v;
}

double cosine(const SparseVec& u, const SparseVec& v) {
  if (u.zero() || v.zero()) return 0.0;
  double dot = 0.0, nu = 0.0, nv = 0.0;
  size_t i = 0, j = 0;
  while (i < u.entries.size() && j < v.entries.size()) {
    if (u.entries[i].first == v.entries[j].first) {
      dot += u.entries[i].second * v.entries[j].second;
      ++i;
      ++j;
    } else if (u.entries[i].first < v.entries[j].first) {
      ++i;
    } else {
      ++j;
    }
  }
  for (const auto& [g, w] : u.entries) nu += w * w;
  for (const auto& [g, w] : v.entries) nv += w * w;
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

std::string normalize_text(const std::string& s) {
  const std::string low = lowercased(s);
  std::string out;
  bool in_space = true;  // also trims leading whitespace
  for (char c : low) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!in_space) out += ' ';
      in_space = true;
    } else {
      out += c;
      in_space = false;
    }
  }
  if (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

std::string flatten_path(const std::string& head, const std::string& rel,
                         const std::string& tail) {
  return normalize_text(head + " " + rel + " " + tail);
}

MatchResult match(const std::vector<corpus::RawSentence>& sentences,
                  const std::vector<corpus::RawPath>& paths, double threshold, int ngram) {
  std::vector<std::string> docs;
  docs.reserve(sentences.size() + paths.size());
  for (const auto& s : sentences) docs.push_back(s.text);
  std::vector<std::string> flat(paths.size());
  for (size_t i = 0; i < paths.size(); ++i) {
    flat[i] = flatten_path(paths[i].head, paths[i].rel, paths[i].tail);
    docs.push_back(flat[i]);
  }
  const TfIdfModel model = fit_tfidf(docs, ngram);

  // Inverted index: gram -> (path id, weight) postings.
  std::vector<std::vector<std::pair<int, double>>> postings(model.idf.size());
  for (size_t p = 0; p < paths.size(); ++p) {
    for (const auto& [g, w] : vectorize(model, flat[p]).entries) {
      postings[g].emplace_back(static_cast<int>(p), w);
    }
  }

  MatchResult result;
  std::vector<char> path_used(paths.size(), 0);
  std::vector<double> score(paths.size(), 0.0);
  std::vector<int> touched;
  for (size_t s = 0; s < sentences.size(); ++s) {
    const SparseVec sv = vectorize(model, sentences[s].text);
    touched.clear();
    for (const auto& [g, w] : sv.entries) {
      for (const auto& [p, pw] : postings[g]) {
        if (score[p] == 0.0) touched.push_back(p);
        score[p] += w * pw;
      }
    }
    int best = -1;
    double best_score = 0.0;
    for (int p : touched) {
      if (score[p] > best_score) {
        best_score = score[p];
        best = p;
      } else if (score[p] == best_score && best != -1 && p < best) {
        best = p;  // deterministic tie handling
      }
      score[p] = 0.0;
    }
    if (best != -1 && best_score > threshold) {
      result.pairs.push_back({sentences[s].text, paths[best].head, paths[best].rel,
                              paths[best].tail, best_score});
      path_used[best] = 1;
    } else {
      result.unmatched_sentences.push_back(static_cast<int>(s));
    }
  }
  for (size_t p = 0; p < paths.size(); ++p) {
    if (!path_used[p]) result.unmatched_paths.push_back(static_cast<int>(p));
  }
  return result;
}

SupervisionPlan plan_supervision(int64_t n_pairs, double rho, uint64_t seed) {
  if (rho < 0.0 || rho > 1.0) throw ConfigError("rho must lie in [0, 1]");
  if (n_pairs < 0) throw ConfigError("negative pair count");
  SupervisionPlan plan;
  plan.rho = rho;
  const int64_t take = std::llround(rho * static_cast<double>(n_pairs));
  if (take == 0) return plan;
  std::vector<int64_t> ids(static_cast<size_t>(n_pairs));
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(seed);
  rng.shuffle(ids);
  plan.supervised_ids.insert(ids.begin(), ids.begin() + take);
  return plan;
}

}  // namespace pathtext::weak
