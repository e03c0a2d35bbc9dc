#include "pathtext/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "pathtext/errors.hpp"
#include "pathtext/weak_supervision.hpp"

namespace pathtext::eval {

namespace {

using corpus::Vocabulary;

std::string flat_triple(const std::string& h, const std::string& r, const std::string& t) {
  return weak::flatten_path(h, r, t);
}

}  // namespace

CandidatePool build_pool(const std::vector<const std::vector<corpus::RawPath>*>& splits) {
  CandidatePool pool;
  std::unordered_set<std::string> seen;
  for (const auto* split : splits) {
    for (const auto& p : *split) {
      for (const std::string* ent : {&p.head, &p.tail}) {
        const std::string key = weak::flatten_path(*ent, "", "");
        if (!key.empty() && seen.insert(key).second) pool.nodes.push_back(key);
      }
      pool.known_tuples.insert(flat_triple(p.head, p.rel, p.tail));
    }
  }
  return pool;
}

RankingOutcome rank_generated(const std::vector<int>& generated, const CompletionQuery& q,
                              const CandidatePool& pool, const Vocabulary& vocab) {
  if (pool.nodes.empty()) throw EmptyPool("candidate pool has no nodes");
  RankingOutcome out;
  out.side = q.side;

  const std::string truth_text = flat_triple(q.head, q.rel, q.tail);

  // Substitute every node into the truth template, then drop candidates
  // (never the truth) already known as real tuples in any split.
  std::vector<std::string> candidates;
  candidates.reserve(pool.nodes.size());
  int64_t truth_at = -1;
  for (const auto& node : pool.nodes) {
    const std::string text = q.side == 0 ? flat_triple(node, q.rel, q.tail)
                                         : flat_triple(q.head, q.rel, node);
    if (text == truth_text) {
      if (truth_at == -1) {
        truth_at = static_cast<int64_t>(candidates.size());
        candidates.push_back(text);
      }
      continue;
    }
    if (pool.known_tuples.count(text)) continue;
    candidates.push_back(text);
  }
  if (truth_at == -1) {  // masked entity missing from the pool
    truth_at = static_cast<int64_t>(candidates.size());
    candidates.push_back(truth_text);
  }
  out.candidates_after_filter = static_cast<int64_t>(candidates.size());

  const corpus::PathParse parsed = corpus::parse_path(generated);
  if (!parsed.ok()) {
    out.malformed = true;
    out.rank = out.candidates_after_filter;
    return out;
  }

  const std::string gen_text = flat_triple(corpus::detokenize(parsed.triple.head, vocab),
                                           corpus::detokenize(parsed.triple.rel, vocab),
                                           corpus::detokenize(parsed.triple.tail, vocab));

  std::vector<std::string> docs = candidates;
  docs.push_back(gen_text);
  const weak::TfIdfModel model = weak::fit_tfidf(docs, 3);
  const weak::SparseVec gv = weak::vectorize(model, gen_text);

  const double truth_sim =
      weak::cosine(weak::vectorize(model, candidates[truth_at]), gv);
  int64_t ahead = 0;
  for (int64_t c = 0; c < static_cast<int64_t>(candidates.size()); ++c) {
    if (c == truth_at) continue;
    if (weak::cosine(weak::vectorize(model, candidates[c]), gv) >= truth_sim) ++ahead;
  }
  out.rank = 1 + ahead;
  return out;
}

RankingOutcome rank_query(const Generator& generate, const CompletionQuery& q,
                          const CandidatePool& pool, const Vocabulary& vocab) {
  std::vector<int> input;
  input.push_back(Vocabulary::kSep);
  if (q.side == 0) {
    input.push_back(Vocabulary::kMask);
  } else {
    const auto h = corpus::tokenize(q.head, vocab);
    input.insert(input.end(), h.begin(), h.end());
  }
  input.push_back(Vocabulary::kSep);
  const auto r = corpus::tokenize(q.rel, vocab);
  input.insert(input.end(), r.begin(), r.end());
  input.push_back(Vocabulary::kSep);
  if (q.side == 0) {
    const auto t = corpus::tokenize(q.tail, vocab);
    input.insert(input.end(), t.begin(), t.end());
  } else {
    input.push_back(Vocabulary::kMask);
  }
  input.push_back(Vocabulary::kSep);
  return rank_generated(generate(input), q, pool, vocab);
}

KbcMetrics mrr_hits(const std::vector<RankingOutcome>& outcomes) {
  if (outcomes.empty()) throw EmptyInput("mrr_hits: no ranking outcomes");
  KbcMetrics m;
  m.n_queries = static_cast<int64_t>(outcomes.size());
  for (const auto& o : outcomes) {
    m.mrr += 1.0 / static_cast<double>(o.rank);
    m.hits1 += o.rank <= 1 ? 1.0 : 0.0;
    m.hits3 += o.rank <= 3 ? 1.0 : 0.0;
    m.hits10 += o.rank <= 10 ? 1.0 : 0.0;
    if (o.malformed) ++m.n_malformed;
  }
  const double scale = 100.0 / static_cast<double>(m.n_queries);
  m.mrr *= scale;
  m.hits1 *= scale;
  m.hits3 *= scale;
  m.hits10 *= scale;
  return m;
}

namespace {

// Clipped n-gram precision of order k.
double modified_precision(const std::vector<int>& cand, const std::vector<int>& ref, int k) {
  if (static_cast<int>(cand.size()) < k) return 0.0;
  std::map<std::vector<int>, int64_t> ref_counts;
  for (size_t i = 0; i + k <= ref.size(); ++i) {
    ++ref_counts[std::vector<int>(ref.begin() + i, ref.begin() + i + k)];
  }
  std::map<std::vector<int>, int64_t> cand_counts;
  for (size_t i = 0; i + k <= cand.size(); ++i) {
    ++cand_counts[std::vector<int>(cand.begin() + i, cand.begin() + i + k)];
  }
  int64_t total = 0, clipped = 0;
  for (const auto& [gram, c] : cand_counts) {
    total += c;
    auto it = ref_counts.find(gram);
    if (it != ref_counts.end()) clipped += std::min(c, it->second);
  }
  return total == 0 ? 0.0 : static_cast<double>(clipped) / static_cast<double>(total);
}

}  // namespace

double bleu_n(const std::vector<int>& candidate, const std::vector<int>& reference, int n) {
  if (n < 1) throw ConfigError("bleu order must be >= 1");
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (int k = 1; k <= n; ++k) {
    double p = modified_precision(candidate, reference, k);
    if (p <= 0.0) p = 1e-9;
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / n);
}

double rouge_l(const std::vector<int>& candidate, const std::vector<int>& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const size_t n = candidate.size(), m = reference.size();
  std::vector<int64_t> prev(m + 1, 0), cur(m + 1, 0);
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j) {
      cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1
                                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = static_cast<double>(prev[m]);
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(n);
  const double r = lcs / static_cast<double>(m);
  return 2.0 * p * r / (p + r);
}

TextMetrics text_metrics(const std::vector<std::vector<int>>& candidates,
                         const std::vector<std::vector<int>>& references) {
  if (candidates.size() != references.size()) {
    throw LengthMismatch("text_metrics: " + std::to_string(candidates.size()) +
                         " candidates vs " + std::to_string(references.size()) +
                         " references");
  }
  if (candidates.empty()) throw EmptyInput("text_metrics: nothing to score");
  TextMetrics m;
  m.n = static_cast<int64_t>(candidates.size());
  for (size_t i = 0; i < candidates.size(); ++i) {
    m.bleu2 += bleu_n(candidates[i], references[i], 2);
    m.bleu3 += bleu_n(candidates[i], references[i], 3);
    m.rouge_l += rouge_l(candidates[i], references[i]);
  }
  m.bleu2 /= static_cast<double>(m.n);
  m.bleu3 /= static_cast<double>(m.n);
  m.rouge_l /= static_cast<double>(m.n);
  return m;
}

TextMetrics evaluate_text(const Generator& generate,
                          const std::vector<std::vector<int>>& sources,
                          const std::vector<std::vector<int>>& references) {
  if (sources.size() != references.size()) {
    throw LengthMismatch("evaluate_text: " + std::to_string(sources.size()) +
                         " sources vs " + std::to_string(references.size()) + " references");
  }
  std::vector<std::vector<int>> outputs;
  outputs.reserve(sources.size());
  for (const auto& s : sources) outputs.push_back(generate(s));
  return text_metrics(outputs, references);
}

}  // namespace pathtext::eval
