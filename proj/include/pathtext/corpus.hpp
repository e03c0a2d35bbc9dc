#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "pathtext/rng.hpp"

namespace pathtext::corpus {

// Token ids 0..5 are reserved in every vocabulary.
struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kSep = 4;
  static constexpr int kMask = 5;
  static constexpr int kNumSpecials = 6;

  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int> token_to_id;

  int size() const { return static_cast<int>(id_to_token.size()); }
  int id(const std::string& token) const;         // [UNK] for unknown tokens
  const std::string& token(int id) const;         // throws DataError on bad id

  // Most frequent tokens from the given texts, ties broken by first
  // occurrence; `cap` bounds the total size including the specials.
  static Vocabulary build(const std::vector<std::string>& texts, int cap = 20000);

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);
};

// Lowercases and splits on whitespace, with every punctuation character as
// its own token. Never produces a special token: "[SEP]" -> "[", "sep", "]".
std::vector<std::string> split_tokens(const std::string& text);

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab);

// Space-joined surface form; skips [PAD]/[BOS]/[EOS].
std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab);

// Tokenized knowledge-base edge. Components never contain special ids.
struct PathTriple {
  std::vector<int> head, rel, tail;
  bool operator==(const PathTriple&) const = default;
};

// [SEP] head [SEP] rel [SEP] tail [SEP]; throws InvalidTriple on an empty
// component or a special id inside one.
std::vector<int> serialize_path(const PathTriple& p);

enum class ParseError { None, WrongSepCount, LeadingTrailingJunk, EmptySpan };
const char* parse_error_name(ParseError e);

// Never throws: malformed model output is an expected outcome and is what
// triggers worst-case ranking downstream.
struct PathParse {
  PathTriple triple;
  ParseError error = ParseError::None;
  bool ok() const { return error == ParseError::None; }
};
PathParse parse_path(const std::vector<int>& tokens);

struct MaskedItem {
  std::vector<int> original;        // serialized original tokens
  std::vector<int> masked;          // after [MASK] substitution
  std::vector<int> positions;       // masked positions (sentence masking)
  int masked_component = -1;        // 0 = head, 1 = tail; -1 = nothing masked
};

// Each token independently becomes [MASK] with probability p_tok. Consumes
// exactly tokens.size() draws.
MaskedItem mask_sentence(const std::vector<int>& tokens, Rng& rng, double p_tok = 0.10);

// With probability p_mask replaces exactly one of head/tail (fair coin) by a
// single [MASK] inside the serialized form. Consumes one draw, plus one more
// when masking happens.
MaskedItem mask_path(const PathTriple& p, Rng& rng, double p_mask = 0.50);

// Raw (untokenized) records as they appear in the JSONL inputs.
struct RawSentence {
  std::string text;
};
struct RawPath {
  std::string head, rel, tail;
  double weight = 0.0;
};
struct RawPair {
  std::string text, head, rel, tail;
  double score = 0.0;
};

struct SplitData {
  std::vector<RawSentence> sentences;
  std::vector<RawPath> paths;
  std::vector<RawPair> pairs;
};

struct DatasetSplit {
  SplitData train, dev, test;
};

struct RemovalCounts {
  int sentences = 0, paths = 0, pairs = 0;
  std::vector<std::string> removed_keys;
};
struct EnforceReport {
  RemovalCounts dev, test;
};

// Canonical duplicate keys: token-joined lowercased text for sentences and
// the serialized surface form for paths.
std::string sentence_key(const std::string& text);
std::string path_key(const std::string& head, const std::string& rel, const std::string& tail);

// Drops dev/test items whose key occurs in train (pairs match on either
// side). The result satisfies the disjointness invariant exactly.
DatasetSplit enforce_split(SplitData train, SplitData dev, SplitData test,
                           EnforceReport* report = nullptr);

// JSONL ingestion; throws DataError on unreadable files or bad records.
std::vector<RawSentence> load_sentences_jsonl(const std::string& path);
// Keeps only paths with weight strictly greater than min_weight.
std::vector<RawPath> load_paths_jsonl(const std::string& path, double min_weight = 1.6,
                                      int* dropped = nullptr);
std::vector<RawPair> load_pairs_jsonl(const std::string& path);

void write_sentences_jsonl(const std::string& path, const std::vector<RawSentence>& items);
void write_paths_jsonl(const std::string& path, const std::vector<RawPath>& items);
void write_pairs_jsonl(const std::string& path, const std::vector<RawPair>& items);
void write_enforce_report(const std::string& path, const EnforceReport& report);

// Tokenized view of one split, clipped to the length cap.
struct TokenizedData {
  std::vector<std::vector<int>> sentences;
  std::vector<PathTriple> paths;
  struct Pair {
    std::vector<int> sentence;
    PathTriple path;
    double score = 0.0;
  };
  std::vector<Pair> pairs;
  int truncated = 0;
};
TokenizedData tokenize_split(const SplitData& raw, const Vocabulary& vocab, int max_len = 64);

}  // namespace pathtext::corpus
