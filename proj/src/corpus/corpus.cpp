#include "pathtext/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <unordered_set>

#include "json.hpp"
#include "pathtext/errors.hpp"

namespace pathtext::corpus {

namespace {

using nlohmann::json;

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials = {"[PAD]", "[BOS]", "[EOS]",
                                                    "[UNK]", "[SEP]", "[MASK]"};
  return specials;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ' ';
    out += parts[i];
  }
  return out;
}

json parse_line(const std::string& line, const std::string& path, size_t lineno) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw DataError(path + ":" + std::to_string(lineno) + ": not a JSON object");
  }
  return j;
}

std::string get_string(const json& j, const char* key, const std::string& path,
                       size_t lineno) {
  if (!j.contains(key) || !j[key].is_string()) {
    throw DataError(path + ":" + std::to_string(lineno) + ": missing string field \"" +
                    key + "\"");
  }
  return j[key].get<std::string>();
}

double get_number(const json& j, const char* key, const std::string& path, size_t lineno) {
  if (!j.contains(key) || !j[key].is_number()) {
    throw DataError(path + ":" + std::to_string(lineno) + ": missing numeric field \"" +
                    key + "\"");
  }
  return j[key].get<double>();
}

// Applies fn to every non-empty line.
template <typename Fn>
void for_each_line(const std::string& path, Fn&& fn) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open: " + path);
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    fn(line, lineno);
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write: " + path);
  return os;
}

}  // namespace

int Vocabulary::id(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) {
    throw DataError("token id " + std::to_string(id) + " out of range [0, " +
                    std::to_string(size()) + ")");
  }
  return id_to_token[id];
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts, int cap) {
  if (cap < kNumSpecials + 1) throw ConfigError("vocabulary cap too small");
  std::unordered_map<std::string, int64_t> count;
  std::unordered_map<std::string, int64_t> first_seen;
  int64_t pos = 0;
  for (const auto& text : texts) {
    for (auto& tok : split_tokens(text)) {
      auto [it, fresh] = count.emplace(std::move(tok), 0);
      ++it->second;
      if (fresh) first_seen.emplace(it->first, pos);
      ++pos;
    }
  }
  if (count.empty()) throw EmptyCorpus("no tokens in any input text");

  std::vector<const std::string*> order;
  order.reserve(count.size());
  for (const auto& [tok, c] : count) order.push_back(&tok);
  std::sort(order.begin(), order.end(), [&](const std::string* a, const std::string* b) {
    const int64_t ca = count.at(*a), cb = count.at(*b);
    if (ca != cb) return ca > cb;
    return first_seen.at(*a) < first_seen.at(*b);
  });

  Vocabulary v;
  v.id_to_token = special_tokens();
  const size_t keep = std::min(order.size(), static_cast<size_t>(cap - kNumSpecials));
  for (size_t i = 0; i < keep; ++i) v.id_to_token.push_back(*order[i]);
  for (int i = 0; i < v.size(); ++i) v.token_to_id.emplace(v.id_to_token[i], i);
  return v;
}

void Vocabulary::save(const std::string& path) const {
  auto os = open_out(path);
  os << json{{"tokens", id_to_token}}.dump() << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open: " + path);
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded() || !j.contains("tokens") || !j["tokens"].is_array()) {
    throw DataError("not a vocabulary file: " + path);
  }
  Vocabulary v;
  v.id_to_token = j["tokens"].get<std::vector<std::string>>();
  if (v.size() < kNumSpecials ||
      !std::equal(special_tokens().begin(), special_tokens().end(), v.id_to_token.begin())) {
    throw DataError("vocabulary misses the reserved specials: " + path);
  }
  for (int i = 0; i < v.size(); ++i) {
    if (!v.token_to_id.emplace(v.id_to_token[i], i).second) {
      throw DataError("duplicate token in vocabulary: " + v.id_to_token[i]);
    }
  }
  return v;
}

std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab) {
  std::vector<int> ids;
  for (const auto& tok : split_tokens(text)) ids.push_back(vocab.id(tok));
  return ids;
}

std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    if (id == Vocabulary::kPad || id == Vocabulary::kBos || id == Vocabulary::kEos) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

namespace {

void check_component(const std::vector<int>& c, const char* name) {
  if (c.empty()) throw InvalidTriple(std::string("empty ") + name);
  for (int id : c) {
    if (id == Vocabulary::kSep || id == Vocabulary::kMask) {
      throw InvalidTriple(std::string(name) + " contains a reserved separator/mask token");
    }
  }
}

}  // namespace

std::vector<int> serialize_path(const PathTriple& p) {
  check_component(p.head, "head");
  check_component(p.rel, "relation");
  check_component(p.tail, "tail");
  std::vector<int> out;
  out.reserve(p.head.size() + p.rel.size() + p.tail.size() + 4);
  out.push_back(Vocabulary::kSep);
  out.insert(out.end(), p.head.begin(), p.head.end());
  out.push_back(Vocabulary::kSep);
  out.insert(out.end(), p.rel.begin(), p.rel.end());
  out.push_back(Vocabulary::kSep);
  out.insert(out.end(), p.tail.begin(), p.tail.end());
  out.push_back(Vocabulary::kSep);
  return out;
}

const char* parse_error_name(ParseError e) {
  switch (e) {
    case ParseError::None: return "none";
    case ParseError::WrongSepCount: return "wrong_sep_count";
    case ParseError::LeadingTrailingJunk: return "leading_trailing_junk";
    case ParseError::EmptySpan: return "empty_span";
  }
  return "unknown";
}

PathParse parse_path(const std::vector<int>& tokens) {
  PathParse out;
  std::vector<size_t> seps;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == Vocabulary::kSep) seps.push_back(i);
  }
  if (seps.size() != 4) {
    out.error = ParseError::WrongSepCount;
    return out;
  }
  if (seps.front() != 0 || seps.back() != tokens.size() - 1) {
    out.error = ParseError::LeadingTrailingJunk;
    return out;
  }
  auto span = [&](int a, int b) {
    return std::vector<int>(tokens.begin() + seps[a] + 1, tokens.begin() + seps[b]);
  };
  out.triple.head = span(0, 1);
  out.triple.rel = span(1, 2);
  out.triple.tail = span(2, 3);
  if (out.triple.head.empty() || out.triple.rel.empty() || out.triple.tail.empty()) {
    out.error = ParseError::EmptySpan;
  }
  return out;
}

MaskedItem mask_sentence(const std::vector<int>& tokens, Rng& rng, double p_tok) {
  if (tokens.empty()) throw EmptyInput("mask_sentence: empty sentence");
  MaskedItem item;
  item.original = tokens;
  item.masked = tokens;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (rng.bernoulli(p_tok)) {
      item.masked[i] = Vocabulary::kMask;
      item.positions.push_back(static_cast<int>(i));
    }
  }
  return item;
}

MaskedItem mask_path(const PathTriple& p, Rng& rng, double p_mask) {
  MaskedItem item;
  item.original = serialize_path(p);
  if (!rng.bernoulli(p_mask)) {
    item.masked = item.original;
    return item;
  }
  const bool mask_head = rng.bernoulli(0.5);
  PathTriple q = p;
  (mask_head ? q.head : q.tail) = {Vocabulary::kMask};
  // Build by hand: serialize_path rejects [MASK] inside components.
  item.masked.push_back(Vocabulary::kSep);
  item.masked.insert(item.masked.end(), q.head.begin(), q.head.end());
  item.masked.push_back(Vocabulary::kSep);
  item.masked.insert(item.masked.end(), q.rel.begin(), q.rel.end());
  item.masked.push_back(Vocabulary::kSep);
  item.masked.insert(item.masked.end(), q.tail.begin(), q.tail.end());
  item.masked.push_back(Vocabulary::kSep);
  item.masked_component = mask_head ? 0 : 1;
  return item;
}

std::string sentence_key(const std::string& text) { return join(split_tokens(text)); }

std::string path_key(const std::string& head, const std::string& rel,
                     const std::string& tail) {
  return "[SEP] " + join(split_tokens(head)) + " [SEP] " + join(split_tokens(rel)) +
         " [SEP] " + join(split_tokens(tail)) + " [SEP]";
}

namespace {

void filter_split(SplitData& part, const std::unordered_set<std::string>& sent_keys,
                  const std::unordered_set<std::string>& path_keys, RemovalCounts& counts) {
  std::vector<RawSentence> sentences;
  for (auto& s : part.sentences) {
    if (sent_keys.count(sentence_key(s.text))) {
      ++counts.sentences;
      counts.removed_keys.push_back(sentence_key(s.text));
    } else {
      sentences.push_back(std::move(s));
    }
  }
  part.sentences = std::move(sentences);

  std::vector<RawPath> paths;
  for (auto& p : part.paths) {
    const std::string key = path_key(p.head, p.rel, p.tail);
    if (path_keys.count(key)) {
      ++counts.paths;
      counts.removed_keys.push_back(key);
    } else {
      paths.push_back(std::move(p));
    }
  }
  part.paths = std::move(paths);

  std::vector<RawPair> pairs;
  for (auto& q : part.pairs) {
    const std::string skey = sentence_key(q.text);
    const std::string pkey = path_key(q.head, q.rel, q.tail);
    if (sent_keys.count(skey) || path_keys.count(pkey)) {
      ++counts.pairs;
      counts.removed_keys.push_back(sent_keys.count(skey) ? skey : pkey);
    } else {
      pairs.push_back(std::move(q));
    }
  }
  part.pairs = std::move(pairs);
}

}  // namespace

DatasetSplit enforce_split(SplitData train, SplitData dev, SplitData test,
                           EnforceReport* report) {
  std::unordered_set<std::string> sent_keys, path_keys;
  for (const auto& s : train.sentences) sent_keys.insert(sentence_key(s.text));
  for (const auto& p : train.paths) path_keys.insert(path_key(p.head, p.rel, p.tail));
  for (const auto& q : train.pairs) {
    sent_keys.insert(sentence_key(q.text));
    path_keys.insert(path_key(q.head, q.rel, q.tail));
  }
  EnforceReport local;
  filter_split(dev, sent_keys, path_keys, local.dev);
  filter_split(test, sent_keys, path_keys, local.test);
  if (report != nullptr) *report = std::move(local);
  return DatasetSplit{std::move(train), std::move(dev), std::move(test)};
}

std::vector<RawSentence> load_sentences_jsonl(const std::string& path) {
  std::vector<RawSentence> out;
  for_each_line(path, [&](const std::string& line, size_t lineno) {
    json j = parse_line(line, path, lineno);
    out.push_back({get_string(j, "text", path, lineno)});
  });
  return out;
}

std::vector<RawPath> load_paths_jsonl(const std::string& path, double min_weight,
                                      int* dropped) {
  std::vector<RawPath> out;
  int skipped = 0;
  for_each_line(path, [&](const std::string& line, size_t lineno) {
    json j = parse_line(line, path, lineno);
    RawPath p{get_string(j, "head", path, lineno), get_string(j, "rel", path, lineno),
              get_string(j, "tail", path, lineno), get_number(j, "weight", path, lineno)};
    if (p.weight > min_weight) {
      out.push_back(std::move(p));
    } else {
      ++skipped;
    }
  });
  if (dropped != nullptr) *dropped = skipped;
  return out;
}

std::vector<RawPair> load_pairs_jsonl(const std::string& path) {
  std::vector<RawPair> out;
  for_each_line(path, [&](const std::string& line, size_t lineno) {
    json j = parse_line(line, path, lineno);
    out.push_back({get_string(j, "text", path, lineno), get_string(j, "head", path, lineno),
                   get_string(j, "rel", path, lineno), get_string(j, "tail", path, lineno),
                   get_number(j, "score", path, lineno)});
  });
  return out;
}

void write_sentences_jsonl(const std::string& path, const std::vector<RawSentence>& items) {
  auto os = open_out(path);
  for (const auto& s : items) os << json{{"text", s.text}}.dump() << '\n';
}

void write_paths_jsonl(const std::string& path, const std::vector<RawPath>& items) {
  auto os = open_out(path);
  for (const auto& p : items) {
    os << json{{"head", p.head}, {"rel", p.rel}, {"tail", p.tail}, {"weight", p.weight}}.dump()
       << '\n';
  }
}

void write_pairs_jsonl(const std::string& path, const std::vector<RawPair>& items) {
  auto os = open_out(path);
  for (const auto& q : items) {
    os << json{{"text", q.text},
               {"head", q.head},
               {"rel", q.rel},
               {"tail", q.tail},
               {"score", q.score}}
              .dump()
       << '\n';
  }
}

void write_enforce_report(const std::string& path, const EnforceReport& report) {
  auto os = open_out(path);
  auto part = [](const RemovalCounts& c) {
    return json{{"sentences_removed", c.sentences},
                {"paths_removed", c.paths},
                {"pairs_removed", c.pairs},
                {"removed", c.removed_keys}};
  };
  os << json{{"dev", part(report.dev)}, {"test", part(report.test)}}.dump(2) << '\n';
}

namespace {

void clip(std::vector<int>& v, size_t cap, int& truncated) {
  if (v.size() > cap) {
    v.resize(cap);
    ++truncated;
  }
}

// Shrinks components, tail first, until the serialized form fits max_len.
bool fit_path(PathTriple& p, int max_len, int& truncated) {
  if (p.head.empty() || p.rel.empty() || p.tail.empty()) return false;
  int64_t over = static_cast<int64_t>(p.head.size() + p.rel.size() + p.tail.size()) + 4 -
                 max_len;
  if (over <= 0) return true;
  ++truncated;
  for (auto* c : {&p.tail, &p.rel, &p.head}) {
    while (over > 0 && c->size() > 1) {
      c->pop_back();
      --over;
    }
  }
  return true;
}

}  // namespace

TokenizedData tokenize_split(const SplitData& raw, const Vocabulary& vocab, int max_len) {
  if (max_len < 8) throw ConfigError("max_len must allow a minimal serialized path");
  TokenizedData out;
  for (const auto& s : raw.sentences) {
    auto ids = tokenize(s.text, vocab);
    if (ids.empty()) continue;
    clip(ids, static_cast<size_t>(max_len), out.truncated);
    out.sentences.push_back(std::move(ids));
  }
  for (const auto& p : raw.paths) {
    PathTriple t{tokenize(p.head, vocab), tokenize(p.rel, vocab), tokenize(p.tail, vocab)};
    if (fit_path(t, max_len, out.truncated)) out.paths.push_back(std::move(t));
  }
  for (const auto& q : raw.pairs) {
    TokenizedData::Pair pair;
    pair.sentence = tokenize(q.text, vocab);
    pair.path = PathTriple{tokenize(q.head, vocab), tokenize(q.rel, vocab),
                           tokenize(q.tail, vocab)};
    pair.score = q.score;
    if (pair.sentence.empty()) continue;
    clip(pair.sentence, static_cast<size_t>(max_len), out.truncated);
    if (fit_path(pair.path, max_len, out.truncated)) out.pairs.push_back(std::move(pair));
  }
  return out;
}

}  // namespace pathtext::corpus
