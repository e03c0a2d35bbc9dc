// Command line front end. Every subcommand is a thin orchestration of one
// library operation set, and every run directory receives the resolved
// configuration plus a version stamp so results reproduce from artifacts
// alone.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pathtext/corpus.hpp"
#include "pathtext/errors.hpp"
#include "pathtext/evaluation.hpp"
#include "pathtext/graph.hpp"
#include "pathtext/model.hpp"
#include "pathtext/rng.hpp"
#include "pathtext/training.hpp"
#include "pathtext/weak_supervision.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pathtext;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr double kKeepAllWeights = -std::numeric_limits<double>::infinity();
// Keeps weight initialization off the trainer's shuffle/mask/coin stream.
constexpr uint64_t kInitSalt = 0xD1B54A32D192ED03ULL;

void err_json(const std::string& kind, const std::string& message) {
  json j;
  j["error"] = kind;
  j["message"] = message;
  std::cerr << j.dump() << "\n";
}

struct Classified {
  const char* name;
  int code;
};

template <class T>
bool is_a(const Error& e) {
  return dynamic_cast<const T*>(&e) != nullptr;
}

Classified classify(const Error& e) {
  if (is_a<ConfigError>(e)) return {"ConfigError", 2};
  if (is_a<DataError>(e)) return {"DataError", 3};
  if (is_a<InvalidTriple>(e)) return {"InvalidTriple", 3};
  if (is_a<EmptyCorpus>(e)) return {"EmptyCorpus", 3};
  if (is_a<EmptyInput>(e)) return {"EmptyInput", 3};
  if (is_a<EmptyPool>(e)) return {"EmptyPool", 3};
  if (is_a<NoPairs>(e)) return {"NoPairs", 3};
  if (is_a<LengthMismatch>(e)) return {"LengthMismatch", 3};
  if (is_a<NonFiniteLoss>(e)) return {"NonFiniteLoss", 4};
  if (is_a<TooLarge>(e)) return {"TooLarge", 4};
  return {"Error", 4};
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write " + path);
  f << content;
}

// Resolved flags in the same key=value form --config accepts. The section
// header routes the keys back to the subcommand on reload.
void write_run_stamp(const CLI::App& sub, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ostringstream s;
  s << "# pathtext " << kVersion << "\n[" << sub.get_name() << "]\n"
    << sub.config_to_str(true, false);
  write_text_file(out_dir + "/config.ini", s.str());
}

std::string num(double v) {
  std::ostringstream o;
  o << std::setprecision(6) << v;
  return o.str();
}

std::string md_table(const std::vector<std::string>& head,
                     const std::vector<std::vector<std::string>>& rows) {
  std::string s = "|";
  for (const auto& h : head) s += " " + h + " |";
  s += "\n|";
  for (size_t i = 0; i < head.size(); ++i) s += " --- |";
  s += "\n";
  for (const auto& r : rows) {
    s += "|";
    for (const auto& c : r) s += " " + c + " |";
    s += "\n";
  }
  return s;
}

std::vector<int> eos_row(std::vector<int> ids, int max_len) {
  ids.push_back(corpus::Vocabulary::kEos);
  if (static_cast<int>(ids.size()) > max_len) {
    ids.resize(max_len);
    ids.back() = corpus::Vocabulary::kEos;
  }
  return ids;
}

struct Dataset {
  corpus::DatasetSplit raw;
  corpus::Vocabulary vocab;
};

Dataset load_dataset(const std::string& dir) {
  if (!fs::exists(fs::path(dir) / "vocab.txt")) {
    throw DataError(dir + " is not a dataset directory (missing vocab.txt)");
  }
  Dataset d;
  d.vocab = corpus::Vocabulary::load(dir + "/vocab.txt");
  auto split = [&](const std::string& name) {
    corpus::SplitData s;
    s.sentences = corpus::load_sentences_jsonl(dir + "/" + name + ".sentences.jsonl");
    // the weight filter already ran at build time
    s.paths = corpus::load_paths_jsonl(dir + "/" + name + ".paths.jsonl", kKeepAllWeights);
    s.pairs = corpus::load_pairs_jsonl(dir + "/" + name + ".pairs.jsonl");
    return s;
  };
  d.raw.train = split("train");
  d.raw.dev = split("dev");
  d.raw.test = split("test");
  return d;
}

// --- shared option blocks ---

struct ModelOpts {
  std::string arch = "gru-gru";
  int hidden = 100, d_model = 96, ff = 384, layers = 3, heads = 3, max_len = 64;
  bool gru_attention = false;
};

void add_model_opts(CLI::App* sub, ModelOpts& o) {
  sub->add_option("--arch", o.arch, "Model family")
      ->check(CLI::IsMember({"gru-gru", "trans-trans"}))
      ->capture_default_str();
  sub->add_option("--hidden", o.hidden, "GRU hidden width")->capture_default_str();
  sub->add_option("--d-model", o.d_model, "Transformer width")->capture_default_str();
  sub->add_option("--ff", o.ff, "Transformer feed-forward width")->capture_default_str();
  sub->add_option("--layers", o.layers, "Transformer layers")->capture_default_str();
  sub->add_option("--heads", o.heads, "Attention heads")->capture_default_str();
  sub->add_option("--max-len", o.max_len, "Sequence length cap")->capture_default_str();
  sub->add_flag("--gru-attention", o.gru_attention, "Attention-conditioned GRU decoding");
}

model::ModelConfig to_model_config(const ModelOpts& o, int vocab) {
  model::ModelConfig c;
  c.arch = model::arch_from_name(o.arch);
  c.vocab = vocab;
  c.hidden = o.hidden;
  c.d_model = o.d_model;
  c.ff = o.ff;
  c.layers = o.layers;
  c.heads = o.heads;
  c.max_len = o.max_len;
  c.gru_attention = o.gru_attention;
  return c;
}

struct TrainOpts {
  train::TrainConfig cfg;
  std::string selection = "mrr";
  bool no_rec = false, no_bt = false, no_sup = false;
};

void add_train_opts(CLI::App* sub, TrainOpts& t, bool with_rho, bool with_switches) {
  sub->add_option("--batch-size", t.cfg.batch_size)->capture_default_str();
  if (with_rho) {
    sub->add_option("--rho", t.cfg.rho, "Supervised fraction of the pairs")
        ->capture_default_str();
  }
  sub->add_option("--tf-ratio", t.cfg.tf_ratio, "Teacher forcing coin bias")
      ->capture_default_str();
  sub->add_option("--epochs", t.cfg.epochs)->capture_default_str();
  sub->add_option("--seed", t.cfg.seed)->capture_default_str();
  sub->add_option("--lr", t.cfg.lr, "Adam learning rate")->capture_default_str();
  sub->add_option("--clip-norm", t.cfg.clip_norm)->capture_default_str();
  sub->add_option("--p-tok", t.cfg.p_tok, "Sentence token masking rate")
      ->capture_default_str();
  sub->add_option("--p-mask", t.cfg.p_mask, "Path component masking rate")
      ->capture_default_str();
  sub->add_option("--selection", t.selection, "Best-checkpoint metric")
      ->check(CLI::IsMember({"mrr", "bleu2"}))
      ->capture_default_str();
  sub->add_option("--w-rec", t.cfg.w_rec)->capture_default_str();
  sub->add_option("--w-bt", t.cfg.w_bt)->capture_default_str();
  sub->add_option("--w-sup", t.cfg.w_sup)->capture_default_str();
  if (with_switches) {
    sub->add_flag("--no-rec", t.no_rec, "Disable the reconstruction loss");
    sub->add_flag("--no-bt", t.no_bt, "Disable the cycle loss");
    sub->add_flag("--no-sup", t.no_sup, "Disable the supervision loss");
  }
}

train::TrainConfig resolve_train(const TrainOpts& t) {
  train::TrainConfig cfg = t.cfg;
  cfg.use_rec = !t.no_rec;
  cfg.use_bt = !t.no_bt;
  cfg.use_sup = !t.no_sup;
  cfg.selection = train::selection_from_name(t.selection);
  return cfg;
}

std::vector<train::PairRow> training_rows(const Dataset& d, int max_len) {
  const corpus::TokenizedData tok = corpus::tokenize_split(d.raw.train, d.vocab, max_len);
  std::vector<train::PairRow> rows = train::make_rows(tok);
  if (rows.empty()) {
    throw NoPairs("the train split has no usable pairs; run `pathtext match` first");
  }
  return rows;
}

std::vector<std::vector<std::string>> epoch_rows(const std::vector<train::EpochReport>& reports) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : reports) {
    rows.push_back({std::to_string(r.epoch), num(r.loss_total), num(r.loss_rec),
                    num(r.loss_bt), num(r.loss_sup), num(r.kbc.mrr), num(r.text.bleu2),
                    r.best_mrr ? "*" : "", r.best_bleu2 ? "*" : ""});
  }
  return rows;
}

const std::vector<std::string> kEpochHead = {"epoch", "loss",  "rec",       "bt",
                                             "sup",   "mrr",   "bleu2",     "best mrr",
                                             "best bleu2"};

void write_train_artifacts(const train::TrainResult& res, const std::string& out_dir) {
  write_text_file(out_dir + "/train.md", md_table(kEpochHead, epoch_rows(res.reports)));
  json j;
  j["epochs"] = res.reports.size();
  j["best_mrr_path"] = res.best_mrr_path;
  j["best_bleu2_path"] = res.best_bleu2_path;
  j["state_path"] = res.state_path;
  j["metrics_path"] = res.metrics_path;
  if (!res.reports.empty()) {
    const auto& last = res.reports.back();
    j["final"] = json::parse(train::epoch_report_json(last));
  }
  write_text_file(out_dir + "/summary.json", j.dump(2) + "\n");
}

double best_mrr_of(const train::TrainResult& res) {
  double best = 0.0;
  for (const auto& r : res.reports) best = std::max(best, r.kbc.mrr);
  return best;
}

double best_bleu2_of(const train::TrainResult& res) {
  double best = 0.0;
  for (const auto& r : res.reports) best = std::max(best, r.text.bleu2);
  return best;
}

// --- subcommand options ---

struct BuildOpts {
  std::string sentences, paths, pairs, out;
  double min_weight = 1.6;
  double dev_frac = 0.1, test_frac = 0.1;
  int vocab_cap = 20000;
  uint64_t seed = 0;
};

struct MatchOpts {
  std::string sentences, paths, out;
  double threshold = 0.6;
  double min_weight = kKeepAllWeights;
  int ngram = 3;
};

struct TrainCmdOpts {
  std::string data, out, resume;
  ModelOpts model;
  TrainOpts train;
};

struct EvalOpts {
  std::string ckpt, data, out;
  std::string split = "dev";
  std::string direction = "ba";  // eval-text only
};

struct TransferOpts {
  std::string ckpt, vocab, input, out, dot;
  std::string direction = "ab";
};

struct GedOpts {
  std::string reference, generated, out, dot_reference, dot_generated;
  int chunk_size = 10;
  double node_threshold = 0.6;
  int workers = 1;
};

struct SweepOpts {
  std::string data, out;
  std::vector<double> rhos = {0.0, 0.2, 0.8, 1.0};
  ModelOpts model;
  TrainOpts train;
};

struct AblateOpts {
  std::string data, out;
  ModelOpts model;
  TrainOpts train;
};

// --- subcommand bodies ---

template <class T>
void split_three(const std::vector<T>& all, double dev_frac, double test_frac, Rng& rng,
                 std::vector<T>& train_out, std::vector<T>& dev_out,
                 std::vector<T>& test_out) {
  std::vector<int> idx(all.size());
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  const auto n = all.size();
  const size_t n_dev = static_cast<size_t>(std::llround(dev_frac * static_cast<double>(n)));
  const size_t n_test = static_cast<size_t>(std::llround(test_frac * static_cast<double>(n)));
  for (size_t i = 0; i < n; ++i) {
    auto& dst = i < n_dev ? dev_out : i < n_dev + n_test ? test_out : train_out;
    dst.push_back(all[idx[i]]);
  }
}

void cmd_build_dataset(const BuildOpts& o) {
  if (o.dev_frac < 0 || o.test_frac < 0 || o.dev_frac + o.test_frac >= 1.0) {
    throw ConfigError("dev and test fractions must be nonnegative and sum below 1");
  }
  const auto sentences = corpus::load_sentences_jsonl(o.sentences);
  int dropped = 0;
  const auto paths = corpus::load_paths_jsonl(o.paths, o.min_weight, &dropped);
  const auto pairs =
      o.pairs.empty() ? std::vector<corpus::RawPair>{} : corpus::load_pairs_jsonl(o.pairs);

  // one deterministic shuffle per list, consumed in a fixed order
  Rng rng(o.seed);
  corpus::SplitData tr, de, te;
  split_three(sentences, o.dev_frac, o.test_frac, rng, tr.sentences, de.sentences,
              te.sentences);
  split_three(paths, o.dev_frac, o.test_frac, rng, tr.paths, de.paths, te.paths);
  split_three(pairs, o.dev_frac, o.test_frac, rng, tr.pairs, de.pairs, te.pairs);

  corpus::EnforceReport report;
  const corpus::DatasetSplit ds =
      corpus::enforce_split(std::move(tr), std::move(de), std::move(te), &report);

  std::vector<std::string> texts;
  for (const auto& s : ds.train.sentences) texts.push_back(s.text);
  for (const auto& p : ds.train.paths) texts.push_back(weak::flatten_path(p.head, p.rel, p.tail));
  for (const auto& q : ds.train.pairs) {
    texts.push_back(q.text);
    texts.push_back(weak::flatten_path(q.head, q.rel, q.tail));
  }
  const corpus::Vocabulary vocab = corpus::Vocabulary::build(texts, o.vocab_cap);

  fs::create_directories(o.out);
  vocab.save(o.out + "/vocab.txt");
  const struct {
    const char* name;
    const corpus::SplitData& data;
  } splits[] = {{"train", ds.train}, {"dev", ds.dev}, {"test", ds.test}};
  json counts;
  for (const auto& s : splits) {
    corpus::write_sentences_jsonl(o.out + "/" + s.name + ".sentences.jsonl", s.data.sentences);
    corpus::write_paths_jsonl(o.out + "/" + s.name + ".paths.jsonl", s.data.paths);
    corpus::write_pairs_jsonl(o.out + "/" + s.name + ".pairs.jsonl", s.data.pairs);
    counts[s.name] = {{"sentences", s.data.sentences.size()},
                      {"paths", s.data.paths.size()},
                      {"pairs", s.data.pairs.size()}};
  }
  corpus::write_enforce_report(o.out + "/enforce_report.json", report);

  json manifest;
  manifest["version"] = kVersion;
  manifest["counts"] = counts;
  manifest["dropped_paths_below_weight"] = dropped;
  manifest["min_weight"] = o.min_weight;
  manifest["vocab_size"] = vocab.size();
  manifest["removed_dev"] = {{"sentences", report.dev.sentences},
                             {"paths", report.dev.paths},
                             {"pairs", report.dev.pairs}};
  manifest["removed_test"] = {{"sentences", report.test.sentences},
                              {"paths", report.test.paths},
                              {"pairs", report.test.pairs}};
  write_text_file(o.out + "/manifest.json", manifest.dump(2) + "\n");

  std::cout << "train " << ds.train.sentences.size() << " sentences, "
            << ds.train.paths.size() << " paths, " << ds.train.pairs.size() << " pairs\n"
            << "dev " << ds.dev.sentences.size() << "/" << ds.dev.paths.size() << "/"
            << ds.dev.pairs.size() << ", test " << ds.test.sentences.size() << "/"
            << ds.test.paths.size() << "/" << ds.test.pairs.size() << "\n"
            << "dropped " << dropped << " paths at weight <= " << o.min_weight << ", vocab "
            << vocab.size() << "\n";
}

void cmd_match(const MatchOpts& o) {
  const auto sentences = corpus::load_sentences_jsonl(o.sentences);
  int dropped = 0;
  const auto paths = corpus::load_paths_jsonl(o.paths, o.min_weight, &dropped);
  const weak::MatchResult res = weak::match(sentences, paths, o.threshold, o.ngram);

  fs::create_directories(o.out);
  corpus::write_pairs_jsonl(o.out + "/pairs.jsonl", res.pairs);
  json j;
  j["n_sentences"] = sentences.size();
  j["n_paths"] = paths.size();
  j["n_pairs"] = res.pairs.size();
  j["n_unmatched_sentences"] = res.unmatched_sentences.size();
  j["n_unmatched_paths"] = res.unmatched_paths.size();
  j["threshold"] = o.threshold;
  j["ngram"] = o.ngram;
  write_text_file(o.out + "/match_report.json", j.dump(2) + "\n");
  std::cout << "matched " << res.pairs.size() << " of " << sentences.size()
            << " sentences against " << paths.size() << " paths\n";
}

void cmd_train(const TrainCmdOpts& o) {
  const Dataset d = load_dataset(o.data);
  const auto rows = training_rows(d, o.model.max_len);
  const train::DevSet dev = train::build_dev_set(d.raw, d.vocab, o.model.max_len);

  train::TrainResult res;
  if (!o.resume.empty()) {
    if (!fs::exists(o.resume)) throw ConfigError("--resume: no such file: " + o.resume);
    res = train::resume(o.resume, rows, dev, o.train.cfg.epochs, o.out);
  } else {
    const train::TrainConfig cfg = resolve_train(o.train);
    Rng init(cfg.seed ^ kInitSalt);
    model::DualModel m(to_model_config(o.model, d.vocab.size()), init);
    res = train::train(std::move(m), rows, dev, cfg, o.out);
  }
  write_train_artifacts(res, o.out);
  const auto& last = res.reports.back();
  std::cout << "epoch " << last.epoch << ": loss " << num(last.loss_total) << ", dev mrr "
            << num(last.kbc.mrr) << ", bleu2 " << num(last.text.bleu2) << "\n"
            << "state " << res.state_path << "\n";
}

// Reuses the dev evaluation path with the requested split in the dev slot;
// the candidate pool spans all three splits either way.
train::DevSet dev_view(const Dataset& d, const std::string& split, int max_len) {
  corpus::DatasetSplit view = d.raw;
  if (split == "test") std::swap(view.dev, view.test);
  return train::build_dev_set(view, d.vocab, max_len);
}

void cmd_eval_kbc(const EvalOpts& o) {
  const model::DualModel m = model::DualModel::load(o.ckpt);
  const Dataset d = load_dataset(o.data);
  train::DevSet dev = dev_view(d, o.split, m.config().max_len);
  if (dev.queries.empty()) throw EmptyInput("eval-kbc: the " + o.split + " split has no paths");
  dev.text_sources.clear();
  dev.text_references.clear();
  const eval::KbcMetrics kbc = train::evaluate_dev(m, dev).kbc;

  fs::create_directories(o.out);
  json j;
  j["mrr"] = kbc.mrr;
  j["hits1"] = kbc.hits1;
  j["hits3"] = kbc.hits3;
  j["hits10"] = kbc.hits10;
  j["n_queries"] = kbc.n_queries;
  j["n_malformed"] = kbc.n_malformed;
  j["split"] = o.split;
  write_text_file(o.out + "/kbc_metrics.json", j.dump(2) + "\n");
  write_text_file(o.out + "/kbc.md",
                  md_table({"mrr", "hits@1", "hits@3", "hits@10", "queries", "malformed"},
                           {{num(kbc.mrr), num(kbc.hits1), num(kbc.hits3), num(kbc.hits10),
                             std::to_string(kbc.n_queries), std::to_string(kbc.n_malformed)}}));
  std::cout << o.split << " mrr " << num(kbc.mrr) << ", hits@1 " << num(kbc.hits1)
            << ", hits@10 " << num(kbc.hits10) << " over " << kbc.n_queries << " queries\n";
}

void cmd_eval_text(const EvalOpts& o) {
  const model::DualModel m = model::DualModel::load(o.ckpt);
  const Dataset d = load_dataset(o.data);
  const int max_len = m.config().max_len;
  corpus::DatasetSplit view = d.raw;
  if (o.split == "test") std::swap(view.dev, view.test);
  const corpus::TokenizedData tok = corpus::tokenize_split(view.dev, d.vocab, max_len);
  if (tok.pairs.empty()) throw EmptyInput("eval-text: the " + o.split + " split has no pairs");

  const model::Direction dir = model::direction_from_name(o.direction);
  std::vector<std::vector<int>> sources, references;
  for (const auto& pair : tok.pairs) {
    auto sent = eos_row(pair.sentence, max_len);
    auto path = eos_row(corpus::serialize_path(pair.path), max_len);
    sources.push_back(dir == model::Direction::BA ? path : sent);
    references.push_back(dir == model::Direction::BA ? sent : path);
  }
  const eval::Generator gen = [&](const std::vector<int>& in) {
    return m.generate(in, dir).output;
  };
  const eval::TextMetrics tm = eval::evaluate_text(gen, sources, references);

  fs::create_directories(o.out);
  json j;
  j["bleu2"] = tm.bleu2;
  j["bleu3"] = tm.bleu3;
  j["rouge_l"] = tm.rouge_l;
  j["n"] = tm.n;
  j["direction"] = o.direction;
  j["split"] = o.split;
  write_text_file(o.out + "/text_metrics.json", j.dump(2) + "\n");
  write_text_file(o.out + "/text.md",
                  md_table({"direction", "bleu2", "bleu3", "rouge-l", "n"},
                           {{o.direction, num(tm.bleu2), num(tm.bleu3), num(tm.rouge_l),
                             std::to_string(tm.n)}}));
  std::cout << o.split << " " << o.direction << ": bleu2 " << num(tm.bleu2) << ", rouge-l "
            << num(tm.rouge_l) << " over " << tm.n << " pairs\n";
}

void cmd_transfer(const TransferOpts& o) {
  const model::DualModel m = model::DualModel::load(o.ckpt);
  const corpus::Vocabulary vocab = corpus::Vocabulary::load(o.vocab);
  const model::Direction dir = model::direction_from_name(o.direction);
  const int max_len = m.config().max_len;

  const bool src_is_text = dir == model::Direction::AA || dir == model::Direction::AB ||
                           dir == model::Direction::ABA;
  const bool out_is_path = dir == model::Direction::AB || dir == model::Direction::BB ||
                           dir == model::Direction::BAB || dir == model::Direction::BmB;
  if (!o.dot.empty() && !out_is_path) {
    throw ConfigError("--dot needs a path-producing direction (ab, bb, bab, bmb)");
  }

  struct Item {
    std::string text;
    std::vector<int> ids;  // empty marks an untokenizable input
  };
  std::vector<Item> items;
  if (src_is_text) {
    for (const auto& s : corpus::load_sentences_jsonl(o.input)) {
      auto ids = corpus::tokenize(s.text, vocab);
      items.push_back({s.text, ids.empty() ? ids : eos_row(std::move(ids), max_len)});
    }
  } else {
    for (const auto& p : corpus::load_paths_jsonl(o.input, kKeepAllWeights)) {
      Item it{weak::flatten_path(p.head, p.rel, p.tail), {}};
      const corpus::TokenizedData tok = corpus::tokenize_split(
          {.sentences = {}, .paths = {{p.head, p.rel, p.tail, 0.0}}, .pairs = {}}, vocab,
          max_len);
      if (!tok.paths.empty()) {
        it.ids = eos_row(corpus::serialize_path(tok.paths[0]), max_len);
      }
      items.push_back(std::move(it));
    }
  }
  if (items.empty()) throw EmptyInput("transfer: no inputs in " + o.input);

  fs::create_directories(o.out);
  std::ofstream out(o.out + "/generations.jsonl", std::ios::trunc);
  if (!out) throw DataError("cannot write " + o.out + "/generations.jsonl");
  std::vector<graph::Edge> edges;
  int64_t parsed = 0;
  for (const auto& it : items) {
    json line;
    line["direction"] = o.direction;
    line["input"] = it.text;
    if (it.ids.empty()) {
      line["error"] = "empty input after tokenization";
      out << line.dump() << "\n";
      continue;
    }
    try {
      model::GenerationResult g = m.generate(it.ids, dir);
      std::vector<int> ids = g.output;
      if (!ids.empty() && ids.back() == corpus::Vocabulary::kEos) ids.pop_back();
      line["output"] = corpus::detokenize(g.output, vocab);
      line["truncated"] = g.truncated;
      if (out_is_path) {
        const corpus::PathParse parse = corpus::parse_path(ids);
        if (parse.ok()) {
          ++parsed;
          const std::string h = corpus::detokenize(parse.triple.head, vocab);
          const std::string r = corpus::detokenize(parse.triple.rel, vocab);
          const std::string t = corpus::detokenize(parse.triple.tail, vocab);
          line["head"] = h;
          line["rel"] = r;
          line["tail"] = t;
          edges.push_back({h, r, t});
        } else {
          line["parse_error"] = corpus::parse_error_name(parse.error);
        }
      }
    } catch (const DegenerateIntermediate& e) {
      line["error"] = e.what();
    }
    out << line.dump() << "\n";
  }
  out.close();

  if (!o.dot.empty()) {
    write_text_file(o.dot, graph::to_dot(graph::assemble(edges), "generated"));
  }
  std::cout << "wrote " << items.size() << " generations";
  if (out_is_path) std::cout << " (" << parsed << " parsed)";
  std::cout << " to " << o.out << "/generations.jsonl\n";
}

void cmd_ged(const GedOpts& o) {
  auto edges_of = [](const std::string& path) {
    std::vector<graph::Edge> edges;
    for (const auto& p : corpus::load_paths_jsonl(path, kKeepAllWeights)) {
      edges.push_back({p.head, p.rel, p.tail});
    }
    return edges;
  };
  const auto reference = edges_of(o.reference);
  const auto generated = edges_of(o.generated);
  const graph::GedReport report =
      graph::approx_ged(reference, generated, o.chunk_size, o.node_threshold, o.workers);

  fs::create_directories(o.out);
  write_text_file(o.out + "/ged_report.json", graph::ged_report_json(report) + "\n");
  std::vector<std::vector<std::string>> rows;
  for (size_t i = 0; i < report.chunk_values.size(); ++i) {
    rows.push_back({std::to_string(i), std::to_string(report.chunk_values[i])});
  }
  rows.push_back({"mean", num(report.mean)});
  write_text_file(o.out + "/ged.md", md_table({"chunk", "ged"}, rows));
  if (!o.dot_reference.empty()) {
    write_text_file(o.dot_reference, graph::to_dot(graph::assemble(reference), "reference"));
  }
  if (!o.dot_generated.empty()) {
    write_text_file(o.dot_generated, graph::to_dot(graph::assemble(generated), "generated"));
  }
  std::cout << "mean ged " << num(report.mean) << " over " << report.chunk_values.size()
            << " chunks of " << report.chunk_size << "\n";
}

void cmd_sweep_rho(const SweepOpts& o) {
  const Dataset d = load_dataset(o.data);
  const auto rows = training_rows(d, o.model.max_len);
  const train::DevSet dev = train::build_dev_set(d.raw, d.vocab, o.model.max_len);

  fs::create_directories(o.out);
  std::ofstream log(o.out + "/sweep.jsonl", std::ios::trunc);
  if (!log) throw DataError("cannot write " + o.out + "/sweep.jsonl");
  std::vector<std::vector<std::string>> table;
  for (const double rho : o.rhos) {
    train::TrainConfig cfg = resolve_train(o.train);
    cfg.rho = rho;
    // identical init for every point so only the supervision ratio moves
    Rng init(cfg.seed ^ kInitSalt);
    model::DualModel m(to_model_config(o.model, d.vocab.size()), init);
    const std::string run_dir = o.out + "/rho_" + num(rho);
    const train::TrainResult res = train::train(std::move(m), rows, dev, cfg, run_dir);
    write_train_artifacts(res, run_dir);

    const auto& last = res.reports.back();
    json j;
    j["rho"] = rho;
    j["best_mrr"] = best_mrr_of(res);
    j["final_mrr"] = last.kbc.mrr;
    j["best_bleu2"] = best_bleu2_of(res);
    j["final_bleu2"] = last.text.bleu2;
    j["final_loss"] = last.loss_total;
    log << j.dump() << "\n";
    table.push_back({num(rho), num(best_mrr_of(res)), num(last.kbc.mrr),
                     num(best_bleu2_of(res)), num(last.text.bleu2)});
    std::cout << "rho " << num(rho) << ": best mrr " << num(best_mrr_of(res)) << "\n";
  }
  write_text_file(o.out + "/sweep.md",
                  md_table({"rho", "best mrr", "final mrr", "best bleu2", "final bleu2"},
                           table));
}

void cmd_ablate(const AblateOpts& o) {
  const Dataset d = load_dataset(o.data);
  const auto rows = training_rows(d, o.model.max_len);
  const train::DevSet dev = train::build_dev_set(d.raw, d.vocab, o.model.max_len);

  const struct {
    const char* name;
    bool rec, bt, sup;
  } subsets[] = {{"rec+bt+sup", true, true, true},
                 {"bt+sup", false, true, true},
                 {"rec+bt", true, true, false},
                 {"rec+sup", true, false, true}};

  fs::create_directories(o.out);
  std::ofstream log(o.out + "/ablate.jsonl", std::ios::trunc);
  if (!log) throw DataError("cannot write " + o.out + "/ablate.jsonl");
  std::vector<std::vector<std::string>> table;
  for (const auto& s : subsets) {
    train::TrainConfig cfg = resolve_train(o.train);
    cfg.use_rec = s.rec;
    cfg.use_bt = s.bt;
    cfg.use_sup = s.sup;
    Rng init(cfg.seed ^ kInitSalt);
    model::DualModel m(to_model_config(o.model, d.vocab.size()), init);
    std::string dir_name = s.name;
    std::replace(dir_name.begin(), dir_name.end(), '+', '_');
    const std::string run_dir = o.out + "/" + dir_name;
    const train::TrainResult res = train::train(std::move(m), rows, dev, cfg, run_dir);
    write_train_artifacts(res, run_dir);

    const auto& last = res.reports.back();
    json j;
    j["losses"] = s.name;
    j["best_mrr"] = best_mrr_of(res);
    j["final_mrr"] = last.kbc.mrr;
    j["best_bleu2"] = best_bleu2_of(res);
    j["final_loss"] = last.loss_total;
    log << j.dump() << "\n";
    table.push_back({s.name, num(best_mrr_of(res)), num(last.kbc.mrr),
                     num(best_bleu2_of(res)), num(last.loss_total)});
    std::cout << s.name << ": best mrr " << num(best_mrr_of(res)) << "\n";
  }
  write_text_file(o.out + "/ablate.md",
                  md_table({"losses", "best mrr", "final mrr", "best bleu2", "final loss"},
                           table));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual learning between free text and knowledge-base paths"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("pathtext ") + kVersion);

  BuildOpts build_o;
  auto* build = app.add_subcommand("build-dataset", "Filter, split, and tokenize raw JSONL");
  build->add_option("--sentences", build_o.sentences, "Sentence JSONL")
      ->required()
      ->check(CLI::ExistingFile);
  build->add_option("--paths", build_o.paths, "KB path JSONL")
      ->required()
      ->check(CLI::ExistingFile);
  build->add_option("--pairs", build_o.pairs, "Aligned pair JSONL (from `match`)")
      ->check(CLI::ExistingFile);
  build->add_option("--out", build_o.out, "Dataset directory")->required();
  build->add_option("--min-weight", build_o.min_weight, "Keep paths with weight strictly above")
      ->capture_default_str();
  build->add_option("--dev-frac", build_o.dev_frac)->capture_default_str();
  build->add_option("--test-frac", build_o.test_frac)->capture_default_str();
  build->add_option("--vocab-cap", build_o.vocab_cap)->capture_default_str();
  build->add_option("--seed", build_o.seed)->capture_default_str();

  MatchOpts match_o;
  auto* match = app.add_subcommand("match", "Weakly pair sentences with paths by tf-idf");
  match->add_option("--sentences", match_o.sentences)->required()->check(CLI::ExistingFile);
  match->add_option("--paths", match_o.paths)->required()->check(CLI::ExistingFile);
  match->add_option("--out", match_o.out)->required();
  match->add_option("--threshold", match_o.threshold, "Minimum cosine to keep a pair")
      ->capture_default_str();
  match->add_option("--ngram", match_o.ngram)->capture_default_str();
  match->add_option("--min-weight", match_o.min_weight, "Path weight filter (keeps all by default)");

  TrainCmdOpts train_o;
  auto* train_cmd = app.add_subcommand("train", "Train the dual model on a dataset directory");
  train_cmd->add_option("--data", train_o.data, "build-dataset output directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out", train_o.out, "Run directory")->required();
  // No ExistingFile check: stamped configs replay resume="" and the validator
  // would reject the empty value. cmd_train checks the path itself.
  train_cmd->add_option("--resume", train_o.resume,
                        "trainer_state.ckpt to continue (model flags are then ignored)");
  add_model_opts(train_cmd, train_o.model);
  add_train_opts(train_cmd, train_o.train, true, true);

  EvalOpts kbc_o;
  auto* eval_kbc = app.add_subcommand("eval-kbc", "Generative KB completion ranking");
  eval_kbc->add_option("--ckpt", kbc_o.ckpt)->required()->check(CLI::ExistingFile);
  eval_kbc->add_option("--data", kbc_o.data)->required()->check(CLI::ExistingDirectory);
  eval_kbc->add_option("--out", kbc_o.out)->required();
  eval_kbc->add_option("--split", kbc_o.split)
      ->check(CLI::IsMember({"dev", "test"}))
      ->capture_default_str();

  EvalOpts text_o;
  auto* eval_text = app.add_subcommand("eval-text", "BLEU/ROUGE over generated text");
  eval_text->add_option("--ckpt", text_o.ckpt)->required()->check(CLI::ExistingFile);
  eval_text->add_option("--data", text_o.data)->required()->check(CLI::ExistingDirectory);
  eval_text->add_option("--out", text_o.out)->required();
  eval_text->add_option("--split", text_o.split)
      ->check(CLI::IsMember({"dev", "test"}))
      ->capture_default_str();
  eval_text->add_option("--direction", text_o.direction, "ba scores sentences, ab paths")
      ->check(CLI::IsMember({"ba", "ab"}))
      ->capture_default_str();

  TransferOpts transfer_o;
  auto* transfer = app.add_subcommand("transfer", "Generate across modalities from JSONL");
  transfer->add_option("--ckpt", transfer_o.ckpt)->required()->check(CLI::ExistingFile);
  transfer->add_option("--vocab", transfer_o.vocab, "vocab.txt from the dataset directory")
      ->required()
      ->check(CLI::ExistingFile);
  transfer->add_option("--input", transfer_o.input, "Sentence or path JSONL, per direction")
      ->required()
      ->check(CLI::ExistingFile);
  transfer->add_option("--out", transfer_o.out)->required();
  transfer->add_option("--direction", transfer_o.direction)
      ->check(CLI::IsMember({"aa", "ab", "ba", "bb", "aba", "bab", "bmb"}))
      ->capture_default_str();
  transfer->add_option("--dot", transfer_o.dot, "Write the parsed triples as a DOT graph");

  GedOpts ged_o;
  auto* ged = app.add_subcommand("ged", "Graph edit distance between aligned path files");
  ged->add_option("--reference", ged_o.reference)->required()->check(CLI::ExistingFile);
  ged->add_option("--generated", ged_o.generated)->required()->check(CLI::ExistingFile);
  ged->add_option("--out", ged_o.out)->required();
  ged->add_option("--chunk-size", ged_o.chunk_size)->capture_default_str();
  ged->add_option("--node-threshold", ged_o.node_threshold)->capture_default_str();
  ged->add_option("--workers", ged_o.workers)->capture_default_str();
  ged->add_option("--dot-reference", ged_o.dot_reference);
  ged->add_option("--dot-generated", ged_o.dot_generated);

  SweepOpts sweep_o;
  auto* sweep = app.add_subcommand("sweep-rho", "Train and evaluate across supervision ratios");
  sweep->add_option("--data", sweep_o.data)->required()->check(CLI::ExistingDirectory);
  sweep->add_option("--out", sweep_o.out)->required();
  sweep->add_option("--rhos", sweep_o.rhos, "Supervision ratios to sweep")
      ->delimiter(',')
      ->capture_default_str();
  add_model_opts(sweep, sweep_o.model);
  add_train_opts(sweep, sweep_o.train, false, false);

  AblateOpts ablate_o;
  auto* ablate = app.add_subcommand("ablate", "Train the four loss subsets");
  ablate->add_option("--data", ablate_o.data)->required()->check(CLI::ExistingDirectory);
  ablate->add_option("--out", ablate_o.out)->required();
  add_model_opts(ablate, ablate_o.model);
  add_train_opts(ablate, ablate_o.train, true, false);

  // Config files are processed by the root app only, so the option lives here
  // and fallthrough lets it appear after the subcommand name too.
  app.set_config("--config", "",
                 "key=value file under a [subcommand] section; flags override it");
  for (auto* sub : {build, match, train_cmd, eval_kbc, eval_text, transfer, ged, sweep, ablate}) {
    sub->fallthrough();
  }

  build->callback([&] { cmd_build_dataset(build_o); write_run_stamp(*build, build_o.out); });
  match->callback([&] { cmd_match(match_o); write_run_stamp(*match, match_o.out); });
  train_cmd->callback([&] { cmd_train(train_o); write_run_stamp(*train_cmd, train_o.out); });
  eval_kbc->callback([&] { cmd_eval_kbc(kbc_o); write_run_stamp(*eval_kbc, kbc_o.out); });
  eval_text->callback([&] { cmd_eval_text(text_o); write_run_stamp(*eval_text, text_o.out); });
  transfer->callback([&] { cmd_transfer(transfer_o); write_run_stamp(*transfer, transfer_o.out); });
  ged->callback([&] { cmd_ged(ged_o); write_run_stamp(*ged, ged_o.out); });
  sweep->callback([&] { cmd_sweep_rho(sweep_o); write_run_stamp(*sweep, sweep_o.out); });
  ablate->callback([&] { cmd_ablate(ablate_o); write_run_stamp(*ablate, ablate_o.out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    err_json("ConfigError", e.what());
    return 2;
  } catch (const Error& e) {
    const Classified c = classify(e);
    err_json(c.name, e.what());
    return c.code;
  } catch (const std::exception& e) {
    err_json("Error", e.what());
    return 4;
  }
  return 0;
}
