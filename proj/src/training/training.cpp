#include "pathtext/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>

#include "json.hpp"
#include "pathtext/checkpoint.hpp"
#include "pathtext/errors.hpp"
#include "pathtext/ops.hpp"
#include "pathtext/tape.hpp"

namespace pathtext::train {

using ad::Tensor;
using corpus::Vocabulary;
using model::Direction;
using model::DualModel;

namespace {

// Decorrelates the supervision subset from the shuffle/mask/coin stream.
constexpr uint64_t kPlanSalt = 0x9E3779B97F4A7C15ULL;

std::vector<int> with_eos(std::vector<int> ids, int max_len) {
  ids.push_back(Vocabulary::kEos);
  if (static_cast<int>(ids.size()) > max_len) {
    ids.resize(max_len);
    ids.back() = Vocabulary::kEos;
  }
  return ids;
}

// Token-mean teacher-forced NLL of decoding `targets` from `enc_inputs`.
Tensor decode_nll(const DualModel& m, const std::vector<std::vector<int>>& enc_inputs,
                  int decoder_id, const std::vector<std::vector<int>>& targets,
                  double tf_ratio, Rng& rng) {
  const model::EncoderState st = m.encode_batch(enc_inputs);
  const auto steps = m.decode_teacher_batch(st, decoder_id, targets, tf_ratio, rng);
  const size_t b = targets.size();
  Tensor sum;
  int64_t n_tokens = 0;
  for (size_t t = 0; t < steps.size(); ++t) {
    std::vector<int> col(b, Vocabulary::kPad);
    for (size_t i = 0; i < b; ++i) {
      if (t < targets[i].size()) col[i] = targets[i][t];
    }
    int64_t counted = 0;
    const Tensor ce = ad::cross_entropy_sum(steps[t], col, Vocabulary::kPad, &counted);
    n_tokens += counted;
    sum = t == 0 ? ce : ad::add(sum, ce);
  }
  return ad::scale(sum, 1.0 / static_cast<double>(n_tokens));
}

bool has_content(const std::vector<int>& ids) {
  return std::any_of(ids.begin(), ids.end(),
                     [](int id) { return id >= Vocabulary::kNumSpecials; });
}

}  // namespace

const char* selection_name(Selection s) { return s == Selection::Mrr ? "mrr" : "bleu2"; }

Selection selection_from_name(const std::string& name) {
  if (name == "mrr") return Selection::Mrr;
  if (name == "bleu2") return Selection::Bleu2;
  throw ConfigError("unknown selection metric: " + name);
}

void validate(const TrainConfig& cfg) {
  if (cfg.rho < 0.0 || cfg.rho > 1.0) throw ConfigError("rho must lie in [0, 1]");
  if (!cfg.use_rec && !cfg.use_bt && !cfg.use_sup) {
    throw ConfigError("at least one loss must be enabled");
  }
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(cfg.lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(cfg.clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  for (double p : {cfg.tf_ratio, cfg.p_tok, cfg.p_mask}) {
    if (p < 0.0 || p > 1.0) throw ConfigError("probabilities must lie in [0, 1]");
  }
}

std::vector<PairRow> make_rows(const corpus::TokenizedData& data) {
  std::vector<PairRow> rows;
  rows.reserve(data.pairs.size());
  for (const auto& p : data.pairs) rows.push_back({p.sentence, p.path});
  return rows;
}

Batch make_batch(const std::vector<PairRow>& rows, const std::vector<int>& indices,
                 const weak::SupervisionPlan& plan, const TrainConfig& cfg, int max_len,
                 Rng& rng) {
  Batch b;
  for (int idx : indices) {
    const PairRow& r = rows.at(static_cast<size_t>(idx));
    const corpus::MaskedItem ms = corpus::mask_sentence(r.sentence, rng, cfg.p_tok);
    const corpus::MaskedItem mp = corpus::mask_path(r.path, rng, cfg.p_mask);
    b.sentences.push_back(with_eos(r.sentence, max_len));
    b.masked_sentences.push_back(with_eos(ms.masked, max_len));
    b.paths.push_back(with_eos(corpus::serialize_path(r.path), max_len));
    b.masked_paths.push_back(with_eos(mp.masked, max_len));
    b.paired.push_back(plan.covers(idx) ? 1 : 0);
  }
  return b;
}

Tensor loss_rec(const DualModel& m, const Batch& b, double tf_ratio, Rng& rng) {
  if (b.size() == 0) throw EmptyInput("loss_rec: empty batch");
  const Tensor text_side =
      decode_nll(m, b.masked_sentences, model::kDecoderA, b.sentences, tf_ratio, rng);
  const Tensor path_side =
      decode_nll(m, b.masked_paths, model::kDecoderB, b.paths, tf_ratio, rng);
  return ad::add(text_side, path_side);
}

Tensor loss_bt_leg(const DualModel& m, const Batch& b, Direction dir, double tf_ratio,
                   Rng& rng, int64_t* skipped) {
  if (dir != Direction::ABA && dir != Direction::BAB) {
    throw ConfigError(std::string("loss_bt_leg needs a cycle direction, got ") +
                      model::direction_name(dir));
  }
  if (b.size() == 0) throw EmptyInput("loss_bt: empty batch");
  const bool aba = dir == Direction::ABA;
  const auto& sources = aba ? b.sentences : b.paths;
  const Direction first = aba ? Direction::AB : Direction::BA;
  const int decoder_id = aba ? model::kDecoderA : model::kDecoderB;

  std::vector<std::vector<int>> inter, targets;
  for (size_t i = 0; i < sources.size(); ++i) {
    const model::GenerationResult g = m.generate(sources[i], first);  // detached: ids only
    if (!has_content(g.output)) {
      if (skipped) ++*skipped;
      continue;
    }
    inter.push_back(g.output);
    targets.push_back(sources[i]);
  }
  if (inter.empty()) return Tensor::scalar(0.0);
  return decode_nll(m, inter, decoder_id, targets, tf_ratio, rng);
}

Tensor loss_bt(const DualModel& m, const Batch& b, double tf_ratio, Rng& rng,
               int64_t* skipped) {
  const Tensor aba = loss_bt_leg(m, b, Direction::ABA, tf_ratio, rng, skipped);
  const Tensor bab = loss_bt_leg(m, b, Direction::BAB, tf_ratio, rng, skipped);
  return ad::add(aba, bab);
}

Tensor loss_sup(const DualModel& m, const Batch& b, double tf_ratio, Rng& rng) {
  std::vector<std::vector<int>> sents, paths;
  for (size_t i = 0; i < b.size(); ++i) {
    if (!b.paired[i]) continue;
    sents.push_back(b.sentences[i]);
    paths.push_back(b.paths[i]);
  }
  if (sents.empty()) return Tensor::scalar(0.0);
  const Tensor ab = decode_nll(m, sents, model::kDecoderB, paths, tf_ratio, rng);
  const Tensor ba = decode_nll(m, paths, model::kDecoderA, sents, tf_ratio, rng);
  return ad::add(ab, ba);
}

BatchLoss batch_loss(const DualModel& m, const Batch& b, const TrainConfig& cfg, Rng& rng) {
  BatchLoss out;
  Tensor total;
  bool any = false;
  auto accumulate = [&](Tensor part, double w) {
    const Tensor scaled = ad::scale(std::move(part), w);
    total = any ? ad::add(total, scaled) : scaled;
    any = true;
  };
  if (cfg.use_rec) {
    const Tensor r = loss_rec(m, b, cfg.tf_ratio, rng);
    out.rec = r.item();
    accumulate(r, cfg.w_rec);
  }
  if (cfg.use_bt) {
    const Tensor t = loss_bt(m, b, cfg.tf_ratio, rng, &out.bt_skipped);
    out.bt = t.item();
    accumulate(t, cfg.w_bt);
  }
  if (cfg.use_sup) {
    const Tensor s = loss_sup(m, b, cfg.tf_ratio, rng);
    out.sup = s.item();
    accumulate(s, cfg.w_sup);
  }
  if (!any) throw ConfigError("at least one loss must be enabled");
  out.total = total;
  return out;
}

DevSet build_dev_set(const corpus::DatasetSplit& raw, const corpus::Vocabulary& vocab,
                     int max_len) {
  DevSet d;
  d.vocab = vocab;
  d.pool = eval::build_pool({&raw.train.paths, &raw.dev.paths, &raw.test.paths});
  for (const corpus::RawPath& p : raw.dev.paths) {
    d.queries.push_back({p.head, p.rel, p.tail, 0});
    d.queries.push_back({p.head, p.rel, p.tail, 1});
  }
  const corpus::TokenizedData tok = corpus::tokenize_split(raw.dev, vocab, max_len);
  for (const auto& pair : tok.pairs) {
    d.text_sources.push_back(with_eos(corpus::serialize_path(pair.path), max_len));
    d.text_references.push_back(with_eos(pair.sentence, max_len));
  }
  return d;
}

DevMetrics evaluate_dev(const DualModel& m, const DevSet& dev) {
  DevMetrics out;
  if (!dev.queries.empty()) {
    const int max_len = m.config().max_len;
    // The ranking harness neither appends [EOS] to its inputs nor expects
    // one on the output, while the model is trained on terminated rows.
    const eval::Generator bmb = [&m, max_len](const std::vector<int>& in) {
      std::vector<int> out = m.generate(with_eos(in, max_len), Direction::BmB).output;
      if (!out.empty() && out.back() == Vocabulary::kEos) out.pop_back();
      return out;
    };
    std::vector<eval::RankingOutcome> outcomes;
    outcomes.reserve(dev.queries.size());
    for (const auto& q : dev.queries) {
      outcomes.push_back(eval::rank_query(bmb, q, dev.pool, dev.vocab));
    }
    out.kbc = eval::mrr_hits(outcomes);
  }
  if (!dev.text_sources.empty()) {
    const eval::Generator ba = [&m](const std::vector<int>& in) {
      return m.generate(in, Direction::BA).output;
    };
    out.text = eval::evaluate_text(ba, dev.text_sources, dev.text_references);
  }
  return out;
}

std::string epoch_report_json(const EpochReport& r) {
  nlohmann::json j;
  j["epoch"] = r.epoch;
  j["loss_rec"] = r.loss_rec;
  j["loss_bt"] = r.loss_bt;
  j["loss_sup"] = r.loss_sup;
  j["loss_total"] = r.loss_total;
  j["bt_skipped"] = r.bt_skipped;
  j["mrr"] = r.kbc.mrr;
  j["hits1"] = r.kbc.hits1;
  j["hits3"] = r.kbc.hits3;
  j["hits10"] = r.kbc.hits10;
  j["n_queries"] = r.kbc.n_queries;
  j["n_malformed"] = r.kbc.n_malformed;
  j["bleu2"] = r.text.bleu2;
  j["bleu3"] = r.text.bleu3;
  j["rouge_l"] = r.text.rouge_l;
  j["n_text"] = r.text.n;
  j["best_mrr"] = r.best_mrr;
  j["best_bleu2"] = r.best_bleu2;
  return j.dump();
}

Trainer::Trainer(DualModel m, const TrainConfig& cfg)
    : model_(std::move(m)), cfg_(cfg), opt_(cfg.lr), rng_(cfg.seed) {
  validate(cfg_);
}

EpochReport Trainer::run_epoch(const std::vector<PairRow>& data, const DevSet& dev) {
  if (data.empty()) throw EmptyInput("run_epoch: no training rows");
  const weak::SupervisionPlan plan =
      weak::plan_supervision(static_cast<int64_t>(data.size()), cfg_.rho,
                             cfg_.seed ^ kPlanSalt);
  std::vector<int> perm(data.size());
  std::iota(perm.begin(), perm.end(), 0);
  rng_.shuffle(perm);

  EpochReport rep;
  rep.epoch = epoch_ + 1;
  int n_batches = 0;
  for (size_t start = 0; start < perm.size(); start += cfg_.batch_size) {
    const size_t end = std::min(perm.size(), start + cfg_.batch_size);
    const std::vector<int> indices(perm.begin() + start, perm.begin() + end);
    const Batch batch =
        make_batch(data, indices, plan, cfg_, model_.config().max_len, rng_);

    ad::zero_grads(model_.params());
    ad::Tape tape;
    ad::TapeScope scope(tape);
    const BatchLoss bl = batch_loss(model_, batch, cfg_, rng_);
    const double total = bl.total.item();
    if (!std::isfinite(total)) {
      throw NonFiniteLoss("batch " + std::to_string(n_batches) + " of epoch " +
                          std::to_string(rep.epoch) + ": loss is not finite");
    }
    ad::backward(bl.total);
    ad::clip_global_norm(model_.params(), cfg_.clip_norm);
    opt_.step(model_.params());

    rep.loss_rec += bl.rec;
    rep.loss_bt += bl.bt;
    rep.loss_sup += bl.sup;
    rep.loss_total += total;
    rep.bt_skipped += bl.bt_skipped;
    ++n_batches;
  }
  rep.loss_rec /= n_batches;
  rep.loss_bt /= n_batches;
  rep.loss_sup /= n_batches;
  rep.loss_total /= n_batches;

  const DevMetrics dm = evaluate_dev(model_, dev);
  rep.kbc = dm.kbc;
  rep.text = dm.text;
  if (rep.kbc.mrr > best_mrr_val_) {
    best_mrr_val_ = rep.kbc.mrr;
    rep.best_mrr = true;
  }
  if (rep.text.bleu2 > best_bleu2_val_) {
    best_bleu2_val_ = rep.text.bleu2;
    rep.best_bleu2 = true;
  }
  ++epoch_;
  return rep;
}

namespace {

nlohmann::json train_cfg_json(const TrainConfig& c) {
  nlohmann::json j;
  j["batch_size"] = c.batch_size;
  j["rho"] = c.rho;
  j["tf_ratio"] = c.tf_ratio;
  j["use_rec"] = c.use_rec;
  j["use_bt"] = c.use_bt;
  j["use_sup"] = c.use_sup;
  j["w_rec"] = c.w_rec;
  j["w_bt"] = c.w_bt;
  j["w_sup"] = c.w_sup;
  j["epochs"] = c.epochs;
  j["selection"] = selection_name(c.selection);
  j["seed"] = c.seed;
  j["lr"] = c.lr;
  j["clip_norm"] = c.clip_norm;
  j["p_tok"] = c.p_tok;
  j["p_mask"] = c.p_mask;
  return j;
}

TrainConfig train_cfg_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.at("batch_size").get<int>();
  c.rho = j.at("rho").get<double>();
  c.tf_ratio = j.at("tf_ratio").get<double>();
  c.use_rec = j.at("use_rec").get<bool>();
  c.use_bt = j.at("use_bt").get<bool>();
  c.use_sup = j.at("use_sup").get<bool>();
  c.w_rec = j.at("w_rec").get<double>();
  c.w_bt = j.at("w_bt").get<double>();
  c.w_sup = j.at("w_sup").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.selection = selection_from_name(j.at("selection").get<std::string>());
  c.seed = j.at("seed").get<uint64_t>();
  c.lr = j.at("lr").get<double>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.p_tok = j.at("p_tok").get<double>();
  c.p_mask = j.at("p_mask").get<double>();
  return c;
}

}  // namespace

void Trainer::save_state(const std::string& path) const {
  nlohmann::json j;
  j["kind"] = "trainer_state";
  j["epoch"] = epoch_;
  j["rng"] = rng_.save_state();
  j["best_mrr"] = best_mrr_val_;
  j["best_bleu2"] = best_bleu2_val_;
  j["adam_t"] = opt_.t;
  j["cfg"] = train_cfg_json(cfg_);
  j["model"] = nlohmann::json::parse(model::config_json(model_.config()));

  ad::Checkpoint ckpt;
  ckpt.meta_json = j.dump();
  for (const auto& [name, t] : model_.params()) {
    ckpt.tensors.emplace("model." + name, t);
    auto moment = [&](const std::map<std::string, std::vector<double>>& mm) {
      const auto it = mm.find(name);
      return it == mm.end() ? Tensor::zeros(t.shape()) : Tensor::from(t.shape(), it->second);
    };
    ckpt.tensors.emplace("opt.m." + name, moment(opt_.m));
    ckpt.tensors.emplace("opt.v." + name, moment(opt_.v));
  }
  ad::save_checkpoint(path, ckpt);
}

Trainer Trainer::restore(const std::string& state_path) {
  const ad::Checkpoint ckpt = ad::load_checkpoint(state_path);
  TrainConfig cfg;
  model::ModelConfig mc;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ckpt.meta_json);
    if (j.at("kind").get<std::string>() != "trainer_state") {
      throw DataError(state_path + ": not a trainer state checkpoint");
    }
    cfg = train_cfg_from_json(j.at("cfg"));
    mc = model::config_from_json(j.at("model").dump());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(state_path + ": bad trainer state meta: " + e.what());
  }

  DualModel m(mc);
  for (auto& [name, t] : m.params()) {
    const auto it = ckpt.tensors.find("model." + name);
    if (it == ckpt.tensors.end()) {
      throw DataError(state_path + ": missing tensor model." + name);
    }
    if (it->second.shape() != t.shape()) {
      throw DataError(state_path + ": tensor model." + name + " has shape " +
                      it->second.shape_str() + ", expected " + t.shape_str());
    }
    t.values() = it->second.values();
  }

  Trainer tr(std::move(m), cfg);
  tr.epoch_ = j.at("epoch").get<int>();
  tr.best_mrr_val_ = j.at("best_mrr").get<double>();
  tr.best_bleu2_val_ = j.at("best_bleu2").get<double>();
  tr.rng_.restore_state(j.at("rng").get<std::string>());
  tr.opt_.t = j.at("adam_t").get<int64_t>();
  for (const auto& [name, param] : tr.model_.params()) {
    for (const char* kind : {"m", "v"}) {
      const std::string key = std::string("opt.") + kind + "." + name;
      const auto it = ckpt.tensors.find(key);
      if (it == ckpt.tensors.end()) throw DataError(state_path + ": missing tensor " + key);
      if (it->second.size() != param.size()) {
        throw DataError(state_path + ": tensor " + key + " does not match its parameter");
      }
      (kind[0] == 'm' ? tr.opt_.m : tr.opt_.v)[name] = it->second.values();
    }
  }
  return tr;
}

namespace {

void run_epochs(Trainer& t, const std::vector<PairRow>& data, const DevSet& dev,
                int total_epochs, const std::string& out_dir, std::ofstream& log,
                TrainResult& res) {
  while (t.epoch() < total_epochs) {
    EpochReport rep = t.run_epoch(data, dev);
    log << epoch_report_json(rep) << "\n";
    log.flush();
    const std::string stem = out_dir + "/epoch" + std::to_string(rep.epoch);
    if (rep.best_mrr) {
      res.best_mrr_path = stem + "_mrr.ckpt";
      t.model().save(res.best_mrr_path);
    }
    if (rep.best_bleu2) {
      res.best_bleu2_path = stem + "_bleu2.ckpt";
      t.model().save(res.best_bleu2_path);
    }
    res.reports.push_back(std::move(rep));
  }
}

std::ofstream open_log(const std::string& path, std::ios_base::openmode mode) {
  std::ofstream log(path, mode);
  if (!log) throw DataError("cannot open metrics log " + path);
  return log;
}

}  // namespace

TrainResult train(DualModel m, const std::vector<PairRow>& data, const DevSet& dev,
                  const TrainConfig& cfg, const std::string& out_dir) {
  validate(cfg);
  std::filesystem::create_directories(out_dir);
  Trainer t(std::move(m), cfg);
  TrainResult res;
  res.metrics_path = out_dir + "/metrics.jsonl";
  std::ofstream log = open_log(res.metrics_path, std::ios::trunc);
  run_epochs(t, data, dev, cfg.epochs, out_dir, log, res);
  res.state_path = out_dir + "/trainer_state.ckpt";
  t.save_state(res.state_path);
  return res;
}

TrainResult resume(const std::string& state_path, const std::vector<PairRow>& data,
                   const DevSet& dev, int epochs, const std::string& out_dir) {
  Trainer t = Trainer::restore(state_path);
  std::filesystem::create_directories(out_dir);
  TrainResult res;
  res.metrics_path = out_dir + "/metrics.jsonl";
  std::ofstream log = open_log(res.metrics_path, std::ios::app);
  run_epochs(t, data, dev, epochs, out_dir, log, res);
  res.state_path = out_dir + "/trainer_state.ckpt";
  t.save_state(res.state_path);
  return res;
}

}  // namespace pathtext::train
