#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pathtext/corpus.hpp"
#include "pathtext/evaluation.hpp"
#include "pathtext/model.hpp"
#include "pathtext/optim.hpp"
#include "pathtext/rng.hpp"
#include "pathtext/weak_supervision.hpp"

namespace pathtext::train {

enum class Selection { Mrr, Bleu2 };
const char* selection_name(Selection s);
Selection selection_from_name(const std::string& name);  // throws ConfigError

struct TrainConfig {
  int batch_size = 32;
  double rho = 0.5;       // fraction of pairs covered by the supervision loss
  double tf_ratio = 0.2;  // teacher forcing coin bias
  bool use_rec = true;
  bool use_bt = true;
  bool use_sup = true;
  double w_rec = 1.0, w_bt = 1.0, w_sup = 1.0;  // ablation weights
  int epochs = 40;
  Selection selection = Selection::Mrr;
  uint64_t seed = 0;
  double lr = 1e-3;  // Adam
  double clip_norm = 5.0;
  double p_tok = 0.10;   // per-token sentence masking
  double p_mask = 0.50;  // per-path head/tail masking
  bool operator==(const TrainConfig&) const = default;
};

// Throws ConfigError: rho outside [0, 1], no loss enabled, or degenerate
// batch size / epochs / rates.
void validate(const TrainConfig& cfg);

// One aligned training example. The sentence holds content ids only; the
// serialized, [EOS]-terminated forms are produced per batch.
struct PairRow {
  std::vector<int> sentence;
  corpus::PathTriple path;
};

std::vector<PairRow> make_rows(const corpus::TokenizedData& data);

// Row-aligned id sequences, every row [EOS]-terminated and clipped to
// max_len. sentences/paths are the reconstruction targets; the masked
// variants are the corresponding encoder inputs. paired marks rows the
// supervision loss may use.
struct Batch {
  std::vector<std::vector<int>> sentences, paths;
  std::vector<std::vector<int>> masked_sentences, masked_paths;
  std::vector<char> paired;
  size_t size() const { return sentences.size(); }
};

// Masking consumes rng draws in row order: sentence first, then path.
Batch make_batch(const std::vector<PairRow>& rows, const std::vector<int>& indices,
                 const weak::SupervisionPlan& plan, const TrainConfig& cfg, int max_len,
                 Rng& rng);

// Denoising reconstruction: decode each side's original tokens from its
// masked encoding, token-mean NLL, both sides summed. Throws EmptyInput on
// an empty batch.
ad::Tensor loss_rec(const model::DualModel& m, const Batch& b, double tf_ratio, Rng& rng);

// One cycle leg (ABA or BAB): greedy first pass with gradients detached
// (token ids only), then teacher-forced NLL of reconstructing the original.
// Rows whose intermediate has no content tokens are skipped and counted.
ad::Tensor loss_bt_leg(const model::DualModel& m, const Batch& b, model::Direction dir,
                       double tf_ratio, Rng& rng, int64_t* skipped = nullptr);

// Both cycle legs summed.
ad::Tensor loss_bt(const model::DualModel& m, const Batch& b, double tf_ratio, Rng& rng,
                   int64_t* skipped = nullptr);

// Teacher-forced translation NLL over pair-flagged rows only (both
// directions); exactly zero when no row is flagged.
ad::Tensor loss_sup(const model::DualModel& m, const Batch& b, double tf_ratio, Rng& rng);

struct BatchLoss {
  ad::Tensor total;                      // taped scalar, ready for backward
  double rec = 0.0, bt = 0.0, sup = 0.0; // part values, 0 when disabled
  int64_t bt_skipped = 0;
};

// Weighted sum of the enabled losses, consuming rng in rec, bt, sup order.
BatchLoss batch_loss(const model::DualModel& m, const Batch& b, const TrainConfig& cfg,
                     Rng& rng);

// Dev-time evaluation inputs: completion queries ranked against the pool
// via masked-path generation, and path -> sentence generation scored
// against references.
struct DevSet {
  std::vector<eval::CompletionQuery> queries;
  eval::CandidatePool pool;
  std::vector<std::vector<int>> text_sources;     // serialized paths, [EOS]-terminated
  std::vector<std::vector<int>> text_references;  // sentences, [EOS]-terminated
  corpus::Vocabulary vocab;
};

// Pool over all three splits; two queries (head and tail) per dev path;
// text pairs from the dev split.
DevSet build_dev_set(const corpus::DatasetSplit& raw, const corpus::Vocabulary& vocab,
                     int max_len = 64);

struct DevMetrics {
  eval::KbcMetrics kbc;
  eval::TextMetrics text;
};
DevMetrics evaluate_dev(const model::DualModel& m, const DevSet& dev);

struct EpochReport {
  int epoch = 0;  // 1-based
  double loss_rec = 0.0, loss_bt = 0.0, loss_sup = 0.0, loss_total = 0.0;
  int64_t bt_skipped = 0;
  eval::KbcMetrics kbc;
  eval::TextMetrics text;
  bool best_mrr = false, best_bleu2 = false;
};

// Single JSON object, keys sorted, no timestamps.
std::string epoch_report_json(const EpochReport& r);

// Owns the model, optimizer, rng stream and epoch counter. One instance per
// training run; dev evaluation is read-only on the model.
class Trainer {
 public:
  Trainer(model::DualModel m, const TrainConfig& cfg);
  static Trainer restore(const std::string& state_path);

  // Shuffle, batch, mask, step over every batch, then evaluate on dev.
  // Throws NonFiniteLoss with the offending batch index.
  EpochReport run_epoch(const std::vector<PairRow>& data, const DevSet& dev);

  // Full resumable state: model, Adam moments, rng, epoch, best metrics.
  void save_state(const std::string& path) const;

  int epoch() const { return epoch_; }
  const TrainConfig& config() const { return cfg_; }
  model::DualModel& model() { return model_; }
  const model::DualModel& model() const { return model_; }

 private:
  model::DualModel model_;
  TrainConfig cfg_;
  ad::Adam opt_;
  Rng rng_;
  int epoch_ = 0;
  double best_mrr_val_ = -1.0, best_bleu2_val_ = -1.0;
};

struct TrainResult {
  std::vector<EpochReport> reports;
  std::string best_mrr_path, best_bleu2_path;  // empty until a best exists
  std::string state_path, metrics_path;
};

// Fresh run: truncates the metrics log, writes a best checkpoint whenever a
// selection metric improves, and saves the trainer state at the end.
TrainResult train(model::DualModel m, const std::vector<PairRow>& data, const DevSet& dev,
                  const TrainConfig& cfg, const std::string& out_dir);

// Continues a saved run until `epochs` total epochs, appending to the
// metrics log in out_dir.
TrainResult resume(const std::string& state_path, const std::vector<PairRow>& data,
                   const DevSet& dev, int epochs, const std::string& out_dir);

}  // namespace pathtext::train
