#pragma once

#include <string>
#include <vector>

#include "pathtext/optim.hpp"
#include "pathtext/rng.hpp"
#include "pathtext/tensor.hpp"

namespace pathtext::model {

// Transfer directions between text (A) and serialized paths (B). The
// composites run two full encode/decode passes; BmB is decoding B from a
// masked-path encoding.
enum class Direction { AA, AB, BA, BB, ABA, BAB, BmB };

const char* direction_name(Direction d);
Direction direction_from_name(const std::string& name);  // throws ConfigError

enum class Arch { GruGru, TransTrans };
const char* arch_name(Arch a);
Arch arch_from_name(const std::string& name);  // throws ConfigError

inline constexpr int kDecoderA = 0;
inline constexpr int kDecoderB = 1;

struct ModelConfig;

// JSON round trip used for checkpoint metadata.
std::string config_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& json_text);  // throws DataError

struct ModelConfig {
  Arch arch = Arch::GruGru;
  int vocab = 0;
  int hidden = 100;  // GRU hidden and embedding width
  int d_model = 96;  // transformer width, divisible by heads
  int ff = 384;
  int layers = 3;
  int heads = 3;
  int max_len = 64;
  bool gru_attention = false;  // dot attention over encoder steps
  bool operator==(const ModelConfig&) const = default;
};

// Encoded batch. GRU fills steps/summary (step-major [B, H] states, final
// masked hidden); the transformer fills ctx (one [T_i, d] matrix per
// sequence) and a mean-pooled summary. inputs keeps the raw ids so padded
// positions can be masked downstream.
struct EncoderState {
  std::vector<ad::Tensor> steps;
  ad::Tensor summary;
  std::vector<ad::Tensor> ctx;
  std::vector<std::vector<int>> inputs;
};

struct GenerationResult {
  Direction direction = Direction::AA;
  std::vector<int> output;  // ends with [EOS] unless truncated
  bool truncated = false;
};

// One shared embedding table, one shared encoder, two decoders with
// identical shapes but disjoint parameters (prefixes dec_a. / dec_b.).
class DualModel {
 public:
  explicit DualModel(const ModelConfig& cfg);  // zero-filled parameters
  DualModel(const ModelConfig& cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }
  ad::ParamMap& params() { return params_; }
  const ad::ParamMap& params() const { return params_; }

  // Self-describing checkpoint: config in the meta JSON, tensors by name.
  void save(const std::string& path) const;
  static DualModel load(const std::string& path);

  // Throws EmptyInput / TooLong. Deterministic outside of tape scopes.
  EncoderState encode(const std::vector<int>& tokens) const;
  EncoderState encode_batch(const std::vector<std::vector<int>>& seqs) const;

  // Per-step vocabulary logits against the given targets (which end with
  // [EOS]). Step inputs start at [BOS]; each later step feeds the ground
  // truth with probability tf_ratio (one draw per step, shared across the
  // batch) and the previous argmax otherwise.
  std::vector<ad::Tensor> decode_teacher(const EncoderState& state, int decoder_id,
                                         const std::vector<int>& targets, double tf_ratio,
                                         Rng& rng) const;
  std::vector<ad::Tensor> decode_teacher_batch(const EncoderState& state, int decoder_id,
                                               const std::vector<std::vector<int>>& targets,
                                               double tf_ratio, Rng& rng) const;

  // Greedy argmax decoding from [BOS] to [EOS] or max_len. Composite
  // directions chain two passes and throw DegenerateIntermediate when the
  // first pass yields nothing but special tokens.
  GenerationResult generate(const std::vector<int>& input, Direction dir) const;

 private:
  void build_params();
  void init_params(Rng& rng);
  ad::Tensor p(const std::string& name) const;

  ad::Tensor gru_step(const std::string& prefix, const ad::Tensor& x,
                      const ad::Tensor& h) const;
  ad::Tensor attention_context(const EncoderState& state, const ad::Tensor& h) const;
  ad::Tensor decoder_step_logits(const std::string& dec, const EncoderState& state,
                                 const std::vector<int>& prev_ids, ad::Tensor& h) const;
  ad::Tensor transformer_encode_one(const std::vector<int>& tokens) const;
  ad::Tensor transformer_decode_logits(const std::string& dec, const ad::Tensor& ctx,
                                       const std::vector<int>& prefix) const;

  ModelConfig cfg_;
  ad::ParamMap params_;
};

// Standard GRU cell shared by encoder and decoders:
// z = sigmoid(x Wxz + h Whz + bz), r = sigmoid(x Wxr + h Whr + br),
// hh = tanh(x Wxh + (r * h) Whh + bh), h' = (1 - z) * h + z * hh.
ad::Tensor gru_cell(ad::Tensor x, ad::Tensor h, ad::Tensor wxz, ad::Tensor whz, ad::Tensor bz,
                    ad::Tensor wxr, ad::Tensor whr, ad::Tensor br, ad::Tensor wxh,
                    ad::Tensor whh, ad::Tensor bh);

// Pre-norm self-attention + feed-forward block used by the transformer
// encoder; exposed for direct testing.
struct BlockParams {
  ad::Tensor ln1_g, ln1_b, wq, wk, wv, wo;
  ad::Tensor ln2_g, ln2_b, ff_w1, ff_b1, ff_w2, ff_b2;
};
ad::Tensor transformer_block(ad::Tensor x, const BlockParams& p, int heads, bool causal);

// Multi-head attention of q over k/v, optionally causally masked; exposed
// for the attention-row tests. q is (Tq x d), kv is (Tkv x d).
ad::Tensor multi_head_attention(ad::Tensor q_in, ad::Tensor kv_in, ad::Tensor wq, ad::Tensor wk,
                                ad::Tensor wv, ad::Tensor wo, int heads, bool causal);

// Sinusoidal position encodings, (len x d), constant.
ad::Tensor positional_encoding(int len, int d);

// Row index of the largest value in the given row of a logits matrix.
int argmax_row(const ad::Tensor& logits, int row);

}  // namespace pathtext::model
