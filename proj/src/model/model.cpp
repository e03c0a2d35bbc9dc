#include "pathtext/model.hpp"

#include <algorithm>
#include <cmath>
#include <span>

#include "json.hpp"
#include "pathtext/checkpoint.hpp"
#include "pathtext/corpus.hpp"
#include "pathtext/errors.hpp"
#include "pathtext/ops.hpp"
#include "pathtext/tape.hpp"

namespace pathtext::model {

using ad::Tensor;
using corpus::Vocabulary;

const char* direction_name(Direction d) {
  switch (d) {
    case Direction::AA: return "aa";
    case Direction::AB: return "ab";
    case Direction::BA: return "ba";
    case Direction::BB: return "bb";
    case Direction::ABA: return "aba";
    case Direction::BAB: return "bab";
    case Direction::BmB: return "bmb";
  }
  return "aa";
}

Direction direction_from_name(const std::string& name) {
  for (Direction d : {Direction::AA, Direction::AB, Direction::BA, Direction::BB,
                      Direction::ABA, Direction::BAB, Direction::BmB}) {
    if (name == direction_name(d)) return d;
  }
  throw ConfigError("unknown direction: " + name);
}

const char* arch_name(Arch a) { return a == Arch::GruGru ? "gru-gru" : "trans-trans"; }

Arch arch_from_name(const std::string& name) {
  if (name == "gru-gru") return Arch::GruGru;
  if (name == "trans-trans") return Arch::TransTrans;
  throw ConfigError("unknown architecture: " + name);
}

Tensor gru_cell(Tensor x, Tensor h, Tensor wxz, Tensor whz, Tensor bz, Tensor wxr, Tensor whr,
                Tensor br, Tensor wxh, Tensor whh, Tensor bh) {
  using namespace ad;
  const Tensor z = sigmoid(add_rowvec(add(matmul(x, wxz), matmul(h, whz)), bz));
  const Tensor r = sigmoid(add_rowvec(add(matmul(x, wxr), matmul(h, whr)), br));
  const Tensor hh = tanh_op(add_rowvec(add(matmul(x, wxh), matmul(mul(r, h), whh)), bh));
  const Tensor one = Tensor::full(z.shape(), 1.0);
  return add(mul(sub(one, z), h), mul(z, hh));
}

namespace {

Tensor affine_ln(Tensor x, Tensor g, Tensor b) {
  return ad::add_rowvec(ad::mul_rowvec(ad::layer_norm(x), g), b);
}

Tensor feed_forward(Tensor x, Tensor w1, Tensor b1, Tensor w2, Tensor b2) {
  using namespace ad;
  return add_rowvec(matmul(relu(add_rowvec(matmul(x, w1), b1)), w2), b2);
}

Tensor causal_mask(int tq, int tk) {
  std::vector<double> v(static_cast<size_t>(tq) * tk, 0.0);
  for (int i = 0; i < tq; ++i) {
    for (int j = i + 1; j < tk; ++j) v[static_cast<size_t>(i) * tk + j] = -1e9;
  }
  return Tensor::from({tq, tk}, std::move(v));
}

}  // namespace

Tensor multi_head_attention(Tensor q_in, Tensor kv_in, Tensor wq, Tensor wk, Tensor wv,
                            Tensor wo, int heads, bool causal) {
  using namespace ad;
  const int d = wq.cols();
  if (heads < 1 || d % heads != 0) {
    throw ShapeMismatch("attention width " + std::to_string(d) + " not divisible by " +
                        std::to_string(heads) + " heads");
  }
  const int dk = d / heads;
  const Tensor q = matmul(q_in, wq);
  const Tensor k = matmul(kv_in, wk);
  const Tensor v = matmul(kv_in, wv);
  Tensor mask;
  if (causal) mask = causal_mask(q.rows(), k.rows());
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    const Tensor qh = slice_cols(q, h * dk, dk);
    const Tensor kh = slice_cols(k, h * dk, dk);
    const Tensor vh = slice_cols(v, h * dk, dk);
    Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dk)));
    if (causal) scores = add(scores, mask);
    outs.push_back(matmul(softmax(scores), vh));
  }
  return matmul(concat_cols(std::span<const Tensor>(outs.data(), outs.size())), wo);
}

Tensor transformer_block(Tensor x, const BlockParams& p, int heads, bool causal) {
  using namespace ad;
  const Tensor attn_in = affine_ln(x, p.ln1_g, p.ln1_b);
  x = add(x, multi_head_attention(attn_in, attn_in, p.wq, p.wk, p.wv, p.wo, heads, causal));
  const Tensor ff_in = affine_ln(x, p.ln2_g, p.ln2_b);
  return add(x, feed_forward(ff_in, p.ff_w1, p.ff_b1, p.ff_w2, p.ff_b2));
}

Tensor positional_encoding(int len, int d) {
  std::vector<double> v(static_cast<size_t>(len) * d);
  for (int t = 0; t < len; ++t) {
    for (int i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -2.0 * (i / 2) / d);
      const double angle = t * freq;
      v[static_cast<size_t>(t) * d + i] = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::from({len, d}, std::move(v));
}

int argmax_row(const Tensor& logits, int row) {
  const int n = logits.cols();
  const double* p = logits.data() + static_cast<int64_t>(row) * n;
  int best = 0;
  for (int i = 1; i < n; ++i) {
    if (p[i] > p[best]) best = i;
  }
  return best;
}

DualModel::DualModel(const ModelConfig& cfg) : cfg_(cfg) { build_params(); }

DualModel::DualModel(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  build_params();
  init_params(rng);
}

Tensor DualModel::p(const std::string& name) const {
  const auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

void DualModel::build_params() {
  if (cfg_.vocab <= Vocabulary::kNumSpecials) {
    throw ConfigError("vocab must exceed the " + std::to_string(Vocabulary::kNumSpecials) +
                      " reserved ids");
  }
  if (cfg_.max_len < 1) throw ConfigError("max_len must be >= 1");
  auto add = [&](const std::string& name, std::vector<int> shape) {
    const int64_t n = static_cast<int64_t>(shape[0]) * shape[1];
    params_.emplace(name, Tensor::param(std::move(shape), std::vector<double>(n, 0.0)));
  };

  if (cfg_.arch == Arch::GruGru) {
    if (cfg_.hidden < 1) throw ConfigError("hidden must be >= 1");
    const int h = cfg_.hidden;
    add("emb.table", {cfg_.vocab, h});
    auto add_cell = [&](const std::string& prefix, int in_dim) {
      for (const char* gate : {"z", "r", "h"}) {
        add(prefix + ".wx" + gate, {in_dim, h});
        add(prefix + ".wh" + gate, {h, h});
        add(prefix + ".b" + gate, {1, h});
      }
    };
    add_cell("enc", h);
    for (const char* dec : {"dec_a", "dec_b"}) {
      add_cell(dec, 2 * h);  // previous embedding + conditioning vector
      add(std::string(dec) + ".wout", {h, cfg_.vocab});
      add(std::string(dec) + ".bout", {1, cfg_.vocab});
    }
  } else {
    if (cfg_.layers < 1 || cfg_.heads < 1) throw ConfigError("layers and heads must be >= 1");
    if (cfg_.d_model % cfg_.heads != 0) throw ConfigError("d_model must divide by heads");
    const int d = cfg_.d_model;
    add("emb.table", {cfg_.vocab, d});
    auto add_ln = [&](const std::string& prefix) {
      add(prefix + ".g", {1, d});
      add(prefix + ".b", {1, d});
    };
    auto add_attn = [&](const std::string& prefix) {
      for (const char* w : {"wq", "wk", "wv", "wo"}) add(prefix + "." + w, {d, d});
    };
    auto add_ff = [&](const std::string& prefix) {
      add(prefix + ".w1", {d, cfg_.ff});
      add(prefix + ".b1", {1, cfg_.ff});
      add(prefix + ".w2", {cfg_.ff, d});
      add(prefix + ".b2", {1, d});
    };
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string pre = "enc.l" + std::to_string(l);
      add_ln(pre + ".ln1");
      add_attn(pre);
      add_ln(pre + ".ln2");
      add_ff(pre + ".ff");
    }
    add_ln("enc.lnf");
    for (const char* dec : {"dec_a", "dec_b"}) {
      for (int l = 0; l < cfg_.layers; ++l) {
        const std::string pre = std::string(dec) + ".l" + std::to_string(l);
        add_ln(pre + ".ln1");
        add_attn(pre + ".self");
        add_ln(pre + ".ln2");
        add_attn(pre + ".cross");
        add_ln(pre + ".ln3");
        add_ff(pre + ".ff");
      }
      add_ln(std::string(dec) + ".lnf");
      add(std::string(dec) + ".wout", {d, cfg_.vocab});
      add(std::string(dec) + ".bout", {1, cfg_.vocab});
    }
  }
}

void DualModel::init_params(Rng& rng) {
  // Map order is name order, so the rng consumption is deterministic.
  for (auto& [name, t] : params_) {
    const std::string leaf = name.substr(name.rfind('.') + 1);
    if (leaf == "g") {
      std::fill(t.values().begin(), t.values().end(), ad::quantize_value(1.0));
      continue;
    }
    if (leaf[0] == 'b') continue;  // biases stay zero
    const double s = name == "emb.table" ? 0.1 : 1.0 / std::sqrt(static_cast<double>(t.rows()));
    for (double& v : t.values()) v = ad::quantize_value(rng.uniform(-s, s));
  }
}

std::string config_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["arch"] = arch_name(cfg.arch);
  j["vocab"] = cfg.vocab;
  j["hidden"] = cfg.hidden;
  j["d_model"] = cfg.d_model;
  j["ff"] = cfg.ff;
  j["layers"] = cfg.layers;
  j["heads"] = cfg.heads;
  j["max_len"] = cfg.max_len;
  j["gru_attention"] = cfg.gru_attention;
  return j.dump();
}

ModelConfig config_from_json(const std::string& json_text) {
  ModelConfig cfg;
  try {
    const auto j = nlohmann::json::parse(json_text);
    cfg.arch = arch_from_name(j.at("arch").get<std::string>());
    cfg.vocab = j.at("vocab").get<int>();
    cfg.hidden = j.at("hidden").get<int>();
    cfg.d_model = j.at("d_model").get<int>();
    cfg.ff = j.at("ff").get<int>();
    cfg.layers = j.at("layers").get<int>();
    cfg.heads = j.at("heads").get<int>();
    cfg.max_len = j.at("max_len").get<int>();
    cfg.gru_attention = j.at("gru_attention").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("not a model description: ") + e.what());
  }
  return cfg;
}

void DualModel::save(const std::string& path) const {
  auto j = nlohmann::json::parse(config_json(cfg_));
  j["kind"] = "dual_model";
  ad::Checkpoint ckpt;
  ckpt.meta_json = j.dump();
  ckpt.tensors = params_;
  ad::save_checkpoint(path, ckpt);
}

DualModel DualModel::load(const std::string& path) {
  const ad::Checkpoint ckpt = ad::load_checkpoint(path);
  ModelConfig cfg;
  try {
    cfg = config_from_json(ckpt.meta_json);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
  DualModel m(cfg);
  for (auto& [name, t] : m.params_) {
    const auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw DataError(path + ": missing tensor " + name);
    if (it->second.shape() != t.shape()) {
      throw DataError(path + ": tensor " + name + " has shape " + it->second.shape_str() +
                      ", expected " + t.shape_str());
    }
    t.values() = it->second.values();
  }
  if (ckpt.tensors.size() != m.params_.size()) {
    throw DataError(path + ": checkpoint holds tensors the model does not declare");
  }
  return m;
}

EncoderState DualModel::encode(const std::vector<int>& tokens) const {
  return encode_batch({tokens});
}

Tensor DualModel::transformer_encode_one(const std::vector<int>& tokens) const {
  using namespace ad;
  const int d = cfg_.d_model;
  Tensor x = embedding_gather(p("emb.table"), tokens);
  x = scale(x, std::sqrt(static_cast<double>(d)));
  x = add(x, positional_encoding(static_cast<int>(tokens.size()), d));
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string pre = "enc.l" + std::to_string(l);
    const BlockParams bp{p(pre + ".ln1.g"), p(pre + ".ln1.b"), p(pre + ".wq"),
                         p(pre + ".wk"),    p(pre + ".wv"),    p(pre + ".wo"),
                         p(pre + ".ln2.g"), p(pre + ".ln2.b"), p(pre + ".ff.w1"),
                         p(pre + ".ff.b1"), p(pre + ".ff.w2"), p(pre + ".ff.b2")};
    x = transformer_block(x, bp, cfg_.heads, false);
  }
  return affine_ln(x, p("enc.lnf.g"), p("enc.lnf.b"));
}

EncoderState DualModel::encode_batch(const std::vector<std::vector<int>>& seqs) const {
  using namespace ad;
  if (seqs.empty()) throw EmptyInput("encode: no sequences");
  size_t max_t = 0;
  for (const auto& s : seqs) {
    if (s.empty()) throw EmptyInput("encode: empty token sequence");
    if (static_cast<int>(s.size()) > cfg_.max_len) {
      throw TooLong("encode: " + std::to_string(s.size()) + " tokens exceeds max length " +
                    std::to_string(cfg_.max_len));
    }
    max_t = std::max(max_t, s.size());
  }

  EncoderState st;
  st.inputs = seqs;
  if (cfg_.arch == Arch::TransTrans) {
    std::vector<Tensor> pooled;
    for (const auto& s : seqs) {
      st.ctx.push_back(transformer_encode_one(s));
      pooled.push_back(mean_rows(st.ctx.back()));
    }
    st.summary = pooled.size() == 1
                     ? pooled[0]
                     : concat_rows(std::span<const Tensor>(pooled.data(), pooled.size()));
    return st;
  }

  const int b = static_cast<int>(seqs.size());
  Tensor h = Tensor::zeros({b, cfg_.hidden});
  for (size_t t = 0; t < max_t; ++t) {
    std::vector<int> ids(b, Vocabulary::kPad);
    std::vector<double> mask(b, 0.0);
    bool all_active = true;
    for (int i = 0; i < b; ++i) {
      if (t < seqs[i].size()) {
        ids[i] = seqs[i][t];
        mask[i] = 1.0;
      } else {
        all_active = false;
      }
    }
    const Tensor x = embedding_gather(p("emb.table"), ids);
    const Tensor hn = gru_step("enc", x, h);
    if (all_active) {
      h = hn;
    } else {
      // rows past their end keep their final hidden state
      std::vector<double> inv(b);
      for (int i = 0; i < b; ++i) inv[i] = 1.0 - mask[i];
      h = add(mul_colvec(hn, Tensor::from({b, 1}, mask)),
              mul_colvec(h, Tensor::from({b, 1}, std::move(inv))));
    }
    st.steps.push_back(h);
  }
  st.summary = h;
  return st;
}

Tensor DualModel::gru_step(const std::string& prefix, const Tensor& x, const Tensor& h) const {
  return gru_cell(x, h, p(prefix + ".wxz"), p(prefix + ".whz"), p(prefix + ".bz"),
                  p(prefix + ".wxr"), p(prefix + ".whr"), p(prefix + ".br"),
                  p(prefix + ".wxh"), p(prefix + ".whh"), p(prefix + ".bh"));
}

Tensor DualModel::attention_context(const EncoderState& state, const Tensor& h) const {
  using namespace ad;
  const int b = h.rows();
  const int s_len = static_cast<int>(state.steps.size());
  const Tensor ones = Tensor::full({cfg_.hidden, 1}, 1.0);
  std::vector<Tensor> cols;
  cols.reserve(s_len);
  for (int s = 0; s < s_len; ++s) {
    cols.push_back(matmul(mul(h, state.steps[s]), ones));  // row dots, (b x 1)
  }
  Tensor scores = concat_cols(std::span<const Tensor>(cols.data(), cols.size()));
  std::vector<double> mask(static_cast<size_t>(b) * s_len, 0.0);
  for (int i = 0; i < b; ++i) {
    for (int s = static_cast<int>(state.inputs[i].size()); s < s_len; ++s) {
      mask[static_cast<size_t>(i) * s_len + s] = -1e9;
    }
  }
  scores = add(scores, Tensor::from({b, s_len}, std::move(mask)));
  const Tensor alpha = softmax(scores);
  Tensor ctx;
  for (int s = 0; s < s_len; ++s) {
    const Tensor part = mul_colvec(state.steps[s], slice_cols(alpha, s, 1));
    ctx = s == 0 ? part : add(ctx, part);
  }
  return ctx;
}

Tensor DualModel::decoder_step_logits(const std::string& dec, const EncoderState& state,
                                      const std::vector<int>& prev_ids, Tensor& h) const {
  using namespace ad;
  const Tensor x = embedding_gather(p("emb.table"), prev_ids);
  const Tensor cond = cfg_.gru_attention ? attention_context(state, h) : state.summary;
  h = gru_step(dec, concat_cols(x, cond), h);
  return add_rowvec(matmul(h, p(dec + ".wout")), p(dec + ".bout"));
}

Tensor DualModel::transformer_decode_logits(const std::string& dec, const Tensor& ctx,
                                            const std::vector<int>& prefix) const {
  using namespace ad;
  const int d = cfg_.d_model;
  Tensor x = embedding_gather(p("emb.table"), prefix);
  x = scale(x, std::sqrt(static_cast<double>(d)));
  x = add(x, positional_encoding(static_cast<int>(prefix.size()), d));
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string pre = dec + ".l" + std::to_string(l);
    const Tensor sa_in = affine_ln(x, p(pre + ".ln1.g"), p(pre + ".ln1.b"));
    x = add(x, multi_head_attention(sa_in, sa_in, p(pre + ".self.wq"), p(pre + ".self.wk"),
                                    p(pre + ".self.wv"), p(pre + ".self.wo"), cfg_.heads,
                                    true));
    const Tensor ca_in = affine_ln(x, p(pre + ".ln2.g"), p(pre + ".ln2.b"));
    x = add(x, multi_head_attention(ca_in, ctx, p(pre + ".cross.wq"), p(pre + ".cross.wk"),
                                    p(pre + ".cross.wv"), p(pre + ".cross.wo"), cfg_.heads,
                                    false));
    const Tensor ff_in = affine_ln(x, p(pre + ".ln3.g"), p(pre + ".ln3.b"));
    x = add(x, feed_forward(ff_in, p(pre + ".ff.w1"), p(pre + ".ff.b1"), p(pre + ".ff.w2"),
                            p(pre + ".ff.b2")));
  }
  const Tensor last = slice_rows(x, x.rows() - 1, 1);
  const Tensor normed = affine_ln(last, p(dec + ".lnf.g"), p(dec + ".lnf.b"));
  return add_rowvec(matmul(normed, p(dec + ".wout")), p(dec + ".bout"));
}

std::vector<Tensor> DualModel::decode_teacher(const EncoderState& state, int decoder_id,
                                              const std::vector<int>& targets, double tf_ratio,
                                              Rng& rng) const {
  return decode_teacher_batch(state, decoder_id, {targets}, tf_ratio, rng);
}

std::vector<Tensor> DualModel::decode_teacher_batch(const EncoderState& state, int decoder_id,
                                                    const std::vector<std::vector<int>>& targets,
                                                    double tf_ratio, Rng& rng) const {
  using namespace ad;
  if (decoder_id != kDecoderA && decoder_id != kDecoderB) {
    throw UnknownDecoder("decoder id must be 0 (A) or 1 (B), got " + std::to_string(decoder_id));
  }
  const std::string dec = decoder_id == kDecoderA ? "dec_a" : "dec_b";
  const size_t b = state.inputs.size();
  if (targets.size() != b) {
    throw ShapeMismatch("decode_teacher: " + std::to_string(targets.size()) +
                        " targets for a batch of " + std::to_string(b));
  }
  size_t len = 0;
  for (const auto& t : targets) {
    if (t.empty()) throw EmptyInput("decode_teacher: empty target");
    len = std::max(len, t.size());
  }
  if (static_cast<int>(len) > cfg_.max_len) {
    throw TooLong("decode_teacher: target length " + std::to_string(len) +
                  " exceeds max length " + std::to_string(cfg_.max_len));
  }

  std::vector<Tensor> steps;
  steps.reserve(len);
  std::vector<int> prev(b, Vocabulary::kBos);
  std::vector<std::vector<int>> prefixes(b, std::vector<int>{Vocabulary::kBos});
  Tensor h = state.summary;
  for (size_t t = 0; t < len; ++t) {
    Tensor logits;
    if (cfg_.arch == Arch::GruGru) {
      logits = decoder_step_logits(dec, state, prev, h);
    } else {
      std::vector<Tensor> rows;
      rows.reserve(b);
      for (size_t i = 0; i < b; ++i) {
        rows.push_back(transformer_decode_logits(dec, state.ctx[i], prefixes[i]));
      }
      logits = rows.size() == 1
                   ? rows[0]
                   : concat_rows(std::span<const Tensor>(rows.data(), rows.size()));
    }
    steps.push_back(logits);
    if (t + 1 == len) break;
    const bool use_truth = rng.uniform() < tf_ratio;  // one draw per step
    for (size_t i = 0; i < b; ++i) {
      const int next = use_truth
                           ? (t < targets[i].size() ? targets[i][t] : Vocabulary::kPad)
                           : argmax_row(logits, static_cast<int>(i));
      prev[i] = next;
      prefixes[i].push_back(next);
    }
  }
  return steps;
}

GenerationResult DualModel::generate(const std::vector<int>& input, Direction dir) const {
  if (dir == Direction::ABA || dir == Direction::BAB) {
    const Direction first = dir == Direction::ABA ? Direction::AB : Direction::BA;
    const Direction second = dir == Direction::ABA ? Direction::BA : Direction::AB;
    const GenerationResult mid = generate(input, first);
    const bool has_content =
        std::any_of(mid.output.begin(), mid.output.end(),
                    [](int id) { return id >= Vocabulary::kNumSpecials; });
    if (!has_content) {
      throw DegenerateIntermediate(std::string("first pass of ") + direction_name(dir) +
                                   " produced only special tokens");
    }
    GenerationResult out = generate(mid.output, second);
    out.direction = dir;
    return out;
  }

  ad::NoTapeScope eval;
  const EncoderState st = encode(input);
  const bool to_text = dir == Direction::AA || dir == Direction::BA;
  const std::string dec = to_text ? "dec_a" : "dec_b";

  GenerationResult res;
  res.direction = dir;
  Tensor h = st.summary;
  std::vector<int> prev = {Vocabulary::kBos};
  std::vector<int> prefix = {Vocabulary::kBos};
  for (int t = 0; t < cfg_.max_len; ++t) {
    Tensor logits;
    if (cfg_.arch == Arch::GruGru) {
      logits = decoder_step_logits(dec, st, prev, h);
    } else {
      logits = transformer_decode_logits(dec, st.ctx[0], prefix);
    }
    const int next = argmax_row(logits, 0);
    res.output.push_back(next);
    if (next == Vocabulary::kEos) break;
    prev = {next};
    prefix.push_back(next);
  }
  res.truncated = res.output.back() != Vocabulary::kEos;
  return res;
}

}  // namespace pathtext::model
