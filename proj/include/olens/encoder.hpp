#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "olens/error.hpp"
#include "olens/rng.hpp"
#include "olens/tensor.hpp"
#include "olens/tokenizer.hpp"

// Transformer encoder with two structural variants and three attachable heads.
// Variant A: segment embeddings + static MLM masking. Variant B: no segment
// table + dynamic masking. Residual ordering is post-layer-norm.

namespace olens {

enum class Variant { A, B };
enum class HeadKind { None, Mlm, Regression, Classification };
enum class MaskingPolicy { Static, Dynamic };

inline const char* to_string(Variant v) { return v == Variant::A ? "A" : "B"; }
inline const char* to_string(HeadKind k) {
  switch (k) {
    case HeadKind::None: return "none";
    case HeadKind::Mlm: return "mlm";
    case HeadKind::Regression: return "regression";
    case HeadKind::Classification: return "classification";
  }
  return "none";
}
inline const char* to_string(MaskingPolicy p) {
  return p == MaskingPolicy::Static ? "static" : "dynamic";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "A") return Variant::A;
  if (s == "B") return Variant::B;
  raise(ErrorKind::Value, "unknown variant '" + s + "' (expected A or B)");
}
inline HeadKind head_from_string(const std::string& s) {
  if (s == "none") return HeadKind::None;
  if (s == "mlm") return HeadKind::Mlm;
  if (s == "regression") return HeadKind::Regression;
  if (s == "classification") return HeadKind::Classification;
  raise(ErrorKind::Value, "unknown head kind '" + s + "'");
}
inline MaskingPolicy masking_from_string(const std::string& s) {
  if (s == "static") return MaskingPolicy::Static;
  if (s == "dynamic") return MaskingPolicy::Dynamic;
  raise(ErrorKind::Value, "unknown masking policy '" + s + "'");
}

struct EncoderConfig {
  Variant variant = Variant::A;
  int hidden = 64;
  int layers = 2;
  int heads = 4;
  int ffn = 128;
  int vocab = 2000;
  int max_positions = 128;
  double dropout = 0.1;
  bool use_segment_embeddings = true;
  MaskingPolicy masking = MaskingPolicy::Static;

  void validate() const {
    if (hidden < 1 || layers < 1 || heads < 1 || ffn < 1 || vocab < 1 || max_positions < 1)
      raise(ErrorKind::Config, "encoder config: all dimensions must be >= 1");
    if (hidden % heads != 0)
      raise(ErrorKind::Config, "encoder config: hidden " + std::to_string(hidden) +
                                   " not divisible by heads " + std::to_string(heads));
    if (dropout < 0.0 || dropout >= 1.0)
      raise(ErrorKind::Config, "encoder config: dropout must be in [0,1)");
    if (vocab < kNumSpecials)
      raise(ErrorKind::Config, "encoder config: vocab smaller than reserved tokens");
  }

  static EncoderConfig for_variant(Variant v, int hidden = 64, int layers = 2, int heads = 4,
                                   int ffn = 128, int vocab = 2000, double dropout = 0.1) {
    EncoderConfig c;
    c.variant = v;
    c.hidden = hidden;
    c.layers = layers;
    c.heads = heads;
    c.ffn = ffn;
    c.vocab = vocab;
    c.dropout = dropout;
    c.use_segment_embeddings = (v == Variant::A);
    c.masking = (v == Variant::A) ? MaskingPolicy::Static : MaskingPolicy::Dynamic;
    c.validate();
    return c;
  }
};

template <class Real>
struct Model {
  EncoderConfig config;
  HeadKind head = HeadKind::None;

  Tensor<Real> tok_emb, pos_emb, seg_emb;
  Tensor<Real> emb_ln_gain, emb_ln_bias;
  struct Layer {
    Tensor<Real> wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor<Real> ln1_gain, ln1_bias;
    Tensor<Real> w1, b1, w2, b2;
    Tensor<Real> ln2_gain, ln2_bias;
  };
  std::vector<Layer> layers;
  Tensor<Real> head_w, head_b;

  using NamedTensor = std::pair<std::string, Tensor<Real>>;

  // Canonical parameter order: embeddings, per-layer weights, head. Checkpoint
  // manifests, optimizer state and hashes all follow this order.
  std::vector<NamedTensor> encoder_params() const {
    std::vector<NamedTensor> out;
    out.emplace_back("tok_emb", tok_emb);
    out.emplace_back("pos_emb", pos_emb);
    if (config.use_segment_embeddings) out.emplace_back("seg_emb", seg_emb);
    out.emplace_back("emb_ln_gain", emb_ln_gain);
    out.emplace_back("emb_ln_bias", emb_ln_bias);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      const std::string p = "layer" + std::to_string(i) + ".";
      out.emplace_back(p + "wq", l.wq);
      out.emplace_back(p + "bq", l.bq);
      out.emplace_back(p + "wk", l.wk);
      out.emplace_back(p + "bk", l.bk);
      out.emplace_back(p + "wv", l.wv);
      out.emplace_back(p + "bv", l.bv);
      out.emplace_back(p + "wo", l.wo);
      out.emplace_back(p + "bo", l.bo);
      out.emplace_back(p + "ln1_gain", l.ln1_gain);
      out.emplace_back(p + "ln1_bias", l.ln1_bias);
      out.emplace_back(p + "w1", l.w1);
      out.emplace_back(p + "b1", l.b1);
      out.emplace_back(p + "w2", l.w2);
      out.emplace_back(p + "b2", l.b2);
      out.emplace_back(p + "ln2_gain", l.ln2_gain);
      out.emplace_back(p + "ln2_bias", l.ln2_bias);
    }
    return out;
  }

  std::vector<NamedTensor> params() const {
    auto out = encoder_params();
    if (head != HeadKind::None) {
      out.emplace_back("head.w", head_w);
      out.emplace_back("head.b", head_b);
    }
    return out;
  }

  void set_requires_grad(bool b) {
    for (auto& [name, t] : params()) t.set_requires_grad(b);
  }

  Model clone() const {
    Model m;
    m.config = config;
    m.head = head;
    auto copy = [](const Tensor<Real>& t) {
      if (!t.valid()) return Tensor<Real>();
      return Tensor<Real>::from(t.shape(),
                                std::vector<Real>(t.values().begin(), t.values().end()),
                                t.requires_grad());
    };
    m.tok_emb = copy(tok_emb);
    m.pos_emb = copy(pos_emb);
    m.seg_emb = copy(seg_emb);
    m.emb_ln_gain = copy(emb_ln_gain);
    m.emb_ln_bias = copy(emb_ln_bias);
    for (const auto& l : layers)
      m.layers.push_back({copy(l.wq), copy(l.bq), copy(l.wk), copy(l.bk), copy(l.wv),
                          copy(l.bv), copy(l.wo), copy(l.bo), copy(l.ln1_gain),
                          copy(l.ln1_bias), copy(l.w1), copy(l.b1), copy(l.w2), copy(l.b2),
                          copy(l.ln2_gain), copy(l.ln2_bias)});
    m.head_w = copy(head_w);
    m.head_b = copy(head_b);
    return m;
  }
};

// Closed-form parameter count for a config + head.
inline long long param_count(const EncoderConfig& c, HeadKind head) {
  long long h = c.hidden, f = c.ffn, v = c.vocab, p = c.max_positions;
  long long n = v * h + p * h + (c.use_segment_embeddings ? 2 * h : 0) + 2 * h;
  n += c.layers * (4 * (h * h + h) + 2 * h + (h * f + f) + (f * h + h) + 2 * h);
  switch (head) {
    case HeadKind::None: break;
    case HeadKind::Mlm: n += h * v + v; break;
    case HeadKind::Regression: n += h + 1; break;
    case HeadKind::Classification: n += 2 * h + 2; break;
  }
  return n;
}

namespace detail {

// Every weight draws from its own labeled fork, so init is independent of
// parameter enumeration order.
template <class Real>
Tensor<Real> init_weight(std::vector<int> shape, const RngStream& rng, const std::string& name) {
  RngStream s = rng.fork("init:" + name);
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<Real>(s.next_trunc_normal(0.02));
  return Tensor<Real>::from(std::move(shape), std::move(v), true);
}

template <class Real>
Tensor<Real> init_const(std::vector<int> shape, Real value) {
  return Tensor<Real>::filled(std::move(shape), value, true);
}

}  // namespace detail

template <class Real>
void attach_head(Model<Real>& m, HeadKind kind, const RngStream& rng) {
  m.head = kind;
  const int h = m.config.hidden;
  switch (kind) {
    case HeadKind::None:
      m.head_w = Tensor<Real>();
      m.head_b = Tensor<Real>();
      break;
    case HeadKind::Mlm:
      m.head_w = detail::init_weight<Real>({h, m.config.vocab}, rng, "head.w");
      m.head_b = detail::init_const<Real>({m.config.vocab}, Real(0));
      break;
    case HeadKind::Regression:
      m.head_w = detail::init_weight<Real>({h, 1}, rng, "head.w");
      m.head_b = detail::init_const<Real>({1}, Real(0));
      break;
    case HeadKind::Classification:
      m.head_w = detail::init_weight<Real>({h, 2}, rng, "head.w");
      m.head_b = detail::init_const<Real>({2}, Real(0));
      break;
  }
}

template <class Real>
Model<Real> init_model(const EncoderConfig& config, const RngStream& rng,
                       HeadKind head = HeadKind::None) {
  config.validate();
  Model<Real> m;
  m.config = config;
  const int h = config.hidden;
  m.tok_emb = detail::init_weight<Real>({config.vocab, h}, rng, "tok_emb");
  m.pos_emb = detail::init_weight<Real>({config.max_positions, h}, rng, "pos_emb");
  if (config.use_segment_embeddings)
    m.seg_emb = detail::init_weight<Real>({2, h}, rng, "seg_emb");
  m.emb_ln_gain = detail::init_const<Real>({h}, Real(1));
  m.emb_ln_bias = detail::init_const<Real>({h}, Real(0));
  for (int i = 0; i < config.layers; ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    typename Model<Real>::Layer l;
    l.wq = detail::init_weight<Real>({h, h}, rng, p + "wq");
    l.bq = detail::init_const<Real>({h}, Real(0));
    l.wk = detail::init_weight<Real>({h, h}, rng, p + "wk");
    l.bk = detail::init_const<Real>({h}, Real(0));
    l.wv = detail::init_weight<Real>({h, h}, rng, p + "wv");
    l.bv = detail::init_const<Real>({h}, Real(0));
    l.wo = detail::init_weight<Real>({h, h}, rng, p + "wo");
    l.bo = detail::init_const<Real>({h}, Real(0));
    l.ln1_gain = detail::init_const<Real>({h}, Real(1));
    l.ln1_bias = detail::init_const<Real>({h}, Real(0));
    l.w1 = detail::init_weight<Real>({h, config.ffn}, rng, p + "w1");
    l.b1 = detail::init_const<Real>({config.ffn}, Real(0));
    l.w2 = detail::init_weight<Real>({config.ffn, h}, rng, p + "w2");
    l.b2 = detail::init_const<Real>({h}, Real(0));
    l.ln2_gain = detail::init_const<Real>({h}, Real(1));
    l.ln2_bias = detail::init_const<Real>({h}, Real(0));
    m.layers.push_back(std::move(l));
  }
  attach_head(m, head, rng);
  return m;
}

// Encoder weights are copied bit-exactly; the head is reinitialized for the
// new kind, except classification -> classification, which keeps the head so
// chained stages continue training it.
template <class Real>
Model<Real> swap_head(const Model<Real>& m, HeadKind new_kind, const RngStream& rng) {
  Model<Real> out = m.clone();
  if (m.head == HeadKind::Classification && new_kind == HeadKind::Classification) return out;
  attach_head(out, new_kind, rng);
  return out;
}

// Attention probabilities captured during a forward pass: [layer][head], each
// real_len x real_len over the non-PAD prefix.
template <class Real>
struct ForwardTrace {
  int real_len = 0;
  std::vector<std::vector<Tensor<Real>>> attention;
};

// Full max_positions x max_positions attention view; PAD rows/columns are zero.
template <class Real>
std::vector<Real> attention_padded(const ForwardTrace<Real>& trace, int layer, int head,
                                   int max_positions) {
  const auto& probs =
      trace.attention[static_cast<std::size_t>(layer)][static_cast<std::size_t>(head)];
  std::vector<Real> out(static_cast<std::size_t>(max_positions) * max_positions, Real(0));
  for (int i = 0; i < trace.real_len; ++i)
    for (int j = 0; j < trace.real_len; ++j)
      out[static_cast<std::size_t>(i) * max_positions + j] = probs.at(i, j);
  return out;
}

// Hidden states over the non-PAD prefix (real_len x H). PAD positions carry no
// information for any consumer (attention to PAD is masked out and heads read
// real positions only), so they are simply not computed; the padded view
// appends zero rows.
template <class Real>
Tensor<Real> encode_prefix(const Model<Real>& m, const EncodedSequence& seq, Mode mode,
                           RngStream drop_rng, ForwardTrace<Real>* trace = nullptr) {
  const auto& cfg = m.config;
  if (seq.length() != cfg.max_positions)
    raise(ErrorKind::Shape, "encode: sequence length " + std::to_string(seq.length()) +
                                " != max positions " + std::to_string(cfg.max_positions));
  const int real = seq.real_length();
  if (real < 1) raise(ErrorKind::Contract, "encode: empty sequence");
  for (int i = 0; i < real; ++i) {
    if (seq.ids[static_cast<std::size_t>(i)] >= cfg.vocab ||
        seq.ids[static_cast<std::size_t>(i)] < 0)
      raise(ErrorKind::Value,
            "encode: token id " + std::to_string(seq.ids[static_cast<std::size_t>(i)]) +
                " outside vocabulary of size " + std::to_string(cfg.vocab));
    if (seq.attention_mask[static_cast<std::size_t>(i)] != 1)
      raise(ErrorKind::Contract, "encode: attention mask must be a contiguous prefix of 1s");
  }

  std::vector<int> ids(seq.ids.begin(), seq.ids.begin() + real);
  std::vector<int> positions(static_cast<std::size_t>(real));
  for (int i = 0; i < real; ++i) positions[static_cast<std::size_t>(i)] = i;

  auto x = add(embedding(m.tok_emb, ids), embedding(m.pos_emb, positions));
  if (cfg.use_segment_embeddings) {
    std::vector<int> segs(seq.segment_ids.begin(), seq.segment_ids.begin() + real);
    x = add(x, embedding(m.seg_emb, segs));
  }
  x = layer_norm(x, m.emb_ln_gain, m.emb_ln_bias, Real(1e-12));
  x = dropout(x, cfg.dropout, mode, drop_rng);

  const int nh = cfg.heads;
  const int hd = cfg.hidden / nh;
  const Real inv_sqrt_d = Real(1) / std::sqrt(static_cast<Real>(hd));
  if (trace) {
    trace->real_len = real;
    trace->attention.assign(static_cast<std::size_t>(cfg.layers), {});
  }

  for (int li = 0; li < cfg.layers; ++li) {
    const auto& l = m.layers[static_cast<std::size_t>(li)];
    auto q = add_bias(matmul(x, l.wq), l.bq);
    auto k = add_bias(matmul(x, l.wk), l.bk);
    auto v = add_bias(matmul(x, l.wv), l.bv);
    std::vector<Tensor<Real>> ctx;
    ctx.reserve(static_cast<std::size_t>(nh));
    for (int hi = 0; hi < nh; ++hi) {
      auto qh = slice_cols(q, hi * hd, hd);
      auto kh = slice_cols(k, hi * hd, hd);
      auto vh = slice_cols(v, hi * hd, hd);
      auto scores = scale(matmul_nt(qh, kh), inv_sqrt_d);
      auto probs = softmax(scores, -1);
      if (trace) trace->attention[static_cast<std::size_t>(li)].push_back(probs);
      probs = dropout(probs, cfg.dropout, mode, drop_rng);
      ctx.push_back(matmul(probs, vh));
    }
    auto attn = add_bias(matmul(concat(ctx, 1), l.wo), l.bo);
    attn = dropout(attn, cfg.dropout, mode, drop_rng);
    x = layer_norm(add(x, attn), l.ln1_gain, l.ln1_bias, Real(1e-12));
    auto ffn = add_bias(matmul(gelu(add_bias(matmul(x, l.w1), l.b1)), l.w2), l.b2);
    ffn = dropout(ffn, cfg.dropout, mode, drop_rng);
    x = layer_norm(add(x, ffn), l.ln2_gain, l.ln2_bias, Real(1e-12));
  }
  return x;
}

// Padded public view: max_positions x H with zero rows at PAD positions.
template <class Real>
Tensor<Real> encode_sequence(const Model<Real>& m, const EncodedSequence& seq,
                             Mode mode = Mode::Eval, RngStream drop_rng = RngStream(0),
                             ForwardTrace<Real>* trace = nullptr) {
  return pad_rows(encode_prefix(m, seq, mode, drop_rng, trace), m.config.max_positions);
}

// Final hidden state at the CLS position (row 0).
template <class Real>
Tensor<Real> sentence_representation(const Tensor<Real>& hidden) {
  return row(hidden, 0);
}

template <class Real>
void require_head(const Model<Real>& m, HeadKind kind, const char* op) {
  if (m.head != kind)
    raise(ErrorKind::Contract, std::string(op) + ": model head is " + to_string(m.head) +
                                   ", expected " + to_string(kind));
}

// Vocabulary logits at every hidden row (untied projection H -> V).
template <class Real>
Tensor<Real> mlm_logits(const Model<Real>& m, const Tensor<Real>& hidden) {
  require_head(m, HeadKind::Mlm, "mlm_logits");
  return add_bias(matmul(hidden, m.head_w), m.head_b);
}

// Same projection restricted to selected rows; training uses this so PAD and
// unmasked positions never enter the loss.
template <class Real>
Tensor<Real> mlm_logits_at(const Model<Real>& m, const Tensor<Real>& hidden,
                           const std::vector<int>& rows) {
  require_head(m, HeadKind::Mlm, "mlm_logits");
  return add_bias(matmul(take_rows(hidden, rows), m.head_w), m.head_b);
}

// sigmoid(w . rep + b), scalar in (0,1).
template <class Real>
Tensor<Real> regress(const Model<Real>& m, const Tensor<Real>& rep) {
  require_head(m, HeadKind::Regression, "regress");
  return sigmoid(affine(rep, m.head_w, m.head_b));
}

// Two logits; class 0 = NOT, class 1 = OFF.
template <class Real>
Tensor<Real> classify(const Model<Real>& m, const Tensor<Real>& rep) {
  require_head(m, HeadKind::Classification, "classify");
  return affine(rep, m.head_w, m.head_b);
}

// Argmax with ties resolved to NOT (class 0).
template <class Real>
int predicted_label(const Tensor<Real>& logits) {
  if (logits.numel() != 2) raise(ErrorKind::Shape, "predicted_label: expected 2 logits");
  return logits.values()[1] > logits.values()[0] ? 1 : 0;
}

using ModelF = Model<float>;
using ModelD = Model<double>;

}  // namespace olens
