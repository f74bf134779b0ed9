#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "finex/autograd.hpp"
#include "finex/rng.hpp"
#include "finex/tensor.hpp"
#include "finex/vocab.hpp"

namespace finex {

struct ParamTensor {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m, v;  // optimizer moments
  bool trainable = true;
};

inline ParamTensor make_param(const std::string& name, int rows, int cols) {
  ParamTensor p;
  p.name = name;
  p.value = Tensor::zeros(rows, cols);
  p.grad = Tensor::zeros(rows, cols);
  p.m = Tensor::zeros(rows, cols);
  p.v = Tensor::zeros(rows, cols);
  return p;
}

class ParamStore {
 public:
  ParamTensor& add(const std::string& name, int rows, int cols) {
    auto p = std::make_unique<ParamTensor>();
    p->name = name;
    p->value = Tensor::zeros(rows, cols);
    p->grad = Tensor::zeros(rows, cols);
    p->m = Tensor::zeros(rows, cols);
    p->v = Tensor::zeros(rows, cols);
    list_.push_back(std::move(p));
    return *list_.back();
  }

  std::vector<ParamTensor*> all() const {
    std::vector<ParamTensor*> out;
    out.reserve(list_.size());
    for (const auto& p : list_) out.push_back(p.get());
    return out;
  }

  ParamTensor* find(const std::string& name) const {
    for (const auto& p : list_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  void zero_grad() {
    for (const auto& p : list_) p->grad.setZero();
  }

  void set_trainable(bool t) {
    for (const auto& p : list_) p->trainable = t;
  }

  std::size_t count() const { return list_.size(); }

 private:
  std::vector<std::unique_ptr<ParamTensor>> list_;
};

// One tape plus a per-pass parameter cache so each ParamTensor appears as a
// single leaf regardless of how many passes share it.
struct TapeCtx {
  ad::Tape tape;
  std::unordered_map<ParamTensor*, ad::Tape::Var> leaves;

  ad::Tape::Var use(ParamTensor& p) {
    auto it = leaves.find(&p);
    if (it != leaves.end()) return it->second;
    ad::Tape::Var v = tape.leaf(p.value, p.trainable ? &p.grad : nullptr);
    leaves.emplace(&p, v);
    return v;
  }
};

struct ModelDims {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int max_len = 128;
  int vocab = 0;

  int d_ff() const { return 4 * d_model; }
  int d_head() const { return d_model / n_heads; }
};

namespace model_detail {

struct AttnParams {
  ParamTensor *Wq, *Wk, *Wv, *Wo;
  ParamTensor *bq, *bk, *bv, *bo;
};
struct LnParams {
  ParamTensor *g, *b;
};
struct FfnParams {
  ParamTensor *W1, *b1, *W2, *b2;
};
struct EncLayer {
  LnParams ln1;
  AttnParams attn;
  LnParams ln2;
  FfnParams ffn;
};
struct DecLayer {
  LnParams ln1;
  AttnParams self_attn;
  LnParams ln2;
  AttnParams cross_attn;
  LnParams ln3;
  FfnParams ffn;
};

}  // namespace model_detail

class NumericsError : public std::runtime_error {
 public:
  explicit NumericsError(const std::string& msg) : std::runtime_error(msg) {}
};

// Pre-LN transformer encoder-decoder with sinusoidal positions and the
// token embedding shared between encoder, decoder, and output projection.
class Seq2Seq {
 public:
  ModelDims dims;
  ParamStore store;
  ParamTensor* embed = nullptr;
  bool frozen = false;

  Seq2Seq() = default;
  Seq2Seq(const Seq2Seq&) = delete;
  Seq2Seq& operator=(const Seq2Seq&) = delete;
  Seq2Seq(Seq2Seq&&) = default;
  Seq2Seq& operator=(Seq2Seq&&) = default;

  void build(const ModelDims& d, std::uint64_t seed) {
    if (d.d_model % d.n_heads != 0)
      throw std::invalid_argument("d_model must be divisible by n_heads");
    if (d.vocab <= 0) throw std::invalid_argument("vocab size not set");
    dims = d;
    embed = &store.add("embed", d.vocab, d.d_model);
    for (int l = 0; l < d.n_layers; ++l) {
      std::string p = "enc" + std::to_string(l) + ".";
      model_detail::EncLayer lay;
      lay.ln1 = make_ln(p + "ln1");
      lay.attn = make_attn(p + "attn");
      lay.ln2 = make_ln(p + "ln2");
      lay.ffn = make_ffn(p + "ffn");
      enc_.push_back(lay);
    }
    for (int l = 0; l < d.n_layers; ++l) {
      std::string p = "dec" + std::to_string(l) + ".";
      model_detail::DecLayer lay;
      lay.ln1 = make_ln(p + "ln1");
      lay.self_attn = make_attn(p + "self");
      lay.ln2 = make_ln(p + "ln2");
      lay.cross_attn = make_attn(p + "cross");
      lay.ln3 = make_ln(p + "ln3");
      lay.ffn = make_ffn(p + "ffn");
      dec_.push_back(lay);
    }
    enc_final_ = make_ln("enc.final_ln");
    dec_final_ = make_ln("dec.final_ln");
    init_params(seed);
    build_pos_enc();
  }

  void freeze() {
    store.set_trainable(false);
    frozen = true;
  }

  // ---- tape passes ----

  struct EncOut {
    ad::Tape::Var h = ad::Tape::kNone;
    int len = 0;
  };
  struct DecOut {
    ad::Tape::Var probs = ad::Tape::kNone;   // [T x V] step distributions
    ad::Tape::Var hidden = ad::Tape::kNone;  // [T x d] final decoder states
  };

  ad::Tape::Var embed_ids(TapeCtx& ctx, const std::vector<int>& ids) const {
    check_len(static_cast<int>(ids.size()));
    auto& t = ctx.tape;
    auto E = ctx.use(*embed);
    auto x = t.rows_lookup(E, ids);
    x = t.scale(x, std::sqrt(static_cast<double>(dims.d_model)));
    return t.add(x, t.constant(pos_rows(static_cast<int>(ids.size()))));
  }

  // soft encoder input: rows already in embedding space (convex mixes of E)
  ad::Tape::Var embed_soft(TapeCtx& ctx, ad::Tape::Var h) const {
    auto& t = ctx.tape;
    int len = t.val(h).rows;
    check_len(len);
    auto x = t.scale(h, std::sqrt(static_cast<double>(dims.d_model)));
    return t.add(x, t.constant(pos_rows(len)));
  }

  EncOut encode_embedded(TapeCtx& ctx, ad::Tape::Var x, int len) const {
    auto& t = ctx.tape;
    for (const auto& lay : enc_) {
      auto h = ln(ctx, lay.ln1, x);
      x = t.add(x, attention(ctx, lay.attn, h, h, false));
      auto f = ln(ctx, lay.ln2, x);
      x = t.add(x, ffn(ctx, lay.ffn, f));
    }
    x = ln(ctx, enc_final_, x);
    return {x, len};
  }

  EncOut encode_ids(TapeCtx& ctx, const std::vector<int>& ids) const {
    return encode_embedded(ctx, embed_ids(ctx, ids), static_cast<int>(ids.size()));
  }

  EncOut encode_soft(TapeCtx& ctx, ad::Tape::Var soft) const {
    int len = ctx.tape.val(soft).rows;
    return encode_embedded(ctx, embed_soft(ctx, soft), len);
  }

  // teacher-forced decoder over target_with_eos; probs[t] = p(y_t | y_<t, S)
  DecOut decode_teacher(TapeCtx& ctx, const EncOut& enc,
                        const std::vector<int>& target_with_eos) const {
    auto& t = ctx.tape;
    std::vector<int> input;
    input.reserve(target_with_eos.size());
    input.push_back(Vocab::kBos);
    for (std::size_t i = 0; i + 1 < target_with_eos.size(); ++i)
      input.push_back(target_with_eos[i]);
    auto x = embed_ids(ctx, input);
    for (const auto& lay : dec_) {
      auto h = ln(ctx, lay.ln1, x);
      x = t.add(x, attention(ctx, lay.self_attn, h, h, true));
      auto c = ln(ctx, lay.ln2, x);
      x = t.add(x, attention(ctx, lay.cross_attn, c, enc.h, false));
      auto f = ln(ctx, lay.ln3, x);
      x = t.add(x, ffn(ctx, lay.ffn, f));
    }
    auto hidden = ln(ctx, dec_final_, x);
    auto logits = t.matmul_nt(hidden, ctx.use(*embed));
    auto probs = t.softmax_rows(logits);
    if (!t.val(probs).allFinite() || !t.val(hidden).allFinite())
      throw NumericsError("non-finite activations in decoder pass (target len " +
                          std::to_string(target_with_eos.size()) + ")");
    return {probs, hidden};
  }

  struct ForwardOut {
    EncOut enc;
    DecOut dec;
  };

  ForwardOut forward(TapeCtx& ctx, const std::vector<int>& src,
                     const std::vector<int>& target_with_eos) const {
    ForwardOut out;
    out.enc = encode_ids(ctx, src);
    out.dec = decode_teacher(ctx, out.enc, target_with_eos);
    return out;
  }

  // ---- inference access (used by the beam-search decoder) ----
  const std::vector<model_detail::EncLayer>& enc_layers() const { return enc_; }
  const std::vector<model_detail::DecLayer>& dec_layers() const { return dec_; }
  const model_detail::LnParams& enc_final() const { return enc_final_; }
  const model_detail::LnParams& dec_final() const { return dec_final_; }
  const Tensor& pos_encoding() const { return pos_enc_; }

 private:
  model_detail::LnParams make_ln(const std::string& name) {
    model_detail::LnParams p;
    p.g = &store.add(name + ".g", 1, dims.d_model);
    p.b = &store.add(name + ".b", 1, dims.d_model);
    return p;
  }
  model_detail::AttnParams make_attn(const std::string& name) {
    model_detail::AttnParams p;
    p.Wq = &store.add(name + ".Wq", dims.d_model, dims.d_model);
    p.Wk = &store.add(name + ".Wk", dims.d_model, dims.d_model);
    p.Wv = &store.add(name + ".Wv", dims.d_model, dims.d_model);
    p.Wo = &store.add(name + ".Wo", dims.d_model, dims.d_model);
    p.bq = &store.add(name + ".bq", 1, dims.d_model);
    p.bk = &store.add(name + ".bk", 1, dims.d_model);
    p.bv = &store.add(name + ".bv", 1, dims.d_model);
    p.bo = &store.add(name + ".bo", 1, dims.d_model);
    return p;
  }
  model_detail::FfnParams make_ffn(const std::string& name) {
    model_detail::FfnParams p;
    p.W1 = &store.add(name + ".W1", dims.d_model, dims.d_ff());
    p.b1 = &store.add(name + ".b1", 1, dims.d_ff());
    p.W2 = &store.add(name + ".W2", dims.d_ff(), dims.d_model);
    p.b2 = &store.add(name + ".b2", 1, dims.d_model);
    return p;
  }

  void init_params(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x11117));
    const double std_w = 0.05;
    for (ParamTensor* p : store.all()) {
      bool is_ln_gain = p->name.size() > 2 && p->name.rfind(".g") == p->name.size() - 2;
      bool is_bias = p->name.rfind(".b") == p->name.size() - 2 ||
                     p->name.rfind(".bq") == p->name.size() - 3 ||
                     p->name.rfind(".bk") == p->name.size() - 3 ||
                     p->name.rfind(".bv") == p->name.size() - 3 ||
                     p->name.rfind(".bo") == p->name.size() - 3 ||
                     p->name.rfind(".b1") == p->name.size() - 3 ||
                     p->name.rfind(".b2") == p->name.size() - 3;
      if (is_ln_gain) {
        std::fill(p->value.d.begin(), p->value.d.end(), 1.0);
      } else if (is_bias) {
        p->value.setZero();
      } else {
        for (double& v : p->value.d) v = rng.normal(0.0, std_w);
      }
    }
  }

  void build_pos_enc() {
    pos_enc_ = Tensor(dims.max_len, dims.d_model);
    for (int pos = 0; pos < dims.max_len; ++pos) {
      for (int i = 0; i < dims.d_model / 2; ++i) {
        double freq = std::pow(10000.0, -2.0 * i / dims.d_model);
        pos_enc_.at(pos, 2 * i) = std::sin(pos * freq);
        pos_enc_.at(pos, 2 * i + 1) = std::cos(pos * freq);
      }
    }
  }

  Tensor pos_rows(int len) const {
    Tensor out(len, dims.d_model);
    out.m() = pos_enc_.m().topRows(len);
    return out;
  }

  void check_len(int len) const {
    if (len > dims.max_len)
      throw std::invalid_argument("sequence length " + std::to_string(len) +
                                  " exceeds max_len " + std::to_string(dims.max_len));
  }

  ad::Tape::Var ln(TapeCtx& ctx, const model_detail::LnParams& p,
                   ad::Tape::Var x) const {
    return ctx.tape.layer_norm(x, ctx.use(*p.g), ctx.use(*p.b));
  }

  ad::Tape::Var ffn(TapeCtx& ctx, const model_detail::FfnParams& p,
                    ad::Tape::Var x) const {
    auto& t = ctx.tape;
    auto h = t.add_rowvec(t.matmul(x, ctx.use(*p.W1)), ctx.use(*p.b1));
    h = t.gelu(h);
    return t.add_rowvec(t.matmul(h, ctx.use(*p.W2)), ctx.use(*p.b2));
  }

  ad::Tape::Var attention(TapeCtx& ctx, const model_detail::AttnParams& p,
                          ad::Tape::Var xq, ad::Tape::Var xkv, bool causal) const {
    auto& t = ctx.tape;
    auto q = t.add_rowvec(t.matmul(xq, ctx.use(*p.Wq)), ctx.use(*p.bq));
    auto k = t.add_rowvec(t.matmul(xkv, ctx.use(*p.Wk)), ctx.use(*p.bk));
    auto v = t.add_rowvec(t.matmul(xkv, ctx.use(*p.Wv)), ctx.use(*p.bv));
    const int dh = dims.d_head();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<ad::Tape::Var> heads;
    heads.reserve(dims.n_heads);
    for (int h = 0; h < dims.n_heads; ++h) {
      auto qh = t.slice_cols(q, h * dh, dh);
      auto kh = t.slice_cols(k, h * dh, dh);
      auto vh = t.slice_cols(v, h * dh, dh);
      auto scores = t.scale(t.matmul_nt(qh, kh), inv_sqrt);
      auto probs = t.softmax_rows(scores, causal);
      heads.push_back(t.matmul(probs, vh));
    }
    auto cat = t.concat_cols(heads);
    return t.add_rowvec(t.matmul(cat, ctx.use(*p.Wo)), ctx.use(*p.bo));
  }

  std::vector<model_detail::EncLayer> enc_;
  std::vector<model_detail::DecLayer> dec_;
  model_detail::LnParams enc_final_;
  model_detail::LnParams dec_final_;
  Tensor pos_enc_;
};

// Mean cross-entropy over non-PAD positions, from step distributions.
inline ad::Tape::Var loss_gen(ad::Tape& tape, ad::Tape::Var probs,
                              const std::vector<int>& target_with_eos,
                              int pad_id = Vocab::kPad) {
  return tape.nll_mean(probs, target_with_eos, pad_id);
}

// Plain-value variant used by tests and diagnostics.
inline double loss_gen_value(const Tensor& probs, const std::vector<int>& targets,
                             int pad_id = Vocab::kPad) {
  double s = 0;
  long n = 0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] == pad_id) continue;
    s += -std::log(std::max(probs.at(static_cast<int>(t), targets[t]), 1e-300));
    n += 1;
  }
  if (n == 0) throw std::invalid_argument("loss_gen: no non-PAD positions");
  return s / static_cast<double>(n);
}

}  // namespace finex
