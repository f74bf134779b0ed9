#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "finex/model.hpp"

namespace finex {

namespace decode_detail {

constexpr double kLnEps = 1e-5;

inline Eigen::RowVectorXd layer_norm_row(const Eigen::RowVectorXd& x,
                                         const ParamTensor& g,
                                         const ParamTensor& b) {
  const int n = static_cast<int>(x.size());
  double mu = x.mean();
  double var = (x.array() - mu).square().sum() / n;
  double is = 1.0 / std::sqrt(var + kLnEps);
  Eigen::RowVectorXd out(n);
  for (int j = 0; j < n; ++j)
    out(j) = (x(j) - mu) * is * g.value.d[j] + b.value.d[j];
  return out;
}

inline EMat layer_norm_mat(const EMat& x, const ParamTensor& g,
                           const ParamTensor& b) {
  EMat out(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i)
    out.row(i) = layer_norm_row(x.row(i), g, b);
  return out;
}

inline double gelu1(double x) {
  constexpr double kC = 0.7978845608028654;
  constexpr double kA = 0.044715;
  return 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
}

inline Eigen::RowVectorXd affine(const Eigen::RowVectorXd& x,
                                 const ParamTensor& W, const ParamTensor& b) {
  return x * W.value.m() + Eigen::RowVectorXd::Map(b.value.d.data(), W.value.cols);
}

inline EMat affine_mat(const EMat& x, const ParamTensor& W, const ParamTensor& b) {
  EMat out = x * W.value.m();
  out.rowwise() += Eigen::RowVectorXd::Map(b.value.d.data(), W.value.cols);
  return out;
}

}  // namespace decode_detail

// Incremental decoder around a Seq2Seq model: encoder output and per-layer
// cross K/V are computed once, decoder steps append to self-attention caches.
class BeamDecoder {
 public:
  BeamDecoder(const Seq2Seq& model, const std::vector<int>& src)
      : model_(model), d_(model.dims.d_model) {
    enc_out_ = run_encoder(src);
    const auto& layers = model_.dec_layers();
    cross_k_.reserve(layers.size());
    cross_v_.reserve(layers.size());
    for (const auto& lay : layers) {
      cross_k_.push_back(decode_detail::affine_mat(enc_out_, *lay.cross_attn.Wk,
                                                   *lay.cross_attn.bk));
      cross_v_.push_back(decode_detail::affine_mat(enc_out_, *lay.cross_attn.Wv,
                                                   *lay.cross_attn.bv));
    }
  }

  struct Cache {
    // per layer, flattened row-major [len x d]
    std::vector<std::vector<double>> k, v;
    int len = 0;
  };

  Cache make_cache() const {
    Cache c;
    c.k.resize(model_.dec_layers().size());
    c.v.resize(model_.dec_layers().size());
    return c;
  }

  // Feeds one token (position = cache.len), returns log-probs over the vocab.
  Eigen::VectorXd step(Cache& cache, int token) const {
    using namespace decode_detail;
    const auto& dims = model_.dims;
    const int pos = cache.len;
    Eigen::RowVectorXd x =
        model_.embed->value.m().row(token) * std::sqrt(static_cast<double>(d_)) +
        model_.pos_encoding().m().row(pos);
    const auto& layers = model_.dec_layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& lay = layers[l];
      Eigen::RowVectorXd h = layer_norm_row(x, *lay.ln1.g, *lay.ln1.b);
      Eigen::RowVectorXd k_new = affine(h, *lay.self_attn.Wk, *lay.self_attn.bk);
      Eigen::RowVectorXd v_new = affine(h, *lay.self_attn.Wv, *lay.self_attn.bv);
      cache.k[l].insert(cache.k[l].end(), k_new.data(), k_new.data() + d_);
      cache.v[l].insert(cache.v[l].end(), v_new.data(), v_new.data() + d_);
      Eigen::RowVectorXd q = affine(h, *lay.self_attn.Wq, *lay.self_attn.bq);
      ECMap K(cache.k[l].data(), pos + 1, d_);
      ECMap V(cache.v[l].data(), pos + 1, d_);
      x += attn_row(q, K, V, lay.self_attn);
      Eigen::RowVectorXd c = layer_norm_row(x, *lay.ln2.g, *lay.ln2.b);
      Eigen::RowVectorXd qc = affine(c, *lay.cross_attn.Wq, *lay.cross_attn.bq);
      x += attn_row(qc, cross_k_[l], cross_v_[l], lay.cross_attn);
      Eigen::RowVectorXd f = layer_norm_row(x, *lay.ln3.g, *lay.ln3.b);
      Eigen::RowVectorXd ff1 = affine(f, *lay.ffn.W1, *lay.ffn.b1);
      for (int j = 0; j < ff1.size(); ++j) ff1(j) = gelu1(ff1(j));
      x += affine(ff1, *lay.ffn.W2, *lay.ffn.b2);
    }
    x = layer_norm_row(x, *model_.dec_final().g, *model_.dec_final().b);
    Eigen::VectorXd logits = model_.embed->value.m() * x.transpose();
    double mx = logits.maxCoeff();
    double lse = std::log((logits.array() - mx).exp().sum()) + mx;
    cache.len += 1;
    return logits.array() - lse;
  }

  const EMat& encoder_output() const { return enc_out_; }

 private:
  template <typename KMat, typename VMat>
  Eigen::RowVectorXd attn_row(const Eigen::RowVectorXd& q, const KMat& K,
                              const VMat& V,
                              const model_detail::AttnParams& p) const {
    const auto& dims = model_.dims;
    const int dh = dims.d_head();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    Eigen::RowVectorXd cat(d_);
    for (int h = 0; h < dims.n_heads; ++h) {
      Eigen::VectorXd scores =
          K.middleCols(h * dh, dh) * q.segment(h * dh, dh).transpose() * inv_sqrt;
      double mx = scores.maxCoeff();
      Eigen::VectorXd w = (scores.array() - mx).exp();
      w /= w.sum();
      cat.segment(h * dh, dh) = w.transpose() * V.middleCols(h * dh, dh);
    }
    return decode_detail::affine(cat, *p.Wo, *p.bo);
  }

  EMat run_encoder(const std::vector<int>& src) const {
    using namespace decode_detail;
    const auto& dims = model_.dims;
    const int S = static_cast<int>(src.size());
    EMat x(S, d_);
    for (int i = 0; i < S; ++i)
      x.row(i) = model_.embed->value.m().row(src[i]) *
                     std::sqrt(static_cast<double>(d_)) +
                 model_.pos_encoding().m().row(i);
    for (const auto& lay : model_.enc_layers()) {
      EMat h = layer_norm_mat(x, *lay.ln1.g, *lay.ln1.b);
      // full self-attention
      EMat q = affine_mat(h, *lay.attn.Wq, *lay.attn.bq);
      EMat k = affine_mat(h, *lay.attn.Wk, *lay.attn.bk);
      EMat v = affine_mat(h, *lay.attn.Wv, *lay.attn.bv);
      const int dh = dims.d_head();
      const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
      EMat cat(S, d_);
      for (int hh = 0; hh < dims.n_heads; ++hh) {
        EMat scores = q.middleCols(hh * dh, dh) *
                      k.middleCols(hh * dh, dh).transpose() * inv_sqrt;
        for (int i = 0; i < S; ++i) {
          double mx = scores.row(i).maxCoeff();
          Eigen::RowVectorXd w = (scores.row(i).array() - mx).exp();
          w /= w.sum();
          cat.block(i, hh * dh, 1, dh) = w * v.middleCols(hh * dh, dh);
        }
      }
      x += affine_mat(cat, *lay.attn.Wo, *lay.attn.bo);
      EMat f = layer_norm_mat(x, *lay.ln2.g, *lay.ln2.b);
      EMat ff1 = affine_mat(f, *lay.ffn.W1, *lay.ffn.b1);
      for (int i = 0; i < ff1.rows(); ++i)
        for (int j = 0; j < ff1.cols(); ++j) ff1(i, j) = gelu1(ff1(i, j));
      x += affine_mat(ff1, *lay.ffn.W2, *lay.ffn.b2);
    }
    return layer_norm_mat(x, *model_.enc_final().g, *model_.enc_final().b);
  }

  const Seq2Seq& model_;
  int d_;
  EMat enc_out_;
  std::vector<EMat> cross_k_, cross_v_;
};

// Beam search over completed (EOS-terminated) hypotheses, ranked by raw
// cumulative log-probability. Ties break toward the lexicographically
// smaller token sequence, which realizes lower-token-id tie-breaking.
inline std::vector<int> generate(const Seq2Seq& model, const std::vector<int>& src,
                                 int beam, int max_len) {
  if (beam < 1) throw std::invalid_argument("beam must be >= 1");
  BeamDecoder dec(model, src);
  const int limit = std::min(max_len, model.dims.max_len - 1);

  struct Hyp {
    std::vector<int> toks;
    double logp = 0.0;
    BeamDecoder::Cache cache;
  };
  auto better = [](double lp_a, const std::vector<int>& a, double lp_b,
                   const std::vector<int>& b) {
    if (lp_a != lp_b) return lp_a > lp_b;
    return a < b;
  };

  std::vector<Hyp> live(1);
  live[0].cache = dec.make_cache();
  std::vector<int> best_done;
  double best_done_lp = -std::numeric_limits<double>::infinity();
  bool have_done = false;

  // step `limit` is a completion-only pass: hypotheses at the length cap may
  // still finish with EOS, but cannot grow
  for (int step = 0; step <= limit && !live.empty(); ++step) {
    const bool eos_only = step == limit;
    struct Cand {
      int parent;
      int tok;
      double logp;
    };
    std::vector<Cand> cands;
    std::vector<Eigen::VectorXd> rows(live.size());
    for (std::size_t i = 0; i < live.size(); ++i) {
      int last = live[i].toks.empty() ? Vocab::kBos : live[i].toks.back();
      rows[i] = dec.step(live[i].cache, last);
      if (eos_only) {
        cands.push_back({static_cast<int>(i), Vocab::kEos,
                         live[i].logp + rows[i](Vocab::kEos)});
        continue;
      }
      for (int v = 0; v < rows[i].size(); ++v)
        cands.push_back({static_cast<int>(i), v, live[i].logp + rows[i](v)});
    }
    std::sort(cands.begin(), cands.end(), [&](const Cand& a, const Cand& b) {
      if (a.logp != b.logp) return a.logp > b.logp;
      // lexicographic comparison of the full candidate sequences
      const auto& pa = live[a.parent].toks;
      const auto& pb = live[b.parent].toks;
      std::size_t n = std::min(pa.size(), pb.size());
      for (std::size_t i = 0; i < n; ++i)
        if (pa[i] != pb[i]) return pa[i] < pb[i];
      if (pa.size() != pb.size()) return pa.size() < pb.size();
      return a.tok < b.tok;
    });

    std::vector<Hyp> next;
    for (const Cand& c : cands) {
      if (static_cast<int>(next.size()) >= beam) break;
      if (c.tok == Vocab::kEos) {
        if (!have_done || better(c.logp, live[c.parent].toks, best_done_lp, best_done)) {
          best_done = live[c.parent].toks;
          best_done_lp = c.logp;
          have_done = true;
        }
        continue;
      }
      Hyp h;
      h.toks = live[c.parent].toks;
      h.toks.push_back(c.tok);
      h.logp = c.logp;
      h.cache = live[c.parent].cache;
      next.push_back(std::move(h));
    }
    live = std::move(next);
    // cumulative log-probs only decrease, so a finished hypothesis at least
    // as good as every live one is final
    if (have_done) {
      bool prune = true;
      for (const auto& h : live)
        if (h.logp > best_done_lp) {
          prune = false;
          break;
        }
      if (prune) break;
    }
  }
  if (have_done) return best_done;
  // truncation: best partial hypothesis
  if (live.empty()) return {};
  const Hyp* best = &live[0];
  for (const auto& h : live)
    if (better(h.logp, h.toks, best->logp, best->toks)) best = &h;
  return best->toks;
}

// Cumulative log-probability of an EOS-terminated target under the model;
// used by tests to compare beam widths.
inline double sequence_logprob(const Seq2Seq& model, const std::vector<int>& src,
                               const std::vector<int>& target_tokens) {
  BeamDecoder dec(model, src);
  auto cache = dec.make_cache();
  double lp = 0.0;
  int prev = Vocab::kBos;
  for (int tok : target_tokens) {
    Eigen::VectorXd row = dec.step(cache, prev);
    lp += row(tok);
    prev = tok;
  }
  Eigen::VectorXd row = dec.step(cache, prev);
  lp += row(Vocab::kEos);
  return lp;
}

}  // namespace finex
