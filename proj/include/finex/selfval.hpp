#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "finex/config.hpp"
#include "finex/decode.hpp"
#include "finex/model.hpp"
#include "finex/optim.hpp"
#include "finex/rng.hpp"
#include "finex/vocab.hpp"

namespace finex {

constexpr double kGumbelLogFloor = 1e-12;

// Relaxed categorical sample per step:
//   softmax((log max(p, floor) + g) / tau_g),  g ~ Gumbel(0,1) iid.
// Differentiable in the probabilities; the noise tensor is a constant drawn
// from the caller's seeded stream.
inline ad::Tape::Var gumbel_softmax(ad::Tape& tape, ad::Tape::Var probs,
                                    double tau_g, Rng& noise) {
  if (tau_g <= 0) throw std::invalid_argument("gumbel_softmax: tau_g must be > 0");
  const Tensor& p = tape.val(probs);
  Tensor g(p.rows, p.cols);
  for (double& v : g.d) v = noise.gumbel();
  auto logp = tape.log_clamped(probs, kGumbelLogFloor);
  auto pert = tape.add(logp, tape.constant(std::move(g)));
  return tape.softmax_rows(tape.scale(pert, 1.0 / tau_g));
}

// Plain-value variant for statistical tests: one relaxed sample row.
inline std::vector<double> gumbel_softmax_value(const std::vector<double>& probs,
                                                double tau_g, Rng& noise) {
  std::vector<double> z(probs.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < probs.size(); ++i) {
    z[i] = (std::log(std::max(probs[i], kGumbelLogFloor)) + noise.gumbel()) / tau_g;
    mx = std::max(mx, z[i]);
  }
  double sum = 0;
  for (double& v : z) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : z) v /= sum;
  return z;
}

// H_t = sample_t . E_v  (convex combination of embedding rows).
inline ad::Tape::Var soft_embed(TapeCtx& ctx, ad::Tape::Var sample,
                                ParamTensor& embedding) {
  if (ctx.tape.val(sample).cols != embedding.value.rows)
    throw std::invalid_argument("soft_embed: sample width != vocab size");
  return ctx.tape.matmul(sample, ctx.use(embedding));
}

// Reconstruction loss: teacher-forced cross-entropy of the source sentence
// given soft input embeddings H. The validator must be frozen; gradients
// reach the extractor only through H.
inline ad::Tape::Var loss_recon(TapeCtx& ctx, const Seq2Seq& validator,
                                ad::Tape::Var soft_h,
                                const std::vector<int>& sentence_with_eos) {
  if (!validator.frozen)
    throw std::invalid_argument("loss_recon: validator is not frozen");
  auto enc = validator.encode_soft(ctx, soft_h);
  auto dec = validator.decode_teacher(ctx, enc, sentence_with_eos);
  auto loss = loss_gen(ctx.tape, dec.probs, sentence_with_eos);
  if (!std::isfinite(ctx.tape.val(loss).item()))
    throw NumericsError("non-finite reconstruction loss");
  return loss;
}

struct PretrainStats {
  int epochs_run = 0;
  double best_loss = 0;
  int best_epoch = -1;
  double exact_reconstruction_rate = 0;  // greedy decode on the train pairs
  std::vector<double> epoch_losses;
};

struct PretrainResult {
  Seq2Seq validator;
  PretrainStats stats;
};

namespace selfval_detail {

struct Pair {
  std::vector<int> lin_ids;       // linearized gold entities (encoder side)
  std::vector<int> sent_with_eos; // sentence tokens + EOS (decoder side)
  std::string id;
};

inline std::vector<Pair> make_pairs(const Corpus& corpus, const Vocab& vocab) {
  std::vector<Pair> pairs;
  for (const auto& s : corpus.sentences) {
    if (s.mentions.empty()) continue;  // nothing to reconstruct from
    Pair p;
    p.lin_ids = encode_entities(entities_of(s), vocab);
    p.sent_with_eos = encode_tokens(s.tokens, vocab);
    p.sent_with_eos.push_back(Vocab::kEos);
    p.id = s.id;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace selfval_detail

// Pretrains the validator on (linearized gold -> sentence) pairs with
// discrete inputs, keeps the epoch with the best validation loss, and
// returns it frozen.
inline PretrainResult pretrain_validator(const Corpus& train, const Corpus& val,
                                         const Vocab& vocab,
                                         const TrainConfig& cfg) {
  auto pairs = selfval_detail::make_pairs(train, vocab);
  auto val_pairs = selfval_detail::make_pairs(val, vocab);
  if (pairs.empty()) throw ValidationError("pretrain_validator: empty corpus");

  PretrainResult out;
  ModelDims dims;
  dims.d_model = cfg.d_model;
  dims.n_layers = cfg.n_layers;
  dims.n_heads = cfg.n_heads;
  dims.max_len = cfg.max_len;
  dims.vocab = vocab.size();
  out.validator.build(dims, derive_seed(cfg.seed, 0x5EA1));

  AdamW opt;
  opt.eps = cfg.eps;
  opt.weight_decay = cfg.weight_decay;
  CosineWarmRestarts sched{cfg.lr, cfg.lr_min, cfg.restart_period,
                           static_cast<double>(cfg.restart_mult)};
  auto params = out.validator.store.all();

  auto eval_loss = [&](const std::vector<selfval_detail::Pair>& ps) {
    double sum = 0;
    for (const auto& p : ps) {
      TapeCtx ctx;
      auto enc = out.validator.encode_ids(ctx, p.lin_ids);
      auto dec = out.validator.decode_teacher(ctx, enc, p.sent_with_eos);
      sum += ctx.tape.val(loss_gen(ctx.tape, dec.probs, p.sent_with_eos)).item();
    }
    return sum / static_cast<double>(ps.size());
  };

  std::vector<Tensor> best_values;
  double best = std::numeric_limits<double>::infinity();
  long step = 0;
  std::vector<int> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, 0xE90C4, epoch));
    shuffle_rng.shuffle(order);
    double epoch_loss = 0;
    long batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      TapeCtx ctx;
      std::vector<ad::Tape::Var> losses;
      for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch_size); ++i) {
        const auto& p = pairs[order[i]];
        auto enc = out.validator.encode_ids(ctx, p.lin_ids);
        auto dec = out.validator.decode_teacher(ctx, enc, p.sent_with_eos);
        losses.push_back(loss_gen(ctx.tape, dec.probs, p.sent_with_eos));
      }
      auto batch_loss =
          ctx.tape.scale(ctx.tape.add_many(losses), 1.0 / losses.size());
      epoch_loss += ctx.tape.val(batch_loss).item();
      batches += 1;
      ctx.tape.backward(batch_loss);
      clip_grad_norm(params, cfg.grad_clip);
      opt.step(params, sched.at(step), step + 1);
      out.validator.store.zero_grad();
      ++step;
    }
    epoch_loss /= static_cast<double>(batches);
    out.stats.epoch_losses.push_back(epoch_loss);
    out.stats.epochs_run = epoch + 1;

    double vloss = val_pairs.empty() ? epoch_loss : eval_loss(val_pairs);
    if (vloss < best) {
      best = vloss;
      out.stats.best_epoch = epoch;
      best_values.clear();
      for (ParamTensor* p : params) best_values.push_back(p->value);
    }
    if (vloss < 5e-3) break;  // memorized; further epochs are wasted work
  }
  out.stats.best_loss = best;
  {
    auto ps = out.validator.store.all();
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = best_values[i];
  }

  long exact = 0;
  for (const auto& p : pairs) {
    std::vector<int> rec =
        generate(out.validator, p.lin_ids, 1, out.validator.dims.max_len - 1);
    std::vector<int> want(p.sent_with_eos.begin(), p.sent_with_eos.end() - 1);
    if (rec == want) ++exact;
  }
  out.stats.exact_reconstruction_rate =
      static_cast<double>(exact) / static_cast<double>(pairs.size());

  out.validator.freeze();
  return out;
}

}  // namespace finex
