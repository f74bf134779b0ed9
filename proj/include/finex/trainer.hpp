#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "finex/config.hpp"
#include "finex/contrastive.hpp"
#include "finex/corpus.hpp"
#include "finex/decode.hpp"
#include "finex/evaluate.hpp"
#include "finex/model.hpp"
#include "finex/optim.hpp"
#include "finex/selfval.hpp"
#include "finex/vocab.hpp"

namespace finex {

struct LossBreakdown {
  double total = 0, gen = 0, recon = 0, cl = 0;
};

struct MetricsRow {
  long step = 0;
  int epoch = 0;
  double L = 0, L_gen = 0, L_recon = 0, L_cl = 0;
  double val_f1 = -1.0;  // -1 until the first evaluation
};

inline std::string metrics_csv_header() { return "step,epoch,L,L_gen,L_recon,L_cl,val_f1"; }

inline std::string metrics_csv_row(const MetricsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%ld,%d,%.17g,%.17g,%.17g,%.17g,%.17g", r.step,
                r.epoch, r.L, r.L_gen, r.L_recon, r.L_cl, r.val_f1);
  return buf;
}

struct PreparedSentence {
  const AnnotatedSentence* sentence = nullptr;
  std::vector<int> src;
  std::vector<int> tgt;           // linearized entity ids, no EOS
  std::vector<int> tgt_with_eos;
  std::vector<int> sent_with_eos; // reconstruction target
  EntityList gold;
};

inline std::vector<PreparedSentence> prepare_sentences(const Corpus& corpus,
                                                       const Vocab& vocab) {
  std::vector<PreparedSentence> out;
  out.reserve(corpus.sentences.size());
  for (const auto& s : corpus.sentences) {
    PreparedSentence p;
    p.sentence = &s;
    p.src = encode_tokens(s.tokens, vocab);
    p.gold = entities_of(s);
    p.tgt = encode_entities(p.gold, vocab);
    p.tgt_with_eos = p.tgt;
    p.tgt_with_eos.push_back(Vocab::kEos);
    p.sent_with_eos = p.src;
    p.sent_with_eos.push_back(Vocab::kEos);
    out.push_back(std::move(p));
  }
  return out;
}

// Generates with beam search and parses the output back into entities.
inline SentenceEntities predict_entities(const Seq2Seq& extractor,
                                         const Vocab& vocab, const Corpus& corpus,
                                         int beam, const Ontology& ontology,
                                         long* skipped_out = nullptr,
                                         long* out_of_ontology_out = nullptr) {
  SentenceEntities preds;
  long skipped = 0, ooo = 0;
  for (const auto& s : corpus.sentences) {
    std::vector<int> src = encode_tokens(s.tokens, vocab);
    std::vector<int> ids =
        generate(extractor, src, beam, extractor.dims.max_len - 1);
    ParseResult parsed = parse_linearized(render_linearized(ids, vocab), ontology);
    preds[s.id] = std::move(parsed.entities);
    skipped += parsed.diagnostics.skipped;
    ooo += parsed.diagnostics.out_of_ontology;
  }
  if (skipped_out) *skipped_out = skipped;
  if (out_of_ontology_out) *out_of_ontology_out = ooo;
  return preds;
}

inline SentenceEntities gold_entities(const Corpus& corpus) {
  SentenceEntities gold;
  for (const auto& s : corpus.sentences) gold[s.id] = entities_of(s);
  return gold;
}

// Joint optimization of L = L_gen + alpha * L_recon + beta * L_cl.
// The validator is pretrained and frozen; only the extractor and the
// contrastive head receive updates.
class JointTrainer {
 public:
  JointTrainer(Seq2Seq& extractor, const Seq2Seq* validator, ContrastiveHead& head,
               const Vocab& vocab, const TrainConfig& cfg)
      : extractor_(extractor), validator_(validator), head_(head), vocab_(vocab),
        cfg_(cfg) {
    if (cfg.alpha > 0) {
      if (!validator_) throw std::invalid_argument("alpha > 0 requires a validator");
      if (!validator_->frozen)
        throw std::invalid_argument("validator must be frozen before joint training");
    }
    opt_.eps = cfg.eps;
    opt_.weight_decay = cfg.weight_decay;
    sched_ = {cfg.lr, cfg.lr_min, cfg.restart_period,
              static_cast<double>(cfg.restart_mult)};
    trainable_ = extractor_.store.all();
    for (ParamTensor* p : head_.params()) trainable_.push_back(p);
  }

  struct BatchGraph {
    TapeCtx ctx;
    ad::Tape::Var total = ad::Tape::kNone;
    ad::Tape::Var gen = ad::Tape::kNone;
    ad::Tape::Var recon = ad::Tape::kNone;
    ad::Tape::Var cl = ad::Tape::kNone;
    LossBreakdown values;
  };

  // Builds the loss graph for one batch at a given step. All noise and
  // negative sampling derives from (seed, step, sentence id), so repeated
  // calls are bit-identical; gradient checks rely on this.
  BatchGraph build_loss(const std::vector<const PreparedSentence*>& batch,
                        long step) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    BatchGraph g;
    auto& t = g.ctx.tape;
    std::vector<ad::Tape::Var> gens, recons, cls;
    for (const PreparedSentence* p : batch) {
      auto fwd = extractor_.forward(g.ctx, p->src, p->tgt_with_eos);
      gens.push_back(loss_gen(t, fwd.dec.probs, p->tgt_with_eos));
      const bool has_mentions = !p->gold.empty();
      if (cfg_.alpha > 0 && has_mentions) {
        Rng noise(derive_seed(cfg_.seed ^ 0x95A11ULL, static_cast<std::uint64_t>(step),
                              fnv1a(p->sentence->id)));
        auto dists = t.slice_rows(fwd.dec.probs, 0, static_cast<int>(p->tgt.size()));
        auto sample = gumbel_softmax(t, dists, cfg_.tau_g, noise);
        auto soft = soft_embed(g.ctx, sample, *validator_->embed);
        recons.push_back(loss_recon(g.ctx, *validator_, soft, p->sent_with_eos));
      }
      if (cfg_.beta > 0 && has_mentions) {
        auto negs = make_negatives(
            *p->sentence, p->gold, cfg_.n_neg, cfg_.context_window,
            derive_seed(cfg_.seed ^ 0xC0117ULL, static_cast<std::uint64_t>(step),
                        fnv1a(p->sentence->id)));
        if (!negs.empty()) {
          auto x_pos = score_sequence(g.ctx, fwd.dec.hidden, head_);
          std::vector<ad::Tape::Var> x_negs;
          for (const auto& neg : negs) {
            std::vector<int> nt = encode_entities(neg.entities, vocab_);
            nt.push_back(Vocab::kEos);
            auto dec = extractor_.decode_teacher(g.ctx, fwd.enc, nt);
            x_negs.push_back(score_sequence(g.ctx, dec.hidden, head_));
          }
          cls.push_back(loss_cl(t, x_pos, x_negs, cfg_.tau));
        }
      }
    }
    g.gen = t.scale(t.add_many(gens), 1.0 / gens.size());
    g.total = g.gen;
    g.values.gen = t.val(g.gen).item();
    if (!recons.empty()) {
      g.recon = t.scale(t.add_many(recons), 1.0 / recons.size());
      g.values.recon = t.val(g.recon).item();
      g.total = t.add(g.total, t.scale(g.recon, cfg_.alpha));
    }
    if (!cls.empty()) {
      g.cl = t.scale(t.add_many(cls), 1.0 / cls.size());
      g.values.cl = t.val(g.cl).item();
      g.total = t.add(g.total, t.scale(g.cl, cfg_.beta));
    }
    g.values.total = t.val(g.total).item();
    if (!std::isfinite(g.values.total)) {
      std::string ids;
      for (const PreparedSentence* p : batch) ids += p->sentence->id + " ";
      throw NumericsError("non-finite loss on batch: " + ids);
    }
    return g;
  }

  LossBreakdown train_step(const std::vector<const PreparedSentence*>& batch) {
    BatchGraph g = build_loss(batch, global_step_);
    g.ctx.tape.backward(g.total);
    clip_grad_norm(trainable_, cfg_.grad_clip);
    double lr = cfg_.schedule == "constant" ? cfg_.lr : sched_.at(global_step_);
    opt_.step(trainable_, lr, global_step_ + 1);
    for (ParamTensor* p : trainable_) p->grad.setZero();
    ++global_step_;
    return g.values;
  }

  long global_step() const { return global_step_; }
  void set_global_step(long s) { global_step_ = s; }
  const std::vector<ParamTensor*>& trainable_params() const { return trainable_; }

 private:
  Seq2Seq& extractor_;
  const Seq2Seq* validator_;
  ContrastiveHead& head_;
  const Vocab& vocab_;
  TrainConfig cfg_;
  AdamW opt_;
  CosineWarmRestarts sched_;
  std::vector<ParamTensor*> trainable_;
  long global_step_ = 0;
};

struct ParamSnapshot {
  std::vector<Tensor> values;  // extractor tensors then head tensors
};

inline ParamSnapshot snapshot_params(const Seq2Seq& extractor,
                                     ContrastiveHead& head) {
  ParamSnapshot s;
  for (const ParamTensor* p : extractor.store.all()) s.values.push_back(p->value);
  for (const ParamTensor* p : head.params()) s.values.push_back(p->value);
  return s;
}

inline void restore_params(Seq2Seq& extractor, ContrastiveHead& head,
                           const ParamSnapshot& s) {
  std::size_t i = 0;
  for (ParamTensor* p : extractor.store.all()) p->value = s.values.at(i++);
  for (ParamTensor* p : head.params()) p->value = s.values.at(i++);
}

struct TrainResult {
  std::vector<MetricsRow> metrics;
  double best_f1 = -1.0;
  int best_epoch = -1;
  ParamSnapshot best;
  int epochs_run = 0;
  bool stopped_early = false;
};

// Full training loop: seeded shuffling, per-epoch metrics, periodic
// validation F1, best-checkpoint tracking, optional early stop.
inline TrainResult train(JointTrainer& trainer, Seq2Seq& extractor,
                         ContrastiveHead& head, const Vocab& vocab,
                         const Corpus& train_corpus, const Corpus& val_corpus,
                         const TrainConfig& cfg, int start_epoch = 0,
                         const std::function<void(const MetricsRow&)>& on_epoch = {}) {
  auto prepared = prepare_sentences(train_corpus, vocab);
  if (prepared.empty()) throw ValidationError("train: empty corpus");
  const Ontology ontology = train_corpus.ontology.types.empty()
                                ? type_frequencies(train_corpus)
                                : train_corpus.ontology;
  SentenceEntities val_gold = gold_entities(val_corpus);

  TrainResult res;
  double last_f1 = -1.0;
  std::vector<int> order(prepared.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, 0xE90C5, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    LossBreakdown sums;
    long batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::vector<const PreparedSentence*> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch_size); ++i)
        batch.push_back(&prepared[order[i]]);
      LossBreakdown l = trainer.train_step(batch);
      sums.total += l.total;
      sums.gen += l.gen;
      sums.recon += l.recon;
      sums.cl += l.cl;
      ++batches;
    }

    const bool last_epoch = epoch + 1 == cfg.epochs;
    const bool eval_now =
        cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || last_epoch);
    if (eval_now) {
      SentenceEntities preds =
          predict_entities(extractor, vocab, val_corpus, cfg.beam_size, ontology);
      last_f1 = entity_micro_f1(val_gold, preds).f1;
      if (last_f1 > res.best_f1) {
        res.best_f1 = last_f1;
        res.best_epoch = epoch;
        res.best = snapshot_params(extractor, head);
      }
    }

    MetricsRow row;
    row.step = trainer.global_step();
    row.epoch = epoch;
    row.L = sums.total / batches;
    row.L_gen = sums.gen / batches;
    row.L_recon = sums.recon / batches;
    row.L_cl = sums.cl / batches;
    row.val_f1 = last_f1;
    res.metrics.push_back(row);
    if (on_epoch) on_epoch(row);
    res.epochs_run = epoch + 1 - start_epoch;

    if (cfg.f1_stop > 0 && last_f1 >= cfg.f1_stop) {
      res.stopped_early = true;
      break;
    }
  }
  if (res.best_epoch < 0) res.best = snapshot_params(extractor, head);
  return res;
}

}  // namespace finex
