#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "finex/selfval.hpp"
#include "finex/synth.hpp"
#include "finex/trainer.hpp"

using namespace finex;

namespace {

// central finite differences over randomly sampled parameter coordinates
struct CoordRef {
  ParamTensor* p;
  std::size_t idx;
};

std::vector<CoordRef> sample_coords(const std::vector<ParamTensor*>& params,
                                    int count, Rng& rng) {
  std::size_t total = 0;
  for (auto* p : params) total += p->value.size();
  std::vector<CoordRef> coords;
  for (int i = 0; i < count; ++i) {
    std::size_t pick = rng.below(total);
    for (auto* p : params) {
      if (pick < p->value.size()) {
        coords.push_back({p, pick});
        break;
      }
      pick -= p->value.size();
    }
  }
  return coords;
}

double rel_err(double a, double b) {
  // floor keeps finite-difference roundoff from dominating near-zero gradients
  return std::abs(a - b) / std::max(1e-5, std::abs(a) + std::abs(b));
}

// small hand-built corpus with a compact vocabulary (well under 50 ids)
Corpus grad_corpus() {
  Corpus c;
  {
    AnnotatedSentence s;
    s.id = "g1";
    s.tokens = {"the", "acid", "mix", "ran", "hot", "today"};
    s.mentions = {{1, 2, "acid", "Ta"}, {4, 5, "hot", "Tb"}};
    c.sentences.push_back(s);
  }
  {
    AnnotatedSentence s;
    s.id = "g2";
    s.tokens = {"cool", "salt", "drops", "slowly"};
    s.mentions = {{1, 2, "salt", "Ta"}};
    c.sentences.push_back(s);
  }
  c.ontology = type_frequencies(c);
  return c;
}

}  // namespace

TEST_CASE("L_gen gradients match finite differences", "[gradcheck]") {
  Corpus c = grad_corpus();
  Vocab vocab = build_vocab(c);
  REQUIRE(vocab.size() <= 50);
  ModelDims dims{16, 1, 2, 32, vocab.size()};
  Seq2Seq m;
  m.build(dims, 41);
  auto prepared = prepare_sentences(c, vocab);

  auto value = [&]() {
    double sum = 0;
    for (const auto& p : prepared) {
      TapeCtx ctx;
      auto out = m.forward(ctx, p.src, p.tgt_with_eos);
      sum += ctx.tape.val(loss_gen(ctx.tape, out.dec.probs, p.tgt_with_eos)).item();
    }
    return sum / static_cast<double>(prepared.size());
  };

  m.store.zero_grad();
  {
    TapeCtx ctx;
    std::vector<ad::Tape::Var> ls;
    for (const auto& p : prepared) {
      auto out = m.forward(ctx, p.src, p.tgt_with_eos);
      ls.push_back(loss_gen(ctx.tape, out.dec.probs, p.tgt_with_eos));
    }
    auto total = ctx.tape.scale(ctx.tape.add_many(ls), 1.0 / ls.size());
    ctx.tape.backward(total);
  }

  Rng rng(1001);
  auto coords = sample_coords(m.store.all(), 120, rng);
  const double h = 1e-5;
  double worst = 0;
  for (const auto& cr : coords) {
    double orig = cr.p->value.d[cr.idx];
    cr.p->value.d[cr.idx] = orig + h;
    double fp = value();
    cr.p->value.d[cr.idx] = orig - h;
    double fm = value();
    cr.p->value.d[cr.idx] = orig;
    double fd = (fp - fm) / (2 * h);
    double ad = cr.p->grad.d[cr.idx];
    double err = rel_err(ad, fd);
    INFO(cr.p->name << "[" << cr.idx << "] ad=" << ad << " fd=" << fd);
    REQUIRE(err <= 1e-4);
    worst = std::max(worst, err);
  }
  INFO("worst rel err " << worst);
}

TEST_CASE("full joint objective gradients match finite differences", "[gradcheck]") {
  Corpus c = grad_corpus();
  Vocab vocab = build_vocab(c);
  REQUIRE(vocab.size() <= 50);

  TrainConfig cfg;
  cfg.alpha = 5.0;
  cfg.beta = 0.2;
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.max_len = 32;
  cfg.seed = 3;

  ModelDims dims{cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.max_len, vocab.size()};
  Seq2Seq extractor;
  extractor.build(dims, 42);
  Seq2Seq validator;
  validator.build(dims, 43);
  validator.freeze();
  ContrastiveHead head;
  head.init(cfg.d_model, 44);

  JointTrainer trainer(extractor, &validator, head, vocab, cfg);
  auto prepared = prepare_sentences(c, vocab);
  std::vector<const PreparedSentence*> batch;
  for (const auto& p : prepared) batch.push_back(&p);
  const long kStep = 5;

  auto value = [&]() { return trainer.build_loss(batch, kStep).values.total; };

  for (ParamTensor* p : trainer.trainable_params()) p->grad.setZero();
  {
    auto g = trainer.build_loss(batch, kStep);
    g.ctx.tape.backward(g.total);
    // frozen validator must stay untouched
    for (ParamTensor* p : validator.store.all())
      for (double gv : p->grad.d) REQUIRE(gv == 0.0);
  }

  Rng rng(2002);
  auto coords = sample_coords(trainer.trainable_params(), 120, rng);
  const double h = 1e-5;
  int checked = 0;
  for (const auto& cr : coords) {
    double orig = cr.p->value.d[cr.idx];
    cr.p->value.d[cr.idx] = orig + h;
    double fp = value();
    cr.p->value.d[cr.idx] = orig - h;
    double fm = value();
    cr.p->value.d[cr.idx] = orig;
    double fd = (fp - fm) / (2 * h);
    double ad = cr.p->grad.d[cr.idx];
    double err = rel_err(ad, fd);
    INFO(cr.p->name << "[" << cr.idx << "] ad=" << ad << " fd=" << fd
                    << " err=" << err);
    REQUIRE(err <= 1e-3);
    ++checked;
  }
  REQUIRE(checked >= 100);
}

TEST_CASE("head-only contrastive gradient via decoder states", "[gradcheck]") {
  Corpus c = grad_corpus();
  Vocab vocab = build_vocab(c);
  ModelDims dims{16, 1, 2, 32, vocab.size()};
  Seq2Seq m;
  m.build(dims, 77);
  ContrastiveHead head;
  head.init(dims.d_model, 78);
  auto prepared = prepare_sentences(c, vocab);
  const auto& p0 = prepared[0];

  auto value = [&]() {
    TapeCtx ctx;
    auto fwd = m.forward(ctx, p0.src, p0.tgt_with_eos);
    auto x_pos = score_sequence(ctx, fwd.dec.hidden, head);
    auto negs = make_negatives(*p0.sentence, p0.gold, 3, 6, 99);
    std::vector<ad::Tape::Var> x_negs;
    for (const auto& n : negs) {
      auto ids = encode_entities(n.entities, vocab);
      ids.push_back(Vocab::kEos);
      auto dec = m.decode_teacher(ctx, fwd.enc, ids);
      x_negs.push_back(score_sequence(ctx, dec.hidden, head));
    }
    auto L = loss_cl(ctx.tape, x_pos, x_negs, 1.0);
    return std::pair<double, TapeCtx>(ctx.tape.val(L).item(), std::move(ctx));
  };

  // autodiff
  head.W.grad.setZero();
  head.b.grad.setZero();
  m.store.zero_grad();
  {
    TapeCtx ctx;
    auto fwd = m.forward(ctx, p0.src, p0.tgt_with_eos);
    auto x_pos = score_sequence(ctx, fwd.dec.hidden, head);
    auto negs = make_negatives(*p0.sentence, p0.gold, 3, 6, 99);
    std::vector<ad::Tape::Var> x_negs;
    for (const auto& n : negs) {
      auto ids = encode_entities(n.entities, vocab);
      ids.push_back(Vocab::kEos);
      auto dec = m.decode_teacher(ctx, fwd.enc, ids);
      x_negs.push_back(score_sequence(ctx, dec.hidden, head));
    }
    ctx.tape.backward(loss_cl(ctx.tape, x_pos, x_negs, 1.0));
  }

  const double h = 1e-5;
  std::vector<ParamTensor*> targets = {&head.W, &head.b, m.embed};
  Rng rng(5);
  for (ParamTensor* p : targets) {
    for (int rep = 0; rep < 8; ++rep) {
      std::size_t idx = rng.below(p->value.size());
      double orig = p->value.d[idx];
      p->value.d[idx] = orig + h;
      double fp = value().first;
      p->value.d[idx] = orig - h;
      double fm = value().first;
      p->value.d[idx] = orig;
      double fd = (fp - fm) / (2 * h);
      double ad = p->grad.d[idx];
      INFO(p->name << "[" << idx << "]");
      REQUIRE(rel_err(ad, fd) <= 1e-4);
    }
  }
}
