#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "finex/checkpoint.hpp"
#include "finex/selfval.hpp"
#include "finex/synth.hpp"
#include "finex/trainer.hpp"

using namespace finex;

namespace {

Corpus overfit_corpus(std::uint64_t seed, int sentences = 32) {
  GeneratorSpec spec;
  spec.type_count = 4;
  spec.sentences = sentences;
  spec.mean_entities = 2.0;
  spec.surfaces_per_type = 3;
  spec.max_surface_tokens = 1;
  spec.filler_run_max = 2;
  return generate_synthetic(spec, seed).corpus;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.d_model = 32;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.max_len = 64;
  cfg.epochs = 250;
  cfg.batch_size = 8;
  cfg.lr = 3e-3;
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST_CASE("gumbel argmax matches the input distribution (uniform pair)", "[selfval]") {
  Rng rng(404);
  std::vector<double> probs = {0.5, 0.5};
  long hits = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    auto s = gumbel_softmax_value(probs, 1.0, rng);
    if (s[0] > s[1]) ++hits;
  }
  double freq = static_cast<double>(hits) / n;
  CHECK(freq == Catch::Approx(0.5).margin(0.02));
}

TEST_CASE("gumbel argmax matches a skewed 4-class distribution", "[selfval]") {
  Rng rng(405);
  std::vector<double> probs = {0.1, 0.2, 0.3, 0.4};
  std::vector<long> hits(4, 0);
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    auto s = gumbel_softmax_value(probs, 1.0, rng);
    hits[std::max_element(s.begin(), s.end()) - s.begin()] += 1;
  }
  for (int c = 0; c < 4; ++c) {
    double freq = static_cast<double>(hits[c]) / n;
    CHECK(freq == Catch::Approx(probs[c]).margin(0.02));
  }
}

TEST_CASE("low temperature concentrates the samples", "[selfval]") {
  Rng rng(406);
  std::vector<double> probs = {0.25, 0.25, 0.25, 0.25};
  const int n = 5000;
  long peaked = 0;
  for (int i = 0; i < n; ++i) {
    auto s = gumbel_softmax_value(probs, 0.01, rng);
    double mx = *std::max_element(s.begin(), s.end());
    if (mx >= 0.99) ++peaked;
    double sum = 0;
    for (double v : s) {
      sum += v;
      REQUIRE(v >= 0.0);
    }
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
  }
  CHECK(static_cast<double>(peaked) / n >= 0.99);
}

TEST_CASE("gumbel sample rows are normalized on the tape", "[selfval]") {
  ad::Tape tape;
  Tensor p(3, 5);
  Rng init(7);
  for (int i = 0; i < 3; ++i) {
    double sum = 0;
    for (int j = 0; j < 5; ++j) {
      p.at(i, j) = init.real01() + 0.01;
      sum += p.at(i, j);
    }
    for (int j = 0; j < 5; ++j) p.at(i, j) /= sum;
  }
  auto pv = tape.constant(p);
  Rng noise(99);
  auto s = gumbel_softmax(tape, pv, 1.0, noise);
  const Tensor& sv = tape.val(s);
  for (int i = 0; i < sv.rows; ++i) {
    double sum = 0;
    for (int j = 0; j < sv.cols; ++j) sum += sv.at(i, j);
    CHECK(sum == Catch::Approx(1.0).margin(1e-6));
  }
  // zero-probability entries are clamped, not -inf
  Tensor z(1, 3);
  z.at(0, 0) = 1.0;
  auto zv = tape.constant(z);
  auto zs = gumbel_softmax(tape, zv, 1.0, noise);
  CHECK(tape.val(zs).allFinite());
}

TEST_CASE("soft_embed identities", "[selfval]") {
  ParamTensor emb = make_param("E", 4, 3);
  Rng rng(11);
  for (double& v : emb.value.d) v = rng.normal(0, 1);

  TapeCtx ctx;
  Tensor onehot(1, 4);
  onehot.at(0, 2) = 1.0;
  auto h1 = soft_embed(ctx, ctx.tape.constant(onehot), emb);
  for (int j = 0; j < 3; ++j)
    CHECK(ctx.tape.val(h1).at(0, j) == Catch::Approx(emb.value.at(2, j)).margin(1e-15));

  Tensor uni(1, 4);
  for (auto& v : uni.d) v = 0.25;
  auto h2 = soft_embed(ctx, ctx.tape.constant(uni), emb);
  for (int j = 0; j < 3; ++j) {
    double want = 0;
    for (int i = 0; i < 4; ++i) want += emb.value.at(i, j);
    want /= 4.0;
    CHECK(ctx.tape.val(h2).at(0, j) == Catch::Approx(want).margin(1e-12));
  }
  // dimension mismatch
  Tensor bad(1, 5);
  CHECK_THROWS_AS(soft_embed(ctx, ctx.tape.constant(bad), emb),
                  std::invalid_argument);
}

TEST_CASE("soft_embed gradient matches finite differences", "[selfval]") {
  ParamTensor emb = make_param("E", 5, 4);
  Rng rng(13);
  for (double& v : emb.value.d) v = rng.normal(0, 1);
  Tensor sample(2, 5);
  for (auto& v : sample.d) v = rng.real01() + 0.05;

  auto f = [&](const Tensor& s) {
    TapeCtx ctx;
    auto h = soft_embed(ctx, ctx.tape.constant(s), emb);
    return ctx.tape.val(ctx.tape.sum_squares(h)).item();
  };

  Tensor grad_sink = Tensor::zeros(2, 5);
  {
    TapeCtx ctx;
    auto sv = ctx.tape.leaf(sample, &grad_sink);
    auto h = soft_embed(ctx, sv, emb);
    ctx.tape.backward(ctx.tape.sum_squares(h));
  }
  const double h = 1e-6;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    Tensor sp = sample, sm = sample;
    sp.d[i] += h;
    sm.d[i] -= h;
    double fd = (f(sp) - f(sm)) / (2 * h);
    CHECK(grad_sink.d[i] == Catch::Approx(fd).margin(1e-6));
  }
}

TEST_CASE("validator pretraining memorizes a 32-sentence corpus", "[selfval]") {
  Corpus c = overfit_corpus(3);
  REQUIRE(c.sentences.size() == 32);
  Vocab vocab = build_vocab(c);
  TrainConfig cfg = small_config();
  PretrainResult r = pretrain_validator(c, c, vocab, cfg);
  INFO("epochs " << r.stats.epochs_run << " best loss " << r.stats.best_loss
                 << " exact " << r.stats.exact_reconstruction_rate);
  CHECK(r.validator.frozen);
  CHECK(r.stats.exact_reconstruction_rate >= 0.90);

  PretrainResult r2 = pretrain_validator(c, c, vocab, cfg);
  CHECK(serialize_params(r.validator) == serialize_params(r2.validator));
}

TEST_CASE("loss_recon is near zero for gold one-hot inputs on a memorized validator",
          "[selfval]") {
  Corpus c = overfit_corpus(3);
  Vocab vocab = build_vocab(c);
  TrainConfig cfg = small_config();
  PretrainResult pre = pretrain_validator(c, c, vocab, cfg);

  double worst = 0;
  int measured = 0;
  for (const auto& s : c.sentences) {
    if (s.mentions.empty()) continue;
    std::vector<int> lin = encode_entities(entities_of(s), vocab);
    std::vector<int> sent = encode_tokens(s.tokens, vocab);
    sent.push_back(Vocab::kEos);
    TapeCtx ctx;
    Tensor onehot(static_cast<int>(lin.size()), vocab.size());
    for (std::size_t t = 0; t < lin.size(); ++t)
      onehot.at(static_cast<int>(t), lin[t]) = 1.0;
    auto hvar = soft_embed(ctx, ctx.tape.constant(onehot), *pre.validator.embed);
    auto loss = loss_recon(ctx, pre.validator, hvar, sent);
    worst = std::max(worst, ctx.tape.val(loss).item());
    ++measured;
    if (measured >= 8) break;
  }
  CHECK(worst < 0.05);
}

TEST_CASE("loss_recon depends on the reconstruction target", "[selfval]") {
  Corpus c = overfit_corpus(5, 8);
  Vocab vocab = build_vocab(c);
  ModelDims dims{32, 1, 4, 64, vocab.size()};
  Seq2Seq validator;
  validator.build(dims, 77);
  validator.freeze();

  const auto& s0 = c.sentences[0];
  const auto& s1 = c.sentences[1];
  std::vector<int> lin = encode_entities(entities_of(s0), vocab);
  auto sent0 = encode_tokens(s0.tokens, vocab);
  sent0.push_back(Vocab::kEos);
  auto sent1 = encode_tokens(s1.tokens, vocab);
  sent1.push_back(Vocab::kEos);

  auto eval_with_target = [&](const std::vector<int>& target) {
    TapeCtx ctx;
    Tensor onehot(static_cast<int>(lin.size()), vocab.size());
    for (std::size_t t = 0; t < lin.size(); ++t)
      onehot.at(static_cast<int>(t), lin[t]) = 1.0;
    auto hvar = soft_embed(ctx, ctx.tape.constant(onehot), *validator.embed);
    return ctx.tape.val(loss_recon(ctx, validator, hvar, target)).item();
  };
  CHECK(eval_with_target(sent0) != eval_with_target(sent1));
}

TEST_CASE("frozen validator receives no gradient while the extractor side does",
          "[selfval]") {
  Corpus c = overfit_corpus(9, 8);
  Vocab vocab = build_vocab(c);
  ModelDims dims{16, 1, 2, 64, vocab.size()};
  Seq2Seq extractor;
  extractor.build(dims, 5);
  Seq2Seq validator;
  validator.build(dims, 6);
  validator.freeze();

  const auto& s = c.sentences[0];
  std::vector<int> src = encode_tokens(s.tokens, vocab);
  std::vector<int> tgt = encode_entities(entities_of(s), vocab);
  std::vector<int> tgt_eos = tgt;
  tgt_eos.push_back(Vocab::kEos);
  std::vector<int> sent = src;
  sent.push_back(Vocab::kEos);

  TapeCtx ctx;
  auto fwd = extractor.forward(ctx, src, tgt_eos);
  auto dists = ctx.tape.slice_rows(fwd.dec.probs, 0, static_cast<int>(tgt.size()));
  Rng noise(123);
  auto sample = gumbel_softmax(ctx.tape, dists, 1.0, noise);
  auto soft = soft_embed(ctx, sample, *validator.embed);
  auto loss = loss_recon(ctx, validator, soft, sent);
  ctx.tape.backward(loss);

  for (ParamTensor* p : validator.store.all())
    for (double g : p->grad.d) REQUIRE(g == 0.0);
  double extractor_grad_norm = 0;
  for (ParamTensor* p : extractor.store.all())
    for (double g : p->grad.d) extractor_grad_norm += g * g;
  CHECK(extractor_grad_norm > 0.0);
}

TEST_CASE("loss_recon refuses an unfrozen validator", "[selfval]") {
  Vocab vocab = make_vocab({"a", "b"});
  ModelDims dims{16, 1, 2, 32, vocab.size()};
  Seq2Seq validator;
  validator.build(dims, 1);
  TapeCtx ctx;
  Tensor onehot(1, vocab.size());
  onehot.at(0, 7) = 1.0;
  auto h = soft_embed(ctx, ctx.tape.constant(onehot), *validator.embed);
  CHECK_THROWS_AS(loss_recon(ctx, validator, h, {7, Vocab::kEos}),
                  std::invalid_argument);
}
