#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "finex/contrastive.hpp"
#include "finex/synth.hpp"
#include "finex/vocab.hpp"

using namespace finex;

namespace {

AnnotatedSentence paper_like_sentence() {
  AnnotatedSentence s;
  s.id = "p1";
  s.tokens = tokenize(
      "Through application of ligand screening , we describe the first "
      "examples of aryl sulfamates at room temperature");
  s.mentions = {
      {3, 4, "ligand", "Ligands"},
      {12, 14, "aryl sulfamates", "Aromatic compounds"},
      {15, 17, "room temperature", "Thermodynamic properties"},
  };
  return s;
}

}  // namespace

TEST_CASE("negatives extend a mention with following context", "[contrastive]") {
  AnnotatedSentence s = paper_like_sentence();
  EntityList gold = entities_of(s);
  bool saw_ligand_extension = false;
  for (std::uint64_t seed = 0; seed < 40 && !saw_ligand_extension; ++seed) {
    auto negs = make_negatives(s, gold, 5, 6, seed);
    for (const auto& n : negs) {
      if (n.entity_index == 0 && n.perturbed_surface.rfind("ligand screening", 0) == 0)
        saw_ligand_extension = true;
    }
  }
  CHECK(saw_ligand_extension);
}

TEST_CASE("sentence-final mentions extend leftward", "[contrastive]") {
  AnnotatedSentence s;
  s.id = "end";
  s.tokens = {"the", "fast", "acid", "salt"};
  s.mentions = {{2, 4, "acid salt", "T"}};
  EntityList gold = entities_of(s);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto negs = make_negatives(s, gold, 3, 6, seed);
    REQUIRE(!negs.empty());
    for (const auto& n : negs) {
      // extension must come from the left context
      CHECK(n.perturbed_surface.size() > std::string("acid salt").size());
      CHECK(n.perturbed_surface.substr(n.perturbed_surface.size() - 9) == "acid salt");
    }
  }
}

TEST_CASE("negative surfaces are strictly longer and sentence-local", "[contrastive]") {
  GeneratorSpec spec;
  spec.type_count = 6;
  spec.sentences = 50;
  Corpus c = generate_synthetic(spec, 19).corpus;
  long draws = 0;
  for (const auto& s : c.sentences) {
    EntityList gold = entities_of(s);
    for (std::uint64_t seed = 0; seed < 20 && draws < 1000; ++seed) {
      auto negs = make_negatives(s, gold, 5, 6, derive_seed(seed, fnv1a(s.id)));
      for (const auto& n : negs) {
        ++draws;
        const Mention& orig = s.mentions[n.entity_index];
        auto orig_toks = tokenize(orig.surface);
        auto pert_toks = tokenize(n.perturbed_surface);
        REQUIRE(pert_toks.size() > orig_toks.size());
        // perturbed span must read off the sentence verbatim
        std::string sent_text = " " + s.text() + " ";
        REQUIRE(sent_text.find(" " + n.perturbed_surface + " ") != std::string::npos);
        // gold except the touched index
        for (std::size_t i = 0; i < gold.size(); ++i) {
          if (static_cast<int>(i) == n.entity_index) {
            CHECK(n.entities[i].type == gold[i].type);
          } else {
            CHECK(n.entities[i] == gold[i]);
          }
        }
      }
    }
  }
  REQUIRE(draws >= 1000);
}

TEST_CASE("no-mention sentences are rejected", "[contrastive]") {
  AnnotatedSentence s;
  s.id = "none";
  s.tokens = {"a", "b"};
  CHECK_THROWS_AS(make_negatives(s, {}, 5, 6, 1), ValidationError);
}

TEST_CASE("score head closed forms", "[contrastive]") {
  ContrastiveHead head;
  head.init(4, 1);
  // W = 0, b = 0 -> sigma(0) = 0.5 for any states
  for (double& v : head.W.value.d) v = 0.0;
  head.b.value.d[0] = 0.0;
  Tensor states(3, 4);
  Rng rng(3);
  for (auto& v : states.d) v = rng.normal(0, 1);
  {
    TapeCtx ctx;
    auto x = score_sequence(ctx, ctx.tape.constant(states), head);
    CHECK(ctx.tape.val(x).item() == Catch::Approx(0.5).margin(1e-15));
  }
  // strictly increasing in b
  double prev = 0.0;
  for (double b : {-1.0, -0.1, 0.3, 2.0}) {
    head.b.value.d[0] = b;
    TapeCtx ctx;
    auto x = score_sequence(ctx, ctx.tape.constant(states), head);
    double v = ctx.tape.val(x).item();
    CHECK(v > prev);
    prev = v;
  }
  // hand-computed 2-step case: projections 1 and 3 -> sigma(2)
  ContrastiveHead h2;
  h2.init(1, 2);
  h2.W.value.d[0] = 1.0;
  h2.b.value.d[0] = 0.0;
  Tensor hs(2, 1);
  hs.at(0, 0) = 1.0;
  hs.at(1, 0) = 3.0;
  TapeCtx ctx2;
  auto x2 = score_sequence(ctx2, ctx2.tape.constant(hs), h2);
  CHECK(ctx2.tape.val(x2).item() ==
        Catch::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-12));
  CHECK(ctx2.tape.val(x2).item() == Catch::Approx(0.88080).margin(5e-6));

  // empty state sequence rejected
  TapeCtx ctx3;
  Tensor empty(0, 1);
  CHECK_THROWS_AS(score_sequence(ctx3, ctx3.tape.constant(empty), h2),
                  std::invalid_argument);
}

TEST_CASE("InfoNCE closed forms", "[contrastive]") {
  // symmetric: 5 equal scores at tau=1 -> ln 6
  CHECK(loss_cl_value(0.7, {0.7, 0.7, 0.7, 0.7, 0.7}, 1.0) ==
        Catch::Approx(std::log(6.0)).epsilon(1e-12));

  // asymmetric fixture: oracle recomputation of
  //   -log(e^1.8 / (e^0.2 + e^0.4 + e^1.8))
  double oracle = -std::log(std::exp(1.8) /
                            (std::exp(0.2) + std::exp(0.4) + std::exp(1.8)));
  CHECK(loss_cl_value(0.9, {0.1, 0.2}, 0.5) == Catch::Approx(oracle).margin(1e-12));

  // near-perfect separation at low temperature
  double tiny = loss_cl_value(1.0, {0.0, 0.0}, 0.05);
  double tiny_oracle = std::log1p(2.0 * std::exp(-20.0));
  CHECK(tiny == Catch::Approx(tiny_oracle).epsilon(1e-9));
  CHECK(tiny < 1e-8);
  CHECK(tiny > 0.0);

  CHECK_THROWS_AS(loss_cl_value(0.5, {}, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(loss_cl_value(0.5, {0.1}, 0.0), std::invalid_argument);
}

TEST_CASE("InfoNCE bounds and monotonicity", "[contrastive]") {
  Rng rng(8);
  for (int it = 0; it < 300; ++it) {
    int n = rng.range(1, 8);
    double tau = 0.25 + rng.real01();
    double xp = rng.real01();
    std::vector<double> xn;
    double mn = 1.0;
    for (int i = 0; i < n; ++i) {
      xn.push_back(rng.real01());
      mn = std::min(mn, xn.back());
    }
    double L = loss_cl_value(xp, xn, tau);
    REQUIRE(L > 0.0);
    double bound = std::log(1.0 + n * std::exp((mn - xp) / tau));
    REQUIRE(L >= bound - 1e-12);

    // decreasing one negative decreases the loss
    auto xn2 = xn;
    xn2[rng.below(xn2.size())] -= 0.2;
    CHECK(loss_cl_value(xp, xn2, tau) < L);
    // increasing the positive decreases the loss
    CHECK(loss_cl_value(xp + 0.2, xn, tau) < L);
  }
}

TEST_CASE("tape loss_cl agrees with the closed form and differentiates", "[contrastive]") {
  ad::Tape tape;
  Tensor xp = Tensor::scalar(0.9);
  Tensor g_xp = Tensor::zeros(1, 1);
  auto vp = tape.leaf(xp, &g_xp);
  std::vector<Tensor> xns = {Tensor::scalar(0.1), Tensor::scalar(0.2)};
  std::vector<Tensor> g_xns(2, Tensor::zeros(1, 1));
  std::vector<ad::Tape::Var> vns;
  for (int i = 0; i < 2; ++i) vns.push_back(tape.leaf(xns[i], &g_xns[i]));
  auto L = loss_cl(tape, vp, vns, 0.5);
  CHECK(tape.val(L).item() ==
        Catch::Approx(loss_cl_value(0.9, {0.1, 0.2}, 0.5)).margin(1e-14));
  tape.backward(L);

  const double h = 1e-7;
  double fd_p = (loss_cl_value(0.9 + h, {0.1, 0.2}, 0.5) -
                 loss_cl_value(0.9 - h, {0.1, 0.2}, 0.5)) /
                (2 * h);
  CHECK(g_xp.d[0] == Catch::Approx(fd_p).margin(1e-7));
  double fd_n0 = (loss_cl_value(0.9, {0.1 + h, 0.2}, 0.5) -
                  loss_cl_value(0.9, {0.1 - h, 0.2}, 0.5)) /
                 (2 * h);
  CHECK(g_xns[0].d[0] == Catch::Approx(fd_n0).margin(1e-7));
}
