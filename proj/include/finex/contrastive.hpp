#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "finex/autograd.hpp"
#include "finex/corpus.hpp"
#include "finex/linearize.hpp"
#include "finex/model.hpp"
#include "finex/rng.hpp"

namespace finex {

// Pooled sigmoid scoring head over decoder hidden states.
struct ContrastiveHead {
  ParamTensor W;  // [d x 1]
  ParamTensor b;  // [1 x 1]

  void init(int d_model, std::uint64_t seed) {
    W = make_param("head.W", d_model, 1);
    b = make_param("head.b", 1, 1);
    Rng rng(derive_seed(seed, 0xCAD5));
    for (double& v : W.value.d) v = rng.normal(0.0, 0.05);
  }

  std::vector<ParamTensor*> params() { return {&W, &b}; }
};

// One hard negative: a gold entity whose surface is bloated with adjacent
// context tokens, inside an otherwise-gold linearization.
struct NegativeSample {
  int entity_index = -1;
  std::string perturbed_surface;
  EntityList entities;             // gold list with one surface replaced
  std::vector<int> target_ids;     // filled by materialize_negatives
};

// Extends a random mention rightward by 1..window tokens from the same
// sentence (leftward when the mention touches the sentence end). Mentions
// spanning the whole sentence cannot be extended and are skipped.
inline std::vector<NegativeSample> make_negatives(const AnnotatedSentence& sentence,
                                                  const EntityList& gold,
                                                  int n_neg, int window,
                                                  std::uint64_t seed) {
  if (sentence.mentions.empty())
    throw ValidationError("make_negatives: sentence '" + sentence.id +
                          "' has no mentions");
  if (n_neg < 1) throw std::invalid_argument("make_negatives: n_neg must be >= 1");

  Rng rng(seed);
  const int n_tok = static_cast<int>(sentence.tokens.size());
  std::vector<NegativeSample> out;
  int attempts = 0;
  while (static_cast<int>(out.size()) < n_neg && attempts < n_neg * 20) {
    ++attempts;
    int mi = static_cast<int>(rng.below(sentence.mentions.size()));
    const Mention& m = sentence.mentions[mi];
    int right_room = n_tok - m.end;
    int left_room = m.start;
    NegativeSample neg;
    neg.entity_index = mi;
    if (right_room > 0) {
      int ext = rng.range(1, std::min(window, right_room));
      neg.perturbed_surface = join_tokens(sentence.tokens, m.start, m.end + ext);
    } else if (left_room > 0) {
      int ext = rng.range(1, std::min(window, left_room));
      neg.perturbed_surface = join_tokens(sentence.tokens, m.start - ext, m.end);
    } else {
      continue;  // mention covers the whole sentence
    }
    if (neg.perturbed_surface.find(", ") != std::string::npos ||
        neg.perturbed_surface.find('<') != std::string::npos ||
        neg.perturbed_surface.find('>') != std::string::npos)
      continue;  // would not linearize; try another draw
    neg.entities = gold;
    neg.entities[mi].surface = neg.perturbed_surface;
    out.push_back(std::move(neg));
  }
  return out;
}

// x = sigmoid(mean_t(W . H_t + b)) in (0, 1).
inline ad::Tape::Var score_sequence(TapeCtx& ctx, ad::Tape::Var hidden,
                                    ContrastiveHead& head) {
  auto& t = ctx.tape;
  if (t.val(hidden).rows == 0)
    throw std::invalid_argument("score_sequence: empty state sequence");
  auto proj = t.add_rowvec(t.matmul(hidden, ctx.use(head.W)), ctx.use(head.b));
  return t.sigmoid(t.mean_all(proj));
}

// InfoNCE on the scores: -log( exp(x+/tau) / (sum_i exp(x-_i/tau) + exp(x+/tau)) ).
inline ad::Tape::Var loss_cl(ad::Tape& tape, ad::Tape::Var x_pos,
                             const std::vector<ad::Tape::Var>& x_negs, double tau) {
  if (tau <= 0) throw std::invalid_argument("loss_cl: tau must be > 0");
  if (x_negs.empty()) throw std::invalid_argument("loss_cl: empty negative list");
  std::vector<ad::Tape::Var> scaled;
  scaled.reserve(x_negs.size() + 1);
  auto pos_scaled = tape.scale(x_pos, 1.0 / tau);
  scaled.push_back(pos_scaled);
  for (auto v : x_negs) scaled.push_back(tape.scale(v, 1.0 / tau));
  auto lse = tape.logsumexp_all(tape.stack_scalars(scaled));
  return tape.add(lse, tape.scale(pos_scaled, -1.0));
}

// Closed-form value used by tests and diagnostics. Shifting by the positive
// score (L = log(1 + sum_i exp((x-_i - x+)/tau))) keeps tiny losses exact.
inline double loss_cl_value(double x_pos, const std::vector<double>& x_negs,
                            double tau) {
  if (tau <= 0) throw std::invalid_argument("loss_cl: tau must be > 0");
  if (x_negs.empty()) throw std::invalid_argument("loss_cl: empty negative list");
  double zmax = 0.0;
  for (double x : x_negs) zmax = std::max(zmax, (x - x_pos) / tau);
  if (zmax <= 0.0) {
    double s = 0.0;
    for (double x : x_negs) s += std::exp((x - x_pos) / tau);
    return std::log1p(s);
  }
  double s = std::exp(-zmax);
  for (double x : x_negs) s += std::exp((x - x_pos) / tau - zmax);
  return zmax + std::log(s);
}

}  // namespace finex
