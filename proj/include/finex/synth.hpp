#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "finex/corpus.hpp"
#include "finex/rng.hpp"

namespace finex {

// Configuration for the synthetic long-tailed corpus generator. Stands in
// for the unavailable expert-annotated chemistry sets: per-type surface
// lexicons keep the types learnable, and the power-law exponent shapes the
// head/tail imbalance of the label distribution.
struct GeneratorSpec {
  int type_count = 10;
  double exponent = 1.2;       // 0 = uniform
  int sentences = 200;
  double mean_entities = 3.1;  // matches the reference dataset average
  int surfaces_per_type = 6;
  int max_surface_tokens = 2;
  int max_entities_per_sentence = 8;
  int filler_run_max = 3;  // filler tokens inserted between mentions
};

struct GeneratedCorpus {
  Corpus corpus;
  std::map<std::string, long> tally;  // emitted mention counts per type
};

namespace synth_detail {

inline std::string pseudo_word(Rng& rng, int min_syll, int max_syll) {
  static const std::vector<std::string> kSyllables = {
      "ba", "do", "ki", "lor", "mex", "tu",  "san", "vel", "zor", "pra",
      "qui", "fen", "car", "nol", "ith", "gam", "rus", "pel", "ox",  "yne"};
  int n = rng.range(min_syll, max_syll);
  std::string w;
  for (int i = 0; i < n; ++i) w += kSyllables[rng.below(kSyllables.size())];
  return w;
}

inline const std::vector<std::string>& filler_pool() {
  static const std::vector<std::string> kFillers = {
      "the",    "a",        "with",    "under",  "into",  "from",    "using",
      "mixed",  "yields",   "gives",   "forms",  "shows", "during",  "after",
      "before", "reaction", "process", "sample", "phase", "product", "at",
      "in",     "of",       "and",     "to",     "over",  "through", "near"};
  return kFillers;
}

// Largest-remainder apportionment of `total` slots over power-law weights,
// with a floor of one slot per type.
inline std::vector<long> apportion(long total, const std::vector<double>& weights) {
  const int n = static_cast<int>(weights.size());
  double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<long> counts(n);
  std::vector<std::pair<double, int>> rema(n);
  long assigned = 0;
  for (int i = 0; i < n; ++i) {
    double exact = total * weights[i] / wsum;
    counts[i] = static_cast<long>(std::floor(exact));
    rema[i] = {exact - std::floor(exact), i};
    assigned += counts[i];
  }
  std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (long r = 0; r < total - assigned; ++r) counts[rema[r % n].second] += 1;
  // floor of 1: steal from the currently largest type
  for (int i = 0; i < n; ++i) {
    while (counts[i] == 0) {
      int big = static_cast<int>(
          std::max_element(counts.begin(), counts.end()) - counts.begin());
      if (counts[big] <= 1) break;
      counts[big] -= 1;
      counts[i] += 1;
    }
  }
  return counts;
}

}  // namespace synth_detail

// Deterministic per seed. Every type is guaranteed at least one mention;
// totals follow (rank+1)^-exponent exactly via largest-remainder rounding.
inline GeneratedCorpus generate_synthetic(const GeneratorSpec& spec,
                                          std::uint64_t seed) {
  using namespace synth_detail;
  if (spec.type_count < 1 || spec.sentences < 1)
    throw ValidationError("generator spec: type_count and sentences must be >= 1");

  Rng rng(derive_seed(seed, 0xC0FFEE));

  // per-sentence mention counts: everyone gets 1, extras spread at random
  const long total_target =
      std::max<long>(spec.sentences,
                     std::lround(spec.mean_entities * spec.sentences));
  std::vector<int> mentions_per_sentence(spec.sentences, 1);
  long extras = total_target - spec.sentences;
  long guard = 0;
  while (extras > 0 && guard < total_target * 64) {
    int i = static_cast<int>(rng.below(spec.sentences));
    if (mentions_per_sentence[i] < spec.max_entities_per_sentence) {
      ++mentions_per_sentence[i];
      --extras;
    }
    ++guard;
  }
  const long total = std::accumulate(mentions_per_sentence.begin(),
                                     mentions_per_sentence.end(), 0L);
  if (total < spec.type_count)
    throw ValidationError("generator spec infeasible: " +
                          std::to_string(spec.type_count) + " types but only " +
                          std::to_string(total) + " mention slots");

  // type names and per-type surface lexicons; every word is used once so a
  // surface never collides with another type or the filler pool
  std::vector<std::string> type_names;
  std::vector<std::vector<std::string>> lexicons;
  std::set<std::string> used_words;
  long attempts = 0;
  auto next_fresh_word = [&](int min_syll, int max_syll) {
    for (;;) {
      if (++attempts > 1000000)
        throw ValidationError("generator: pseudo-word space exhausted");
      std::string w = pseudo_word(rng, min_syll, max_syll);
      if (!used_words.count(w)) {
        used_words.insert(w);
        return w;
      }
    }
  };
  for (int t = 0; t < spec.type_count; ++t) {
    std::string name = next_fresh_word(2, 3);
    name[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(name[0])));
    type_names.push_back(name + " agents");

    std::vector<std::string> lex;
    for (int k = 0; k < spec.surfaces_per_type; ++k) {
      int toks = rng.range(1, spec.max_surface_tokens);
      std::string surface;
      for (int w = 0; w < toks; ++w) {
        if (w) surface += ' ';
        surface += next_fresh_word(2, 3);
      }
      lex.push_back(surface);
    }
    lexicons.push_back(std::move(lex));
  }

  // exact per-type totals, then shuffled into sentence slots
  std::vector<double> weights(spec.type_count);
  for (int t = 0; t < spec.type_count; ++t)
    weights[t] = std::pow(static_cast<double>(t + 1), -spec.exponent);
  std::vector<long> per_type = synth_detail::apportion(total, weights);

  std::vector<int> slot_types;
  slot_types.reserve(total);
  for (int t = 0; t < spec.type_count; ++t)
    for (long c = 0; c < per_type[t]; ++c) slot_types.push_back(t);
  rng.shuffle(slot_types);

  GeneratedCorpus out;
  long slot = 0;
  for (int i = 0; i < spec.sentences; ++i) {
    AnnotatedSentence s;
    s.id = "syn" + std::to_string(i);
    int n_ment = mentions_per_sentence[i];
    for (int m = 0; m < n_ment; ++m) {
      int filler_run = rng.range(1, spec.filler_run_max);
      for (int f = 0; f < filler_run; ++f)
        s.tokens.push_back(filler_pool()[rng.below(filler_pool().size())]);
      int t = slot_types[slot++];
      const std::string& surface = lexicons[t][rng.below(lexicons[t].size())];
      std::vector<std::string> stoks = tokenize(surface);
      Mention men;
      men.start = static_cast<int>(s.tokens.size());
      for (auto& w : stoks) s.tokens.push_back(w);
      men.end = static_cast<int>(s.tokens.size());
      men.surface = surface;
      men.type = type_names[t];
      s.mentions.push_back(men);
      out.tally[type_names[t]] += 1;
    }
    int tail_run = rng.range(1, spec.filler_run_max);
    for (int f = 0; f < tail_run; ++f)
      s.tokens.push_back(filler_pool()[rng.below(filler_pool().size())]);
    out.corpus.sentences.push_back(std::move(s));
  }
  out.corpus.ontology = type_frequencies(out.corpus);
  return out;
}

inline nlohmann::ordered_json generator_sidecar(const GeneratorSpec& spec,
                                                std::uint64_t seed,
                                                const GeneratedCorpus& gen) {
  nlohmann::ordered_json j;
  j["spec"] = {{"type_count", spec.type_count},
               {"exponent", spec.exponent},
               {"sentences", spec.sentences},
               {"mean_entities", spec.mean_entities},
               {"surfaces_per_type", spec.surfaces_per_type},
               {"max_surface_tokens", spec.max_surface_tokens},
               {"max_entities_per_sentence", spec.max_entities_per_sentence},
               {"filler_run_max", spec.filler_run_max}};
  j["seed"] = seed;
  nlohmann::ordered_json tally;
  for (const auto& t : gen.corpus.ontology.types) tally[t] = gen.tally.at(t);
  j["tally"] = tally;
  return j;
}

}  // namespace finex
