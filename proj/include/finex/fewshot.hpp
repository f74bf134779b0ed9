#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "finex/corpus.hpp"
#include "finex/rng.hpp"
#include "json.hpp"

namespace finex {

struct FewShotSpec {
  long k = 6;  // mention budget for the most frequent type
  std::uint64_t seed = 1;
};

struct FewShotReport {
  long k = 0;
  std::uint64_t seed = 0;
  std::map<std::string, long> quota;
  std::map<std::string, long> achieved;
  std::vector<std::string> notes;  // overshoot and repair events
  long selected_sentences = 0;
};

struct FewShotResult {
  Corpus corpus;
  FewShotReport report;
};

// Per-type quotas: the most frequent type gets k, others scale as
// round-half-up(k * freq/freq_max) with a floor of 1 so rare types survive.
inline std::map<std::string, long> fewshot_quotas(const Ontology& ontology, long k) {
  std::map<std::string, long> quota;
  long fmax = 0;
  for (const auto& [_, f] : ontology.frequencies) fmax = std::max(fmax, f);
  if (fmax <= 0) throw ValidationError("fewshot: corpus has no mentions");
  for (const auto& [t, f] : ontology.frequencies) {
    if (f <= 0)
      throw ValidationError("fewshot: type '" + t + "' has no mentions");
    long q = static_cast<long>(
        std::floor(static_cast<double>(k) * f / fmax + 0.5));
    quota[t] = std::max(1L, q);
  }
  return quota;
}

// Greedy seeded sentence selection under per-type quotas, then a repair pass
// that restores uncovered types (overshoot permitted and reported, never an
// abort).
inline FewShotResult sample_fewshot(const Corpus& corpus, const FewShotSpec& spec) {
  if (corpus.sentences.empty())
    throw ValidationError("fewshot: empty corpus");
  if (spec.k < 1) throw ValidationError("fewshot: k must be >= 1");

  const Ontology ont =
      corpus.ontology.types.empty() ? type_frequencies(corpus) : corpus.ontology;
  FewShotResult out;
  out.report.k = spec.k;
  out.report.seed = spec.seed;
  out.report.quota = fewshot_quotas(ont, spec.k);
  const auto& quota = out.report.quota;

  // most frequent type (ontology order is descending, ties alphabetical)
  const std::string top_type = ont.types.front();

  std::vector<int> order(corpus.sentences.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng(derive_seed(spec.seed, 0xFE33, spec.k));
  rng.shuffle(order);

  auto mention_counts = [&](const AnnotatedSentence& s) {
    std::map<std::string, long> c;
    for (const auto& m : s.mentions) c[m.type] += 1;
    return c;
  };

  std::map<std::string, long>& achieved = out.report.achieved;
  for (const auto& [t, _] : quota) achieved[t] = 0;
  std::vector<bool> taken(corpus.sentences.size(), false);

  // greedy pass: accept iff no type exceeds its quota
  for (int idx : order) {
    const auto& s = corpus.sentences[idx];
    auto counts = mention_counts(s);
    bool ok = true;
    for (const auto& [t, c] : counts)
      if (achieved.at(t) + c > quota.at(t)) {
        ok = false;
        break;
      }
    if (!ok) continue;
    taken[idx] = true;
    for (const auto& [t, c] : counts) achieved[t] += c;
  }

  // repair pass: every input type must stay present; pick the sentence with
  // minimal total overshoot for each uncovered type
  for (const auto& t : ont.types) {
    if (achieved.at(t) > 0) continue;
    long best_over = -1, best_ments = 0;
    int best_idx = -1;
    for (int idx : order) {
      if (taken[idx]) continue;
      const auto& s = corpus.sentences[idx];
      auto counts = mention_counts(s);
      if (!counts.count(t)) continue;
      long over = 0, ments = 0;
      for (const auto& [u, c] : counts) {
        over += std::max(0L, achieved.at(u) + c - quota.at(u));
        ments += c;
      }
      if (best_idx < 0 || over < best_over ||
          (over == best_over && ments < best_ments)) {
        best_idx = idx;
        best_over = over;
        best_ments = ments;
      }
    }
    if (best_idx < 0) continue;  // type only occurs in already-taken sentences
    taken[best_idx] = true;
    auto counts = mention_counts(corpus.sentences[best_idx]);
    for (const auto& [u, c] : counts) achieved[u] += c;
    out.report.notes.push_back("repair: added sentence '" +
                               corpus.sentences[best_idx].id + "' to cover type '" +
                               t + "' (overshoot " + std::to_string(best_over) + ")");
  }

  // top-type floor: aim for at least k-1 mentions of the most frequent type
  while (achieved.at(top_type) < std::max(1L, spec.k - 1)) {
    long best_over = -1;
    int best_idx = -1;
    for (int idx : order) {
      if (taken[idx]) continue;
      auto counts = mention_counts(corpus.sentences[idx]);
      auto it = counts.find(top_type);
      if (it == counts.end()) continue;
      if (achieved.at(top_type) + it->second > spec.k) continue;
      long over = 0;
      for (const auto& [u, c] : counts)
        over += std::max(0L, achieved.at(u) + c - quota.at(u));
      if (best_idx < 0 || over < best_over) {
        best_idx = idx;
        best_over = over;
      }
    }
    if (best_idx < 0) {
      out.report.notes.push_back(
          "top type '" + top_type +
          "' stuck below k-1: sentence granularity does not permit");
      break;
    }
    taken[best_idx] = true;
    auto counts = mention_counts(corpus.sentences[best_idx]);
    for (const auto& [u, c] : counts) achieved[u] += c;
    out.report.notes.push_back("floor: added sentence '" +
                               corpus.sentences[best_idx].id + "' for top type '" +
                               top_type + "'");
  }

  for (const auto& [t, a] : achieved)
    if (a > quota.at(t))
      out.report.notes.push_back("overshoot: type '" + t + "' achieved " +
                                 std::to_string(a) + " > quota " +
                                 std::to_string(quota.at(t)));

  for (std::size_t i = 0; i < corpus.sentences.size(); ++i)
    if (taken[i]) out.corpus.sentences.push_back(corpus.sentences[i]);
  out.corpus.ontology = type_frequencies(out.corpus);
  out.report.selected_sentences = static_cast<long>(out.corpus.sentences.size());
  return out;
}

inline nlohmann::ordered_json fewshot_report_to_json(const FewShotReport& r) {
  nlohmann::ordered_json j;
  j["k"] = r.k;
  j["seed"] = r.seed;
  nlohmann::ordered_json per_type = nlohmann::ordered_json::array();
  for (const auto& [t, q] : r.quota)
    per_type.push_back({{"type", t}, {"quota", q}, {"achieved", r.achieved.at(t)}});
  j["per_type"] = per_type;
  j["selected_sentences"] = r.selected_sentences;
  j["notes"] = r.notes;
  return j;
}

}  // namespace finex
