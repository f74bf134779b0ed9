#pragma once

#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "finex/corpus.hpp"
#include "finex/linearize.hpp"
#include "json.hpp"

namespace finex {

struct PairCounts {
  long tp = 0, fp = 0, fn = 0;
};

struct F1Result {
  double precision = 0, recall = 0, f1 = 0;
  long tp = 0, fp = 0, fn = 0;
  std::map<std::string, PairCounts> per_type;
};

using SentenceEntities = std::map<std::string, EntityList>;  // sentence id -> entities

namespace eval_detail {

inline double safe_div(long num, long den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

inline void finish(F1Result& r) {
  r.precision = safe_div(r.tp, r.tp + r.fp);
  r.recall = safe_div(r.tp, r.tp + r.fn);
  r.f1 = (r.precision + r.recall) == 0.0
             ? 0.0
             : 2.0 * r.precision * r.recall / (r.precision + r.recall);
}

inline void check_aligned(const SentenceEntities& gold, const SentenceEntities& pred) {
  if (gold.size() != pred.size())
    throw ValidationError("evaluate: gold and pred sentence id sets differ in size");
  for (const auto& [id, _] : gold)
    if (!pred.count(id))
      throw ValidationError("evaluate: sentence id '" + id + "' missing from predictions");
}

}  // namespace eval_detail

// Entity-level micro F1: a prediction matches an unmatched gold pair in the
// same sentence with identical surface and type (multiset semantics).
inline F1Result entity_micro_f1(const SentenceEntities& gold,
                                const SentenceEntities& pred) {
  eval_detail::check_aligned(gold, pred);
  F1Result res;
  for (const auto& [id, gold_list] : gold) {
    const EntityList& pred_list = pred.at(id);
    std::map<std::pair<std::string, std::string>, long> gcount, pcount;
    for (const auto& e : gold_list) gcount[{e.surface, e.type}] += 1;
    for (const auto& e : pred_list) pcount[{e.surface, e.type}] += 1;
    std::set<std::string> types;
    for (const auto& [k, _] : gcount) types.insert(k.second);
    for (const auto& [k, _] : pcount) types.insert(k.second);
    for (const auto& type : types) {
      long tp_t = 0, g_t = 0, p_t = 0;
      for (const auto& [k, c] : gcount)
        if (k.second == type) {
          g_t += c;
          auto it = pcount.find(k);
          tp_t += std::min(c, it == pcount.end() ? 0L : it->second);
        }
      for (const auto& [k, c] : pcount)
        if (k.second == type) p_t += c;
      auto& pt = res.per_type[type];
      pt.tp += tp_t;
      pt.fp += p_t - tp_t;
      pt.fn += g_t - tp_t;
      res.tp += tp_t;
      res.fp += p_t - tp_t;
      res.fn += g_t - tp_t;
    }
  }
  eval_detail::finish(res);
  return res;
}

// Same matching rule ignoring types.
inline F1Result mention_micro_f1(const SentenceEntities& gold,
                                 const SentenceEntities& pred) {
  eval_detail::check_aligned(gold, pred);
  F1Result res;
  for (const auto& [id, gold_list] : gold) {
    const EntityList& pred_list = pred.at(id);
    std::map<std::string, long> gcount, pcount;
    for (const auto& e : gold_list) gcount[e.surface] += 1;
    for (const auto& e : pred_list) pcount[e.surface] += 1;
    long tp = 0;
    for (const auto& [s, c] : gcount) {
      auto it = pcount.find(s);
      tp += std::min(c, it == pcount.end() ? 0L : it->second);
    }
    res.tp += tp;
    res.fp += static_cast<long>(pred_list.size()) - tp;
    res.fn += static_cast<long>(gold_list.size()) - tp;
  }
  eval_detail::finish(res);
  return res;
}

// Micro F1 restricted to the long-tail half of the ontology. Frequencies
// must come from the training split.
inline F1Result longtail_f1(const SentenceEntities& gold,
                            const SentenceEntities& pred,
                            const Ontology& train_ontology) {
  std::set<std::string> tail = long_tail_types(train_ontology);
  SentenceEntities g2, p2;
  for (const auto& [id, list] : gold) {
    EntityList f;
    for (const auto& e : list)
      if (tail.count(e.type)) f.push_back(e);
    g2[id] = std::move(f);
  }
  for (const auto& [id, list] : pred) {
    EntityList f;
    for (const auto& e : list)
      if (tail.count(e.type)) f.push_back(e);
    p2[id] = std::move(f);
  }
  return entity_micro_f1(g2, p2);
}

// Mean whitespace-token count over predicted mentions; 0 with no mentions.
inline double avg_mention_tokens(const SentenceEntities& pred) {
  long tokens = 0, mentions = 0;
  for (const auto& [_, list] : pred)
    for (const auto& e : list) {
      tokens += static_cast<long>(tokenize(e.surface).size());
      mentions += 1;
    }
  return mentions == 0 ? 0.0 : static_cast<double>(tokens) / mentions;
}

struct EvalReport {
  F1Result entity;
  F1Result mention;
  F1Result longtail;
  double avg_mention_tokens = 0;
  long parse_skipped = 0;  // filled by callers that parsed model output
  long out_of_ontology = 0;
};

inline EvalReport evaluate_all(const SentenceEntities& gold,
                               const SentenceEntities& pred,
                               const Ontology& train_ontology) {
  EvalReport r;
  r.entity = entity_micro_f1(gold, pred);
  r.mention = mention_micro_f1(gold, pred);
  r.longtail = longtail_f1(gold, pred, train_ontology);
  r.avg_mention_tokens = avg_mention_tokens(pred);
  return r;
}

inline nlohmann::ordered_json f1_to_json(const F1Result& r, bool with_types = false) {
  nlohmann::ordered_json j;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["tp"] = r.tp;
  j["fp"] = r.fp;
  j["fn"] = r.fn;
  if (with_types) {
    nlohmann::ordered_json types;
    for (const auto& [t, c] : r.per_type)
      types[t] = {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
    j["per_type"] = types;
  }
  return j;
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["entity"] = f1_to_json(r.entity, true);
  j["mention"] = f1_to_json(r.mention);
  j["longtail"] = f1_to_json(r.longtail);
  j["avg_mention_tokens"] = r.avg_mention_tokens;
  j["diagnostics"] = {{"parse_skipped", r.parse_skipped},
                      {"out_of_ontology", r.out_of_ontology}};
  return j;
}

inline std::string report_to_table(const EvalReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%-12s %9s %9s %9s\n"
                "%-12s %9.4f %9.4f %9.4f\n"
                "%-12s %9.4f %9.4f %9.4f\n"
                "%-12s %9.4f %9.4f %9.4f\n"
                "avg mention tokens: %.3f\n",
                "", "P", "R", "F1", "entity", r.entity.precision, r.entity.recall,
                r.entity.f1, "mention", r.mention.precision, r.mention.recall,
                r.mention.f1, "longtail", r.longtail.precision, r.longtail.recall,
                r.longtail.f1, r.avg_mention_tokens);
  return buf;
}

}  // namespace finex
