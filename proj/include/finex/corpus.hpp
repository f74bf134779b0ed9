#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace finex {

// A typed mention anchored to token offsets. `start` inclusive, `end`
// exclusive, over the whitespace tokenization of the sentence.
struct Mention {
  int start = 0;
  int end = 0;
  std::string surface;
  std::string type;

  bool operator==(const Mention&) const = default;
};

struct AnnotatedSentence {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<Mention> mentions;  // sorted by start, non-overlapping

  std::string text() const {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i) out += ' ';
      out += tokens[i];
    }
    return out;
  }

  bool operator==(const AnnotatedSentence&) const = default;
};

// Type inventory with per-type mention counts. `types` is ordered by
// descending frequency, ties alphabetical.
struct Ontology {
  std::vector<std::string> types;
  std::map<std::string, long> frequencies;

  bool contains(const std::string& t) const {
    return frequencies.count(t) > 0;
  }

  bool operator==(const Ontology&) const = default;
};

struct Corpus {
  std::vector<AnnotatedSentence> sentences;
  Ontology ontology;

  bool operator==(const Corpus&) const = default;
};

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

inline std::string join_tokens(const std::vector<std::string>& tokens, int start,
                               int end) {
  std::string out;
  for (int i = start; i < end; ++i) {
    if (i > start) out += ' ';
    out += tokens[i];
  }
  return out;
}

// Exact per-type mention counts, ordered descending by count with
// alphabetical tie-break.
inline Ontology type_frequencies(const Corpus& corpus) {
  Ontology ont;
  for (const auto& s : corpus.sentences)
    for (const auto& m : s.mentions) ont.frequencies[m.type] += 1;
  ont.types.reserve(ont.frequencies.size());
  for (const auto& [t, _] : ont.frequencies) ont.types.push_back(t);
  std::sort(ont.types.begin(), ont.types.end(),
            [&](const std::string& a, const std::string& b) {
              long fa = ont.frequencies.at(a), fb = ont.frequencies.at(b);
              if (fa != fb) return fa > fb;
              return a < b;
            });
  return ont;
}

// Bottom floor(n/2) types by rank (descending frequency, ties alphabetical).
inline std::set<std::string> long_tail_types(const Ontology& ontology) {
  if (ontology.types.empty())
    throw ValidationError("long_tail_types: empty ontology");
  std::vector<std::string> ranked = ontology.types;
  std::sort(ranked.begin(), ranked.end(),
            [&](const std::string& a, const std::string& b) {
              long fa = ontology.frequencies.at(a), fb = ontology.frequencies.at(b);
              if (fa != fb) return fa > fb;
              return a < b;
            });
  std::size_t n = ranked.size();
  std::set<std::string> tail(ranked.begin() + (n - n / 2), ranked.end());
  return tail;
}

inline void validate_sentence(const AnnotatedSentence& s) {
  const int n = static_cast<int>(s.tokens.size());
  int prev_end = -1;
  int prev_start = -1;
  for (const auto& m : s.mentions) {
    if (m.start < 0 || m.end > n || m.start >= m.end) {
      throw ValidationError("sentence '" + s.id + "': span out of range [" +
                            std::to_string(m.start) + "," +
                            std::to_string(m.end) + ") over " +
                            std::to_string(n) + " tokens");
    }
    if (m.start < prev_start)
      throw ValidationError("sentence '" + s.id + "': mentions not sorted by start");
    if (m.start < prev_end)
      throw ValidationError("sentence '" + s.id + "': overlapping mention spans");
    prev_start = m.start;
    prev_end = m.end;
    std::string joined = join_tokens(s.tokens, m.start, m.end);
    if (joined != m.surface) {
      throw ValidationError("sentence '" + s.id + "': surface mismatch, span [" +
                            std::to_string(m.start) + "," + std::to_string(m.end) +
                            ") reads '" + joined + "' but mention says '" +
                            m.surface + "'");
    }
  }
}

inline void validate_corpus(const Corpus& corpus) {
  std::set<std::string> ids;
  for (const auto& s : corpus.sentences) {
    if (!ids.insert(s.id).second)
      throw ValidationError("duplicate sentence id '" + s.id + "'");
    validate_sentence(s);
  }
}

// One JSON object per line: {id, text, entities:[{start,end,mention,type}]}.
// Ontology frequencies are always recomputed from the data.
inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open corpus file: " + path);
  Corpus corpus;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("malformed JSON on line " + std::to_string(lineno) +
                            ": " + e.what());
    }
    AnnotatedSentence s;
    try {
      s.id = j.at("id").get<std::string>();
      s.tokens = tokenize(j.at("text").get<std::string>());
      for (const auto& ej : j.at("entities")) {
        Mention m;
        m.start = ej.at("start").get<int>();
        m.end = ej.at("end").get<int>();
        m.surface = ej.at("mention").get<std::string>();
        m.type = ej.at("type").get<std::string>();
        s.mentions.push_back(m);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("bad record on line " + std::to_string(lineno) +
                            ": " + e.what());
    }
    std::stable_sort(s.mentions.begin(), s.mentions.end(),
                     [](const Mention& a, const Mention& b) {
                       return a.start < b.start;
                     });
    validate_sentence(s);
    corpus.sentences.push_back(std::move(s));
  }
  validate_corpus(corpus);
  corpus.ontology = type_frequencies(corpus);
  return corpus;
}

inline nlohmann::ordered_json sentence_to_json(const AnnotatedSentence& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["text"] = s.text();
  j["entities"] = nlohmann::ordered_json::array();
  for (const auto& m : s.mentions) {
    nlohmann::ordered_json ej;
    ej["start"] = m.start;
    ej["end"] = m.end;
    ej["mention"] = m.surface;
    ej["type"] = m.type;
    j["entities"].push_back(ej);
  }
  return j;
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write corpus file: " + path);
  for (const auto& s : corpus.sentences) out << sentence_to_json(s).dump() << "\n";
}

inline nlohmann::ordered_json ontology_to_json(const Ontology& ont) {
  nlohmann::ordered_json j;
  j["types"] = ont.types;
  nlohmann::ordered_json freqs;
  for (const auto& t : ont.types) freqs[t] = ont.frequencies.at(t);
  j["frequencies"] = freqs;
  return j;
}

inline Ontology ontology_from_json(const nlohmann::json& j) {
  Ontology ont;
  ont.types = j.at("types").get<std::vector<std::string>>();
  for (const auto& [k, v] : j.at("frequencies").items())
    ont.frequencies[k] = v.get<long>();
  for (const auto& [t, _] : ont.frequencies)
    if (std::find(ont.types.begin(), ont.types.end(), t) == ont.types.end())
      throw ValidationError("ontology frequencies mention unknown type '" + t + "'");
  return ont;
}

// Accepts either an ontology JSON object ({types, frequencies}) or a corpus
// JSONL file, in which case the frequencies are recomputed.
inline Ontology load_ontology(const std::string& path) {
  {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open ontology file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    nlohmann::json j = nlohmann::json::parse(buf.str(), nullptr, false);
    if (!j.is_discarded() && j.is_object() && j.contains("types") &&
        j.contains("frequencies"))
      return ontology_from_json(j);
    if (!j.is_discarded() && j.is_object() && j.contains("tally")) {
      // generator sidecar: tally carries the emitted frequencies
      Ontology ont;
      for (const auto& [k, v] : j.at("tally").items())
        ont.frequencies[k] = v.get<long>();
      for (const auto& [t, _] : ont.frequencies) ont.types.push_back(t);
      std::sort(ont.types.begin(), ont.types.end(),
                [&](const std::string& a, const std::string& b) {
                  long fa = ont.frequencies.at(a), fb = ont.frequencies.at(b);
                  if (fa != fb) return fa > fb;
                  return a < b;
                });
      return ont;
    }
  }
  return load_corpus(path).ontology;
}

}  // namespace finex
