#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "finex/corpus.hpp"

namespace finex {

struct Entity {
  std::string surface;
  std::string type;

  bool operator==(const Entity&) const = default;
};

using EntityList = std::vector<Entity>;

inline EntityList entities_of(const AnnotatedSentence& s) {
  EntityList out;
  out.reserve(s.mentions.size());
  for (const auto& m : s.mentions) out.push_back({m.surface, m.type});
  return out;
}

class LinearizeError : public std::runtime_error {
 public:
  explicit LinearizeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Serializes entities as "mention <Type>, mention <Type>". Surfaces may
// contain bare commas (common in chemical names); the sequence ", " is
// reserved as the segment separator, and '<' / '>' delimit the type.
inline std::string linearize(const EntityList& entities) {
  std::string out;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    const Entity& e = entities[i];
    if (e.surface.empty()) throw LinearizeError("empty mention surface");
    if (e.surface.find('<') != std::string::npos ||
        e.surface.find('>') != std::string::npos)
      throw LinearizeError("mention surface contains reserved delimiter: '" +
                           e.surface + "'");
    if (e.surface.find(", ") != std::string::npos)
      throw LinearizeError("mention surface contains reserved separator \", \": '" +
                           e.surface + "'");
    if (e.type.empty() || e.type.find('<') != std::string::npos ||
        e.type.find('>') != std::string::npos)
      throw LinearizeError("type name contains reserved delimiter: '" + e.type +
                           "'");
    if (i) out += ", ";
    out += e.surface;
    out += " <";
    out += e.type;
    out += '>';
  }
  return out;
}

struct ParseDiagnostics {
  long recovered = 0;        // well-formed segments turned into entities
  long skipped = 0;          // segments containing '<' that failed the grammar
  long out_of_ontology = 0;  // recovered entities whose type is unknown
  std::vector<std::string> discarded;  // every discarded span, any kind

  long total_discarded() const { return static_cast<long>(discarded.size()); }
};

struct ParseResult {
  EntityList entities;
  std::vector<bool> in_ontology;  // parallel to entities
  ParseDiagnostics diagnostics;
};

// Total function over arbitrary model output. Malformed spans are skipped
// with diagnostics; unknown types are kept but flagged.
inline ParseResult parse_linearized(const std::string& text,
                                    const Ontology& ontology) {
  ParseResult res;
  auto discard = [&res](std::string span, bool counts_as_skipped) {
    // trim outer whitespace for reporting
    std::size_t b = span.find_first_not_of(' ');
    std::size_t e = span.find_last_not_of(' ');
    if (b == std::string::npos) return;  // pure whitespace, ignore
    res.diagnostics.discarded.push_back(span.substr(b, e - b + 1));
    if (counts_as_skipped) res.diagnostics.skipped += 1;
  };
  auto emit = [&res, &ontology](std::string surface, std::string type) {
    bool known = ontology.contains(type);
    res.entities.push_back({std::move(surface), std::move(type)});
    res.in_ontology.push_back(known);
    res.diagnostics.recovered += 1;
    if (!known) res.diagnostics.out_of_ontology += 1;
  };

  std::size_t pos = 0;
  const std::size_t n = text.size();
  while (pos < n) {
    std::size_t lt = text.find('<', pos);
    if (lt == std::string::npos) {
      discard(text.substr(pos), false);
      break;
    }
    std::string mention = text.substr(pos, lt - pos);
    // a ", " inside the candidate marks leftover garbage from a broken
    // preceding segment; keep only the part after the last separator
    std::size_t sep = mention.rfind(", ");
    if (sep != std::string::npos) {
      discard(mention.substr(0, sep), false);
      mention = mention.substr(sep + 2);
    }
    while (!mention.empty() && mention.back() == ' ') mention.pop_back();
    while (!mention.empty() && mention.front() == ' ') mention.erase(0, 1);
    std::size_t gt = text.find('>', lt);
    std::size_t sep_after_lt = text.find(", ", lt);
    if (gt == std::string::npos ||
        (sep_after_lt != std::string::npos && sep_after_lt < gt)) {
      // unterminated type: drop this segment, resume after the next ", "
      if (sep_after_lt == std::string::npos) {
        discard(text.substr(pos), true);
        break;
      }
      discard(text.substr(pos, sep_after_lt - pos), true);
      pos = sep_after_lt + 2;
      continue;
    }
    std::string type = text.substr(lt + 1, gt - lt - 1);
    if (mention.empty() || type.empty() ||
        type.find('<') != std::string::npos) {
      discard(text.substr(pos, gt + 1 - pos), true);
      pos = gt + 1;
      if (pos + 1 < n && text.compare(pos, 2, ", ") == 0) pos += 2;
      else if (pos < n && text[pos] == ',') pos += 1;
      continue;
    }
    emit(std::move(mention), std::move(type));
    pos = gt + 1;
    if (pos >= n) break;
    if (text.compare(pos, 2, ", ") == 0) {
      pos += 2;
    } else if (text[pos] == ',') {
      pos += 1;
      if (pos < n && text[pos] == ' ') pos += 1;
    } else {
      // junk after a closed segment: skip to the next ">, " boundary
      std::size_t next = text.find(">, ", pos);
      if (next == std::string::npos) {
        discard(text.substr(pos), false);
        break;
      }
      discard(text.substr(pos, next + 1 - pos), false);
      pos = next + 3;
    }
  }
  return res;
}

}  // namespace finex
