#pragma once

#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "finex/corpus.hpp"
#include "finex/linearize.hpp"

namespace finex {

// Token inventory shared by extractor and validator. Ids 0..6 are fixed
// specials; everything else is sorted for deterministic assignment.
struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kTypeOpen = 4;   // '<'
  static constexpr int kTypeClose = 5;  // '>'
  static constexpr int kSep = 6;        // ','
  static constexpr int kNumSpecials = 7;

  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int> token_to_id;

  int size() const { return static_cast<int>(id_to_token.size()); }

  int id(const std::string& tok) const {
    auto it = token_to_id.find(tok);
    return it == token_to_id.end() ? kUnk : it->second;
  }

  const std::string& token(int id) const {
    if (id < 0 || id >= size())
      throw std::out_of_range("token id out of range: " + std::to_string(id));
    return id_to_token[id];
  }
};

inline Vocab make_vocab(const std::set<std::string>& words) {
  Vocab v;
  v.id_to_token = {"[pad]", "[bos]", "[eos]", "[unk]", "<", ">", ","};
  for (const auto& w : words) v.id_to_token.push_back(w);
  for (int i = 0; i < v.size(); ++i) v.token_to_id[v.id_to_token[i]] = i;
  return v;
}

// All sentence tokens plus all type-name tokens, sorted.
inline Vocab build_vocab(const Corpus& corpus) {
  std::set<std::string> words;
  for (const auto& s : corpus.sentences) {
    for (const auto& t : s.tokens) words.insert(t);
    for (const auto& m : s.mentions)
      for (const auto& t : tokenize(m.type)) words.insert(t);
  }
  static const char* kSpecials[] = {"[pad]", "[bos]", "[eos]", "[unk]", "<", ">", ","};
  for (const char* sp : kSpecials) words.erase(sp);
  return make_vocab(words);
}

inline std::vector<int> encode_tokens(const std::vector<std::string>& tokens,
                                      const Vocab& vocab) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  return ids;
}

inline std::vector<int> encode_text(const std::string& text, const Vocab& vocab) {
  return encode_tokens(tokenize(text), vocab);
}

inline std::string decode_tokens(const std::vector<int>& ids, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += vocab.token(ids[i]);
  }
  return out;
}

// Target-side encoding of an entity list: mention tokens, '<', type tokens,
// '>', with ',' between entities. No BOS/EOS; the model adds those.
inline std::vector<int> encode_entities(const EntityList& entities,
                                        const Vocab& vocab) {
  std::vector<int> ids;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    if (i) ids.push_back(Vocab::kSep);
    for (const auto& t : tokenize(entities[i].surface)) ids.push_back(vocab.id(t));
    ids.push_back(Vocab::kTypeOpen);
    for (const auto& t : tokenize(entities[i].type)) ids.push_back(vocab.id(t));
    ids.push_back(Vocab::kTypeClose);
  }
  return ids;
}

// Renders generated target tokens back into the linearized surface string
// ("m <T>, m <T>"), the inverse of encode_entities modulo UNK.
inline std::string render_linearized(const std::vector<int>& ids,
                                     const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    const std::string& tok = vocab.token(id);
    if (tok == "<") {
      out += out.empty() ? "<" : " <";
    } else if (tok == ">") {
      out += ">";
    } else if (tok == ",") {
      out += ",";
    } else {
      if (!out.empty() && out.back() != '<') out += ' ';
      out += tok;
    }
  }
  return out;
}

}  // namespace finex
