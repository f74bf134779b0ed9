#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "finex/model.hpp"
#include "finex/vocab.hpp"
#include "json.hpp"

namespace finex {

// Container format: "FNXC" magic, u32 version, u64 manifest length, manifest
// JSON, then raw little-endian float64 tensor payloads in manifest order.
struct CheckpointData {
  nlohmann::ordered_json meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

inline void save_checkpoint(const std::string& path, const CheckpointData& data) {
  nlohmann::ordered_json manifest;
  manifest["version"] = 1;
  manifest["meta"] = data.meta;
  nlohmann::ordered_json tl = nlohmann::ordered_json::array();
  for (const auto& [name, t] : data.tensors)
    tl.push_back({{"name", name}, {"rows", t.rows}, {"cols", t.cols}});
  manifest["tensors"] = tl;
  std::string mjson = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write("FNXC", 4);
  std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  std::uint64_t mlen = mjson.size();
  out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  out.write(mjson.data(), static_cast<std::streamsize>(mjson.size()));
  for (const auto& [name, t] : data.tensors)
    out.write(reinterpret_cast<const char*>(t.d.data()),
              static_cast<std::streamsize>(t.d.size() * sizeof(double)));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "FNXC", 4) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != 1)
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(version));
  std::uint64_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  std::string mjson(mlen, '\0');
  in.read(mjson.data(), static_cast<std::streamsize>(mlen));
  nlohmann::ordered_json manifest = nlohmann::ordered_json::parse(mjson);

  CheckpointData data;
  data.meta = manifest.at("meta");
  for (const auto& tj : manifest.at("tensors")) {
    Tensor t(tj.at("rows").get<int>(), tj.at("cols").get<int>());
    in.read(reinterpret_cast<char*>(t.d.data()),
            static_cast<std::streamsize>(t.d.size() * sizeof(double)));
    data.tensors.emplace_back(tj.at("name").get<std::string>(), std::move(t));
  }
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  return data;
}

inline nlohmann::ordered_json vocab_to_json(const Vocab& vocab) {
  nlohmann::ordered_json j;
  std::vector<std::string> toks(vocab.id_to_token.begin() + Vocab::kNumSpecials,
                                vocab.id_to_token.end());
  j["tokens"] = toks;
  return j;
}

inline Vocab vocab_from_json(const nlohmann::json& j) {
  Vocab v;
  v.id_to_token = {"[pad]", "[bos]", "[eos]", "[unk]", "<", ">", ","};
  for (const auto& t : j.at("tokens")) v.id_to_token.push_back(t.get<std::string>());
  for (int i = 0; i < v.size(); ++i) v.token_to_id[v.id_to_token[i]] = i;
  return v;
}

inline nlohmann::ordered_json dims_to_json(const ModelDims& d) {
  return {{"d_model", d.d_model},
          {"n_layers", d.n_layers},
          {"n_heads", d.n_heads},
          {"max_len", d.max_len},
          {"vocab", d.vocab}};
}

inline ModelDims dims_from_json(const nlohmann::json& j) {
  ModelDims d;
  d.d_model = j.at("d_model").get<int>();
  d.n_layers = j.at("n_layers").get<int>();
  d.n_heads = j.at("n_heads").get<int>();
  d.max_len = j.at("max_len").get<int>();
  d.vocab = j.at("vocab").get<int>();
  return d;
}

// Appends a model's tensors under a name prefix ("extractor/", ...).
inline void add_model_tensors(CheckpointData& data, const Seq2Seq& model,
                              const std::string& prefix,
                              bool with_optimizer_state = false) {
  for (const ParamTensor* p : model.store.all()) {
    data.tensors.emplace_back(prefix + p->name, p->value);
    if (with_optimizer_state && p->trainable) {
      data.tensors.emplace_back(prefix + "opt.m/" + p->name, p->m);
      data.tensors.emplace_back(prefix + "opt.v/" + p->name, p->v);
    }
  }
}

inline void load_model_tensors(Seq2Seq& model, const CheckpointData& data,
                               const std::string& prefix,
                               bool with_optimizer_state = false) {
  for (ParamTensor* p : model.store.all()) {
    const Tensor* t = data.find(prefix + p->name);
    if (!t)
      throw std::runtime_error("checkpoint missing tensor " + prefix + p->name);
    if (t->rows != p->value.rows || t->cols != p->value.cols)
      throw std::runtime_error("checkpoint shape mismatch for " + prefix + p->name);
    p->value = *t;
    if (with_optimizer_state) {
      const Tensor* m = data.find(prefix + "opt.m/" + p->name);
      const Tensor* v = data.find(prefix + "opt.v/" + p->name);
      if (m) p->m = *m;
      if (v) p->v = *v;
    }
  }
}

// Serializes just the parameter payload; used for freezing byte-checks.
inline std::string serialize_params(const Seq2Seq& model) {
  std::string out;
  for (const ParamTensor* p : model.store.all())
    out.append(reinterpret_cast<const char*>(p->value.d.data()),
               p->value.d.size() * sizeof(double));
  return out;
}

// Round-trips a validator (or extractor) as a standalone checkpoint.
inline void save_model_checkpoint(const std::string& path, const Seq2Seq& model,
                                  const Vocab& vocab,
                                  nlohmann::ordered_json extra_meta = {}) {
  CheckpointData data;
  data.meta["dims"] = dims_to_json(model.dims);
  data.meta["vocab"] = vocab_to_json(vocab);
  data.meta["frozen"] = model.frozen;
  if (!extra_meta.is_null())
    for (const auto& [k, v] : extra_meta.items()) data.meta[k] = v;
  add_model_tensors(data, model, "model/");
  save_checkpoint(path, data);
}

struct LoadedModel {
  Seq2Seq model;
  Vocab vocab;
  nlohmann::ordered_json meta;
};

inline LoadedModel load_model_checkpoint(const std::string& path) {
  CheckpointData data = load_checkpoint(path);
  LoadedModel out;
  out.meta = data.meta;
  out.vocab = vocab_from_json(data.meta.at("vocab"));
  out.model.build(dims_from_json(data.meta.at("dims")), 0);
  load_model_tensors(out.model, data, "model/");
  if (data.meta.value("frozen", false)) out.model.freeze();
  return out;
}

}  // namespace finex
