#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "finex/rng.hpp"
#include "json.hpp"

namespace finex {

// Every run-defining knob. Loss weights follow the reference setting
// (L = L_gen + 5*L_recon + 0.2*L_cl); model dims are desk-scale defaults.
struct TrainConfig {
  double alpha = 5.0;  // reconstruction loss weight
  double beta = 0.2;   // contrastive loss weight
  double tau = 1.0;    // InfoNCE temperature
  double tau_g = 1.0;  // Gumbel-softmax temperature
  int n_neg = 5;
  int context_window = 6;  // tokens appended when building hard negatives

  double lr = 3e-3;
  double eps = 1e-6;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  int epochs = 300;
  int batch_size = 8;
  int beam_size = 5;
  std::uint64_t seed = 1;
  std::string schedule = "cosine-warm-restarts";  // or "constant"
  int restart_period = 50;  // optimizer steps before the first restart
  int restart_mult = 2;
  double lr_min = 0.0;

  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int max_len = 128;

  int eval_every = 5;    // epochs between validation F1 evaluations
  double f1_stop = -1.0;  // stop early once validation F1 reaches this; <0 disables
};

namespace config_detail {

inline void assign(TrainConfig& c, const std::string& key, const std::string& val) {
  auto d = [&] { return std::stod(val); };
  auto i = [&] { return std::stoi(val); };
  if (key == "alpha") c.alpha = d();
  else if (key == "beta") c.beta = d();
  else if (key == "tau") c.tau = d();
  else if (key == "tau_g") c.tau_g = d();
  else if (key == "n_neg") c.n_neg = i();
  else if (key == "context_window") c.context_window = i();
  else if (key == "lr") c.lr = d();
  else if (key == "eps") c.eps = d();
  else if (key == "weight_decay") c.weight_decay = d();
  else if (key == "grad_clip") c.grad_clip = d();
  else if (key == "epochs") c.epochs = i();
  else if (key == "batch_size") c.batch_size = i();
  else if (key == "beam_size") c.beam_size = i();
  else if (key == "seed") c.seed = std::stoull(val);
  else if (key == "schedule") c.schedule = val;
  else if (key == "restart_period") c.restart_period = i();
  else if (key == "restart_mult") c.restart_mult = i();
  else if (key == "lr_min") c.lr_min = d();
  else if (key == "d_model") c.d_model = i();
  else if (key == "n_layers") c.n_layers = i();
  else if (key == "n_heads") c.n_heads = i();
  else if (key == "max_len") c.max_len = i();
  else if (key == "eval_every") c.eval_every = i();
  else if (key == "f1_stop") c.f1_stop = d();
  else throw std::runtime_error("unknown config key: " + key);
}

}  // namespace config_detail

// Flat key=value file, '#' starts a comment.
inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  TrainConfig c;
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t");
      auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty()) continue;
    config_detail::assign(c, key, val);
  }
  return c;
}

inline nlohmann::ordered_json config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["tau"] = c.tau;
  j["tau_g"] = c.tau_g;
  j["n_neg"] = c.n_neg;
  j["context_window"] = c.context_window;
  j["lr"] = c.lr;
  j["eps"] = c.eps;
  j["weight_decay"] = c.weight_decay;
  j["grad_clip"] = c.grad_clip;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["beam_size"] = c.beam_size;
  j["seed"] = c.seed;
  j["schedule"] = c.schedule;
  j["restart_period"] = c.restart_period;
  j["restart_mult"] = c.restart_mult;
  j["lr_min"] = c.lr_min;
  j["d_model"] = c.d_model;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["max_len"] = c.max_len;
  j["eval_every"] = c.eval_every;
  j["f1_stop"] = c.f1_stop;
  return j;
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (const auto& [k, v] : j.items()) {
    if (v.is_string())
      config_detail::assign(c, k, v.get<std::string>());
    else
      config_detail::assign(c, k, v.dump());
  }
  return c;
}

inline std::string config_hash(const TrainConfig& c) {
  std::uint64_t h = fnv1a(config_to_json(c).dump());
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace finex
