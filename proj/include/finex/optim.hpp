#pragma once

#include <cmath>
#include <vector>

#include "finex/model.hpp"

namespace finex {

// Cosine annealing with warm restarts, stateless in the global step so that
// checkpoint resume reproduces the schedule exactly.
struct CosineWarmRestarts {
  double base_lr = 3e-3;
  double lr_min = 0.0;
  long period0 = 50;  // optimizer steps in the first cycle
  double mult = 2.0;

  double at(long global_step) const {
    long t = global_step;
    double period = static_cast<double>(period0);
    while (t >= static_cast<long>(period)) {
      t -= static_cast<long>(period);
      period = std::max(1.0, period * mult);
    }
    double frac = static_cast<double>(t) / period;
    return lr_min + 0.5 * (base_lr - lr_min) * (1.0 + std::cos(3.14159265358979323846 * frac));
  }
};

// AdamW: Adam moments plus decoupled weight decay on the raw parameters.
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double weight_decay = 0.01;

  void step(const std::vector<ParamTensor*>& params, double lr, long t) {
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (ParamTensor* p : params) {
      if (!p->trainable) continue;
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        double g = p->grad.d[i];
        p->m.d[i] = beta1 * p->m.d[i] + (1.0 - beta1) * g;
        p->v.d[i] = beta2 * p->v.d[i] + (1.0 - beta2) * g * g;
        double mhat = p->m.d[i] / bc1;
        double vhat = p->v.d[i] / bc2;
        p->value.d[i] -= lr * (mhat / (std::sqrt(vhat) + eps) +
                               weight_decay * p->value.d[i]);
      }
    }
  }
};

// Global-norm gradient clipping over the trainable parameters.
inline double clip_grad_norm(const std::vector<ParamTensor*>& params, double max_norm) {
  double sq = 0.0;
  for (ParamTensor* p : params) {
    if (!p->trainable) continue;
    for (double g : p->grad.d) sq += g * g;
  }
  double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    double s = max_norm / norm;
    for (ParamTensor* p : params) {
      if (!p->trainable) continue;
      for (double& g : p->grad.d) g *= s;
    }
  }
  return norm;
}

}  // namespace finex
