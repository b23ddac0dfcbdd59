#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "rpt/core/parameter.hpp"

namespace rpt {

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-7;
};

/// One Adam update with bias correction. Weight decay enters as an additive
/// gradient term (g + wd * theta). Gradients are zeroed afterwards.
template <std::floating_point T>
void adam_step(std::span<Parameter<T>* const> params, const AdamConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw ValidationError("adam: learning rate must be positive");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
    throw ValidationError("adam: betas must lie in [0, 1)");
  }
  for (Parameter<T>* p : params) {
    p->step_count += 1;
    const double t = static_cast<double>(p->step_count);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    T* theta = p->value.data();
    T* g = p->grad.data();
    T* m = p->adam_m.data();
    T* v = p->adam_v.data();
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double gi = static_cast<double>(g[i]) + cfg.weight_decay * static_cast<double>(theta[i]);
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / c1;
      const double vhat = vi / c2;
      theta[i] = static_cast<T>(theta[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
      g[i] = T{0};
    }
  }
}

template <std::floating_point T>
void adam_step(std::vector<Parameter<T>*> const& params, const AdamConfig& cfg) {
  adam_step(std::span<Parameter<T>* const>(params), cfg);
}

}  // namespace rpt
