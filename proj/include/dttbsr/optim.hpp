#pragma once

#include <cmath>
#include <string>

#include "dttbsr/nn.hpp"

namespace dttbsr {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("AdamW betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("AdamW eps must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("AdamW weight decay must be non-negative");
  }
  friend bool operator==(const AdamWConfig&, const AdamWConfig&) = default;
};

// One AdamW update over every trainable entry of `store`. Moments live in the
// store's state entries "<prefix>.m.<name>" / "<prefix>.v.<name>" and the step
// count in "<prefix>.t", so checkpoints capture them with the parameters.
// Parameters without a gradient buffer are treated as having zero gradient.
template <class T>
void adamw_step(nn::ParameterStore<T>& store, const AdamWConfig& cfg, double lr, const std::string& prefix = "adamw") {
  cfg.validate();
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  nn::Tensor<T>& counter = store.state(prefix + ".t", {1});
  const double t = static_cast<double>(counter.data()[0]) + 1.0;
  counter.mutable_data()[0] = static_cast<T>(t);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, param] : store.parameters()) {
    const std::string m_name = prefix + ".m." + name, v_name = prefix + ".v." + name;
    store.state(m_name, param.shape());
    nn::Tensor<T>& v = store.state(v_name, param.shape());
    nn::Tensor<T>& m = store.state(m_name, param.shape());  // re-fetched: creating v may reallocate
    T* theta = param.mutable_data().data();
    T* mm = m.mutable_data().data();
    T* vv = v.mutable_data().data();
    const T* g = param.has_grad() ? param.grad().data() : nullptr;
    for (std::size_t i = 0; i < param.numel(); ++i) {
      const double gi = g ? static_cast<double>(g[i]) : 0.0;
      const double mi = cfg.beta1 * mm[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * vv[i] + (1.0 - cfg.beta2) * gi * gi;
      mm[i] = static_cast<T>(mi);
      vv[i] = static_cast<T>(vi);
      const double m_hat = mi / c1, v_hat = vi / c2;
      const double th = theta[i];
      theta[i] = static_cast<T>(th - lr * m_hat / (std::sqrt(v_hat) + cfg.eps) - lr * cfg.weight_decay * th);
    }
  }
}

}  // namespace dttbsr
