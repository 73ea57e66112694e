#pragma once

#include <cmath>

#include "heatlens/tensor.hpp"

namespace heatlens {

// Warmup + cosine annealing profile over epochs:
// linear warmup_start_lr -> base_lr across warmup_epochs, then cosine
// base_lr -> min_lr across the remaining epochs. Continuous at the boundary.
struct ScheduleConfig {
  double base_lr = 2e-4;
  double warmup_start_lr = 1e-6;
  double min_lr = 1e-5;
  double warmup_epochs = 10;
  double total_epochs = 200;

  void validate() const {
    if (!(warmup_start_lr <= min_lr && min_lr <= base_lr))
      fail_value("ScheduleConfig", "want warmup_start_lr <= min_lr <= base_lr");
    if (!(warmup_epochs < total_epochs))
      fail_value("ScheduleConfig", "want warmup_epochs < total_epochs");
  }
};

double lr_at(const ScheduleConfig& s, double epoch);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// Decoupled-weight-decay Adam step over a named parameter set. Parameters and
// moments are replaced with fresh buffers (tensors stay immutable); the map
// iteration order is lexicographic, so updates are bit-reproducible.
// step_num counts completed steps including this one (1-based) for bias
// correction. Non-finite gradients abort before any state changes.
template <typename T>
void adamw_step(NamedTensors<T>& params, const NamedTensors<T>& grads, double lr,
                const AdamWConfig& cfg, NamedTensors<T>& m, NamedTensors<T>& v,
                long step_num) {
  if (step_num < 1) fail_value("adamw_step", "step_num must be >= 1");
  for (const auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) fail_value("adamw_step", "missing gradient for '" + name + "'");
    if (git->second.shape() != p.shape())
      fail_shape("adamw_step", "gradient shape mismatch for '" + name + "'");
    for (T g : git->second.values())
      if (!std::isfinite(static_cast<double>(g)))
        fail_value("adamw_step", "non-finite gradient in parameter '" + name + "'");
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_num));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_num));
  for (auto& [name, p] : params) {
    const auto& g = grads.at(name).values();
    auto mit = m.find(name), vit = v.find(name);
    if (mit == m.end()) mit = m.emplace(name, Tensor<T>::zeros(p.shape())).first;
    if (vit == v.end()) vit = v.emplace(name, Tensor<T>::zeros(p.shape())).first;
    const auto& mv = mit->second.values();
    const auto& vv = vit->second.values();
    std::vector<T> nm(g.size()), nv(g.size()), np(g.size());
    const auto& pv = p.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = cfg.beta1 * static_cast<double>(mv[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * static_cast<double>(vv[i]) + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      const double upd = mhat / (std::sqrt(vhat) + cfg.eps) +
                         cfg.weight_decay * static_cast<double>(pv[i]);
      nm[i] = static_cast<T>(mi);
      nv[i] = static_cast<T>(vi);
      np[i] = static_cast<T>(static_cast<double>(pv[i]) - lr * upd);
    }
    mit->second = Tensor<T>(p.shape(), std::move(nm));
    vit->second = Tensor<T>(p.shape(), std::move(nv));
    p = Tensor<T>(p.shape(), std::move(np));
  }
}

}  // namespace heatlens
