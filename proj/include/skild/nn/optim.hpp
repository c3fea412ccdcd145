#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "skild/nn/params.hpp"

namespace skild::nn {

enum class OptimKind { Adam, RAdam };

struct OptimConfig {
  OptimKind kind = OptimKind::Adam;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One update over every trainable entry from its accumulated gradient, then
// gradients are cleared. RAdam uses the rectified adaptive term and falls
// back to SGD-with-momentum while the rectification is undefined.
inline void optimizer_step(const OptimConfig& cfg, ParamStore& ps) {
  const double rho_inf = 2.0 / (1.0 - cfg.beta2) - 1.0;
  for (auto& [name, e] : ps.entries) {
    if (!e.trainable) continue;
    e.step += 1;
    const double t = static_cast<double>(e.step);
    const double b1t = std::pow(cfg.beta1, t);
    const double b2t = std::pow(cfg.beta2, t);
    for (size_t k = 0; k < e.value.size(); ++k) {
      const double g = e.grad.a[k];
      e.m.a[k] = cfg.beta1 * e.m.a[k] + (1.0 - cfg.beta1) * g;
      e.v.a[k] = cfg.beta2 * e.v.a[k] + (1.0 - cfg.beta2) * g * g;
    }
    if (cfg.kind == OptimKind::Adam) {
      const double c1 = 1.0 / (1.0 - b1t);
      const double c2 = 1.0 / (1.0 - b2t);
      for (size_t k = 0; k < e.value.size(); ++k) {
        const double mhat = e.m.a[k] * c1;
        const double vhat = e.v.a[k] * c2;
        e.value.a[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
      }
    } else {
      const double rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
      const double c1 = 1.0 / (1.0 - b1t);
      if (rho_t > 4.0) {
        const double r = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                                   ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
        const double c2 = 1.0 / (1.0 - b2t);
        for (size_t k = 0; k < e.value.size(); ++k) {
          const double mhat = e.m.a[k] * c1;
          const double vhat = std::sqrt(e.v.a[k] * c2);
          e.value.a[k] -= cfg.lr * r * mhat / (vhat + cfg.eps);
        }
      } else {
        for (size_t k = 0; k < e.value.size(); ++k) e.value.a[k] -= cfg.lr * e.m.a[k] * c1;
      }
    }
    e.grad.fill(0.0);
  }
}

// Compares reverse-mode gradients against central finite differences.
// `loss` must rebuild its tape and call backward on every invocation with
// with_grad=true; with_grad=false must compute the same scalar without
// touching gradient buffers.
inline double grad_check(const std::function<double(bool with_grad)>& loss,
                         std::vector<ParamStore*> stores, double eps = 1e-4) {
  for (ParamStore* ps : stores) ps->zero_grads();
  loss(true);

  std::vector<std::vector<double>> analytic;
  for (ParamStore* ps : stores)
    for (auto& [name, e] : ps->entries)
      if (e.trainable) analytic.push_back(e.grad.a);

  double max_rel = 0.0;
  size_t idx = 0;
  for (ParamStore* ps : stores) {
    for (auto& [name, e] : ps->entries) {
      if (!e.trainable) continue;
      const std::vector<double>& ga = analytic[idx++];
      for (size_t k = 0; k < e.value.size(); ++k) {
        const double orig = e.value.a[k];
        e.value.a[k] = orig + eps;
        const double fp = loss(false);
        e.value.a[k] = orig - eps;
        const double fm = loss(false);
        e.value.a[k] = orig;
        const double fd = (fp - fm) / (2.0 * eps);
        const double denom = std::max(std::abs(ga[k]) + std::abs(fd), 1e-3);
        max_rel = std::max(max_rel, std::abs(ga[k] - fd) / denom);
      }
    }
  }
  for (ParamStore* ps : stores) ps->zero_grads();
  return max_rel;
}

}  // namespace skild::nn
