#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "macode/error.hpp"
#include "macode/tensor.hpp"

namespace macode {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;
};

/// First and second moment estimates, one buffer per parameter tensor.
template <class T = float>
struct AdamState {
  std::vector<std::vector<T>> first;
  std::vector<std::vector<T>> second;
  long step = 0;
};

/// One AdamW update. The decoupled decay theta <- theta - lr * wd * theta is
/// applied before, and separately from, the bias-corrected adaptive step.
template <class T>
void adamw_step(std::span<ad::Tensor<T>* const> params, std::span<const std::vector<T>* const> grads,
                AdamState<T>& state, const AdamWConfig& cfg) {
  if (params.size() != grads.size()) throw ShapeMismatch("adamw_step: one gradient per parameter required");
  if (state.first.empty()) {
    for (auto* p : params) {
      state.first.emplace_back(p->numel(), T(0));
      state.second.emplace_back(p->numel(), T(0));
    }
  }
  if (state.first.size() != params.size()) throw ShapeMismatch("adamw_step: optimizer state does not match");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& theta = params[k]->data;
    const auto& g = *grads[k];
    auto& m = state.first[k];
    auto& v = state.second[k];
    if (g.size() != theta.size() || m.size() != theta.size()) throw ShapeMismatch("adamw_step: size mismatch");
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g[i];
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      double th = theta[i] * decay;
      th -= cfg.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
      theta[i] = static_cast<T>(th);
    }
  }
}

}  // namespace macode
