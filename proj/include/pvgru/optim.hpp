#pragma once

// Adam with bias-corrected moments and optional global-norm gradient clipping.

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pvgru/tensor.hpp"

namespace pvgru {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::optional<double> clip_norm;

  void validate() const {
    std::vector<std::string> bad;
    if (!(learning_rate > 0)) bad.push_back("learning_rate must be > 0");
    if (!(beta1 > 0 && beta1 < 1)) bad.push_back("adam_beta1 must be in (0, 1)");
    if (!(beta2 > 0 && beta2 < 1)) bad.push_back("adam_beta2 must be in (0, 1)");
    if (!(eps > 0)) bad.push_back("adam_eps must be > 0");
    if (clip_norm && !(*clip_norm > 0)) bad.push_back("grad_clip_norm must be > 0");
    if (!bad.empty()) {
      std::string msg = "invalid optimizer settings:";
      for (const auto& b : bad) msg += "\n  " + b;
      throw std::invalid_argument(msg);
    }
  }
};

/// First and second moments for a flat list of parameter tensors.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;

  static AdamState like(const std::vector<Tensor*>& params) {
    AdamState s;
    for (const Tensor* p : params) {
      s.m.push_back(Tensor::zeros_like(*p));
      s.v.push_back(Tensor::zeros_like(*p));
    }
    return s;
  }
};

inline double global_norm(const std::vector<const Tensor*>& grads) {
  double s = 0.0;
  for (const Tensor* g : grads)
    for (double x : g->values()) s += x * x;
  return std::sqrt(s);
}

/// One update; returns the gradient norm before clipping.
inline double adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                        AdamState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " params, " + std::to_string(grads.size()) +
                         " grads, " + std::to_string(state.m.size()) + " moments");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i]->shape() || params[i]->shape() != state.m[i].shape()) {
      throw DimensionError("adam_step: parameter " + shape_string(params[i]->shape()) + " vs gradient " +
                           shape_string(grads[i]->shape()));
    }
  }
  const double norm = global_norm(grads);
  const double scale = cfg.clip_norm && norm > *cfg.clip_norm ? *cfg.clip_norm / norm : 1.0;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->values();
    auto g = grads[i]->values();
    auto m = state.m[i].values();
    auto v = state.v[i].values();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k] * scale;
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
      p[k] -= cfg.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.eps);
    }
  }
  return norm;
}

}  // namespace pvgru
