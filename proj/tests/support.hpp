#pragma once

// Shared helpers for the unit suites: random tensors and a central-difference
// gradient oracle that works on plain tensors, independent of the tape.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "pvgru/tensor.hpp"

namespace testing_support {

using pvgru::Shape;
using pvgru::Tensor;

inline Tensor random_tensor(Shape shape, std::mt19937_64& g, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = n(g);
  return t;
}

/// d f / d x by central differences, element by element.
inline Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, Tensor x, double eps = 1e-5) {
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double up = f(x);
    x[i] = saved - eps;
    const double down = f(x);
    x[i] = saved;
    g[i] = (up - down) / (2 * eps);
  }
  return g;
}

inline double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a[i] - b[i]);
    if (d == 0) continue;
    worst = std::max(worst, d / std::max({std::abs(a[i]), std::abs(b[i]), floor}));
  }
  return worst;
}

/// E_p[log p(x) - log q(x)] for diagonal Gaussians, estimated from n draws of p.
inline double monte_carlo_kl(const std::vector<double>& mu1, const std::vector<double>& lv1,
                             const std::vector<double>& mu2, const std::vector<double>& lv2, std::size_t n,
                             std::mt19937_64& g) {
  std::normal_distribution<double> std_normal(0.0, 1.0);
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    double log_ratio = 0.0;
    for (std::size_t i = 0; i < mu1.size(); ++i) {
      const double x = mu1[i] + std::exp(0.5 * lv1[i]) * std_normal(g);
      const double a = (x - mu1[i]) * (x - mu1[i]) / std::exp(lv1[i]);
      const double b = (x - mu2[i]) * (x - mu2[i]) / std::exp(lv2[i]);
      log_ratio += 0.5 * (lv2[i] - lv1[i]) + 0.5 * (b - a);
    }
    total += log_ratio;
  }
  return total / static_cast<double>(n);
}

/// Exact two-sided bootstrap p-value: every multiset of n indices drawn with
/// replacement, weighted by its multinomial count n! / prod(c_i!).
inline double exhaustive_bootstrap_p(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  std::vector<double> log_fact(n + 1, 0.0);
  for (std::size_t k = 1; k <= n; ++k) log_fact[k] = log_fact[k - 1] + std::log(static_cast<double>(k));
  double positive = 0.0, total = 0.0;
  std::vector<std::size_t> counts(n, 0);
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t i, std::size_t left) {
    if (i + 1 == n) {
      counts[i] = left;
      double log_w = log_fact[n], sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        log_w -= log_fact[counts[j]];
        sum += static_cast<double>(counts[j]) * d[j];
      }
      const double w = std::exp(log_w);
      total += w;
      if (sum > 1e-12) positive += w;
      else if (sum >= -1e-12) positive += 0.5 * w;
      return;
    }
    for (std::size_t c = 0; c <= left; ++c) {
      counts[i] = c;
      rec(i + 1, left - c);
    }
  };
  rec(0, n);
  const double f = positive / total;
  return 2.0 * std::min(f, 1.0 - f);
}

}  // namespace testing_support
