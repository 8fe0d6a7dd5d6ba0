#pragma once

// Central finite-difference verification of tape gradients.

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "pvgru/model.hpp"

namespace pvgru {

struct GradCheckOptions {
  // Central-difference step. Roundoff in (f(θ+ε) - f(θ-ε)) / 2ε grows like
  // |f| 1e-16 / ε, which at 1e-5 already reaches 1e-4 relative on gradients of
  // order 1e-5 for an O(10) loss; 1e-4 keeps both error sources near 1e-8.
  double eps = 1e-4;
  double tol = 1e-4;
  // Denominator floor: gradients below it are compared in absolute terms.
  double floor = 1e-5;
};

struct GradCheckReport {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst_name;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  double tol = 0.0;

  bool passed() const { return max_rel_error <= tol; }
};

inline std::ostream& operator<<(std::ostream& os, const GradCheckReport& r) {
  os << (r.passed() ? "PASS" : "FAIL") << " checked=" << r.checked << " max_rel_error=" << r.max_rel_error
     << " tol=" << r.tol;
  if (!r.worst_name.empty()) {
    os << " worst=" << r.worst_name << "[" << r.worst_index << "] analytic=" << r.worst_analytic
       << " numeric=" << r.worst_numeric;
  }
  return os;
}

/// |a - n| / max(|a|, |n|, floor); 0 when both are exactly zero.
inline double relative_error(double analytic, double numeric, double floor) {
  const double diff = std::abs(analytic - numeric);
  if (diff == 0.0) return 0.0;
  return diff / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// A parameter tensor perturbed in place, with the tape gradient to compare against.
struct CheckedParam {
  std::string name;
  Tensor* value;
  Tensor analytic;
};

/// Compares every element's analytic gradient with (f(θ+ε) − f(θ−ε)) / 2ε.
/// f must be deterministic: stochastic code has to replay the same noise on every call.
inline GradCheckReport finite_difference_check(std::vector<CheckedParam>& params, const std::function<double()>& f,
                                               const GradCheckOptions& opt = {}) {
  GradCheckReport rep;
  rep.tol = opt.tol;
  for (auto& p : params) {
    if (p.analytic.shape() != p.value->shape()) {
      throw DimensionError("gradcheck: gradient for " + p.name + " has shape " + shape_string(p.analytic.shape()) +
                           ", parameter has " + shape_string(p.value->shape()));
    }
    auto vals = p.value->values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + opt.eps;
      const double up = f();
      vals[i] = saved - opt.eps;
      const double down = f();
      vals[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.eps);
      const double err = relative_error(p.analytic[i], numeric, opt.floor);
      ++rep.checked;
      if (err > rep.max_rel_error || rep.worst_name.empty()) {
        rep.max_rel_error = err;
        rep.worst_name = p.name;
        rep.worst_index = i;
        rep.worst_analytic = p.analytic[i];
        rep.worst_numeric = numeric;
      }
    }
  }
  return rep;
}

/// Checks every present parameter of a model on one batch. In sample mode the
/// noise is frozen by reseeding the generator before each evaluation.
inline GradCheckReport check_model_gradients(Model& model, const Batch& batch, const LossWeights& weights,
                                             SampleMode mode, std::uint64_t noise_seed,
                                             const GradCheckOptions& opt = {}) {
  auto make_sampler = [&](Rng& rng) {
    Sampler s;
    s.mode = mode;
    s.rng = &rng;
    return s;
  };
  Rng rng(noise_seed);
  Sampler sampler = make_sampler(rng);
  LossAndGradients lg = loss_and_gradients(model, batch, weights, sampler);

  std::vector<CheckedParam> params;
  std::vector<std::pair<std::string, Tensor*>> values;
  for_each_present(model.weights, [&](const std::string& name, Tensor& t) { values.emplace_back(name, &t); });
  std::size_t k = 0;
  for_each_param(lg.grads, "", [&](const std::string& name, Tensor& g) {
    if (k < values.size() && values[k].first == name) {
      params.push_back({name, values[k].second, g});
      ++k;
    }
  });
  if (k != values.size()) throw std::logic_error("gradcheck: gradient layout does not match parameters");

  auto f = [&]() {
    Rng r(noise_seed);
    Sampler s = make_sampler(r);
    return loss_only(model, batch, weights, s).total;
  };
  return finite_difference_check(params, f, opt);
}

}  // namespace pvgru
