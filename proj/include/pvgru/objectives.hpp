#pragma once

// Training objectives: closed-form diagonal-Gaussian KL (consistency), Huber
// reconstruction of h from the summarizing variable, masked token NLL, and the
// batch-averaged sum of all enabled terms.

#include <stdexcept>
#include <string>

#include "pvgru/cells.hpp"

namespace pvgru {

/// psi: d_x -> [mu_x | logvar_x], the learned input distribution p(x_t).
using InputDistHead = FeedForward<Tensor>;
/// f: d_h -> d_h, decodes the summarizing variable back to the hidden state.
using ReconstructionHead = FeedForward<Tensor>;

inline InputDistHead init_input_dist_head(std::size_t d_x, std::size_t d_h, std::size_t depth, Rng& rng) {
  return init_feed_forward(d_x, d_h, 2 * d_h, depth, rng);
}

inline ReconstructionHead init_reconstruction_head(std::size_t d_h, std::size_t depth, Rng& rng) {
  return init_feed_forward(d_h, d_h, d_h, depth, rng);
}

/// Which PVGRU instances contribute per-step objectives.
struct LossLevels {
  bool encoder = true;
  bool context = true;
  bool decoder = true;
};

struct LossWeights {
  bool use_reconstruction = true;
  bool use_consistency = true;
  double delta = 1.0;
  LossLevels levels;

  void validate() const {
    if (!(delta > 0)) throw std::invalid_argument("loss delta must be positive, got " + std::to_string(delta));
  }
};

/// Per-row KL(N(mu1, e^lv1) || N(mu2, e^lv2)) summed over columns: [B x d] -> [B].
inline Var kl_diag_gaussian_rows(Var mu1, Var logvar1, Var mu2, Var logvar2) {
  mu1.value().check_same(logvar1.value(), "kl_diag_gaussian");
  mu1.value().check_same(mu2.value(), "kl_diag_gaussian");
  mu1.value().check_same(logvar2.value(), "kl_diag_gaussian");
  Var half_log_ratio = affine(logvar2 - logvar1, 0.5, 0.0);
  Var inv_var2 = exp(neg(logvar2));
  Var quad = (exp(logvar1) + square(mu1 - mu2)) * inv_var2;
  Var terms = half_log_ratio + affine(quad, 0.5, -0.5);
  if (terms.value().rank() == 2) return sum(terms, 1);
  return reshape(sum(terms), Shape{1});
}

/// Closed-form KL summed over all elements.
inline Var kl_diag_gaussian(Var mu1, Var logvar1, Var mu2, Var logvar2) {
  return sum(kl_diag_gaussian_rows(mu1, logvar1, mu2, logvar2));
}

/// Per-row KL(psi(x_t) || N(mu_t, e^logvar_t)).
inline Var consistency_loss_rows(Var x, Var mu, Var logvar, const FeedForward<Var>& psi) {
  const std::size_t d = mu.shape().at(1);
  Var out = apply_feed_forward(psi, x);
  if (out.shape().at(1) != 2 * d) {
    throw DimensionError("consistency_loss: input head width " + std::to_string(out.shape().at(1)) +
                         " does not match 2 x " + std::to_string(d));
  }
  Var mu_x = slice_cols(out, 0, d);
  Var lv_x = clamp(slice_cols(out, d, 2 * d), kLogvarMin, kLogvarMax);
  return kl_diag_gaussian_rows(mu_x, lv_x, mu, logvar);
}

inline Var consistency_loss(Var x, Var mu, Var logvar, const FeedForward<Var>& psi) {
  return sum(consistency_loss_rows(x, mu, logvar, psi));
}

/// Per-row sum of Huber(f(v) - h) with threshold delta.
inline Var reconstruction_loss_rows(Var v, Var h, const FeedForward<Var>& f, double delta) {
  if (!(delta > 0)) throw std::invalid_argument("reconstruction_loss: delta must be positive");
  v.value().check_same(h.value(), "reconstruction_loss");
  return sum(huber(apply_feed_forward(f, v) - h, delta), 1);
}

inline Var reconstruction_loss(Var v, Var h, const FeedForward<Var>& f, double delta) {
  return sum(reconstruction_loss_rows(v, h, f, delta));
}

/// Masked token negative log-likelihood, summed over valid positions.
inline Var nll_loss(Var logits, std::span<const int> targets, std::span<const double> mask) {
  return softmax_cross_entropy(logits, targets, mask);
}

/// Batch-averaged loss terms. total = ll [+ rec] [+ cons]; disabled terms are
/// reported as exactly 0 and never enter the sum.
struct LossTerms {
  Var total;
  Var ll;
  Var rec;
  Var cons;
};

struct LossValues {
  double total = 0.0;
  double ll = 0.0;
  double rec = 0.0;
  double cons = 0.0;
};

inline LossValues values_of(const LossTerms& t) {
  return {t.total.value().item(), t.ll.value().item(), t.rec.value().item(), t.cons.value().item()};
}

/// Combines per-example sums over timesteps ([B] vectors) into the batch mean.
inline LossTerms total_loss(Var ll_per_example, Var rec_per_example, Var cons_per_example, const LossWeights& w) {
  w.validate();
  Tape& tape = *ll_per_example.tape();
  const double batch = static_cast<double>(ll_per_example.value().size());
  if (batch == 0) throw std::invalid_argument("total_loss: empty batch");
  auto batch_mean = [batch](Var per_example) {
    return detail::unary(sum(per_example), [batch](double v) { return v / batch; },
                         [batch](double, double) { return 1.0 / batch; });
  };
  LossTerms t;
  t.ll = batch_mean(ll_per_example);
  t.rec = w.use_reconstruction && rec_per_example ? batch_mean(rec_per_example) : tape.constant(Tensor::scalar(0.0));
  t.cons = w.use_consistency && cons_per_example ? batch_mean(cons_per_example) : tape.constant(Tensor::scalar(0.0));
  t.total = t.ll;
  if (w.use_reconstruction && rec_per_example) t.total = t.total + t.rec;
  if (w.use_consistency && cons_per_example) t.total = t.total + t.cons;
  return t;
}

}  // namespace pvgru
