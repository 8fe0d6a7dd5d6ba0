#pragma once

// GRU and pseudo-variational GRU cells. Row-vector convention throughout: a batch
// of B inputs is a [B x d_x] matrix and every weight maps rows on the right
// (x * W), so W_r is stored as [d_x x d_h].
//
// The PVGRU carries a summarizing variable v next to h. At each step:
//   r = sig(x W_r + h U_r + v V_r + b_r)       z = sig(x W_z + h U_z + v V_z + b_z)
//   g = sig(x W_g + h U_g + v V_g + b_g)
//   h~ = tanh(x W + (r.h) U + (g.v) V + b_h)   h' = z.h + (1-z).h~
//   (mu, logvar) = phi(h' - h),  v~ ~ N(mu, exp(logvar)),  v' = g.v~ + (1-g).v

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>
#include <type_traits>
#include <utility>
#include <vector>

#include "pvgru/ops.hpp"
#include "pvgru/random.hpp"

namespace pvgru {

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

enum class CellKind { gru, pvgru };

inline const char* to_string(CellKind k) { return k == CellKind::gru ? "gru" : "pvgru"; }

inline CellKind parse_cell_kind(const std::string& s) {
  if (s == "gru") return CellKind::gru;
  if (s == "pvgru") return CellKind::pvgru;
  throw std::invalid_argument("unknown cell '" + s + "' (expected gru or pvgru)");
}

/// Visits every (name, member) pair of a parameter struct, recursively.
template <class S, class F>
void for_each_param(S& s, const std::string& prefix, F&& f) {
  std::remove_const_t<S>::fields(s, prefix, f);
}

/// Binds a tensor as a borrowed tape leaf; absent tensors become absent Vars.
struct Binder {
  Tape* tape;
  Var operator()(const Tensor& t) const { return t.empty() ? Var{} : tape->param(t); }
};

template <class T>
struct Dense {
  T w;
  T b;

  template <class Self, class F>
  static void fields(Self& s, const std::string& p, F& f) {
    f(p + "w", s.w);
    f(p + "b", s.b);
  }
  template <class F>
  auto transform(F& f) const -> Dense<decltype(f(w))> {
    return {f(w), f(b)};
  }
};

/// Tanh hidden layers followed by a linear output layer.
template <class T>
struct FeedForward {
  std::vector<Dense<T>> layers;

  template <class Self, class F>
  static void fields(Self& s, const std::string& p, F& f) {
    for (std::size_t i = 0; i < s.layers.size(); ++i) for_each_param(s.layers[i], p + std::to_string(i) + "/", f);
  }
  template <class F>
  auto transform(F& f) const -> FeedForward<decltype(f(std::declval<const T&>()))> {
    FeedForward<decltype(f(std::declval<const T&>()))> out;
    for (const auto& l : layers) out.layers.push_back(l.transform(f));
    return out;
  }
};

template <class T>
struct GruWeights {
  T w_r, u_r, b_r;
  T w_z, u_z, b_z;
  T w_h, u_h, b_h;

  template <class Self, class F>
  static void fields(Self& s, const std::string& p, F& f) {
    f(p + "w_r", s.w_r), f(p + "u_r", s.u_r), f(p + "b_r", s.b_r);
    f(p + "w_z", s.w_z), f(p + "u_z", s.u_z), f(p + "b_z", s.b_z);
    f(p + "w_h", s.w_h), f(p + "u_h", s.u_h), f(p + "b_h", s.b_h);
  }
  template <class F>
  auto transform(F& f) const -> GruWeights<decltype(f(w_r))> {
    return {f(w_r), f(u_r), f(b_r), f(w_z), f(u_z), f(b_z), f(w_h), f(u_h), f(b_h)};
  }
};

/// GRU weights plus the summarizing-variable matrices, the summarizing gate and
/// the variation head phi (h_t - h_{t-1} -> [mu | logvar]).
template <class T>
struct PvgruWeights {
  GruWeights<T> gru;
  T v_r, v_z, v_h;
  T w_g, u_g, v_g, b_g;
  FeedForward<T> variation;

  template <class Self, class F>
  static void fields(Self& s, const std::string& p, F& f) {
    for_each_param(s.gru, p, f);
    f(p + "v_r", s.v_r), f(p + "v_z", s.v_z), f(p + "v_h", s.v_h);
    f(p + "w_g", s.w_g), f(p + "u_g", s.u_g), f(p + "v_g", s.v_g), f(p + "b_g", s.b_g);
    for_each_param(s.variation, p + "variation/", f);
  }
  template <class F>
  auto transform(F& f) const -> PvgruWeights<decltype(f(v_r))> {
    return {gru.transform(f), f(v_r), f(v_z), f(v_h), f(w_g), f(u_g), f(v_g), f(b_g), variation.transform(f)};
  }
};

using GruParams = GruWeights<Tensor>;
using PvgruParams = PvgruWeights<Tensor>;
using VariationHead = FeedForward<Tensor>;

/// Per-step state. For GRU cells only h is present.
struct StepState {
  Var h;
  Var v;
  Var mu;
  Var logvar;
  Var g;
  Var v_tilde;
};

// ---------------------------------------------------------------------------
// Initialisation

inline Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(Shape{fan_in, fan_out});
  for (double& v : t.values()) v = rng.uniform(-limit, limit);
  return t;
}

inline Tensor maybe_bias(std::size_t n, bool use_bias) { return use_bias ? Tensor(Shape{n}) : Tensor(); }

/// depth tanh layers of width d_hidden, then a linear map to d_out.
inline FeedForward<Tensor> init_feed_forward(std::size_t d_in, std::size_t d_hidden, std::size_t d_out,
                                             std::size_t depth, Rng& rng) {
  FeedForward<Tensor> ff;
  std::size_t in = d_in;
  for (std::size_t i = 0; i < depth; ++i) {
    ff.layers.push_back({glorot(in, d_hidden, rng), Tensor(Shape{d_hidden})});
    in = d_hidden;
  }
  ff.layers.push_back({glorot(in, d_out, rng), Tensor(Shape{d_out})});
  return ff;
}

inline GruParams init_gru(std::size_t d_x, std::size_t d_h, Rng& rng, bool use_bias = true) {
  GruParams p;
  p.w_r = glorot(d_x, d_h, rng), p.u_r = glorot(d_h, d_h, rng), p.b_r = maybe_bias(d_h, use_bias);
  p.w_z = glorot(d_x, d_h, rng), p.u_z = glorot(d_h, d_h, rng), p.b_z = maybe_bias(d_h, use_bias);
  p.w_h = glorot(d_x, d_h, rng), p.u_h = glorot(d_h, d_h, rng), p.b_h = maybe_bias(d_h, use_bias);
  return p;
}

inline PvgruParams init_pvgru(std::size_t d_x, std::size_t d_h, Rng& rng, bool use_bias = true,
                              std::size_t head_depth = 1) {
  PvgruParams p;
  p.gru = init_gru(d_x, d_h, rng, use_bias);
  p.v_r = glorot(d_h, d_h, rng), p.v_z = glorot(d_h, d_h, rng), p.v_h = glorot(d_h, d_h, rng);
  p.w_g = glorot(d_x, d_h, rng), p.u_g = glorot(d_h, d_h, rng), p.v_g = glorot(d_h, d_h, rng);
  p.b_g = maybe_bias(d_h, use_bias);
  p.variation = init_feed_forward(d_h, d_h, 2 * d_h, head_depth, rng);
  return p;
}

// ---------------------------------------------------------------------------
// Forward maps

inline Var apply_feed_forward(const FeedForward<Var>& ff, Var x) {
  for (std::size_t i = 0; i < ff.layers.size(); ++i) {
    x = linear(x, ff.layers[i].w, ff.layers[i].b);
    if (i + 1 < ff.layers.size()) x = tanh(x);
  }
  return x;
}

namespace detail {

// x W + h U [+ v V] [+ b]; absent terms are skipped.
inline Var preactivation(Var x, Var w, Var h, Var u, Var v, Var vm, Var b) {
  Var s = matmul(x, w) + matmul(h, u);
  if (v && vm) s = s + matmul(v, vm);
  if (b) s = s + broadcast_to(b, s.shape());
  return s;
}

inline Var one_minus(Var x) { return affine(x, -1.0, 1.0); }

}  // namespace detail

/// One GRU step on a batch of rows; z gates the previous state.
inline Var gru_step(Var x, Var h_prev, const GruWeights<Var>& p) {
  if (x.shape().at(0) != h_prev.shape().at(0) || p.w_r.shape().at(0) != x.shape().at(1) ||
      p.u_r.shape().at(0) != h_prev.shape().at(1)) {
    throw DimensionError("gru_step: input " + shape_string(x.shape()) + " / state " +
                         shape_string(h_prev.shape()) + " do not match W_r " + shape_string(p.w_r.shape()) +
                         " and U_r " + shape_string(p.u_r.shape()));
  }
  Var r = sigmoid(detail::preactivation(x, p.w_r, h_prev, p.u_r, {}, {}, p.b_r));
  Var z = sigmoid(detail::preactivation(x, p.w_z, h_prev, p.u_z, {}, {}, p.b_z));
  Var cand = tanh(detail::preactivation(x, p.w_h, r * h_prev, p.u_h, {}, {}, p.b_h));
  return z * h_prev + detail::one_minus(z) * cand;
}

/// v_0: N(0, I) draw in sampling mode, the zero mean otherwise.
inline Tensor init_summarizing(Sampler& sampler, std::size_t rows, std::size_t d_h) {
  if (sampler.stochastic() && !sampler.zero_initial_v) return sampler.draw(rows, d_h);
  return Tensor(Shape{rows, d_h});
}

/// Reparameterised draw mu + exp(logvar / 2) * eps, or mu in mean mode.
/// logvar is clamped to [-10, 10] first.
inline Var sample_gaussian(Var mu, Var logvar, Sampler& sampler) {
  mu.value().check_same(logvar.value(), "sample_gaussian");
  if (!sampler.stochastic()) return mu;
  Var lv = clamp(logvar, kLogvarMin, kLogvarMax);
  Tensor eps = sampler.draw(mu.shape().at(0), mu.shape().at(1));
  Var e = mu.tape()->constant(std::move(eps));
  return mu + exp(affine(lv, 0.5, 0.0)) * e;
}

/// (mu, clamped logvar) from the variation head applied to the hidden-state increment.
inline std::pair<Var, Var> variation_params(const FeedForward<Var>& head, Var increment) {
  const std::size_t d = increment.shape().at(1);
  Var out = apply_feed_forward(head, increment);
  return {slice_cols(out, 0, d), clamp(slice_cols(out, d, 2 * d), kLogvarMin, kLogvarMax)};
}

inline StepState pvgru_step(Var x, const StepState& prev, const PvgruWeights<Var>& p, Sampler& sampler) {
  const Var h = prev.h;
  const Var v = prev.v;
  if (!v || v.shape() != h.shape()) {
    throw DimensionError("pvgru_step: summarizing variable must match the hidden state " + shape_string(h.shape()));
  }
  if (p.gru.w_r.shape().at(0) != x.shape().at(1) || x.shape().at(0) != h.shape().at(0) ||
      p.gru.u_r.shape().at(0) != h.shape().at(1)) {
    throw DimensionError("pvgru_step: input " + shape_string(x.shape()) + " / state " + shape_string(h.shape()) +
                         " do not match W_r " + shape_string(p.gru.w_r.shape()));
  }
  StepState s;
  Var r = sigmoid(detail::preactivation(x, p.gru.w_r, h, p.gru.u_r, v, p.v_r, p.gru.b_r));
  Var z = sigmoid(detail::preactivation(x, p.gru.w_z, h, p.gru.u_z, v, p.v_z, p.gru.b_z));
  s.g = sigmoid(detail::preactivation(x, p.w_g, h, p.u_g, v, p.v_g, p.b_g));
  Var cand = tanh(detail::preactivation(x, p.gru.w_h, r * h, p.gru.u_h, s.g * v, p.v_h, p.gru.b_h));
  s.h = z * h + detail::one_minus(z) * cand;
  std::tie(s.mu, s.logvar) = variation_params(p.variation, s.h - h);
  s.v_tilde = sample_gaussian(s.mu, s.logvar, sampler);
  s.v = s.g * s.v_tilde + detail::one_minus(s.g) * v;
  return s;
}

inline StepState cell_step(CellKind kind, Var x, const StepState& prev, const PvgruWeights<Var>& p,
                           Sampler& sampler) {
  if (kind == CellKind::pvgru) return pvgru_step(x, prev, p, sampler);
  StepState s;
  s.h = gru_step(x, prev.h, p.gru);
  return s;
}

/// Checks a [T x B] mask: entries in {0, 1}, each column 1s then 0s.
inline void validate_mask(const Tensor& mask) {
  if (mask.rank() != 2) throw DimensionError("mask must be [T x B], got " + shape_string(mask.shape()));
  const std::size_t steps = mask.shape()[0], rows = mask.shape()[1];
  for (std::size_t b = 0; b < rows; ++b) {
    bool ended = false;
    for (std::size_t t = 0; t < steps; ++t) {
      const double m = mask.at(t, b);
      if (m != 0.0 && m != 1.0) throw std::invalid_argument("mask entries must be 0 or 1");
      if (m == 0.0) ended = true;
      else if (ended) throw std::invalid_argument("mask column " + std::to_string(b) + " is not right-padded");
    }
  }
}

inline std::vector<std::size_t> mask_lengths(const Tensor& mask) {
  std::vector<std::size_t> len(mask.shape()[1], 0);
  for (std::size_t t = 0; t < mask.shape()[0]; ++t)
    for (std::size_t b = 0; b < len.size(); ++b) len[b] += mask.at(t, b) != 0.0;
  return len;
}

inline std::span<const double> mask_row(const Tensor& mask, std::size_t t) {
  return {mask.data() + t * mask.shape()[1], mask.shape()[1]};
}

/// Applies the cell over T steps. Where mask[t][b] = 0 the state of row b is
/// carried through unchanged.
inline std::vector<StepState> unroll(CellKind kind, std::span<const Var> inputs, const StepState& init,
                                     const Tensor& mask, const PvgruWeights<Var>& p, Sampler& sampler) {
  validate_mask(mask);
  if (mask.shape()[0] != inputs.size()) {
    throw DimensionError("unroll: mask has " + std::to_string(mask.shape()[0]) + " steps but " +
                         std::to_string(inputs.size()) + " inputs were given");
  }
  std::vector<StepState> states;
  states.reserve(inputs.size());
  StepState prev = init;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    StepState s = cell_step(kind, inputs[t], prev, p, sampler);
    auto m = mask_row(mask, t);
    if (std::any_of(m.begin(), m.end(), [](double x) { return x == 0.0; })) {
      s.h = select_rows(m, s.h, prev.h);
      if (s.v) s.v = select_rows(m, s.v, prev.v);
    }
    states.push_back(s);
    prev = s;
  }
  return states;
}

/// Initial state with h = 0 and v drawn per init_summarizing.
inline StepState initial_state(Tape& tape, CellKind kind, std::size_t rows, std::size_t d_h, Sampler& sampler) {
  StepState s;
  s.h = tape.constant(Tensor(Shape{rows, d_h}));
  if (kind == CellKind::pvgru) s.v = tape.constant(init_summarizing(sampler, rows, d_h));
  return s;
}

/// Inputs and states of one cell instance over a sequence, kept for the
/// per-step objectives.
struct CellTrace {
  std::vector<Var> inputs;
  std::vector<StepState> states;
  Tensor mask;
};

struct BidirectionalResult {
  std::vector<Var> outputs;    // per step, [B x d_h]
  std::vector<Var> v_outputs;  // per step projected summarizing variables (pvgru, on request)
  StepState final;
  CellTrace forward;
  CellTrace backward;
};

/// Reverses each row's valid prefix; padded positions keep their own step.
inline std::vector<Var> reverse_valid(std::span<const Var> seq, const std::vector<std::size_t>& lengths) {
  std::vector<Var> out;
  out.reserve(seq.size());
  std::vector<RowRef> refs(lengths.size());
  for (std::size_t t = 0; t < seq.size(); ++t) {
    for (std::size_t b = 0; b < lengths.size(); ++b) refs[b] = {t < lengths[b] ? lengths[b] - 1 - t : t, b};
    out.push_back(gather_rows(seq, refs));
  }
  return out;
}

/// Forward and backward unrolls; per-step outputs are [h_fwd ; h_bwd] * proj_h,
/// final h is the projection of both directions' final h. final v is
/// [v_fwd ; v_bwd] * proj_v when proj_v is present. v_outputs (on request) are
/// the unprojected per-step [v_fwd ; v_bwd].
inline BidirectionalResult bidirectional_encode(CellKind kind, std::span<const Var> inputs, const Tensor& mask,
                                                const PvgruWeights<Var>& fwd, const PvgruWeights<Var>& bwd,
                                                Var proj_h, Var proj_v, Sampler& sampler,
                                                bool want_v_outputs = false) {
  validate_mask(mask);
  Tape& tape = *proj_h.tape();
  const std::size_t rows = mask.shape()[1];
  const std::size_t d_h = fwd.gru.u_r.shape().at(0);
  if (bwd.gru.u_r.shape().at(0) != d_h || proj_h.shape().at(0) != 2 * d_h) {
    throw DimensionError("bidirectional_encode: directions and projection must share d_h");
  }
  const auto lengths = mask_lengths(mask);

  BidirectionalResult res;
  StepState init_f = initial_state(tape, kind, rows, d_h, sampler);
  StepState init_b = initial_state(tape, kind, rows, d_h, sampler);
  res.forward.inputs.assign(inputs.begin(), inputs.end());
  res.forward.mask = mask;
  res.forward.states = unroll(kind, res.forward.inputs, init_f, mask, fwd, sampler);
  res.backward.inputs = inputs.empty() ? std::vector<Var>{} : reverse_valid(inputs, lengths);
  res.backward.mask = mask;
  res.backward.states = unroll(kind, res.backward.inputs, init_b, mask, bwd, sampler);

  if (!inputs.empty()) {
    std::vector<Var> hb, vb;
    for (const auto& s : res.backward.states) hb.push_back(s.h), vb.push_back(s.v);
    std::vector<Var> hb_aligned = reverse_valid(hb, lengths);
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      res.outputs.push_back(matmul(concat_cols(res.forward.states[t].h, hb_aligned[t]), proj_h));
    }
    if (want_v_outputs && kind == CellKind::pvgru) {
      std::vector<Var> vb_aligned = reverse_valid(vb, lengths);
      for (std::size_t t = 0; t < inputs.size(); ++t) {
        res.v_outputs.push_back(concat_cols(res.forward.states[t].v, vb_aligned[t]));
      }
    }
  }
  const StepState& last_f = inputs.empty() ? init_f : res.forward.states.back();
  const StepState& last_b = inputs.empty() ? init_b : res.backward.states.back();
  res.final.h = matmul(concat_cols(last_f.h, last_b.h), proj_h);
  if (kind == CellKind::pvgru && proj_v) res.final.v = matmul(concat_cols(last_f.v, last_b.v), proj_v);
  return res;
}

}  // namespace pvgru
