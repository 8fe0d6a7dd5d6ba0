#pragma once

// Differentiable primitives. Binary elementwise ops require equal shapes; bias
// addition goes through the explicit broadcast_to.

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pvgru/autodiff.hpp"

namespace pvgru {

namespace detail {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

inline ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.data(), static_cast<Eigen::Index>(t.shape()[0]), static_cast<Eigen::Index>(t.shape()[1]));
}
inline MutMap as_matrix(Tensor& t) {
  return MutMap(t.data(), static_cast<Eigen::Index>(t.shape()[0]), static_cast<Eigen::Index>(t.shape()[1]));
}

inline Tape& tape_of(Var a, const char* op) {
  if (!a) throw std::invalid_argument(std::string(op) + ": absent operand");
  return *a.tape();
}

inline Tape& tape_of(Var a, Var b, const char* op) {
  Tape& t = tape_of(a, op);
  if (!b || b.tape() != &t) throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
  return t;
}

inline void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
}

inline int next_id(const Tape& t) { return static_cast<int>(t.size()); }

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Unary elementwise op whose derivative is a function of (input, output).
template <class Fwd, class Deriv>
Var unary(Var x, Fwd fwd, Deriv deriv) {
  Tape& tape = tape_of(x, "unary");
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  const int self = next_id(tape);
  const int xi = x.id();
  return tape.record(std::move(out), {xi}, [xi, self, deriv](const Tape& t, const Tensor& g, Gradients& gs) {
    Tensor* dx = grad_target(t, gs, xi);
    if (!dx) return;
    const Tensor& in = t.value(xi);
    const Tensor& y = t.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*dx)[i] += g[i] * deriv(in[i], y[i]);
  });
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tape& tape = detail::tape_of(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_rank2(av, "matmul");
  detail::require_rank2(bv, "matmul");
  if (av.shape()[1] != bv.shape()[0]) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(av.shape()) + " x " +
                         shape_string(bv.shape()));
  }
  Tensor out(Shape{av.shape()[0], bv.shape()[1]});
  if (out.size() > 0) {
    auto o = detail::as_matrix(out);
    o.noalias() = detail::as_matrix(av) * detail::as_matrix(bv);
  }
  const int ai = a.id();
  const int bi = b.id();
  return tape.record(std::move(out), {ai, bi}, [ai, bi](const Tape& t, const Tensor& g, Gradients& gs) {
    if (g.size() == 0) return;
    auto gm = detail::as_matrix(g);
    if (Tensor* da = grad_target(t, gs, ai); da && da->size() > 0) {
      detail::as_matrix(*da).noalias() += gm * detail::as_matrix(t.value(bi)).transpose();
    }
    if (Tensor* db = grad_target(t, gs, bi); db && db->size() > 0) {
      detail::as_matrix(*db).noalias() += detail::as_matrix(t.value(ai)).transpose() * gm;
    }
  });
}

inline Var add(Var a, Var b) {
  Tape& tape = detail::tape_of(a, b, "add");
  a.value().check_same(b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  const int ai = a.id(), bi = b.id();
  return tape.record(std::move(out), {ai, bi}, [ai, bi](const Tape& t, const Tensor& g, Gradients& gs) {
    if (Tensor* da = grad_target(t, gs, ai)) *da += g;
    if (Tensor* db = grad_target(t, gs, bi)) *db += g;
  });
}

inline Var sub(Var a, Var b) {
  Tape& tape = detail::tape_of(a, b, "sub");
  a.value().check_same(b.value(), "sub");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const int ai = a.id(), bi = b.id();
  return tape.record(std::move(out), {ai, bi}, [ai, bi](const Tape& t, const Tensor& g, Gradients& gs) {
    if (Tensor* da = grad_target(t, gs, ai)) *da += g;
    if (Tensor* db = grad_target(t, gs, bi)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*db)[i] -= g[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  Tape& tape = detail::tape_of(a, b, "mul");
  a.value().check_same(b.value(), "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const int ai = a.id(), bi = b.id();
  return tape.record(std::move(out), {ai, bi}, [ai, bi](const Tape& t, const Tensor& g, Gradients& gs) {
    const Tensor& av = t.value(ai);
    const Tensor& bv = t.value(bi);
    if (Tensor* da = grad_target(t, gs, ai)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*da)[i] += g[i] * bv[i];
    }
    if (Tensor* db = grad_target(t, gs, bi)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*db)[i] += g[i] * av[i];
    }
  });
}

inline Var neg(Var x) {
  return detail::unary(x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

inline Var sigmoid(Var x) {
  return detail::unary(x, [](double v) { return detail::sigmoid(v); }, [](double, double s) { return s * (1.0 - s); });
}

inline Var tanh(Var x) {
  return detail::unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var exp(Var x) {
  return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var abs(Var x) {
  return detail::unary(
      x, [](double v) { return std::abs(v); }, [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

inline Var square(Var x) {
  return detail::unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

/// scale * x + shift, elementwise.
inline Var affine(Var x, double scale, double shift) {
  return detail::unary(x, [=](double v) { return scale * v + shift; }, [=](double, double) { return scale; });
}

/// Gradient passes only where lo <= x <= hi.
inline Var clamp(Var x, double lo, double hi) {
  return detail::unary(
      x, [=](double v) { return std::min(hi, std::max(lo, v)); },
      [=](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

/// Elementwise Huber: 0.5 e^2 for |e| <= delta, delta |e| - 0.5 delta^2 beyond.
inline Var huber(Var e, double delta) {
  if (!(delta > 0)) throw std::invalid_argument("huber: delta must be positive");
  return detail::unary(
      e,
      [=](double v) {
        const double a = std::abs(v);
        return a <= delta ? 0.5 * v * v : delta * a - 0.5 * delta * delta;
      },
      [=](double v, double) { return std::abs(v) <= delta ? v : (v > 0 ? delta : -delta); });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator-(Var a) { return neg(a); }

/// Sum of all elements; rank-0 result.
inline Var sum(Var x) {
  Tape& tape = detail::tape_of(x, "sum");
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const int xi = x.id();
  return tape.record(Tensor::scalar(s), {xi}, [xi](const Tape& t, const Tensor& g, Gradients& gs) {
    if (Tensor* dx = grad_target(t, gs, xi)) {
      for (double& v : dx->values()) v += g[0];
    }
  });
}

/// Sum along one axis; the axis is removed from the result shape.
inline Var sum(Var x, std::size_t axis) {
  Tape& tape = detail::tape_of(x, "sum");
  const Shape& s = x.value().shape();
  if (axis >= s.size()) {
    throw IndexError("sum: axis " + std::to_string(axis) + " invalid for shape " + shape_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Shape os = s;
  os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(os);
  const Tensor& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * n + k) * inner + i];
  const int xi = x.id();
  return tape.record(std::move(out), {xi}, [=](const Tape& t, const Tensor& g, Gradients& gs) {
    Tensor* dx = grad_target(t, gs, xi);
    if (!dx) return;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < inner; ++i) (*dx)[(o * n + k) * inner + i] += g[o * inner + i];
  });
}

inline Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  Var s = sum(x);
  return detail::unary(s, [n](double v) { return v / n; }, [n](double, double) { return 1.0 / n; });
}

inline Var mean(Var x, std::size_t axis) {
  Var s = sum(x, axis);
  const double n = static_cast<double>(x.value().shape()[axis]);
  return detail::unary(s, [n](double v) { return v / n; }, [n](double, double) { return 1.0 / n; });
}

/// Right-aligned broadcast: every source extent must equal the target extent or be 1.
inline Var broadcast_to(Var x, const Shape& target) {
  Tape& tape = detail::tape_of(x, "broadcast_to");
  const Shape& src = x.value().shape();
  if (src.size() > target.size()) {
    throw DimensionError("broadcast_to: cannot broadcast " + shape_string(src) + " to " + shape_string(target));
  }
  const std::size_t offset = target.size() - src.size();
  // Stride of each target axis in the source (0 where broadcast).
  std::vector<std::size_t> src_stride(target.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = src.size(); i-- > 0;) {
    const std::size_t ta = target[i + offset];
    if (src[i] != ta && src[i] != 1) {
      throw DimensionError("broadcast_to: cannot broadcast " + shape_string(src) + " to " + shape_string(target));
    }
    src_stride[i + offset] = src[i] == 1 ? 0 : stride;
    stride *= src[i];
  }
  const std::size_t total = shape_size(target);
  std::vector<std::size_t> index(total);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rem = flat, si = 0;
    for (std::size_t ax = target.size(); ax-- > 0;) {
      si += (rem % target[ax]) * src_stride[ax];
      rem /= target[ax];
    }
    index[flat] = si;
  }
  Tensor out(target);
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < total; ++i) out[i] = xv[index[i]];
  const int xi = x.id();
  return tape.record(std::move(out), {xi}, [xi, index = std::move(index)](const Tape& t, const Tensor& g, Gradients& gs) {
    if (Tensor* dx = grad_target(t, gs, xi)) {
      for (std::size_t i = 0; i < index.size(); ++i) (*dx)[index[i]] += g[i];
    }
  });
}

inline Var reshape(Var x, Shape shape) {
  Tape& tape = detail::tape_of(x, "reshape");
  Tensor out = x.value().reshaped(std::move(shape));
  const int xi = x.id();
  return tape.record(std::move(out), {xi}, [xi](const Tape& t, const Tensor& g, Gradients& gs) {
    if (Tensor* dx = grad_target(t, gs, xi)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*dx)[i] += g[i];
    }
  });
}

inline Var transpose(Var x) {
  Tape& tape = detail::tape_of(x, "transpose");
  const Tensor& xv = x.value();
  detail::require_rank2(xv, "transpose");
  const std::size_t r = xv.shape()[0], c = xv.shape()[1];
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = xv.at(i, j);
  const int xi = x.id();
  return tape.record(std::move(out), {xi}, [=](const Tape& t, const Tensor& g, Gradients& gs) {
    if (Tensor* dx = grad_target(t, gs, xi)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) dx->at(i, j) += g.at(j, i);
    }
  });
}

/// Column-wise concatenation of matrices with equal row counts.
inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no operands");
  Tape& tape = detail::tape_of(parts[0], "concat_cols");
  const std::size_t rows = parts[0].value().shape().at(0);
  std::size_t cols = 0;
  std::vector<int> ids;
  std::vector<std::size_t> widths;
  for (Var p : parts) {
    detail::tape_of(parts[0], p, "concat_cols");
    detail::require_rank2(p.value(), "concat_cols");
    if (p.value().shape()[0] != rows) {
      throw DimensionError("concat_cols: row mismatch " + shape_string(parts[0].value().shape()) + " vs " +
                           shape_string(p.value().shape()));
    }
    ids.push_back(p.id());
    widths.push_back(p.value().shape()[1]);
    cols += widths.back();
  }
  Tensor out(Shape{rows, cols});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) out.at(r, off + c) = v.at(r, c);
    off += widths[k];
  }
  return tape.record(std::move(out), ids, [=](const Tape& t, const Tensor& g, Gradients& gs) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (Tensor* dx = grad_target(t, gs, ids[k])) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) dx->at(r, c) += g.at(r, off + c);
      }
      off += widths[k];
    }
  });
}

inline Var concat_cols(Var a, Var b) {
  const Var parts[] = {a, b};
  return concat_cols(parts);
}

/// Columns [begin, end) of a matrix.
inline Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  Tape& tape = detail::tape_of(x, "slice_cols");
  const Tensor& xv = x.value();
  detail::require_rank2(xv, "slice_cols");
  if (begin > end || end > xv.shape()[1]) {
    throw IndexError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                     shape_string(xv.shape()));
  }
  const std::size_t rows = xv.shape()[0], w = end - begin;
  Tensor out(Shape{rows, w});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) out.at(r, c) = xv.at(r, begin + c);
  const int xi = x.id();
  return tape.record(std::move(out), {xi}, [=](const Tape& t, const Tensor& g, Gradients& gs) {
    if (Tensor* dx = grad_target(t, gs, xi)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < w; ++c) dx->at(r, begin + c) += g.at(r, c);
    }
  });
}

/// Reference to row `row` of the `source`-th matrix in a gather.
struct RowRef {
  std::size_t source;
  std::size_t row;
};

/// Stacks arbitrary rows drawn from a list of equally wide matrices.
inline Var gather_rows(std::span<const Var> sources, std::span<const RowRef> refs) {
  if (sources.empty()) throw std::invalid_argument("gather_rows: no sources");
  Tape& tape = detail::tape_of(sources[0], "gather_rows");
  detail::require_rank2(sources[0].value(), "gather_rows");
  const std::size_t cols = sources[0].value().shape()[1];
  std::vector<int> ids;
  for (Var s : sources) {
    detail::tape_of(sources[0], s, "gather_rows");
    detail::require_rank2(s.value(), "gather_rows");
    if (s.value().shape()[1] != cols) throw DimensionError("gather_rows: sources differ in width");
    ids.push_back(s.id());
  }
  Tensor out(Shape{refs.size(), cols});
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].source >= sources.size() || refs[i].row >= sources[refs[i].source].value().shape()[0]) {
      throw IndexError("gather_rows: row reference (" + std::to_string(refs[i].source) + "," +
                       std::to_string(refs[i].row) + ") out of range");
    }
    const Tensor& src = sources[refs[i].source].value();
    std::copy_n(src.data() + refs[i].row * cols, cols, out.data() + i * cols);
  }
  std::vector<RowRef> saved(refs.begin(), refs.end());
  return tape.record(std::move(out), ids,
                     [ids, cols, saved = std::move(saved)](const Tape& t, const Tensor& g, Gradients& gs) {
                       for (std::size_t i = 0; i < saved.size(); ++i) {
                         Tensor* dx = grad_target(t, gs, ids[saved[i].source]);
                         if (!dx) continue;
                         double* dst = dx->data() + saved[i].row * cols;
                         const double* src = g.data() + i * cols;
                         for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                       }
                     });
}

/// Row r of the result is a's row where mask[r] != 0, otherwise b's row.
inline Var select_rows(std::span<const double> mask, Var a, Var b) {
  Tape& tape = detail::tape_of(a, b, "select_rows");
  a.value().check_same(b.value(), "select_rows");
  detail::require_rank2(a.value(), "select_rows");
  const std::size_t rows = a.value().shape()[0], cols = a.value().shape()[1];
  if (mask.size() != rows) throw DimensionError("select_rows: mask length differs from row count");
  std::vector<char> take_a(rows);
  Tensor out(a.value().shape());
  for (std::size_t r = 0; r < rows; ++r) {
    take_a[r] = mask[r] != 0.0;
    const Tensor& src = take_a[r] ? a.value() : b.value();
    std::copy_n(src.data() + r * cols, cols, out.data() + r * cols);
  }
  const int ai = a.id(), bi = b.id();
  return tape.record(std::move(out), {ai, bi}, [=](const Tape& t, const Tensor& g, Gradients& gs) {
    Tensor* da = grad_target(t, gs, ai);
    Tensor* db = grad_target(t, gs, bi);
    for (std::size_t r = 0; r < rows; ++r) {
      Tensor* d = take_a[r] ? da : db;
      if (!d) continue;
      for (std::size_t c = 0; c < cols; ++c) d->at(r, c) += g.at(r, c);
    }
  });
}

/// Row gather from an embedding table; the backward pass scatter-adds.
inline Var embedding_lookup(Var table, std::span<const int> ids) {
  Tape& tape = detail::tape_of(table, "embedding_lookup");
  const Tensor& tv = table.value();
  detail::require_rank2(tv, "embedding_lookup");
  const std::size_t vocab = tv.shape()[0], d = tv.shape()[1];
  Tensor out(Shape{ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("embedding_lookup: id " + std::to_string(ids[i]) + " out of range for vocabulary of " +
                       std::to_string(vocab));
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  const int ti = table.id();
  std::vector<int> saved(ids.begin(), ids.end());
  return tape.record(std::move(out), {ti}, [ti, d, saved = std::move(saved)](const Tape& t, const Tensor& g, Gradients& gs) {
    Tensor* dt = grad_target(t, gs, ti);
    if (!dt) return;
    for (std::size_t i = 0; i < saved.size(); ++i) {
      double* dst = dt->data() + static_cast<std::size_t>(saved[i]) * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += g[i * d + c];
    }
  });
}

/// Per-row masked cross entropy: out[i] = mask[i] * -log softmax(logits[i])[target[i]].
inline Var softmax_cross_entropy_rows(Var logits, std::span<const int> targets, std::span<const double> mask) {
  Tape& tape = detail::tape_of(logits, "softmax_cross_entropy");
  const Tensor& lv = logits.value();
  detail::require_rank2(lv, "softmax_cross_entropy");
  const std::size_t n = lv.shape()[0], vocab = lv.shape()[1];
  if (targets.size() != n || mask.size() != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(n) + " rows but " +
                         std::to_string(targets.size()) + " targets and " + std::to_string(mask.size()) +
                         " mask entries");
  }
  Tensor probs(Shape{n, vocab});
  Tensor out(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= vocab) {
      throw IndexError("softmax_cross_entropy: target " + std::to_string(targets[i]) + " out of range");
    }
    const double* row = lv.data() + i * vocab;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < vocab; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
    const double log_z = std::log(z) + mx;
    for (std::size_t j = 0; j < vocab; ++j) probs.at(i, j) = std::exp(row[j] - log_z);
    out[i] = mask[i] != 0.0 ? mask[i] * (log_z - row[targets[i]]) : 0.0;
  }
  const int li = logits.id();
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<double> mk(mask.begin(), mask.end());
  return tape.record(std::move(out), {li},
                     [li, n, vocab, probs = std::move(probs), tg = std::move(tg), mk = std::move(mk)](
                         const Tape& t, const Tensor& g, Gradients& gs) {
                       Tensor* dl = grad_target(t, gs, li);
                       if (!dl) return;
                       for (std::size_t i = 0; i < n; ++i) {
                         if (mk[i] == 0.0) continue;
                         const double w = g[i] * mk[i];
                         for (std::size_t j = 0; j < vocab; ++j) dl->at(i, j) += w * probs.at(i, j);
                         dl->at(i, static_cast<std::size_t>(tg[i])) -= w;
                       }
                     });
}

/// Masked, summed cross entropy of logits against integer targets.
inline Var softmax_cross_entropy(Var logits, std::span<const int> targets, std::span<const double> mask) {
  return sum(softmax_cross_entropy_rows(logits, targets, mask));
}

/// out[s] = sum of x[i] over i with owner[i] == s, accumulated in index order.
inline Var segment_sum(Var x, std::span<const std::size_t> owner, std::size_t segments) {
  Tape& tape = detail::tape_of(x, "segment_sum");
  const Tensor& xv = x.value();
  if (xv.rank() != 1 || xv.size() != owner.size()) {
    throw DimensionError("segment_sum: expected a vector of length " + std::to_string(owner.size()) + ", got " +
                         shape_string(xv.shape()));
  }
  Tensor out(Shape{segments});
  for (std::size_t i = 0; i < owner.size(); ++i) {
    if (owner[i] >= segments) throw IndexError("segment_sum: segment " + std::to_string(owner[i]) + " out of range");
    out[owner[i]] += xv[i];
  }
  const int xi = x.id();
  std::vector<std::size_t> own(owner.begin(), owner.end());
  return tape.record(std::move(out), {xi}, [xi, own = std::move(own)](const Tape& t, const Tensor& g, Gradients& gs) {
    if (Tensor* dx = grad_target(t, gs, xi)) {
      for (std::size_t i = 0; i < own.size(); ++i) (*dx)[i] += g[own[i]];
    }
  });
}

/// x * w + b with the bias row broadcast; an absent bias is skipped.
inline Var linear(Var x, Var w, Var b = {}) {
  Var y = matmul(x, w);
  if (b) y = add(y, broadcast_to(b, y.shape()));
  return y;
}

/// Row-wise log-softmax on plain tensors (no tape).
inline Tensor log_softmax_rows(const Tensor& logits) {
  detail::require_rank2(logits, "log_softmax_rows");
  const std::size_t n = logits.shape()[0], vocab = logits.shape()[1];
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * vocab;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < vocab; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
    const double log_z = std::log(z) + mx;
    for (std::size_t j = 0; j < vocab; ++j) out.at(i, j) = row[j] - log_z;
  }
  return out;
}

}  // namespace pvgru
