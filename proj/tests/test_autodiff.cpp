#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "pvgru/gradcheck.hpp"
#include "pvgru/ops.hpp"
#include "support.hpp"

using namespace pvgru;
using testing_support::max_relative_error;
using testing_support::numeric_gradient;
using testing_support::random_tensor;

// ---------------------------------------------------------------------------
// Tensor basics

TEST(Tensor, ShapeAndDataAgree) {
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  Tensor t(Shape{2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_DOUBLE_EQ(t.at(1, 2), 1.5);
}

// ---------------------------------------------------------------------------
// matmul

TEST(Matmul, IdentityTimesColumn) {
  Tape tape;
  Var a = tape.leaf(Tensor::matrix({{1, 0}, {0, 1}}));
  Var b = tape.leaf(Tensor::matrix({{3}, {4}}));
  EXPECT_EQ(matmul(a, b).value(), Tensor::matrix({{3}, {4}}));
}

TEST(Matmul, ZeroOperand) {
  Tape tape;
  Var c = matmul(tape.leaf(Tensor::matrix({{1, 2}})), tape.leaf(Tensor::matrix({{0}, {0}})));
  EXPECT_EQ(c.value(), Tensor::matrix({{0}}));
}

TEST(Matmul, HandEvaluatedProduct) {
  Tape tape;
  Var c = matmul(tape.leaf(Tensor::matrix({{1, 2}, {3, 4}})), tape.leaf(Tensor::matrix({{5, 6}, {7, 8}})));
  EXPECT_EQ(c.value(), Tensor::matrix({{19, 22}, {43, 50}}));
}

TEST(Matmul, MismatchNamesBothShapes) {
  Tape tape;
  Var a = tape.leaf(Tensor(Shape{2, 3}));
  Var b = tape.leaf(Tensor(Shape{4, 5}));
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
}

// ---------------------------------------------------------------------------
// elementwise

TEST(Elementwise, SigmoidAndTanhAtZero) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({0.0}));
  EXPECT_DOUBLE_EQ(sigmoid(x).value()[0], 0.5);
  EXPECT_DOUBLE_EQ(tanh(x).value()[0], 0.0);
}

TEST(Elementwise, SigmoidOfOne) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1.0}));
  EXPECT_NEAR(sigmoid(x).value()[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(sigmoid(x).value()[0], 0.7310586, 1e-7);
}

TEST(Elementwise, BinaryOpsRejectShapeMismatch) {
  Tape tape;
  Var a = tape.leaf(Tensor(Shape{2}));
  Var b = tape.leaf(Tensor(Shape{3}));
  EXPECT_THROW(add(a, b), DimensionError);
  EXPECT_THROW(sub(a, b), DimensionError);
  EXPECT_THROW(mul(a, b), DimensionError);
}

TEST(Elementwise, BroadcastIsExplicit) {
  Tape tape;
  Var m = tape.leaf(Tensor(Shape{2, 3}));
  Var b = tape.leaf(Tensor::vector({1, 2, 3}));
  EXPECT_THROW(add(m, b), DimensionError);
  Var s = add(m, broadcast_to(b, Shape{2, 3}));
  EXPECT_EQ(s.value(), Tensor::matrix({{1, 2, 3}, {1, 2, 3}}));
}

// ---------------------------------------------------------------------------
// reductions

TEST(Reduce, SumAndMean) {
  Tape tape;
  EXPECT_DOUBLE_EQ(sum(tape.leaf(Tensor::vector({1, 2, 3}))).value().item(), 6.0);
  EXPECT_DOUBLE_EQ(mean(tape.leaf(Tensor::vector({2, 4}))).value().item(), 3.0);
}

TEST(Reduce, ColumnwiseSum) {
  Tape tape;
  Var s = sum(tape.leaf(Tensor::matrix({{1, 2}, {3, 4}})), 0);
  EXPECT_EQ(s.value(), Tensor::vector({4, 6}));
}

TEST(Reduce, InvalidAxis) {
  Tape tape;
  EXPECT_THROW(sum(tape.leaf(Tensor::matrix({{1, 2}})), 2), IndexError);
  EXPECT_THROW(mean(tape.leaf(Tensor::vector({1, 2})), 1), IndexError);
}

// ---------------------------------------------------------------------------
// embedding lookup

TEST(Embedding, GatherRows) {
  Tape tape;
  Var table = tape.leaf(Tensor::matrix({{1, 1}, {2, 2}}));
  const int ids[] = {1, 0};
  EXPECT_EQ(embedding_lookup(table, ids).value(), Tensor::matrix({{2, 2}, {1, 1}}));
}

TEST(Embedding, EmptyIds) {
  Tape tape;
  Var table = tape.leaf(Tensor::matrix({{1, 1}, {2, 2}}));
  Var e = embedding_lookup(table, std::span<const int>());
  EXPECT_EQ(e.shape(), (Shape{0, 2}));
}

TEST(Embedding, ScatterAddsRepeatedIds) {
  Tape tape;
  Var table = tape.leaf(Tensor::matrix({{1, 1}, {2, 2}}));
  const int ids[] = {0, 0};
  Var e = embedding_lookup(table, ids);
  // Upstream gradient of all ones: loss = sum(e).
  Gradients g = backward(sum(e));
  EXPECT_EQ(g[table], Tensor::matrix({{2, 2}, {0, 0}}));
}

TEST(Embedding, OutOfRangeIdNamed) {
  Tape tape;
  Var table = tape.leaf(Tensor(Shape{2, 2}));
  const int ids[] = {0, 7};
  try {
    embedding_lookup(table, ids);
    FAIL() << "expected IndexError";
  } catch (const IndexError& e) {
    EXPECT_NE(std::string(e.what()).find('7'), std::string::npos);
  }
}

TEST(Embedding, OneHotUpstreamTouchesOneRow) {
  std::mt19937_64 gen(3);
  Tape tape;
  Var table = tape.leaf(random_tensor(Shape{5, 3}, gen));
  const int ids[] = {4, 1, 3};
  Var e = embedding_lookup(table, ids);
  Tensor onehot(Shape{3, 3});
  onehot.at(1, 2) = 1.0;
  Gradients g = backward(sum(e * tape.constant(onehot)));
  Tensor gt = g[table];
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(gt.at(r, c), r == 1 && c == 2 ? 1.0 : 0.0);
}

// ---------------------------------------------------------------------------
// softmax cross-entropy

TEST(SoftmaxCrossEntropy, UniformLogits) {
  Tape tape;
  Var logits = tape.leaf(Tensor(Shape{1, 4}, 0.7));
  const int t[] = {2};
  const double m[] = {1.0};
  EXPECT_NEAR(softmax_cross_entropy(logits, t, m).value().item(), std::log(4.0), 1e-15);
  EXPECT_NEAR(softmax_cross_entropy(logits, t, m).value().item(), 1.3862944, 1e-7);
}

TEST(SoftmaxCrossEntropy, FullyMasked) {
  Tape tape;
  Var logits = tape.leaf(Tensor::matrix({{1, 2}, {3, -1}}));
  const int t[] = {0, 1};
  const double m[] = {0.0, 0.0};
  EXPECT_EQ(softmax_cross_entropy(logits, t, m).value().item(), 0.0);
}

TEST(SoftmaxCrossEntropy, HandValue) {
  Tape tape;
  Var logits = tape.leaf(Tensor::matrix({{2, 0, 0}}));
  const int t[] = {0};
  const double m[] = {1.0};
  const double expected = -std::log(std::exp(2.0) / (std::exp(2.0) + 2.0));
  EXPECT_NEAR(softmax_cross_entropy(logits, t, m).value().item(), expected, 1e-15);
  EXPECT_NEAR(expected, 0.2395, 1e-4);
}

TEST(SoftmaxCrossEntropy, GradientIsMaskedSoftmaxMinusOneHot) {
  Tape tape;
  Var logits = tape.leaf(Tensor::matrix({{2, 0, 0}, {1, 1, 1}}));
  const int t[] = {0, 2};
  const double m[] = {1.0, 0.0};
  Gradients g = backward(softmax_cross_entropy(logits, t, m));
  const double z = std::exp(2.0) + 2.0;
  Tensor expected = Tensor::matrix({{std::exp(2.0) / z - 1.0, 1.0 / z, 1.0 / z}, {0, 0, 0}});
  EXPECT_LT(max_abs_diff(g[logits], expected), 1e-15);
}

TEST(SoftmaxCrossEntropy, LengthMismatch) {
  Tape tape;
  Var logits = tape.leaf(Tensor(Shape{2, 3}));
  const int t[] = {0};
  const double m[] = {1.0, 1.0};
  EXPECT_THROW(softmax_cross_entropy(logits, t, m), DimensionError);
}

TEST(SoftmaxCrossEntropy, LargeLogitsStayFinite) {
  Tape tape;
  Var logits = tape.leaf(Tensor::matrix({{1000, 0, -1000}}));
  const int t[] = {2};
  const double m[] = {1.0};
  EXPECT_NEAR(softmax_cross_entropy(logits, t, m).value().item(), 2000.0, 1e-9);
}

// ---------------------------------------------------------------------------
// backward

TEST(Backward, SumGivesOnes) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({5, -1, 2}));
  EXPECT_EQ(backward(sum(x))[x], Tensor::vector({1, 1, 1}));
}

TEST(Backward, SquareGivesTwoX) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2}));
  EXPECT_EQ(backward(sum(square(x)))[x], Tensor::vector({2, 4}));
}

TEST(Backward, SigmoidSlopeAtZero) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({0}));
  EXPECT_DOUBLE_EQ(backward(sum(sigmoid(x)))[x][0], 0.25);
}

TEST(Backward, NonScalarLossRejected) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2}));
  EXPECT_THROW(backward(square(x)), DimensionError);
}

TEST(Backward, LossFromAnotherTapeRejected) {
  Tape a, b;
  Var x = a.leaf(Tensor::vector({1}));
  EXPECT_THROW(b.backward(sum(x)), std::invalid_argument);
}

TEST(Backward, ConstantsReceiveNothing) {
  Tape tape;
  Var c = tape.constant(Tensor::vector({1, 2}));
  Var x = tape.leaf(Tensor::vector({3, 4}));
  Gradients g = backward(sum(c * x));
  EXPECT_FALSE(g.has(c));
  EXPECT_EQ(g[x], Tensor::vector({1, 2}));
}

TEST(Backward, NodesVisitedOnceInReverseOrder) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1.5}));
  // x is used by three consumers; accumulation must add all three contributions once each.
  Var y = x * x + x;
  Gradients g = backward(sum(y));
  EXPECT_DOUBLE_EQ(g[x][0], 2 * 1.5 + 1);
  for (std::size_t id = 0; id < tape.size(); ++id)
    for (int in : tape.inputs(static_cast<int>(id))) EXPECT_LT(in, static_cast<int>(id));
}

// ---------------------------------------------------------------------------
// Properties

namespace {

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Tape gradient of sum(w * f(inputs)) for a random fixed weighting w versus
/// central differences, for each input.
double primitive_gradient_error(const std::vector<Tensor>& inputs, const Builder& build, std::mt19937_64& gen) {
  Tensor weights;
  {
    Tape probe;
    std::vector<Var> vs;
    for (const auto& t : inputs) vs.push_back(probe.constant(t));
    weights = random_tensor(build(probe, vs).shape(), gen);
  }
  auto scalar = [&](const std::vector<Tensor>& xs) {
    Tape t;
    std::vector<Var> vs;
    for (const auto& x : xs) vs.push_back(t.constant(x));
    Var out = build(t, vs);
    double s = 0;
    for (std::size_t i = 0; i < out.value().size(); ++i) s += out.value()[i] * weights[i];
    return s;
  };
  Tape tape;
  std::vector<Var> vs;
  for (const auto& x : inputs) vs.push_back(tape.leaf(x));
  Var out = build(tape, vs);
  Gradients g = backward(sum(out * tape.constant(weights.reshaped(out.shape()))));
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto f = [&](const Tensor& xk) {
      auto xs = inputs;
      xs[k] = xk;
      return scalar(xs);
    };
    worst = std::max(worst, max_relative_error(g[vs[k]], numeric_gradient(f, inputs[k])));
  }
  return worst;
}

struct PrimitiveCase {
  const char* name;
  // Given random extents (r, c), returns input shapes.
  std::function<std::vector<Shape>(std::size_t, std::size_t)> shapes;
  Builder build;
};

std::vector<PrimitiveCase> primitive_cases() {
  auto same2 = [](std::size_t r, std::size_t c) { return std::vector<Shape>{{r, c}, {r, c}}; };
  auto one = [](std::size_t r, std::size_t c) { return std::vector<Shape>{{r, c}}; };
  return {
      {"matmul", [](std::size_t r, std::size_t c) { return std::vector<Shape>{{r, c}, {c, r + 1}}; },
       [](Tape&, const std::vector<Var>& v) { return matmul(v[0], v[1]); }},
      {"add", same2, [](Tape&, const std::vector<Var>& v) { return add(v[0], v[1]); }},
      {"sub", same2, [](Tape&, const std::vector<Var>& v) { return sub(v[0], v[1]); }},
      {"mul", same2, [](Tape&, const std::vector<Var>& v) { return mul(v[0], v[1]); }},
      {"neg", one, [](Tape&, const std::vector<Var>& v) { return neg(v[0]); }},
      {"sigmoid", one, [](Tape&, const std::vector<Var>& v) { return sigmoid(v[0]); }},
      {"tanh", one, [](Tape&, const std::vector<Var>& v) { return tanh(v[0]); }},
      {"exp", one, [](Tape&, const std::vector<Var>& v) { return exp(v[0]); }},
      {"abs", one, [](Tape&, const std::vector<Var>& v) { return abs(v[0]); }},
      {"square", one, [](Tape&, const std::vector<Var>& v) { return square(v[0]); }},
      {"affine", one, [](Tape&, const std::vector<Var>& v) { return affine(v[0], -1.7, 0.3); }},
      {"clamp", one, [](Tape&, const std::vector<Var>& v) { return clamp(v[0], -0.5, 0.5); }},
      {"huber", one, [](Tape&, const std::vector<Var>& v) { return huber(v[0], 0.8); }},
      {"sum", one, [](Tape&, const std::vector<Var>& v) { return sum(v[0]); }},
      {"sum_axis0", one, [](Tape&, const std::vector<Var>& v) { return sum(v[0], 0); }},
      {"sum_axis1", one, [](Tape&, const std::vector<Var>& v) { return sum(v[0], 1); }},
      {"mean", one, [](Tape&, const std::vector<Var>& v) { return mean(v[0]); }},
      {"mean_axis0", one, [](Tape&, const std::vector<Var>& v) { return mean(v[0], 0); }},
      {"broadcast_to", [](std::size_t, std::size_t c) { return std::vector<Shape>{{c}}; },
       [](Tape&, const std::vector<Var>& v) { return broadcast_to(v[0], Shape{3, v[0].shape()[0]}); }},
      {"reshape", one, [](Tape&, const std::vector<Var>& v) { return reshape(v[0], Shape{v[0].value().size()}); }},
      {"transpose", one, [](Tape&, const std::vector<Var>& v) { return transpose(v[0]); }},
      {"concat_cols", [](std::size_t r, std::size_t c) { return std::vector<Shape>{{r, c}, {r, c + 1}}; },
       [](Tape&, const std::vector<Var>& v) { return concat_cols(v[0], v[1]); }},
      {"slice_cols", [](std::size_t r, std::size_t c) { return std::vector<Shape>{{r, c + 2}}; },
       [](Tape&, const std::vector<Var>& v) { return slice_cols(v[0], 1, v[0].shape()[1] - 1); }},
      {"gather_rows", same2,
       [](Tape&, const std::vector<Var>& v) {
         const std::size_t r = v[0].shape()[0];
         std::vector<RowRef> refs{{1, r - 1}, {0, 0}, {1, 0}, {0, r - 1}};
         return gather_rows(v, refs);
       }},
      {"select_rows", same2,
       [](Tape&, const std::vector<Var>& v) {
         std::vector<double> m(v[0].shape()[0]);
         for (std::size_t i = 0; i < m.size(); ++i) m[i] = i % 2 == 0;
         return select_rows(m, v[0], v[1]);
       }},
      {"embedding_lookup", one,
       [](Tape&, const std::vector<Var>& v) {
         const int r = static_cast<int>(v[0].shape()[0]);
         const std::vector<int> ids{r - 1, 0, r - 1};
         return embedding_lookup(v[0], ids);
       }},
      {"softmax_cross_entropy_rows", one,
       [](Tape&, const std::vector<Var>& v) {
         const std::size_t r = v[0].shape()[0], c = v[0].shape()[1];
         std::vector<int> t(r);
         std::vector<double> m(r);
         for (std::size_t i = 0; i < r; ++i) t[i] = static_cast<int>((i * 7) % c), m[i] = i + 1 < r || r == 1;
         return softmax_cross_entropy_rows(v[0], t, m);
       }},
      {"segment_sum", [](std::size_t r, std::size_t) { return std::vector<Shape>{{r + 1}}; },
       [](Tape&, const std::vector<Var>& v) {
         std::vector<std::size_t> owner(v[0].shape()[0]);
         for (std::size_t i = 0; i < owner.size(); ++i) owner[i] = i % 2;
         return segment_sum(v[0], owner, 2);
       }},
      {"linear", [](std::size_t r, std::size_t c) { return std::vector<Shape>{{r, c}, {c, 2}, {2}}; },
       [](Tape&, const std::vector<Var>& v) { return linear(v[0], v[1], v[2]); }},
  };
}

}  // namespace

TEST(Properties, EveryPrimitiveMatchesFiniteDifferences) {
  std::mt19937_64 gen(2024);
  std::uniform_int_distribution<std::size_t> extent(1, 4);
  for (const auto& pc : primitive_cases()) {
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
      auto shapes = pc.shapes(extent(gen), extent(gen));
      std::vector<Tensor> inputs;
      for (auto& s : shapes) inputs.push_back(random_tensor(s, gen));
      worst = std::max(worst, primitive_gradient_error(inputs, pc.build, gen));
    }
    EXPECT_LE(worst, 1e-4) << pc.name;
  }
}

TEST(Properties, BackwardIsLinearInTheLoss) {
  std::mt19937_64 gen(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x0 = random_tensor(Shape{3, 4}, gen);
    Tensor w0 = random_tensor(Shape{4, 2}, gen);
    const double a = std::normal_distribution<double>()(gen), b = std::normal_distribution<double>()(gen);
    auto losses = [&](Tape&, Var x, Var w) {
      Var l1 = sum(tanh(matmul(x, w)));
      Var l2 = sum(square(x)) + mean(sigmoid(w));
      return std::make_pair(l1, l2);
    };
    Tape t1, t2, t3;
    Var x1 = t1.leaf(x0), w1 = t1.leaf(w0);
    Var x2 = t2.leaf(x0), w2 = t2.leaf(w0);
    Var x3 = t3.leaf(x0), w3 = t3.leaf(w0);
    Gradients g1 = backward(losses(t1, x1, w1).first);
    Gradients g2 = backward(losses(t2, x2, w2).second);
    auto [l1, l2] = losses(t3, x3, w3);
    Gradients g3 = backward(affine(l1, a, 0.0) + affine(l2, b, 0.0));
    for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(g3[x3][i], a * g1[x1][i] + b * g2[x2][i], 1e-12);
    for (std::size_t i = 0; i < w0.size(); ++i) EXPECT_NEAR(g3[w3][i], a * g1[w1][i] + b * g2[w2][i], 1e-12);
  }
}

TEST(Properties, DeterministicValuesAndGradients) {
  std::mt19937_64 gen(11);
  Tensor x0 = random_tensor(Shape{4, 5}, gen), w0 = random_tensor(Shape{5, 3}, gen);
  auto run = [&]() {
    Tape t;
    Var x = t.leaf(x0), w = t.leaf(w0);
    Var l = sum(huber(tanh(matmul(x, w)), 0.3)) + mean(exp(slice_cols(x, 1, 3)));
    Gradients g = backward(l);
    return std::make_tuple(l.value(), g[x], g[w]);
  };
  EXPECT_EQ(run(), run());
}

// ---------------------------------------------------------------------------
// finite_difference_check

TEST(FiniteDifference, QuadraticPasses) {
  Tensor theta = Tensor::vector({1, 2});
  std::vector<CheckedParam> ps{{"theta", &theta, Tensor::vector({2, 4})}};
  auto f = [&]() { return theta[0] * theta[0] + theta[1] * theta[1]; };
  GradCheckReport r = finite_difference_check(ps, f);
  EXPECT_LT(r.max_rel_error, 1e-8);
  EXPECT_TRUE(r.passed());
}

TEST(FiniteDifference, ConstantFunctionHasZeroError) {
  Tensor theta = Tensor::vector({1, 2, 3});
  std::vector<CheckedParam> ps{{"theta", &theta, Tensor(Shape{3})}};
  GradCheckReport r = finite_difference_check(ps, [] { return 4.0; });
  EXPECT_EQ(r.max_rel_error, 0.0);
  EXPECT_TRUE(r.passed());
}

TEST(FiniteDifference, CorruptedGradientFailsAndIsNamed) {
  Tensor a = Tensor::vector({0.5, -1.0});
  Tensor b = Tensor::vector({2.0});
  // Correct analytic gradient of sin(a0) + a1^2 + b0^3 is (cos a0, 2 a1, 3 b0^2); corrupt b's.
  std::vector<CheckedParam> ps{{"a", &a, Tensor::vector({std::cos(0.5), -2.0})}, {"b", &b, Tensor::vector({11.0})}};
  auto f = [&]() { return std::sin(a[0]) + a[1] * a[1] + b[0] * b[0] * b[0]; };
  GradCheckReport r = finite_difference_check(ps, f);
  EXPECT_FALSE(r.passed());
  EXPECT_EQ(r.worst_name, "b");
  EXPECT_NEAR(r.worst_numeric, 12.0, 1e-6);
}

TEST(FiniteDifference, CellLossOnSmallDims) {
  // A tape-built loss over small weights, checked by the checker itself.
  std::mt19937_64 gen(5);
  Tensor w = random_tensor(Shape{4, 3}, gen), x = random_tensor(Shape{2, 4}, gen);
  auto loss = [&](Tape& t) { return sum(huber(tanh(matmul(t.constant(x), t.param(w))), 0.5)); };
  Tape tape;
  Var wv;
  Var l = sum(huber(tanh(matmul(tape.constant(x), wv = tape.param(w))), 0.5));
  std::vector<CheckedParam> ps{{"w", &w, backward(l)[wv]}};
  GradCheckReport r = finite_difference_check(ps, [&] {
    Tape t;
    return loss(t).value().item();
  });
  EXPECT_LT(r.max_rel_error, 1e-4);
}
