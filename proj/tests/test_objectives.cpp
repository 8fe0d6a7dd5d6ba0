#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "pvgru/gradcheck.hpp"
#include "pvgru/objectives.hpp"
#include "support.hpp"

using namespace pvgru;
using testing_support::random_tensor;

namespace {

double kl_value(Tensor mu1, Tensor lv1, Tensor mu2, Tensor lv2) {
  Tape t;
  return kl_diag_gaussian(t.constant(mu1), t.constant(lv1), t.constant(mu2), t.constant(lv2)).value().item();
}

Tensor row(std::initializer_list<double> v) { return Tensor::matrix({v}); }

/// A head whose output ignores its input: zero final weights, the given bias.
/// Bound heads are borrowed by the tape, so callers keep the result alive.
FeedForward<Tensor> constant_head(std::size_t d_in, std::size_t d_hidden, const Tensor& out) {
  Rng rng(0);
  FeedForward<Tensor> ff = init_feed_forward(d_in, d_hidden, out.size(), 1, rng);
  ff.layers.back().w.fill(0.0);
  ff.layers.back().b = out.reshaped(Shape{out.size()});
  return ff;
}

FeedForward<Var> bind(Tape& t, const FeedForward<Tensor>& ff) {
  Binder b{&t};
  return ff.transform(b);
}

}  // namespace

// ---------------------------------------------------------------------------
// kl_diag_gaussian

TEST(Kl, IdenticalGaussiansGiveZero) {
  EXPECT_EQ(kl_value(row({0.3, -1}), row({0.5, 2}), row({0.3, -1}), row({0.5, 2})), 0.0);
}

TEST(Kl, ShiftedMean) { EXPECT_DOUBLE_EQ(kl_value(row({1}), row({0}), row({0}), row({0})), 0.5); }

TEST(Kl, ScaledVariance) {
  const double expected = 0.5 * (std::exp(1.0) - 1.0) - 0.5;
  EXPECT_NEAR(kl_value(row({0}), row({1}), row({0}), row({0})), expected, 1e-15);
  EXPECT_NEAR(expected, 0.3591, 1e-4);
}

TEST(Kl, ShapeMismatch) {
  EXPECT_THROW(kl_value(row({0, 1}), row({0, 1}), row({0}), row({0})), DimensionError);
}

// ---------------------------------------------------------------------------
// consistency_loss

TEST(Consistency, MatchedDistributionsGiveZero) {
  Tensor mu = row({0.4, -0.2}), lv = row({0.1, 0.7});
  Tape t;
  const auto head = constant_head(3, 2, Tensor::matrix({{0.4, -0.2, 0.1, 0.7}}));
  auto psi = bind(t, head);
  Var x = t.constant(row({1, 2, 3}));
  EXPECT_EQ(consistency_loss(x, t.constant(mu), t.constant(lv), psi).value().item(), 0.0);
}

TEST(Consistency, StandardInputAgainstUnitShift) {
  Tape t;
  const auto head = constant_head(3, 3, Tensor(Shape{1, 6}));
  auto psi = bind(t, head);
  Var x = t.constant(row({1, -2, 3}));
  Var l = consistency_loss(x, t.constant(row({1, 1, 1})), t.constant(row({0, 0, 0})), psi);
  EXPECT_DOUBLE_EQ(l.value().item(), 3 * 0.5);
}

TEST(Consistency, NonNegativeAndGradientsReachBothHeads) {
  std::mt19937_64 gen(1);
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    FeedForward<Tensor> psi = init_feed_forward(3, 4, 8, 1, rng);
    FeedForward<Tensor> phi = init_feed_forward(4, 4, 8, 1, rng);
    Tape t;
    Var x = t.constant(random_tensor({2, 3}, gen));
    auto [mu, lv] = variation_params(bind(t, phi), t.constant(random_tensor({2, 4}, gen)));
    Binder b{&t};
    auto psi_v = psi.transform(b);
    Var l = consistency_loss(x, mu, lv, psi_v);
    EXPECT_GE(l.value().item(), 0.0);
    if (trial == 0) {
      Gradients g = backward(l);
      EXPECT_GT(max_abs_diff(g[psi_v.layers[0].w], Tensor(psi.layers[0].w.shape())), 0.0);
    }
  }
}

// ---------------------------------------------------------------------------
// reconstruction_loss

TEST(Reconstruction, PerfectReconstructionGivesZero) {
  Tape t;
  Tensor h = row({0.3, -0.9});
  const auto head = constant_head(2, 2, h);
  auto f = bind(t, head);
  EXPECT_EQ(reconstruction_loss(t.constant(row({5, 5})), t.constant(h), f, 1.0).value().item(), 0.0);
}

TEST(Reconstruction, QuadraticBranch) {
  Tape t;
  const auto head = constant_head(1, 1, row({0.5}));
  auto f = bind(t, head);
  EXPECT_EQ(reconstruction_loss(t.constant(row({0})), t.constant(row({0})), f, 1.0).value().item(), 0.125);
}

TEST(Reconstruction, LinearBranch) {
  Tape t;
  const auto head = constant_head(1, 1, row({2.0}));
  auto f = bind(t, head);
  EXPECT_EQ(reconstruction_loss(t.constant(row({0})), t.constant(row({0})), f, 1.0).value().item(), 1.5);
}

TEST(Reconstruction, RejectsNonPositiveDelta) {
  Tape t;
  const auto head = constant_head(1, 1, row({2.0}));
  auto f = bind(t, head);
  EXPECT_THROW(reconstruction_loss(t.constant(row({0})), t.constant(row({0})), f, 0.0), std::invalid_argument);
  EXPECT_THROW(reconstruction_loss(t.constant(row({0})), t.constant(row({0})), f, -1.0), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// nll_loss

TEST(Nll, UniformLogits) {
  Tape t;
  const int targets[] = {1, 3};
  const double mask[] = {1, 1};
  EXPECT_NEAR(nll_loss(t.constant(Tensor(Shape{2, 4})), targets, mask).value().item(), 2 * std::log(4.0), 1e-15);
}

TEST(Nll, FullyMasked) {
  Tape t;
  const int targets[] = {1, 3};
  const double mask[] = {0, 0};
  EXPECT_EQ(nll_loss(t.constant(Tensor::matrix({{1, 2, 3, 4}, {0, 0, 9, 1}})), targets, mask).value().item(), 0.0);
}

TEST(Nll, DelegatesToSoftmaxCrossEntropy) {
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 20; ++trial) {
    Tape t;
    Var logits = t.constant(random_tensor({5, 7}, gen, 2.0));
    std::vector<int> targets(5);
    std::vector<double> mask(5);
    for (int i = 0; i < 5; ++i) targets[i] = static_cast<int>(gen() % 7), mask[i] = gen() % 2;
    EXPECT_EQ(nll_loss(logits, targets, mask).value().item(),
              softmax_cross_entropy(logits, targets, mask).value().item());
  }
}

// ---------------------------------------------------------------------------
// total_loss

TEST(TotalLoss, AllZero) {
  Tape t;
  Var z = t.constant(Tensor(Shape{3}));
  EXPECT_EQ(total_loss(z, z, z, LossWeights{}).total.value().item(), 0.0);
}

TEST(TotalLoss, BatchMean) {
  Tape t;
  Var ll = t.constant(Tensor::vector({4, 6}));
  Var zero = t.constant(Tensor(Shape{2}));
  EXPECT_EQ(total_loss(ll, zero, zero, LossWeights{}).total.value().item(), 5.0);
}

TEST(TotalLoss, AblationRemovesExactlyItsTerm) {
  std::mt19937_64 gen(8);
  for (int trial = 0; trial < 100; ++trial) {
    Tape t;
    const std::size_t b = 1 + gen() % 5;
    Var ll = t.constant(random_tensor({b}, gen)), rec = t.constant(random_tensor({b}, gen));
    Var cons = t.constant(random_tensor({b}, gen));
    LossWeights both, no_rec, no_cons, neither;
    no_rec.use_reconstruction = false;
    no_cons.use_consistency = false;
    neither.use_reconstruction = neither.use_consistency = false;
    auto full = values_of(total_loss(ll, rec, cons, both));
    EXPECT_EQ(full.total, full.ll + full.rec + full.cons);
    auto nr = values_of(total_loss(ll, rec, cons, no_rec));
    EXPECT_EQ(nr.rec, 0.0);
    EXPECT_EQ(nr.total, full.ll + full.cons);
    auto nc = values_of(total_loss(ll, rec, cons, no_cons));
    EXPECT_EQ(nc.cons, 0.0);
    EXPECT_EQ(nc.total, full.ll + full.rec);
    auto nn = values_of(total_loss(ll, rec, cons, neither));
    EXPECT_EQ(nn.total, full.ll);
  }
}

// ---------------------------------------------------------------------------
// Properties

TEST(ObjectiveProperties, KlIsNonNegativeAndZeroOnlyWhenEqual) {
  std::mt19937_64 gen(12);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor mu1 = random_tensor({1, 4}, gen), lv1 = random_tensor({1, 4}, gen);
    Tensor mu2 = random_tensor({1, 4}, gen), lv2 = random_tensor({1, 4}, gen);
    EXPECT_GT(kl_value(mu1, lv1, mu2, lv2), 1e-12);
    EXPECT_LE(std::abs(kl_value(mu1, lv1, mu1, lv1)), 1e-12);
  }
}

TEST(ObjectiveProperties, KlAgreesWithMonteCarlo) {
  std::mt19937_64 gen(2024);
  for (int pair = 0; pair < 20; ++pair) {
    Tensor mu1 = random_tensor({1, 4}, gen), lv1 = random_tensor({1, 4}, gen, 0.5);
    Tensor mu2 = random_tensor({1, 4}, gen), lv2 = random_tensor({1, 4}, gen, 0.5);
    auto vec = [](const Tensor& t) { return std::vector<double>(t.values().begin(), t.values().end()); };
    const double exact = kl_value(mu1, lv1, mu2, lv2);
    const double mc = testing_support::monte_carlo_kl(vec(mu1), vec(lv1), vec(mu2), vec(lv2), 100000, gen);
    EXPECT_LE(std::abs(mc - exact) / exact, 0.01) << "pair " << pair << " exact " << exact << " mc " << mc;
  }
}

TEST(ObjectiveProperties, HuberBranchesMeetAtTheKnot) {
  for (double delta : {0.1, 0.8, 1.0, 2.5}) {
    for (double e : {delta, -delta}) {
      Tape t;
      Var x = t.leaf(Tensor::vector({e}));
      Var h = huber(x, delta);
      const double quadratic = 0.5 * e * e;
      const double linear = delta * std::abs(e) - 0.5 * delta * delta;
      EXPECT_EQ(quadratic, linear);
      EXPECT_EQ(h.value()[0], quadratic);
      // Slopes: e from the quadratic side, delta * sign(e) from the linear side.
      EXPECT_EQ(backward(sum(h))[x][0], e);
      EXPECT_EQ(e, delta * (e > 0 ? 1.0 : -1.0));
    }
  }
}

TEST(ObjectiveProperties, LossesPassFiniteDifferenceChecks) {
  Rng rng(3);
  std::mt19937_64 gen(3);
  FeedForward<Tensor> psi = init_feed_forward(3, 4, 8, 1, rng);
  FeedForward<Tensor> f = init_feed_forward(4, 4, 4, 1, rng);
  Tensor x = random_tensor({2, 3}, gen), mu = random_tensor({2, 4}, gen), lv = random_tensor({2, 4}, gen, 0.5);
  Tensor v = random_tensor({2, 4}, gen), h = random_tensor({2, 4}, gen, 2.0), logits = random_tensor({2, 5}, gen);
  const int targets[] = {3, 1};
  const double mask[] = {1, 1};

  auto loss = [&](Tape& t, std::vector<Var>* leaves) {
    auto binder = [&](const Tensor& p) {
      Var var = t.param(p);
      if (leaves) leaves->push_back(var);
      return var;
    };
    auto psi_v = psi.transform(binder);
    auto f_v = f.transform(binder);
    Var mu_v = binder(mu), lv_v = binder(lv), v_v = binder(v), logits_v = binder(logits);
    return consistency_loss(t.constant(x), mu_v, lv_v, psi_v) + reconstruction_loss(v_v, t.constant(h), f_v, 0.7) +
           nll_loss(logits_v, targets, mask);
  };
  Tape tape;
  std::vector<Var> leaves;
  Gradients g = backward(loss(tape, &leaves));
  std::vector<CheckedParam> checked;
  std::size_t i = 0;
  auto add = [&](const std::string& name, Tensor& p) { checked.push_back({name, &p, g[leaves[i++]]}); };
  for_each_param(psi, "psi/", add);
  for_each_param(f, "f/", add);
  add("mu", mu), add("logvar", lv), add("v", v), add("logits", logits);
  GradCheckReport r = finite_difference_check(checked, [&] {
    Tape t;
    return loss(t, nullptr).value().item();
  });
  EXPECT_TRUE(r.passed()) << r;
}
