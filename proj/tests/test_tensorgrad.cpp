#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "urma/tensorgrad.hpp"

using namespace urma::tg;

namespace {

constexpr double kGradTol = 1e-4;
constexpr int kTrials = 100;

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Projects an op output onto fixed random weights so every output element contributes to the checked scalar.
Var weighted_sum(Tape& tape, Var y, const Tensor& w) { return sum_all(mul(y, tape.constant(w))); }

template <class Op>
double worst_over_trials(std::uint64_t seed, Op make_case) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < kTrials; ++trial) worst = std::max(worst, make_case(rng));
  return worst;
}

}  // namespace

TEST(Tensor, ShapeAndValueCountMustAgree) {
  EXPECT_THROW(Tensor(Shape{2, 3}, std::vector<double>(5)), ShapeError);
  Tensor t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t.at(1, 2), 6.0);
}

TEST(Tensorgrad, MatmulErrorNamesBothShapes) {
  Tape tape;
  Var a = tape.leaf(Tensor(Shape{2, 3}));
  Var b = tape.leaf(Tensor(Shape{4, 5}));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2, 3)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(4, 5)"), std::string::npos) << msg;
  }
}

TEST(Tensorgrad, BroadcastOnlyScalarOrEqualShapes) {
  Tape tape;
  Var a = tape.leaf(Tensor(Shape{2, 3}, 1.0));
  Var b = tape.leaf(Tensor(Shape{3}, 1.0));
  Var s = tape.leaf(Tensor::scalar(2.0));
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_NO_THROW(add(a, s));
  EXPECT_NO_THROW(mul(s, a));
}

TEST(Tensorgrad, SumOfSelfHasGradientTwo) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(0.7));
  Var y = add(x, x);
  tape.backward(y);
  EXPECT_EQ(x.grad()[0], 2.0);
}

TEST(Tensorgrad, BackwardNeedsSingleElementOutput) {
  Tape tape;
  Var x = tape.leaf(Tensor(Shape{3}, 1.0));
  EXPECT_THROW(tape.backward(tanh(x)), ShapeError);
}

TEST(Tensorgrad, InferenceTapeKeepsNoGradients) {
  Tape tape(Tape::Mode::inference);
  Var x = tape.leaf(Tensor::scalar(0.3));
  Var y = exp(x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_THROW(tape.backward(y), std::logic_error);
}

TEST(Tensorgrad, InputsAreNotMutated) {
  std::mt19937_64 rng(3);
  const Tensor a0 = random_tensor(rng, {4, 5});
  const Tensor b0 = random_tensor(rng, {5, 2});
  Tape tape;
  Var a = tape.leaf(a0);
  Var b = tape.leaf(b0);
  Var y = sum_all(tanh(matmul(layer_norm(a), b)));
  tape.backward(y);
  EXPECT_EQ(a.value(), a0);
  EXPECT_EQ(b.value(), b0);
}

TEST(Tensorgrad, GradientsMatchFiniteDifferencesForEveryOp) {
  struct Case {
    const char* name;
    std::function<double(std::mt19937_64&)> run;
  };
  auto unary = [](std::function<Var(Var)> op, double lo = -1.0, double hi = 1.0, int min_cols = 1) {
    return [op, lo, hi, min_cols](std::mt19937_64& rng) {
      std::uniform_int_distribution<int> dim(1, 5), cdim(min_cols, 5);
      const Shape shape{static_cast<std::size_t>(dim(rng)), static_cast<std::size_t>(cdim(rng))};
      const Tensor x = random_tensor(rng, shape, lo, hi);
      const Tensor w = random_tensor(rng, shape);
      return grad_check([&](Tape& t, Var v) { return weighted_sum(t, op(v), w); }, x);
    };
  };
  auto binary = [](std::function<Var(Var, Var)> op, bool scalar_rhs) {
    return [op, scalar_rhs](std::mt19937_64& rng) {
      std::uniform_int_distribution<int> dim(1, 5);
      const Shape shape{static_cast<std::size_t>(dim(rng)), static_cast<std::size_t>(dim(rng))};
      const Tensor a = random_tensor(rng, shape);
      const Tensor b = scalar_rhs ? random_tensor(rng, {}) : random_tensor(rng, shape);
      const Tensor w = random_tensor(rng, shape);
      return grad_check([&](Tape& t, std::span<const Var> v) { return weighted_sum(t, op(v[0], v[1]), w); },
                        {a, b})
          .max_relative_error;
    };
  };
  const std::vector<Case> cases = {
      {"add", binary([](Var a, Var b) { return add(a, b); }, false)},
      {"add_scalar_broadcast", binary([](Var a, Var b) { return add(a, b); }, true)},
      {"sub", binary([](Var a, Var b) { return sub(a, b); }, false)},
      {"mul", binary([](Var a, Var b) { return mul(a, b); }, false)},
      {"mul_scalar_broadcast", binary([](Var a, Var b) { return mul(a, b); }, true)},
      {"minimum", binary([](Var a, Var b) { return minimum(a, b); }, false)},
      {"neg", unary([](Var a) { return neg(a); })},
      {"scale", unary([](Var a) { return scale(a, -2.5); })},
      {"tanh", unary([](Var a) { return tanh(a); }, -3.0, 3.0)},
      {"exp", unary([](Var a) { return exp(a); })},
      {"log", unary([](Var a) { return log(a); }, 0.5, 2.0)},
      {"square", unary([](Var a) { return square(a); })},
      {"clamp", unary([](Var a) { return clamp(a, -0.5, 0.5); })},
      {"layer_norm", unary([](Var a) { return layer_norm(a); }, -1.0, 1.0, 2)},
      {"matmul",
       [](std::mt19937_64& rng) {
         std::uniform_int_distribution<int> dim(1, 6);
         const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
         const Tensor a = random_tensor(rng, {m, k});
         const Tensor b = random_tensor(rng, {k, n});
         const Tensor w = random_tensor(rng, {m, n});
         return grad_check([&](Tape& t, std::span<const Var> v) { return weighted_sum(t, matmul(v[0], v[1]), w); },
                           {a, b})
             .max_relative_error;
       }},
      {"add_rowwise",
       [](std::mt19937_64& rng) {
         const Tensor x = random_tensor(rng, {4, 3});
         const Tensor b = random_tensor(rng, {3});
         const Tensor w = random_tensor(rng, {4, 3});
         return grad_check(
                    [&](Tape& t, std::span<const Var> v) { return weighted_sum(t, add_rowwise(v[0], v[1]), w); },
                    {x, b})
             .max_relative_error;
       }},
      {"layer_norm_affine",
       [](std::mt19937_64& rng) {
         std::uniform_int_distribution<int> dim(2, 6);
         const std::size_t r = dim(rng), c = dim(rng);
         const Tensor x = random_tensor(rng, {r, c});
         const Tensor g = random_tensor(rng, {c}, 0.5, 1.5);
         const Tensor b = random_tensor(rng, {c});
         const Tensor w = random_tensor(rng, {r, c});
         return grad_check(
                    [&](Tape& t, std::span<const Var> v) {
                      return weighted_sum(t, layer_norm(v[0], v[1], v[2]), w);
                    },
                    {x, g, b})
             .max_relative_error;
       }},
      {"softmax_with_temperature",
       [](std::mt19937_64& rng) {
         std::uniform_int_distribution<int> dim(1, 6);
         const std::size_t r = dim(rng), c = dim(rng);
         const Tensor x = random_tensor(rng, {r, c}, -2.0, 2.0);
         const Tensor tau = random_tensor(rng, {}, 0.2, 2.0);
         const Tensor w = random_tensor(rng, {r, c});
         return grad_check(
                    [&](Tape& t, std::span<const Var> v) {
                      return weighted_sum(t, softmax_with_temperature(v[0], v[1], 0.015), w);
                    },
                    {x, tau})
             .max_relative_error;
       }},
      {"reduce_sum_over_set",
       [](std::mt19937_64& rng) {
         const Tensor x = random_tensor(rng, {7, 3});
         const Tensor w = random_tensor(rng, {3});
         return grad_check([&](Tape& t, Var v) { return weighted_sum(t, reduce_sum_over_set(v), w); }, x);
       }},
      {"segment_sum",
       [](std::mt19937_64& rng) {
         const Tensor x = random_tensor(rng, {9, 2});
         const std::vector<std::uint32_t> seg{0, 2, 1, 0, 2, 2, 1, 0, 0};
         const Tensor w = random_tensor(rng, {3, 2});
         return grad_check([&](Tape& t, Var v) { return weighted_sum(t, segment_sum(v, seg, 3), w); }, x);
       }},
      {"gather_rows",
       [](std::mt19937_64& rng) {
         const Tensor x = random_tensor(rng, {4, 3});
         const std::vector<std::uint32_t> idx{3, 0, 0, 2, 3};
         const Tensor w = random_tensor(rng, {5, 3});
         return grad_check([&](Tape& t, Var v) { return weighted_sum(t, gather_rows(v, idx), w); }, x);
       }},
      {"concat",
       [](std::mt19937_64& rng) {
         const Tensor a = random_tensor(rng, {3, 2});
         const Tensor b = random_tensor(rng, {3, 4});
         const Tensor w = random_tensor(rng, {6, 3});
         return grad_check(
                    [&](Tape& t, std::span<const Var> v) {
                      const Var cols[] = {v[0], v[1]};
                      Var c = concat_cols(cols);
                      Var r = reshape(c, Shape{6, 3});
                      const Var rows[] = {r};
                      return weighted_sum(t, concat_rows(rows), w);
                    },
                    {a, b})
             .max_relative_error;
       }},
      {"gaussian_logprob",
       [](std::mt19937_64& rng) {
         const Tensor m = random_tensor(rng, {5});
         const Tensor s = random_tensor(rng, {5}, 0.3, 2.0);
         const Tensor x = random_tensor(rng, {5});
         return grad_check([](Tape&, std::span<const Var> v) { return gaussian_logprob(v[0], v[1], v[2]); },
                           {m, s, x})
             .max_relative_error;
       }},
  };
  std::uint64_t seed = 100;
  for (const auto& c : cases) {
    const double worst = worst_over_trials(seed++, c.run);
    EXPECT_LE(worst, kGradTol) << c.name;
  }
}

TEST(Tensorgrad, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    Tape tape;
    const Tensor x = random_tensor(rng, {5, 8}, -30.0, 30.0);
    Var tau = tape.leaf(random_tensor(rng, {}, 0.0, 3.0));
    Var y = softmax_with_temperature(tape.leaf(x), tau, 0.015);
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 8; ++c) s += y.value().at(r, c);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Tensorgrad, SoftmaxIsStableForLargeLogits) {
  Tape tape;
  Var x = tape.leaf(Tensor::matrix(1, 3, {1000.0, 999.0, -1000.0}));
  Var y = softmax_with_temperature(x, tape.constant(Tensor::scalar(0.0)), 0.015);
  EXPECT_TRUE(y.value().all_finite());
  EXPECT_NEAR(y.value()[0], 1.0, 1e-12);
}

TEST(Tensorgrad, SoftmaxRejectsNonPositiveTemperature) {
  Tape tape;
  Var x = tape.leaf(Tensor::matrix(1, 2, {0.0, 1.0}));
  EXPECT_THROW(softmax_with_temperature(x, tape.constant(Tensor::scalar(-0.015)), 0.015), std::domain_error);
}

TEST(Tensorgrad, LayerNormRejectsWidthBelowTwo) {
  Tape tape;
  Var x = tape.leaf(Tensor(Shape{4, 1}, 1.0));
  EXPECT_THROW(layer_norm(x), ShapeError);
}

TEST(Tensorgrad, LayerNormRowsHaveZeroMeanUnitVariance) {
  std::mt19937_64 rng(5);
  Tape tape;
  Var y = layer_norm(tape.leaf(random_tensor(rng, {3, 16}, -4.0, 4.0)));
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t c = 0; c < 16; ++c) m += y.value().at(r, c);
    m /= 16;
    for (std::size_t c = 0; c < 16; ++c) v += std::pow(y.value().at(r, c) - m, 2);
    v /= 16;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-3);
  }
}

TEST(Tensorgrad, SetReductionIsBitExactUnderPermutation) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<int> rows(1, 24);
    const std::size_t n = rows(rng);
    Tensor x = random_tensor(rng, {n, 4}, -1e3, 1e3);
    std::vector<std::uint32_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0u);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tape tape;
    Var a = reduce_sum_over_set(tape.leaf(x));
    Var b = reduce_sum_over_set(gather_rows(tape.leaf(x), perm));
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(a.value()[c], b.value()[c]);
  }
}

TEST(Tensorgrad, TanhMatchesStdTanh) {
  Tape tape;
  std::vector<double> xs;
  for (double x = -25.0; x <= 25.0; x += 0.013) xs.push_back(x);
  xs.push_back(800.0);
  xs.push_back(-800.0);
  Var y = tanh(tape.leaf(Tensor::vector(xs)));
  for (std::size_t i = 0; i < xs.size(); ++i) EXPECT_NEAR(y.value()[i], std::tanh(xs[i]), 1e-15);
}

TEST(Tensorgrad, GaussianLogprobMatchesClosedForm) {
  Tape tape;
  Var m = tape.leaf(Tensor::vector({0.5, -1.0}));
  Var s = tape.leaf(Tensor::vector({2.0, 0.25}));
  Var x = tape.leaf(Tensor::vector({1.5, -1.0}));
  const double expected = (-0.5 * 0.25 - std::log(2.0)) + (0.0 - std::log(0.25)) - std::log(2.0 * std::numbers::pi);
  EXPECT_NEAR(gaussian_logprob(m, s, x).value().item(), expected, 1e-14);
}

TEST(Tensorgrad, VarsFromDifferentTapesAreRejected) {
  Tape t1, t2;
  Var a = t1.leaf(Tensor::scalar(1.0));
  Var b = t2.leaf(Tensor::scalar(1.0));
  EXPECT_THROW(add(a, b), std::invalid_argument);
}
