#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "ditsr/gradcheck.hpp"
#include "ditsr/tensor.hpp"
#include "test_util.hpp"

using namespace ditsr;
using ditsr::test::max_abs_diff;
using ditsr::test::randn;

// ============================================================================
// Construction and shapes
// ============================================================================

TEST(TensorTest, ConstructionChecksSize) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.at({1, 2}), 6.0);
  EXPECT_EQ(shape_str(t.shape()), "[2,3]");
}

TEST(TensorTest, ReshapeRequiresEqualNumel) {
  Tensor t = Tensor::zeros({2, 3});
  EXPECT_EQ(t.reshape({3, 2}).shape(), (Shape{3, 2}));
  EXPECT_THROW(t.reshape({4, 2}), DimensionError);
}

TEST(TensorTest, BroadcastSuffixAndScalar) {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor row = Tensor::from({10, 20, 30});
  Tensor s = Tensor::scalar(2.0);
  Tensor r = add(a, row);
  EXPECT_EQ(r.at({1, 0}), 14.0);
  EXPECT_EQ(mul(a, s).at({1, 2}), 12.0);
  EXPECT_THROW(add(a, Tensor::from({1, 2})), DimensionError);
}

TEST(TensorTest, BroadcastLeadingOnes) {
  Tensor a({1, 3}, {1, 2, 3});
  Tensor b = Tensor::from({1, 1, 1});
  EXPECT_EQ(add(a, b).numel(), 3u);
}

// ============================================================================
// Kernels against naive oracles
// ============================================================================

TEST(TensorTest, MatmulMatchesTripleLoop) {
  const Tensor a = randn({3, 37, 19}, 1), b = randn({19, 23}, 2);
  const Tensor c = matmul(a, b);
  double worst = 0.0;
  for (std::size_t n = 0; n < 3; ++n) {
    for (std::size_t i = 0; i < 37; ++i) {
      for (std::size_t j = 0; j < 23; ++j) {
        long double acc = 0.0L;
        for (std::size_t k = 0; k < 19; ++k) acc += a.at({n, i, k}) * b.at({k, j});
        worst = std::max(worst, std::abs(static_cast<double>(acc) - c.at({n, i, j})));
      }
    }
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(TensorTest, StridedGemmHandlesTransposedOperands) {
  const std::size_t m = 9, n = 300, k = 270;
  const Tensor a = randn({k, m}, 3), b = randn({n, k}, 4);
  std::vector<double> c(m * n, 1.0);
  // A stored transposed, B stored transposed.
  kernels::gemm(m, n, k, a.data().data(), 1, m, b.data().data(), 1, k, c.data());
  double worst = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 1.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[j * k + p];
      worst = std::max(worst, std::abs(acc - c[i * n + j]));
    }
  }
  EXPECT_LT(worst, 1e-11);
}

TEST(TensorTest, GeluMatchesErfForm) {
  for (double x : {-4.0, -1.3, -0.2, 0.0, 0.7, 2.5}) {
    EXPECT_NEAR(gelu_value(x), 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))), 1e-15);
    const double h = 1e-6;
    EXPECT_NEAR(gelu_derivative(x), (gelu_value(x + h) - gelu_value(x - h)) / (2 * h), 1e-8);
  }
}

TEST(TensorTest, SoftmaxRowsSumToOne) {
  const Tensor p = softmax(randn({4, 5, 7}, 5, 10.0), 2);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 7; ++k) s += p.at({i, j, k});
      EXPECT_NEAR(s, 1.0, 1e-14);
    }
  }
}

TEST(TensorTest, GroupNormStandardisesEachGroup) {
  const Tensor x = randn({6, 4, 4}, 6, 3.0, 2.0);
  const Tensor y = group_norm(x, 3, Tensor::full({6}, 1.0), Tensor::zeros({6}), 0.0);
  for (std::size_t g = 0; g < 3; ++g) {
    double s = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < 32; ++i) {
      const double v = y[g * 32 + i];
      s += v;
      ss += v * v;
    }
    EXPECT_NEAR(s / 32.0, 0.0, 1e-13);
    EXPECT_NEAR(ss / 32.0, 1.0, 1e-12);
  }
  EXPECT_THROW(group_norm(x, 4, Tensor::full({6}, 1.0), Tensor::zeros({6}), 0.0), DimensionError);
}

TEST(TensorTest, LinearChannelsCountsMacs) {
  const Tensor x = randn({4, 3, 5}, 7), w = randn({6, 4}, 8);
  reset_mac_count();
  linear_channels(x, w);
  EXPECT_EQ(mac_count(), 6u * 4u * 15u);
}

// ============================================================================
// Autodiff mechanics
// ============================================================================

TEST(AutodiffTest, GradientsAccumulateAcrossUses) {
  Tensor x({2}, {1.5, -2.0}, true);
  backward(sum(add(mul(x, x), x)));
  const auto g = x.grad();
  EXPECT_DOUBLE_EQ(g[0], 2 * 1.5 + 1);
  EXPECT_DOUBLE_EQ(g[1], 2 * -2.0 + 1);
}

TEST(AutodiffTest, SecondBackwardThrows) {
  Tensor x({2}, {1.0, 2.0}, true);
  Tensor loss = sum(square(x));
  backward(loss);
  EXPECT_THROW(backward(loss), GraphError);
}

TEST(AutodiffTest, NonScalarLossThrows) {
  Tensor x({2}, {1.0, 2.0}, true);
  EXPECT_THROW(backward(square(x)), DimensionError);
}

TEST(AutodiffTest, NoGradGuardSkipsGraph) {
  Tensor x({2}, {1.0, 2.0}, true);
  NoGradGuard guard;
  EXPECT_FALSE(square(x).requires_grad());
}

TEST(AutodiffTest, NonFiniteResultThrows) {
  Tensor x({1}, {std::numeric_limits<double>::max()});
  EXPECT_THROW(square(x), NumericError);
}

TEST(AutodiffTest, MutableDataOnlyOnLeaves) {
  Tensor x({2}, {1.0, 2.0}, true);
  Tensor y = scale(x, 2.0);
  EXPECT_THROW(y.mutable_data(), GraphError);
}

TEST(AutodiffTest, FiniteDifferenceOfQuadratic) {
  const Tensor x = Tensor::from({0.3, -1.2, 2.0});
  const Tensor g = finite_diff_grad(
      [](const Tensor& v) {
        double s = 0.0;
        for (double e : v.data()) s += e * e * e;
        return s;
      },
      x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(g[i], 3 * x[i] * x[i], 1e-9);
}

TEST(AutodiffTest, RelativeErrorIsNormWise) {
  const std::vector<double> a{3.0, 4.0}, b{3.0, 4.5};
  EXPECT_DOUBLE_EQ(relative_error(a, b), 0.5 / std::sqrt(9.0 + 20.25));
  EXPECT_EQ(relative_error(std::vector<double>{0.0}, std::vector<double>{0.0}), 0.0);
}

// ============================================================================
// Per-op gradient checks
// ============================================================================

TEST(GradcheckTest, PrimitiveOpsAndBlocks) {
  DenoiserConfig tiny = preset("micro");
  const auto results = gradcheck_suite(tiny, 11, 8);
  ASSERT_GE(results.size(), 13u);
  for (const auto& r : results) {
    EXPECT_TRUE(r.passed()) << r.name << " rel err " << r.rel_error;
    EXPECT_GT(r.probed, 0u) << r.name;
  }
}

TEST(GradcheckTest, DetectsAWrongGradient) {
  // A hand-built op whose backward is off by a factor of two must fail.
  Tensor x = randn({5}, 12);
  auto bad = [&] {
    const Tensor& in = x;
    std::vector<double> out(in.data().begin(), in.data().end());
    for (auto& v : out) v = v * v;
    return make_op_result({5}, std::move(out), {in}, [in](detail::Node& self) {
      auto g = in.node()->grad_buffer();
      for (std::size_t i = 0; i < 5; ++i) g[i] += 4.0 * in[i] * self.grad[i];
    });
  };
  CounterRng rng(1);
  const auto r = gradcheck("bad_square", bad, {x}, rng);
  EXPECT_GT(r.rel_error, 0.1);
}
