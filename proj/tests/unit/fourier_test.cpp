#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "ditsr/dataset.hpp"
#include "ditsr/fourier.hpp"
#include "test_util.hpp"

using namespace ditsr;
using namespace ditsr::fourier;
using ditsr::test::randn;

namespace {

// Direct O(p^4) DFT with the same centered layout as dft2.
std::vector<std::complex<double>> naive_centered_dft(const Tensor& x) {
  const std::size_t p = x.dim(0);
  std::vector<std::complex<double>> out(p * p);
  for (std::size_t k = 0; k < p; ++k) {
    for (std::size_t l = 0; l < p; ++l) {
      std::complex<double> acc = 0.0;
      for (std::size_t a = 0; a < p; ++a) {
        for (std::size_t b = 0; b < p; ++b) {
          const double ang = -2.0 * std::numbers::pi * static_cast<double>(k * a + l * b) / static_cast<double>(p);
          acc += x.at({a, b}) * std::polar(1.0, ang);
        }
      }
      out[centered_index(k, p) * p + centered_index(l, p)] = acc;
    }
  }
  return out;
}

}  // namespace

// ============================================================================
// Window folding
// ============================================================================

TEST(WindowTest, SingleWindowIsInput) {
  const Tensor x = randn({1, 8, 8}, 1);
  const Tensor w = unfold_windows(x, 8);
  EXPECT_EQ(w.shape(), (Shape{1, 1, 8, 8}));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(w[i], x[i]);
}

TEST(WindowTest, FoldUnfoldRoundTripIsExact) {
  const Tensor x = randn({3, 16, 24}, 2);
  const Tensor back = fold_windows(unfold_windows(x, 8), 16, 24);
  ASSERT_EQ(back.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(back[i], x[i]);
}

TEST(WindowTest, RowMajorWindowOrdering) {
  const std::size_t p = 4;
  std::vector<double> v(2 * 8 * 8);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) v[(c * 8 + y) * 8 + x] = 1000.0 * c + 10.0 * y + x;
  const Tensor w = unfold_windows(Tensor({2, 8, 8}, v), p);
  ASSERT_EQ(w.shape(), (Shape{4, 2, p, p}));
  for (std::size_t n = 0; n < 4; ++n) {
    const std::size_t oy = (n / 2) * p, ox = (n % 2) * p;
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = 0; b < p; ++b)
          EXPECT_EQ(w.at({n, c, a, b}), 1000.0 * c + 10.0 * (oy + a) + (ox + b));
  }
}

TEST(WindowTest, ConstantWindowsFoldToConstantMap) {
  const Tensor map = fold_windows(Tensor::full({4, 3, 4, 4}, 2.5), 8, 8);
  for (double v : map.data()) EXPECT_EQ(v, 2.5);
}

TEST(WindowTest, PermutedWindowsDoNotFoldBack) {
  const Tensor x = randn({1, 8, 8}, 3);
  const Tensor w = unfold_windows(x, 4);
  const std::vector<std::size_t> perms[] = {{0, 1, 2, 3}, {1, 0, 2, 3}, {3, 2, 1, 0}, {0, 2, 1, 3}};
  for (const auto& perm : perms) {
    std::vector<double> shuffled(w.numel());
    for (std::size_t n = 0; n < 4; ++n)
      std::copy_n(w.data().begin() + perm[n] * 16, 16, shuffled.begin() + n * 16);
    const Tensor back = fold_windows(Tensor(w.shape(), shuffled), 8, 8);
    const bool identity = perm == std::vector<std::size_t>{0, 1, 2, 3};
    EXPECT_EQ(ditsr::test::max_abs_diff(back, x) == 0.0, identity);
  }
}

TEST(WindowTest, RejectsIndivisibleSizes) {
  EXPECT_THROW(unfold_windows(Tensor::zeros({1, 10, 8}), 4), DimensionError);
  EXPECT_THROW(unfold_windows(Tensor::zeros({1, 9, 9}), 3), DimensionError);
}

// ============================================================================
// DFT
// ============================================================================

TEST(DftTest, ConstantImageHasOnlyDc) {
  const std::size_t p = 8;
  const auto s = dft2(Tensor::full({p, p}, 0.75));
  for (std::size_t u = 0; u < p; ++u) {
    for (std::size_t v = 0; v < p; ++v) {
      const auto z = s.at(u, v);
      if (u == p / 2 && v == p / 2) {
        EXPECT_NEAR(z.real(), 0.75 * p * p, 1e-12);
      } else {
        EXPECT_LT(std::abs(z), 1e-12);
      }
    }
  }
}

TEST(DftTest, MatchesDirectSummation) {
  for (std::size_t p : {4u, 6u, 8u}) {
    const Tensor x = randn({p, p}, 10 + p);
    const auto fast = dft2(x);
    const auto ref = naive_centered_dft(x);
    for (std::size_t i = 0; i < p * p; ++i) {
      EXPECT_NEAR(fast.real[i], ref[i].real(), 1e-11);
      EXPECT_NEAR(fast.imag[i], ref[i].imag(), 1e-11);
    }
  }
}

TEST(DftTest, RoundTripBelowTolerance) {
  const Tensor x = randn({8, 8}, 4);
  const auto back = idft2(dft2(x));
  for (std::size_t i = 0; i < x.numel(); ++i) {
    EXPECT_LT(std::abs(back.real[i] - x[i]), 1e-10);
    EXPECT_LT(std::abs(back.imag[i]), 1e-10);
  }
}

TEST(DftTest, ParsevalHolds) {
  const Tensor x = randn({8, 8}, 5);
  const auto s = dft2(x);
  double space = 0.0, freq = 0.0;
  for (double v : x.data()) space += v * v;
  for (std::size_t i = 0; i < s.numel(); ++i) freq += s.real[i] * s.real[i] + s.imag[i] * s.imag[i];
  EXPECT_LT(std::abs(freq / 64.0 - space) / space, 1e-10);
}

TEST(DftTest, CosineGivesTwoSymmetricBins) {
  const std::size_t p = 8, u0 = 2;
  std::vector<double> v(p * p);
  for (std::size_t y = 0; y < p; ++y)
    for (std::size_t x = 0; x < p; ++x) v[y * p + x] = std::cos(2.0 * std::numbers::pi * u0 * x / p);
  const auto s = dft2(Tensor({p, p}, v));
  const std::size_t c = p / 2;
  for (std::size_t u = 0; u < p; ++u) {
    for (std::size_t w = 0; w < p; ++w) {
      const bool peak = u == c && (w == c + u0 || w == c - u0);
      if (peak) {
        EXPECT_NEAR(s.at(u, w).real(), p * p / 2.0, 1e-12);
      } else {
        EXPECT_LT(std::abs(s.at(u, w)), 1e-12);
      }
    }
  }
}

TEST(DftTest, RejectsNonSquare) { EXPECT_THROW(dft2(Tensor::zeros({4, 6})), DimensionError); }

// ============================================================================
// Frequencies and spectra
// ============================================================================

TEST(FrequencyTest, CenterIsDcAndCornersAreNyquist) {
  EXPECT_EQ(pixel_frequency(4, 4, 8, 8), (std::pair<double, double>{0.0, 0.0}));
  EXPECT_EQ(pixel_frequency(0, 0, 8, 8), (std::pair<double, double>{-0.5, -0.5}));
  EXPECT_EQ(pixel_frequency(6, 2, 8, 8), (std::pair<double, double>{0.25, -0.25}));
  EXPECT_THROW(pixel_frequency(8, 0, 8, 8), DimensionError);
}

TEST(FrequencyTest, CenteringIndicesAreInverse) {
  for (std::size_t n : {4u, 7u, 8u})
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(natural_index(centered_index(i, n), n), i);
}

TEST(SpectrumTest, ConstantImageHasPowerOnlyInFirstBin) {
  const auto power = radial_power_spectrum(Tensor::full({16, 16}, 0.4), 8);
  EXPECT_GT(power[0], 0.0);
  for (std::size_t b = 1; b < power.size(); ++b) EXPECT_LT(power[b], 1e-24);
}

TEST(SpectrumTest, WhiteNoiseIsRoughlyFlat) {
  std::vector<double> mean(8, 0.0);
  for (std::uint64_t seed = 0; seed < 16; ++seed) {
    const auto p = radial_power_spectrum(randn({64, 64}, 100 + seed), 8);
    for (std::size_t b = 0; b < 8; ++b) mean[b] += p[b] / 16.0;
  }
  const auto [lo, hi] = std::minmax_element(mean.begin(), mean.end());
  EXPECT_LT(*hi / *lo, 3.0);
}

TEST(SpectrumTest, BlurredNoiseHasDecreasingTail) {
  const Tensor noise = randn({1, 64, 64}, 7);
  const auto raw = radial_power_spectrum(noise, 8);
  const auto blurred = radial_power_spectrum(gaussian_blur(noise, 2.0), 8);
  for (std::size_t b = 1; b < 8; ++b) EXPECT_LT(blurred[b], blurred[b - 1]);
  for (std::size_t b = 4; b < 8; ++b) EXPECT_LT(blurred[b], raw[b]);
}

TEST(SpectrumTest, ParsevalOverBins) {
  // Sum over bins of (mean power x bin count) equals the spatial energy.
  const Tensor x = randn({16, 16}, 8);
  const std::size_t bins = 6;
  const auto power = radial_power_spectrum(x, bins);
  const double r_max = 0.5 * std::numbers::sqrt2;
  std::vector<double> counts(bins, 0.0);
  for (std::size_t u = 0; u < 16; ++u) {
    for (std::size_t v = 0; v < 16; ++v) {
      const auto [fu, fv] = pixel_frequency(u, v, 16, 16);
      counts[std::min(bins - 1, static_cast<std::size_t>(std::hypot(fu, fv) / r_max * bins))] += 1.0;
    }
  }
  double total = 0.0, energy = 0.0;
  for (std::size_t b = 0; b < bins; ++b) total += power[b] * counts[b];
  for (double v : x.data()) energy += v * v;
  EXPECT_LT(std::abs(total - energy) / energy, 1e-10);
}
