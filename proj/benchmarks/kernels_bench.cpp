#include <benchmark/benchmark.h>

#include <vector>

#include "ditsr/blocks.hpp"
#include "ditsr/diffusion.hpp"
#include "ditsr/fourier.hpp"
#include "ditsr/tensor.hpp"

using namespace ditsr;

namespace {

Tensor noise(const Shape& shape, std::uint64_t seed) {
  CounterRng rng(seed);
  return gaussian_like(shape, rng);
}

void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> a(n * n, 0.5), b(n * n, 0.25), c(n * n);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), 0.0);
    kernels::gemm(n, n, n, a.data(), n, 1, b.data(), n, 1, c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] =
      benchmark::Counter(2.0 * double(n * n * n), benchmark::Counter::kIsIterationInvariantRate, benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(128)->Arg(256);

// Transposed operand: the strided path used by attention backward.
void BM_GemmTransposedB(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> a(n * n, 0.5), b(n * n, 0.25), c(n * n);
  for (auto _ : state) {
    kernels::gemm(n, n, n, a.data(), n, 1, b.data(), 1, n, c.data());
    benchmark::DoNotOptimize(c.data());
  }
}
BENCHMARK(BM_GemmTransposedB)->Arg(128);

void BM_LinearChannels(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Tensor x = noise({c, 32, 32}, 1), w = noise({c, c}, 2), b = noise({c}, 3);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(linear_channels(x, w, b));
}
BENCHMARK(BM_LinearChannels)->Arg(16)->Arg(64);

void BM_Dft2(benchmark::State& state) {
  const auto p = static_cast<std::size_t>(state.range(0));
  const Tensor w = noise({p, p}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(fourier::dft2(w));
}
BENCHMARK(BM_Dft2)->Arg(8)->Arg(16);

void BM_AdaFm(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Tensor x = noise({c, 64, 64}, 5);
  const Tensor s = adafm_symmetrize(Tensor::full({8, 8}, 1.0));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(adafm_modulate(x, s, 8));
}
BENCHMARK(BM_AdaFm)->Arg(16)->Arg(64);

void BM_AdaLn(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Tensor x = noise({c, 64, 64}, 6), f = noise({3 * c}, 7);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(adaln_modulate(x, f));
}
BENCHMARK(BM_AdaLn)->Arg(16)->Arg(64);

}  // namespace
