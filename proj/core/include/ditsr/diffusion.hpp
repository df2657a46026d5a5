#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "ditsr/rng.hpp"
#include "ditsr/tensor.hpp"

namespace ditsr {

/// Shifting sequence eta[0..T] (eta[0] = 0) and noise scale kappa.
struct ShiftSchedule {
  std::size_t steps = 0;
  std::vector<double> eta;
  double kappa = 2.0;

  /// alpha_t = eta_t - eta_{t-1}, 1 <= t <= T.
  double alpha(std::size_t t) const;
  /// Throws ValidationError unless 1 <= t <= T.
  void check_step(std::size_t t) const;
};

/// sqrt(eta_t) geometric between sqrt(eta1) and sqrt(etaT); both ends exact.
ShiftSchedule build_schedule(std::size_t steps = 15, double eta1 = 0.04, double eta_last = 0.999, double kappa = 2.0);

/// x0 + eta_t (y0 - x0) + kappa sqrt(eta_t) noise.
Tensor forward_marginal(const Tensor& x0, const Tensor& y0, std::size_t t, const ShiftSchedule& sched,
                        const Tensor& noise);

/// x_{t-1} + alpha_t e0 + kappa sqrt(alpha_t) noise.
Tensor forward_transition(const Tensor& x_prev, const Tensor& e0, std::size_t t, const ShiftSchedule& sched,
                          const Tensor& noise);

struct PosteriorCoefficients {
  double keep = 0.0;     // eta_{t-1} / eta_t, weight on x_t
  double predict = 0.0;  // alpha_t / eta_t, weight on the x0 prediction
  double stddev = 0.0;   // kappa sqrt(eta_{t-1} alpha_t / eta_t)
};

PosteriorCoefficients posterior_coefficients(std::size_t t, const ShiftSchedule& sched);

/// keep * x_t + predict * x0_pred + stddev * noise.
Tensor posterior_step(const Tensor& x_t, const Tensor& x0_pred, std::size_t t, const ShiftSchedule& sched,
                      const Tensor& noise);

/// Denoiser interface for the sampler: (x_t, y0, t) -> x0 prediction.
using X0Predictor = std::function<Tensor(const Tensor& x_t, const Tensor& y0, std::size_t t)>;

struct SampleOptions {
  std::uint64_t seed = 0;
  bool zero_noise = false;      // replace every injected noise draw by zeros
  bool keep_trajectory = false;  // collect each step's x0 prediction
};

struct SampleResult {
  Tensor image;
  std::vector<Tensor> trajectory;  // x0 predictions for t = T, T-1, ..., 1
};

/// Reverse chain from x_T = y0 + kappa sqrt(eta_T) eps.
SampleResult sample(const X0Predictor& predictor, const Tensor& y0, const ShiftSchedule& sched,
                    const SampleOptions& options);

struct TrainingPair {
  Tensor x_t;
  std::size_t t = 0;
  Tensor target;
};

/// t uniform on {1..T}, x_t from the forward marginal, target x0.
TrainingPair training_pair(const Tensor& x0, const Tensor& y0, const ShiftSchedule& sched, CounterRng& rng);

/// Standard-normal tensor of the given shape.
Tensor gaussian_like(const Shape& shape, CounterRng& rng);

}  // namespace ditsr
