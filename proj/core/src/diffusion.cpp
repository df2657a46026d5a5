#include "ditsr/diffusion.hpp"

#include <cmath>
#include <string>

#include "ditsr/errors.hpp"

namespace ditsr {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// out = ca * a + cb * b + cn * n, elementwise.
Tensor combine(double ca, const Tensor& a, double cb, const Tensor& b, double cn, const Tensor& n) {
  const auto ad = a.data(), bd = b.data(), nd = n.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ca * ad[i] + cb * bd[i] + cn * nd[i];
  return Tensor(a.shape(), std::move(out));
}

}  // namespace

double ShiftSchedule::alpha(std::size_t t) const {
  check_step(t);
  return eta[t] - eta[t - 1];
}

void ShiftSchedule::check_step(std::size_t t) const {
  if (t < 1 || t > steps) {
    throw ValidationError("time step " + std::to_string(t) + " outside [1, " + std::to_string(steps) + "]");
  }
}

ShiftSchedule build_schedule(std::size_t steps, double eta1, double eta_last, double kappa) {
  if (steps < 1) throw ValidationError("schedule needs at least one step");
  if (!(0.0 < eta1 && eta1 < eta_last && eta_last < 1.0)) {
    throw ValidationError("schedule requires 0 < eta1 < etaT < 1");
  }
  if (!(kappa > 0.0) || !std::isfinite(kappa)) throw ValidationError("kappa must be positive");
  ShiftSchedule s;
  s.steps = steps;
  s.kappa = kappa;
  s.eta.assign(steps + 1, 0.0);
  if (steps == 1) {
    s.eta[1] = eta_last;
    return s;
  }
  const double lo = std::sqrt(eta1);
  const double ratio = std::sqrt(eta_last) / lo;
  for (std::size_t t = 1; t <= steps; ++t) {
    const double r = lo * std::pow(ratio, static_cast<double>(t - 1) / static_cast<double>(steps - 1));
    s.eta[t] = r * r;
  }
  s.eta[1] = eta1;
  s.eta[steps] = eta_last;
  return s;
}

Tensor forward_marginal(const Tensor& x0, const Tensor& y0, std::size_t t, const ShiftSchedule& sched,
                        const Tensor& noise) {
  sched.check_step(t);
  require_same_shape(x0, y0, "forward_marginal");
  require_same_shape(x0, noise, "forward_marginal");
  const double eta = sched.eta[t];
  const double sd = sched.kappa * std::sqrt(eta);
  const auto xd = x0.data(), yd = y0.data(), nd = noise.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] + eta * (yd[i] - xd[i]) + sd * nd[i];
  return Tensor(x0.shape(), std::move(out));
}

Tensor forward_transition(const Tensor& x_prev, const Tensor& e0, std::size_t t, const ShiftSchedule& sched,
                          const Tensor& noise) {
  require_same_shape(x_prev, e0, "forward_transition");
  require_same_shape(x_prev, noise, "forward_transition");
  const double a = sched.alpha(t);
  return combine(1.0, x_prev, a, e0, sched.kappa * std::sqrt(a), noise);
}

PosteriorCoefficients posterior_coefficients(std::size_t t, const ShiftSchedule& sched) {
  const double a = sched.alpha(t);
  const double eta = sched.eta[t];
  PosteriorCoefficients c;
  c.keep = sched.eta[t - 1] / eta;
  c.predict = a / eta;
  c.stddev = sched.kappa * std::sqrt(c.keep * a);
  return c;
}

Tensor posterior_step(const Tensor& x_t, const Tensor& x0_pred, std::size_t t, const ShiftSchedule& sched,
                      const Tensor& noise) {
  require_same_shape(x_t, x0_pred, "posterior_step");
  require_same_shape(x_t, noise, "posterior_step");
  const auto c = posterior_coefficients(t, sched);
  return combine(c.keep, x_t, c.predict, x0_pred, c.stddev, noise);
}

Tensor gaussian_like(const Shape& shape, CounterRng& rng) { return Tensor(shape, rng.normal_vector(numel_of(shape))); }

SampleResult sample(const X0Predictor& predictor, const Tensor& y0, const ShiftSchedule& sched,
                    const SampleOptions& options) {
  NoGradGuard no_grad;
  CounterRng rng(options.seed);
  auto draw = [&] { return options.zero_noise ? Tensor::zeros(y0.shape()) : gaussian_like(y0.shape(), rng); };

  const std::size_t last = sched.steps;
  const Tensor eps = draw();
  Tensor x = combine(1.0, y0, 0.0, y0, sched.kappa * std::sqrt(sched.eta[last]), eps);
  SampleResult result;
  for (std::size_t t = last; t >= 1; --t) {
    Tensor x0_pred = predictor(x, y0, t);
    require_same_shape(x0_pred, y0, "sample: predictor output");
    if (options.keep_trajectory) result.trajectory.push_back(x0_pred);
    x = posterior_step(x, x0_pred, t, sched, draw());
  }
  result.image = x;
  return result;
}

TrainingPair training_pair(const Tensor& x0, const Tensor& y0, const ShiftSchedule& sched, CounterRng& rng) {
  TrainingPair pair;
  pair.t = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(sched.steps)));
  pair.x_t = forward_marginal(x0, y0, pair.t, sched, gaussian_like(x0.shape(), rng));
  pair.target = x0;
  return pair;
}

}  // namespace ditsr
