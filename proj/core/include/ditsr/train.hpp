#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ditsr/architecture.hpp"
#include "ditsr/dataset.hpp"
#include "ditsr/diffusion.hpp"
#include "ditsr/params.hpp"

namespace ditsr {

class Adam {
 public:
  explicit Adam(ParamStore& store, double lr = 5e-5, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// One bias-corrected update from the accumulated gradients.
  void step();
  std::size_t steps() const { return t_; }
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  ParamStore& store_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct TrainOptions {
  std::size_t iters = 1000;
  std::size_t batch = 4;
  double lr = 5e-5;
  /// Linear warm-up length, then cosine decay to zero when `cosine` is set.
  std::size_t warmup = 0;
  bool cosine = false;
  std::size_t crop = 0;  // 0 trains on full images
  std::uint64_t seed = 0;
  double divergence_threshold = 1e6;
  /// Called after every iteration with (iteration, batch loss).
  std::function<void(std::size_t, double)> on_step;
};

struct RunManifest {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::size_t iterations = 0;
  std::vector<double> loss_curve;
  std::map<std::string, double> metrics;
  double wall_seconds = 0.0;

  std::string to_json() const;
};

/// Mean MSE x0-prediction loss over `batch` random pairs per iteration,
/// Adam update. Throws NumericError if the loss diverges.
RunManifest train(Denoiser& model, const std::vector<ImagePair>& data, const ShiftSchedule& sched,
                  const TrainOptions& options);

/// Learning rate used at iteration `it` under the options' schedule.
double scheduled_lr(const TrainOptions& options, std::size_t it);

/// Sampler adaptor for a denoiser.
X0Predictor predictor_for(const Denoiser& model);

struct PsnrReport {
  std::vector<double> model;     // per sample
  std::vector<double> baseline;  // y0 against x0
  double mean_model = 0.0;
  double mean_baseline = 0.0;
};

/// Samples every pair (seed forked per sample) and scores against x0.
PsnrReport evaluate_psnr(const Denoiser& model, const std::vector<ImagePair>& data, const ShiftSchedule& sched,
                         std::uint64_t seed);

/// Trailing mean of the last `window` entries ending at index `end` (exclusive).
double smoothed(const std::vector<double>& curve, std::size_t end, std::size_t window);

/// Default small-scale recipe: config preset, training and held-out data,
/// optimiser settings. `seed` becomes the training seed.
struct ToyRecipe {
  std::string preset;
  ToyDatasetSpec train_data;
  ToyDatasetSpec eval_data;
  TrainOptions train;
  std::uint64_t model_seed = 0;
  double kappa = 2.0;  // diffusion noise scale, in units of the [0, 1] pixel range

  ShiftSchedule schedule() const { return build_schedule(15, 0.04, 0.999, kappa); }
};

ToyRecipe toy_recipe(std::uint64_t seed = 0);

/// FNV-1a 64-bit digest rendered as 16 hex digits.
std::string content_hash(const std::string& text);

}  // namespace ditsr
