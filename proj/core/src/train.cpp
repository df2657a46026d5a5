#include "ditsr/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "ditsr/errors.hpp"
#include "json.hpp"

namespace ditsr {

Adam::Adam(ParamStore& store, double lr, double beta1, double beta2, double eps)
    : store_(store), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, t] : store_.named()) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto& params = store_.named();
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor p = params[k].second;
    const auto& g = p.node()->grad;
    if (g.empty()) continue;
    auto d = p.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < d.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      d[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["iterations"] = iterations;
  j["loss_curve"] = loss_curve;
  j["metrics"] = metrics;
  j["wall_seconds"] = wall_seconds;
  return j.dump(2);
}

RunManifest train(Denoiser& model, const std::vector<ImagePair>& data, const ShiftSchedule& sched,
                  const TrainOptions& options) {
  if (data.empty()) throw ValidationError("train: empty dataset");
  if (options.batch == 0) throw ValidationError("train: batch must be positive");
  if (!(options.lr >= 0.0)) throw ValidationError("train: learning rate must be non-negative");
  const std::size_t multiple = model.config().resolution_multiple();
  if (options.crop != 0 && options.crop % multiple != 0) {
    throw ResolutionError("train: crop " + std::to_string(options.crop) + " must be a multiple of " +
                          std::to_string(multiple));
  }

  const auto start = std::chrono::steady_clock::now();
  RunManifest run;
  run.config_hash = content_hash(config_to_json(model.config()));
  run.seed = options.seed;
  run.iterations = options.iters;

  Adam adam(model.params(), options.lr);
  const CounterRng root(options.seed);
  const double inv_batch = 1.0 / static_cast<double>(options.batch);
  for (std::size_t it = 0; it < options.iters; ++it) {
    CounterRng rng = root.fork(it);
    adam.set_lr(scheduled_lr(options, it));
    model.params().zero_grad();
    double batch_loss = 0.0;
    for (std::size_t b = 0; b < options.batch; ++b) {
      const auto& pair = data[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1))];
      const ImagePair sample = options.crop ? random_crop(pair, options.crop, 1, rng) : pair;
      const TrainingPair tp = training_pair(sample.hr, sample.lr_up, sched, rng);
      const Tensor loss = scale(mse_loss(model.forward(tp.x_t, sample.lr_up, static_cast<std::int64_t>(tp.t)), tp.target),
                                inv_batch);
      batch_loss += loss.item();
      backward(loss);
    }
    if (!std::isfinite(batch_loss) || batch_loss > options.divergence_threshold) {
      throw NumericError("train: loss diverged at iteration " + std::to_string(it) + " (loss " +
                         std::to_string(batch_loss) + ", lr " + std::to_string(options.lr) + ")");
    }
    adam.step();
    run.loss_curve.push_back(batch_loss);
    if (options.on_step) options.on_step(it, batch_loss);
  }
  run.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!run.loss_curve.empty()) {
    const std::size_t n = run.loss_curve.size();
    const std::size_t w = std::max<std::size_t>(1, std::min<std::size_t>(50, n / 10 + 1));
    run.metrics["initial_loss"] = smoothed(run.loss_curve, w, w);
    run.metrics["final_loss"] = smoothed(run.loss_curve, n, w);
  }
  return run;
}

double scheduled_lr(const TrainOptions& options, std::size_t it) {
  if (options.warmup > 0 && it < options.warmup) {
    return options.lr * static_cast<double>(it + 1) / static_cast<double>(options.warmup);
  }
  if (!options.cosine || options.iters <= options.warmup) return options.lr;
  const double progress =
      static_cast<double>(it - options.warmup) / static_cast<double>(options.iters - options.warmup);
  return 0.5 * options.lr * (1.0 + std::cos(std::numbers::pi * progress));
}

X0Predictor predictor_for(const Denoiser& model) {
  return [&model](const Tensor& x_t, const Tensor& y0, std::size_t t) {
    return model.forward(x_t, y0, static_cast<std::int64_t>(t));
  };
}

PsnrReport evaluate_psnr(const Denoiser& model, const std::vector<ImagePair>& data, const ShiftSchedule& sched,
                         std::uint64_t seed) {
  PsnrReport report;
  const CounterRng root(seed);
  const auto predictor = predictor_for(model);
  for (std::size_t i = 0; i < data.size(); ++i) {
    SampleOptions opts;
    opts.seed = root.fork(i).next_u64();
    const auto result = sample(predictor, data[i].lr_up, sched, opts);
    report.model.push_back(psnr(result.image, data[i].hr));
    report.baseline.push_back(psnr(data[i].lr_up, data[i].hr));
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  report.mean_model = mean(report.model);
  report.mean_baseline = mean(report.baseline);
  return report;
}

double smoothed(const std::vector<double>& curve, std::size_t end, std::size_t window) {
  end = std::min(end, curve.size());
  if (end == 0 || window == 0) return 0.0;
  const std::size_t begin = end > window ? end - window : 0;
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += curve[i];
  return s / static_cast<double>(end - begin);
}

std::string content_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ToyRecipe toy_recipe(std::uint64_t seed) {
  ToyRecipe r;
  r.preset = "micro";
  r.model_seed = 7;
  r.train_data.n_samples = 256;
  r.train_data.seed = 1;
  r.eval_data = r.train_data;
  r.eval_data.n_samples = 32;
  r.eval_data.seed = 2;
  r.kappa = 0.75;
  r.train.iters = 5000;
  r.train.batch = 8;
  r.train.lr = 2e-3;
  r.train.warmup = 100;
  r.train.cosine = true;
  r.train.crop = 32;
  r.train.seed = seed;
  return r;
}

}  // namespace ditsr
