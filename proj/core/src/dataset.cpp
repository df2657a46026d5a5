#include "ditsr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "ditsr/errors.hpp"

namespace ditsr {

namespace {

void require_image(const Tensor& image, const char* what) {
  if (image.rank() != 3) throw DimensionError(std::string(what) + ": expected [C, H, W], got " + shape_str(image.shape()));
}

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const auto m = static_cast<std::ptrdiff_t>(n);
  if (m == 1) return 0;
  const std::ptrdiff_t period = 2 * (m - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < m ? i : period - i);
}

double keys_weight(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

}  // namespace

void ToyDatasetSpec::validate(std::size_t multiple) const {
  if (n_samples == 0) throw ValidationError("dataset: n_samples must be positive");
  if (scale == 0 || hr_size == 0 || hr_size % scale != 0) {
    throw ValidationError("dataset: hr_size " + std::to_string(hr_size) + " is not divisible by scale " +
                          std::to_string(scale));
  }
  if (multiple > 1 && hr_size % multiple != 0) {
    throw ResolutionError("dataset: hr_size " + std::to_string(hr_size) + " must be a multiple of " +
                          std::to_string(multiple));
  }
  if (channels == 0) throw ValidationError("dataset: channels must be positive");
  if (blur_sigma < 0.0 || noise_sigma < 0.0) throw ValidationError("dataset: sigmas must be non-negative");
}

Tensor synth_hr_image(std::size_t size, std::size_t channels, CounterRng& rng) {
  const std::size_t n = size * size;
  std::vector<double> base(n, rng.uniform(0.35, 0.65));
  const double s = static_cast<double>(size);

  const auto waves = rng.uniform_int(2, 4);
  for (std::int64_t k = 0; k < waves; ++k) {
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double cycles = rng.uniform(1.0, 6.0);
    const double amp = rng.uniform(0.04, 0.12);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double fy = cycles * std::sin(theta) / s, fx = cycles * std::cos(theta) / s;
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        base[y * size + x] += amp * std::sin(2.0 * std::numbers::pi * (fy * y + fx * x) + phase);
      }
    }
  }

  const auto shapes = rng.uniform_int(2, 5);
  for (std::int64_t k = 0; k < shapes; ++k) {
    const bool disk = rng.uniform() < 0.5;
    const double value = rng.uniform(0.0, 1.0);
    const double cy = rng.uniform(0.0, s), cx = rng.uniform(0.0, s);
    const double ry = rng.uniform(0.08, 0.3) * s, rx = rng.uniform(0.08, 0.3) * s;
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
        const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
        const bool inside = disk ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (inside) base[y * size + x] = value;
      }
    }
  }

  std::vector<double> out(channels * n);
  for (std::size_t c = 0; c < channels; ++c) {
    const double gain = channels == 1 ? 1.0 : rng.uniform(0.7, 1.0);
    for (std::size_t i = 0; i < n; ++i) out[c * n + i] = std::clamp(gain * base[i], 0.0, 1.0);
  }
  return Tensor({channels, size, size}, std::move(out));
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
  require_image(image, "gaussian_blur");
  if (sigma <= 0.0) return image.detach();
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (auto& v : kernel) v /= total;

  const auto src = image.data();
  std::vector<double> tmp(src.size()), out(src.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const std::size_t off = ch * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          acc += kernel[static_cast<std::size_t>(k + radius)] *
                 src[off + y * w + reflect(static_cast<std::ptrdiff_t>(x) + k, w)];
        }
        tmp[off + y * w + x] = acc;
      }
    }
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          acc += kernel[static_cast<std::size_t>(k + radius)] *
                 tmp[off + reflect(static_cast<std::ptrdiff_t>(y) + k, h) * w + x];
        }
        out[off + y * w + x] = acc;
      }
    }
  }
  return Tensor(image.shape(), std::move(out));
}

Tensor decimate(const Tensor& image, std::size_t factor) {
  require_image(image, "decimate");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (factor == 0 || h % factor != 0 || w % factor != 0) {
    throw ValidationError("decimate: size not divisible by factor " + std::to_string(factor));
  }
  const std::size_t lh = h / factor, lw = w / factor;
  // Taps nearest the LR pixel center (s*i + (s-1)/2).
  const std::size_t lo = (factor - 1) / 2, hi = factor / 2;
  const auto src = image.data();
  std::vector<double> out(c * lh * lw);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < lh; ++y) {
      for (std::size_t x = 0; x < lw; ++x) {
        auto at = [&](std::size_t dy, std::size_t dx) {
          return src[(ch * h + y * factor + dy) * w + x * factor + dx];
        };
        out[(ch * lh + y) * lw + x] =
            lo == hi ? at(lo, lo) : 0.25 * (at(lo, lo) + at(lo, hi) + at(hi, lo) + at(hi, hi));
      }
    }
  }
  return Tensor({c, lh, lw}, std::move(out));
}

Tensor bicubic_upsample(const Tensor& image, std::size_t factor) {
  require_image(image, "bicubic_upsample");
  if (factor == 0) throw ValidationError("bicubic_upsample: factor must be positive");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const std::size_t oh = h * factor, ow = w * factor;

  // Per output coordinate: 4 source taps and weights along one axis.
  struct Taps {
    std::size_t idx[4];
    double wt[4];
  };
  auto make_taps = [&](std::size_t out_n, std::size_t in_n) {
    std::vector<Taps> taps(out_n);
    for (std::size_t o = 0; o < out_n; ++o) {
      const double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
      const double base = std::floor(src);
      for (int k = 0; k < 4; ++k) {
        const double pos = base - 1.0 + k;
        const auto clamped = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(pos), 0,
                                                        static_cast<std::ptrdiff_t>(in_n) - 1);
        taps[o].idx[k] = static_cast<std::size_t>(clamped);
        taps[o].wt[k] = keys_weight(src - pos);
      }
    }
    return taps;
  };
  const auto ty = make_taps(oh, h), tx = make_taps(ow, w);

  const auto src = image.data();
  std::vector<double> out(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (int a = 0; a < 4; ++a) {
          double row = 0.0;
          for (int b = 0; b < 4; ++b) row += tx[x].wt[b] * src[(ch * h + ty[y].idx[a]) * w + tx[x].idx[b]];
          acc += ty[y].wt[a] * row;
        }
        out[(ch * oh + y) * ow + x] = acc;
      }
    }
  }
  return Tensor({c, oh, ow}, std::move(out));
}

Tensor degrade(const Tensor& hr, const ToyDatasetSpec& spec, CounterRng& rng) {
  Tensor lr = decimate(gaussian_blur(hr, spec.blur_sigma), spec.scale);
  if (spec.noise_sigma > 0.0) {
    std::vector<double> noisy(lr.data().begin(), lr.data().end());
    for (auto& v : noisy) v += spec.noise_sigma * rng.normal();
    lr = Tensor(lr.shape(), std::move(noisy));
  }
  if (spec.scale == 1) return lr;
  return bicubic_upsample(lr, spec.scale);
}

std::vector<ImagePair> synth_dataset(const ToyDatasetSpec& spec) {
  spec.validate();
  const CounterRng root(spec.seed);
  std::vector<ImagePair> out;
  out.reserve(spec.n_samples);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    CounterRng image_rng = root.fork(2 * i);
    CounterRng noise_rng = root.fork(2 * i + 1);
    Tensor hr = synth_hr_image(spec.hr_size, spec.channels, image_rng);
    Tensor lr_up = degrade(hr, spec, noise_rng);
    out.push_back({std::move(hr), std::move(lr_up)});
  }
  return out;
}

ImagePair random_crop(const ImagePair& pair, std::size_t size, std::size_t align, CounterRng& rng) {
  const std::size_t h = pair.hr.dim(1), w = pair.hr.dim(2);
  if (size == 0 || size >= std::min(h, w)) return pair;
  if (align == 0) align = 1;
  const auto pick = [&](std::size_t n) {
    const auto slots = static_cast<std::int64_t>((n - size) / align);
    return static_cast<std::size_t>(rng.uniform_int(0, slots)) * align;
  };
  const std::size_t y0 = pick(h), x0 = pick(w);
  auto crop = [&](const Tensor& t) { return slice(slice(t, 1, y0, size), 2, x0, size); };
  NoGradGuard no_grad;
  return {crop(pair.hr), crop(pair.lr_up)};
}

double psnr(const Tensor& a, const Tensor& b, double peak) {
  if (a.shape() != b.shape()) throw DimensionError("psnr: shape mismatch");
  const auto ad = a.data(), bd = b.data();
  double mse = 0.0;
  for (std::size_t i = 0; i < ad.size(); ++i) mse += (ad[i] - bd[i]) * (ad[i] - bd[i]);
  mse /= static_cast<double>(ad.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

}  // namespace ditsr
