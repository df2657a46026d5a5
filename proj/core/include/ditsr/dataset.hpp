#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ditsr/rng.hpp"
#include "ditsr/tensor.hpp"

namespace ditsr {

struct ToyDatasetSpec {
  std::size_t n_samples = 64;
  std::size_t hr_size = 64;
  std::size_t scale = 4;
  double blur_sigma = 2.0;   // in HR pixels, applied before decimation (scale / 2 for x4)
  double noise_sigma = 0.01;  // added at LR resolution
  std::size_t channels = 1;
  std::uint64_t seed = 0;

  /// Throws ValidationError unless hr_size is divisible by scale and by
  /// `multiple` (the denoiser's resolution multiple).
  void validate(std::size_t multiple = 1) const;
};

/// x0 is the HR target, y0 the degraded image upsampled back to HR size.
struct ImagePair {
  Tensor hr;
  Tensor lr_up;
};

std::vector<ImagePair> synth_dataset(const ToyDatasetSpec& spec);

/// Procedural [C, size, size] image in [0, 1]: oriented sinusoids plus
/// piecewise-constant rectangles and disks.
Tensor synth_hr_image(std::size_t size, std::size_t channels, CounterRng& rng);

/// Separable Gaussian blur with reflected borders; sigma <= 0 is a copy.
Tensor gaussian_blur(const Tensor& image, double sigma);
/// Keeps the sample nearest each LR pixel center (mean of the two middle
/// samples per axis for even factors).
Tensor decimate(const Tensor& image, std::size_t factor);
/// Keys bicubic (a = -0.5), half-pixel centers, clamped borders.
Tensor bicubic_upsample(const Tensor& image, std::size_t factor);
/// blur -> decimate -> noise -> bicubic upsample.
Tensor degrade(const Tensor& hr, const ToyDatasetSpec& spec, CounterRng& rng);

/// Random aligned crop applied identically to both images of a pair.
ImagePair random_crop(const ImagePair& pair, std::size_t size, std::size_t align, CounterRng& rng);

/// 10 log10(peak^2 / MSE); identical images report 99.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

inline constexpr double kPsnrCap = 99.0;

}  // namespace ditsr
