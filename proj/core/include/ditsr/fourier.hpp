#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "ditsr/tensor.hpp"

namespace ditsr::fourier {

/// Complex array with split real/imaginary storage.
struct ComplexTensor {
  Shape shape;
  std::vector<double> real;
  std::vector<double> imag;

  ComplexTensor() = default;
  explicit ComplexTensor(Shape s);
  ComplexTensor(Shape s, std::vector<double> re, std::vector<double> im);

  std::size_t numel() const { return real.size(); }
  std::complex<double> at(std::size_t row, std::size_t col) const;
};

/// Tiling of a [C, H, W] feature into p x p windows.
struct WindowGrid {
  std::size_t p = 0;
  std::size_t n_h = 0;
  std::size_t n_w = 0;
  std::size_t channels = 0;

  /// Throws DimensionError unless p is even, p >= 2 and p divides H and W.
  static WindowGrid for_feature(const Shape& chw, std::size_t p);

  std::size_t windows() const { return n_h * n_w; }
  std::size_t height() const { return n_h * p; }
  std::size_t width() const { return n_w * p; }
};

/// [C, H, W] -> [H*W/p^2, C, p, p]; window (i, j) sits at index i*n_w + j.
Tensor unfold_windows(const Tensor& feature, std::size_t p);
/// Inverse of unfold_windows.
Tensor fold_windows(const Tensor& windows, std::size_t height, std::size_t width);

/// Separable 2-D DFT for a fixed rows x cols size, unnormalized forward and
/// 1/(rows*cols) inverse. Buffers are natural (unshifted) order.
class Dft2Plan {
 public:
  Dft2Plan(std::size_t rows, std::size_t cols);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  void forward_real(const double* in, double* re, double* im) const;
  void forward(const double* in_re, const double* in_im, double* re, double* im) const;
  void inverse(const double* in_re, const double* in_im, double* re, double* im) const;

 private:
  void pass_rows(const double* in_re, const double* in_im, double* re, double* im, double sign) const;
  void pass_cols(double* re, double* im, double sign) const;

  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> cos_r_, sin_r_, cos_c_, sin_c_;
  mutable std::vector<double> scratch_re_, scratch_im_;
};

/// Centered index -> natural index (fftshift inverse) along an axis of length n.
inline std::size_t natural_index(std::size_t centered, std::size_t n) { return (centered + n - n / 2) % n; }
/// Natural index -> centered index.
inline std::size_t centered_index(std::size_t natural, std::size_t n) { return (natural + n / 2) % n; }

/// Forward DFT of a square real window, stored centered (DC at (p/2, p/2)).
ComplexTensor dft2(const Tensor& window);
/// Inverse of dft2: takes a centered spectrum and returns the complex signal.
ComplexTensor idft2(const ComplexTensor& centered);

/// Frequency of spectrum position (u, v) under the centered convention.
std::pair<double, double> pixel_frequency(std::size_t u, std::size_t v, std::size_t height, std::size_t width,
                                          double sampling_frequency = 1.0);

/// Mean |DFT|^2 / (H*W) binned by radial frequency; bins uniform on
/// [0, 0.5*sqrt(2)*Fs]. Accepts [H, W] or [C, H, W] (channel-averaged).
std::vector<double> radial_power_spectrum(const Tensor& image, std::size_t n_bins, double sampling_frequency = 1.0);
std::vector<double> radial_bin_centers(std::size_t n_bins, double sampling_frequency = 1.0);

/// CSV with header `bin_center_frequency,power`.
void write_spectrum_csv(const std::filesystem::path& path, std::span<const double> centers,
                        std::span<const double> power);

}  // namespace ditsr::fourier
