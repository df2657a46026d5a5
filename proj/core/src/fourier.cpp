#include "ditsr/fourier.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>

namespace ditsr::fourier {

ComplexTensor::ComplexTensor(Shape s) : shape(std::move(s)) {
  real.assign(numel_of(shape), 0.0);
  imag.assign(numel_of(shape), 0.0);
}

ComplexTensor::ComplexTensor(Shape s, std::vector<double> re, std::vector<double> im)
    : shape(std::move(s)), real(std::move(re)), imag(std::move(im)) {
  if (real.size() != numel_of(shape) || imag.size() != real.size()) {
    throw DimensionError("ComplexTensor: real/imag lengths must equal numel of " + shape_str(shape));
  }
}

std::complex<double> ComplexTensor::at(std::size_t row, std::size_t col) const {
  if (shape.size() != 2 || row >= shape[0] || col >= shape[1]) throw DimensionError("ComplexTensor::at: bad index");
  const std::size_t i = row * shape[1] + col;
  return {real[i], imag[i]};
}

WindowGrid WindowGrid::for_feature(const Shape& chw, std::size_t p) {
  if (chw.size() != 3) throw DimensionError("WindowGrid: expected [C, H, W], got " + shape_str(chw));
  if (p < 2 || p % 2 != 0) throw DimensionError("WindowGrid: window size must be even and >= 2, got " + std::to_string(p));
  if (chw[1] % p != 0 || chw[2] % p != 0) {
    throw DimensionError("WindowGrid: feature " + shape_str(chw) + " is not tiled exactly by " + std::to_string(p) +
                         "x" + std::to_string(p) + " windows");
  }
  return WindowGrid{p, chw[1] / p, chw[2] / p, chw[0]};
}

Tensor unfold_windows(const Tensor& feature, std::size_t p) {
  const WindowGrid grid = WindowGrid::for_feature(feature.shape(), p);
  const std::size_t h = grid.height();
  const std::size_t w = grid.width();
  auto index = std::make_shared<std::vector<std::size_t>>(feature.numel());
  std::size_t k = 0;
  for (std::size_t wi = 0; wi < grid.n_h; ++wi) {
    for (std::size_t wj = 0; wj < grid.n_w; ++wj) {
      for (std::size_t c = 0; c < grid.channels; ++c) {
        for (std::size_t i = 0; i < p; ++i) {
          for (std::size_t j = 0; j < p; ++j) (*index)[k++] = (c * h + wi * p + i) * w + wj * p + j;
        }
      }
    }
  }
  return gather(feature, std::move(index), {grid.windows(), grid.channels, p, p});
}

Tensor fold_windows(const Tensor& windows, std::size_t height, std::size_t width) {
  if (windows.rank() != 4 || windows.dim(2) != windows.dim(3)) {
    throw DimensionError("fold_windows: expected [N, C, p, p], got " + shape_str(windows.shape()));
  }
  const std::size_t c = windows.dim(1);
  const std::size_t p = windows.dim(2);
  const WindowGrid grid = WindowGrid::for_feature({c, height, width}, p);
  if (grid.windows() != windows.dim(0)) {
    throw DimensionError("fold_windows: " + std::to_string(windows.dim(0)) + " windows cannot tile " +
                         std::to_string(height) + "x" + std::to_string(width));
  }
  auto index = std::make_shared<std::vector<std::size_t>>(windows.numel());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t win = (y / p) * grid.n_w + x / p;
        (*index)[(ch * height + y) * width + x] = ((win * c + ch) * p + y % p) * p + x % p;
      }
    }
  }
  return gather(windows, std::move(index), {c, height, width});
}

// ---- DFT -------------------------------------------------------------------

namespace {

void twiddles(std::size_t n, std::vector<double>& c, std::vector<double>& s) {
  c.resize(n);
  s.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    c[k] = std::cos(a);
    s[k] = std::sin(a);
  }
}

}  // namespace

Dft2Plan::Dft2Plan(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {
  if (rows == 0 || cols == 0) throw DimensionError("Dft2Plan: empty transform");
  twiddles(rows, cos_r_, sin_r_);
  twiddles(cols, cos_c_, sin_c_);
  scratch_re_.resize(std::max(rows, cols));
  scratch_im_.resize(std::max(rows, cols));
}

// Transforms each row along the column axis: out[r, l] = sum_y in[r, y] e^{sign i 2pi l y / cols}.
void Dft2Plan::pass_rows(const double* in_re, const double* in_im, double* re, double* im, double sign) const {
  for (std::size_t r = 0; r < rows_; ++r) {
    const double* xr = in_re + r * cols_;
    const double* xi = in_im ? in_im + r * cols_ : nullptr;
    for (std::size_t l = 0; l < cols_; ++l) {
      double ar = 0.0, ai = 0.0;
      std::size_t idx = 0;
      for (std::size_t y = 0; y < cols_; ++y) {
        const double c = cos_c_[idx];
        const double s = sign * sin_c_[idx];
        if (xi) {
          ar += xr[y] * c - xi[y] * s;
          ai += xr[y] * s + xi[y] * c;
        } else {
          ar += xr[y] * c;
          ai += xr[y] * s;
        }
        idx += l;
        if (idx >= cols_) idx -= cols_;
      }
      re[r * cols_ + l] = ar;
      im[r * cols_ + l] = ai;
    }
  }
}

void Dft2Plan::pass_cols(double* re, double* im, double sign) const {
  for (std::size_t l = 0; l < cols_; ++l) {
    for (std::size_t r = 0; r < rows_; ++r) {
      scratch_re_[r] = re[r * cols_ + l];
      scratch_im_[r] = im[r * cols_ + l];
    }
    for (std::size_t k = 0; k < rows_; ++k) {
      double ar = 0.0, ai = 0.0;
      std::size_t idx = 0;
      for (std::size_t x = 0; x < rows_; ++x) {
        const double c = cos_r_[idx];
        const double s = sign * sin_r_[idx];
        ar += scratch_re_[x] * c - scratch_im_[x] * s;
        ai += scratch_re_[x] * s + scratch_im_[x] * c;
        idx += k;
        if (idx >= rows_) idx -= rows_;
      }
      re[k * cols_ + l] = ar;
      im[k * cols_ + l] = ai;
    }
  }
}

void Dft2Plan::forward_real(const double* in, double* re, double* im) const {
  pass_rows(in, nullptr, re, im, -1.0);
  pass_cols(re, im, -1.0);
}

void Dft2Plan::forward(const double* in_re, const double* in_im, double* re, double* im) const {
  pass_rows(in_re, in_im, re, im, -1.0);
  pass_cols(re, im, -1.0);
}

void Dft2Plan::inverse(const double* in_re, const double* in_im, double* re, double* im) const {
  pass_rows(in_re, in_im, re, im, 1.0);
  pass_cols(re, im, 1.0);
  const double inv = 1.0 / static_cast<double>(rows_ * cols_);
  for (std::size_t i = 0; i < rows_ * cols_; ++i) {
    re[i] *= inv;
    im[i] *= inv;
  }
}

namespace {

std::size_t require_square(const Shape& s, const char* op) {
  if (s.size() != 2 || s[0] != s[1] || s[0] == 0) {
    throw DimensionError(std::string(op) + ": expected a non-empty square [p, p] input, got " + shape_str(s));
  }
  return s[0];
}

}  // namespace

ComplexTensor dft2(const Tensor& window) {
  const std::size_t p = require_square(window.shape(), "dft2");
  Dft2Plan plan(p, p);
  std::vector<double> re(p * p), im(p * p);
  plan.forward_real(window.data().data(), re.data(), im.data());
  ComplexTensor out({p, p});
  for (std::size_t k = 0; k < p; ++k) {
    for (std::size_t l = 0; l < p; ++l) {
      const std::size_t dst = centered_index(k, p) * p + centered_index(l, p);
      out.real[dst] = re[k * p + l];
      out.imag[dst] = im[k * p + l];
    }
  }
  return out;
}

ComplexTensor idft2(const ComplexTensor& centered) {
  const std::size_t p = require_square(centered.shape, "idft2");
  std::vector<double> re(p * p), im(p * p);
  for (std::size_t u = 0; u < p; ++u) {
    for (std::size_t v = 0; v < p; ++v) {
      const std::size_t src = u * p + v;
      const std::size_t dst = natural_index(u, p) * p + natural_index(v, p);
      re[dst] = centered.real[src];
      im[dst] = centered.imag[src];
    }
  }
  Dft2Plan plan(p, p);
  ComplexTensor out({p, p});
  plan.inverse(re.data(), im.data(), out.real.data(), out.imag.data());
  return out;
}

std::pair<double, double> pixel_frequency(std::size_t u, std::size_t v, std::size_t height, std::size_t width,
                                          double sampling_frequency) {
  if (u >= height || v >= width) {
    throw DimensionError("pixel_frequency: (" + std::to_string(u) + "," + std::to_string(v) + ") outside " +
                         std::to_string(height) + "x" + std::to_string(width));
  }
  const double fu = (static_cast<double>(u) - static_cast<double>(height) / 2.0) / static_cast<double>(height);
  const double fv = (static_cast<double>(v) - static_cast<double>(width) / 2.0) / static_cast<double>(width);
  return {fu * sampling_frequency, fv * sampling_frequency};
}

std::vector<double> radial_bin_centers(std::size_t n_bins, double sampling_frequency) {
  if (n_bins < 2) throw ValidationError("radial_bin_centers: need at least 2 bins");
  const double r_max = 0.5 * std::numbers::sqrt2 * sampling_frequency;
  std::vector<double> centers(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) centers[b] = (static_cast<double>(b) + 0.5) * r_max / static_cast<double>(n_bins);
  return centers;
}

std::vector<double> radial_power_spectrum(const Tensor& image, std::size_t n_bins, double sampling_frequency) {
  if (n_bins < 2) throw ValidationError("radial_power_spectrum: need at least 2 bins");
  std::size_t channels = 1, h = 0, w = 0;
  if (image.rank() == 2) {
    h = image.dim(0);
    w = image.dim(1);
  } else if (image.rank() == 3) {
    channels = image.dim(0);
    h = image.dim(1);
    w = image.dim(2);
  } else {
    throw DimensionError("radial_power_spectrum: expected [H, W] or [C, H, W], got " + shape_str(image.shape()));
  }
  const double r_max = 0.5 * std::numbers::sqrt2 * sampling_frequency;
  std::vector<std::size_t> bin_of(h * w);
  std::vector<double> counts(n_bins, 0.0);
  for (std::size_t k = 0; k < h; ++k) {
    for (std::size_t l = 0; l < w; ++l) {
      const auto [fu, fv] = pixel_frequency(centered_index(k, h), centered_index(l, w), h, w, sampling_frequency);
      const double r = std::sqrt(fu * fu + fv * fv);
      auto b = static_cast<std::size_t>(r / r_max * static_cast<double>(n_bins));
      if (b >= n_bins) b = n_bins - 1;
      bin_of[k * w + l] = b;
      counts[b] += 1.0;
    }
  }
  Dft2Plan plan(h, w);
  std::vector<double> re(h * w), im(h * w), power(n_bins, 0.0);
  const double norm = 1.0 / (static_cast<double>(h * w) * static_cast<double>(channels));
  for (std::size_t c = 0; c < channels; ++c) {
    plan.forward_real(image.data().data() + c * h * w, re.data(), im.data());
    for (std::size_t i = 0; i < h * w; ++i) power[bin_of[i]] += (re[i] * re[i] + im[i] * im[i]) * norm;
  }
  for (std::size_t b = 0; b < n_bins; ++b) power[b] = counts[b] > 0 ? power[b] / counts[b] : 0.0;
  return power;
}

void write_spectrum_csv(const std::filesystem::path& path, std::span<const double> centers,
                        std::span<const double> power) {
  if (centers.size() != power.size()) throw DimensionError("write_spectrum_csv: length mismatch");
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  os << "bin_center_frequency,power\n" << std::setprecision(17);
  for (std::size_t i = 0; i < centers.size(); ++i) os << centers[i] << ',' << power[i] << '\n';
}

}  // namespace ditsr::fourier
