#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "ditsr/diffusion.hpp"
#include "ditsr/tensor.hpp"

namespace ditsr {

/// Radial power spectra of the x0 prediction at each reverse step.
struct SpectrumTrajectory {
  std::vector<std::size_t> steps;  // T, T-1, ..., 1
  std::vector<double> eta;         // eta_t per row
  std::vector<double> bin_centers;
  std::vector<std::vector<double>> power;  // [row][bin]
};

SpectrumTrajectory spectrum_trajectory(const X0Predictor& predictor, const Tensor& y0, const ShiftSchedule& sched,
                                       std::uint64_t seed, std::size_t n_bins);

/// Per band, the first reverse step t (walking T down to 1) at which the band
/// power reaches `fraction` of its final value. Larger t means the band
/// converged earlier in reverse time.
std::vector<std::size_t> convergence_steps(const SpectrumTrajectory& trajectory, double fraction = 0.9);

/// Columns: step, eta, then one power column per bin.
void write_trajectory_csv(const std::filesystem::path& path, const SpectrumTrajectory& trajectory);

}  // namespace ditsr
