#include "ditsr/spectrum.hpp"

#include <cmath>
#include <fstream>

#include "ditsr/errors.hpp"
#include "ditsr/fourier.hpp"

namespace ditsr {

SpectrumTrajectory spectrum_trajectory(const X0Predictor& predictor, const Tensor& y0, const ShiftSchedule& sched,
                                       std::uint64_t seed, std::size_t n_bins) {
  SampleOptions opts;
  opts.seed = seed;
  opts.keep_trajectory = true;
  const auto result = sample(predictor, y0, sched, opts);
  SpectrumTrajectory traj;
  traj.bin_centers = fourier::radial_bin_centers(n_bins);
  for (std::size_t i = 0; i < result.trajectory.size(); ++i) {
    const std::size_t t = sched.steps - i;
    traj.steps.push_back(t);
    traj.eta.push_back(sched.eta[t]);
    traj.power.push_back(fourier::radial_power_spectrum(result.trajectory[i], n_bins));
  }
  return traj;
}

std::vector<std::size_t> convergence_steps(const SpectrumTrajectory& trajectory, double fraction) {
  if (trajectory.power.empty()) throw ValidationError("convergence_steps: empty trajectory");
  const std::size_t bins = trajectory.power.front().size();
  std::vector<std::size_t> out(bins, trajectory.steps.back());
  for (std::size_t b = 0; b < bins; ++b) {
    const double target = fraction * trajectory.power.back()[b];
    for (std::size_t r = 0; r < trajectory.power.size(); ++r) {
      if (trajectory.power[r][b] >= target) {
        out[b] = trajectory.steps[r];
        break;
      }
    }
  }
  return out;
}

void write_trajectory_csv(const std::filesystem::path& path, const SpectrumTrajectory& trajectory) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_trajectory_csv: cannot open " + path.string());
  out.precision(17);
  out << "step,eta";
  for (double c : trajectory.bin_centers) out << ",power_f" << c;
  out << "\n";
  for (std::size_t r = 0; r < trajectory.power.size(); ++r) {
    out << trajectory.steps[r] << "," << trajectory.eta[r];
    for (double p : trajectory.power[r]) out << "," << p;
    out << "\n";
  }
}

}  // namespace ditsr
