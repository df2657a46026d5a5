#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ditsr/architecture.hpp"
#include "ditsr/params.hpp"
#include "ditsr/rng.hpp"
#include "ditsr/tensor.hpp"

namespace ditsr {

struct GradcheckOptions {
  double eps = 1e-5;
  /// Probe at most this many coordinates per leaf (0 probes all of them).
  std::size_t max_coords = 0;
};

struct GradcheckResult {
  std::string name;
  double rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t probed = 0;  // coordinates compared
  double seconds = 0.0;

  bool passed() const { return rel_error < tolerance; }
};

/// Reverse-mode gradient of sum(R * f()) against central differences, R a
/// fixed standard-normal weighting. All leaves are checked together; the
/// result is the norm-wise relative error over every probed coordinate.
GradcheckResult gradcheck(const std::string& name, const std::function<Tensor()>& f, const std::vector<Tensor>& leaves,
                          CounterRng& rng, const GradcheckOptions& options = {});

/// Adds N(0, sd^2) to every parameter so zero-initialised paths carry signal.
void perturb_params(ParamStore& store, CounterRng& rng, double sd);

/// The finite-difference suite: primitive ops, each block component, both
/// block variants (C=8, 8x8, p=4, w=4), and the end-to-end denoiser built
/// from `net`. Tolerances are 1e-5 for ops and blocks, 1e-4 for the network.
std::vector<GradcheckResult> gradcheck_suite(const DenoiserConfig& net, std::uint64_t seed,
                                             std::size_t net_max_coords = 0);

inline constexpr double kBlockGradTolerance = 1e-5;
inline constexpr double kNetworkGradTolerance = 1e-4;

}  // namespace ditsr
