#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "ditsr/checkpoint.hpp"
#include "ditsr/rng.hpp"
#include "ditsr/tensor.hpp"

namespace ditsr {

/// What a parameter is for; drives the per-role breakdown in reports.
enum class ParamRole { attention, mlp, norm, conditioning_hidden, conditioning_out, projection, head };

const char* to_string(ParamRole role);

enum class Init {
  zeros,
  ones,
  fan_in_normal,  // N(0, 1 / fan_in)
  small_normal,   // N(0, 0.02^2)
  explicit_values,
};

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamRole role = ParamRole::projection;
  Init init = Init::zeros;
  std::size_t fan_in = 1;
  std::vector<double> values;  // for Init::explicit_values
  int stage = 0;               // resolution level, filled in by the architecture

  std::size_t numel() const { return numel_of(shape); }
};

/// Ordered, named collection of trainable leaves.
class ParamStore {
 public:
  const Tensor& add(const ParamSpec& spec, CounterRng& rng);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<NamedTensor>& named() const { return params_; }
  std::size_t total_elements() const;
  void zero_grad();

  /// Copies values from a checkpoint; names and shapes must match exactly.
  void load(const std::vector<NamedTensor>& values);

 private:
  std::vector<NamedTensor> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace ditsr
