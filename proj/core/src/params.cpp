#include "ditsr/params.hpp"

#include <algorithm>
#include <cmath>

namespace ditsr {

const char* to_string(ParamRole role) {
  switch (role) {
    case ParamRole::attention: return "attention";
    case ParamRole::mlp: return "mlp";
    case ParamRole::norm: return "norm";
    case ParamRole::conditioning_hidden: return "conditioning_hidden";
    case ParamRole::conditioning_out: return "conditioning_out";
    case ParamRole::projection: return "projection";
    case ParamRole::head: return "head";
  }
  return "unknown";
}

const Tensor& ParamStore::add(const ParamSpec& spec, CounterRng& rng) {
  if (contains(spec.name)) throw ConfigError("ParamStore: duplicate parameter " + spec.name);
  const std::size_t n = spec.numel();
  std::vector<double> values(n, 0.0);
  switch (spec.init) {
    case Init::zeros: break;
    case Init::ones: std::fill(values.begin(), values.end(), 1.0); break;
    case Init::fan_in_normal: {
      const double sd = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(spec.fan_in, 1)));
      for (auto& v : values) v = sd * rng.normal();
      break;
    }
    case Init::small_normal:
      for (auto& v : values) v = 0.02 * rng.normal();
      break;
    case Init::explicit_values:
      if (spec.values.size() != n) throw ConfigError("ParamStore: explicit init size mismatch for " + spec.name);
      values = spec.values;
      break;
  }
  index_[spec.name] = params_.size();
  params_.emplace_back(spec.name, Tensor(spec.shape, std::move(values), true));
  return params_.back().second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("ParamStore: unknown parameter " + name);
  return params_[it->second].second;
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

void ParamStore::load(const std::vector<NamedTensor>& values) {
  if (values.size() != params_.size()) {
    throw ConfigError("ParamStore::load: checkpoint has " + std::to_string(values.size()) + " tensors, model has " +
                      std::to_string(params_.size()));
  }
  for (const auto& [name, src] : values) {
    const auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("ParamStore::load: unexpected tensor " + name);
    Tensor& dst = params_[it->second].second;
    if (dst.shape() != src.shape()) {
      throw ConfigError("ParamStore::load: shape mismatch for " + name + ": " + shape_str(src.shape()) + " vs " +
                        shape_str(dst.shape()));
    }
    auto d = dst.mutable_data();
    std::copy(src.data().begin(), src.data().end(), d.begin());
  }
}

}  // namespace ditsr
