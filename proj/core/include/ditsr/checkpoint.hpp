#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ditsr/tensor.hpp"

namespace ditsr {

using NamedTensor = std::pair<std::string, Tensor>;

/// Writes the tensors back to back: u64 name length, UTF-8 name bytes,
/// u64 rank, rank x u64 dims, then numel x f64 payload, all little-endian.
/// A sibling `<path>.json` manifest maps names to shapes.
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);

/// Reads a container written by save_checkpoint. Tensors come back as leaves
/// without requires_grad.
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

std::filesystem::path manifest_path_for(const std::filesystem::path& checkpoint);

}  // namespace ditsr
