#pragma once

#include <filesystem>

#include "ditsr/tensor.hpp"

namespace ditsr {

/// Portable float map: "Pf" for [1, H, W], "PF" for [3, H, W]. Written
/// little-endian (scale -1.0), rows bottom to top as the format requires.
void write_pfm(const std::filesystem::path& path, const Tensor& image);
Tensor read_pfm(const std::filesystem::path& path);

}  // namespace ditsr
