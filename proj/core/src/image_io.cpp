#include "ditsr/image_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ditsr/errors.hpp"

namespace ditsr {

static_assert(std::endian::native == std::endian::little, "PFM writer assumes a little-endian host");

void write_pfm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw DimensionError("write_pfm: expected [1|3, H, W], got " + shape_str(image.shape()));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pfm: cannot open " + path.string());
  out << (c == 1 ? "Pf" : "PF") << "\n" << w << " " << h << "\n-1.0\n";
  const auto d = image.data();
  std::vector<float> row(w * c);
  for (std::size_t y = h; y-- > 0;) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) row[x * c + ch] = static_cast<float>(d[(ch * h + y) * w + x]);
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("write_pfm: write failed for " + path.string());
}

Tensor read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pfm: cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0;
  double scale = 0.0;
  in >> magic >> w >> h >> scale;
  in.get();
  if ((magic != "Pf" && magic != "PF") || w == 0 || h == 0) throw ValidationError("read_pfm: bad header in " + path.string());
  if (scale >= 0.0) throw ValidationError("read_pfm: big-endian PFM is not supported");
  const std::size_t c = magic == "Pf" ? 1 : 3;
  std::vector<float> raw(w * h * c);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (!in) throw ValidationError("read_pfm: truncated payload in " + path.string());
  std::vector<double> data(raw.size());
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t src_row = h - 1 - y;
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) data[(ch * h + y) * w + x] = raw[(src_row * w + x) * c + ch];
    }
  }
  return Tensor({c, h, w}, std::move(data));
}

}  // namespace ditsr
