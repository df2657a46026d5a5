#include "ditsr/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace ditsr {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

constexpr std::uint64_t kMaxNameBytes = 1 << 16;
constexpr std::uint64_t kMaxRank = 16;

}  // namespace

std::filesystem::path manifest_path_for(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".json";
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  nlohmann::ordered_json manifest = nlohmann::ordered_json::object();
  for (const auto& [name, t] : tensors) {
    write_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(os, t.rank());
    for (std::size_t d : t.shape()) write_u64(os, d);
    const auto data = t.data();
    os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    manifest[name] = t.shape();
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
  std::ofstream ms(manifest_path_for(path), std::ios::trunc);
  ms << manifest.dump(2) << '\n';
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::vector<NamedTensor> out;
  while (is.peek() != std::char_traits<char>::eof()) {
    const std::uint64_t name_len = read_u64(is);
    if (name_len > kMaxNameBytes) throw std::runtime_error("checkpoint: corrupt name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name_len))) throw std::runtime_error("checkpoint: truncated name");
    const std::uint64_t rank = read_u64(is);
    if (rank > kMaxRank) throw std::runtime_error("checkpoint: corrupt rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = read_u64(is);
    std::vector<double> data(numel_of(shape));
    if (!is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)))) {
      throw std::runtime_error("checkpoint: truncated payload for " + name);
    }
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

}  // namespace ditsr
