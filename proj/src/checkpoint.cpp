#include "fusedepth/backbones.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace fusedepth {

namespace {

constexpr std::array<char, 8> kMagic{'F', 'D', 'C', 'K', 'P', 'T', '1', '\0'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw ConfigError("truncated checkpoint while reading " + what);
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, std::uint32_t(entries.size()));
  for (const auto& e : entries) {
    put_u32(out, std::uint32_t(e.name.size()));
    out.write(e.name.data(), std::streamsize(e.name.size()));
    put_u32(out, 3);
    put_u32(out, std::uint32_t(e.shape.channels));
    put_u32(out, std::uint32_t(e.shape.height));
    put_u32(out, std::uint32_t(e.shape.width));
    for (float f : e.values) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  if (!out) throw ConfigError("failed writing checkpoint " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic)
    throw ConfigError(path.string() + " is not a checkpoint file");
  const std::uint32_t count = get_u32(in, "entry count");
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const std::uint32_t len = get_u32(in, "name length");
    e.name.resize(len);
    if (!in.read(e.name.data(), len)) throw ConfigError("truncated checkpoint name");
    const std::uint32_t rank = get_u32(in, e.name);
    if (rank != 3) throw ConfigError("unsupported rank " + std::to_string(rank) + " for " + e.name);
    e.shape.channels = int(get_u32(in, e.name));
    e.shape.height = int(get_u32(in, e.name));
    e.shape.width = int(get_u32(in, e.name));
    e.values.resize(std::size_t(e.shape.size()));
    for (auto& f : e.values) f = std::bit_cast<float>(get_u32(in, e.name));
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace fusedepth
