#pragma once

// Binary grid container for images and distance maps: an 8-slot little-endian
// header (magic "SDMG", version, H, W, pixel_size, channels, 2 reserved) of
// 4 bytes each, followed by channels * H * W float32 values.

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "shapeseg/geometry.hpp"
#include "shapeseg/util.hpp"

namespace shapeseg {

struct GridData {
  GridSpec grid;
  int channels = 0;
  std::vector<float> values;  // channel-major, each channel H x W row-major

  std::span<const float> channel(int c) const {
    const std::size_t plane = static_cast<std::size_t>(grid.height) * grid.width;
    return {values.data() + plane * c, plane};
  }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.append(b, 4);
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline std::uint32_t get_u32(const std::string& s, std::size_t off) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(s[off])) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 1])) << 8) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 2])) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 3])) << 24);
}

inline float get_f32(const std::string& s, std::size_t off) {
  const std::uint32_t bits = get_u32(s, off);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace detail

inline constexpr std::array<char, 4> kGridMagic{'S', 'D', 'M', 'G'};
inline constexpr std::uint32_t kGridVersion = 1;

inline std::string encode_grid(const GridData& g) {
  if (g.values.size() != static_cast<std::size_t>(g.channels) * g.grid.height * g.grid.width)
    throw std::invalid_argument("encode_grid: value count mismatch");
  std::string out;
  out.reserve(32 + g.values.size() * 4);
  out.append(kGridMagic.data(), 4);
  detail::put_u32(out, kGridVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(g.grid.height));
  detail::put_u32(out, static_cast<std::uint32_t>(g.grid.width));
  detail::put_f32(out, static_cast<float>(g.grid.pixel_size));
  detail::put_u32(out, static_cast<std::uint32_t>(g.channels));
  detail::put_u32(out, 0);
  detail::put_u32(out, 0);
  for (float v : g.values) detail::put_f32(out, v);
  return out;
}

inline GridData decode_grid(const std::string& bytes) {
  if (bytes.size() < 32 || std::memcmp(bytes.data(), kGridMagic.data(), 4) != 0)
    throw RuntimeError("grid file: bad magic");
  if (detail::get_u32(bytes, 4) != kGridVersion)
    throw RuntimeError("grid file: unsupported version");
  GridData g;
  g.grid.height = static_cast<int>(detail::get_u32(bytes, 8));
  g.grid.width = static_cast<int>(detail::get_u32(bytes, 12));
  g.grid.pixel_size = detail::get_f32(bytes, 16);
  g.channels = static_cast<int>(detail::get_u32(bytes, 20));
  const std::size_t count =
      static_cast<std::size_t>(g.channels) * g.grid.height * g.grid.width;
  if (bytes.size() != 32 + count * 4) throw RuntimeError("grid file: truncated payload");
  g.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) g.values[i] = detail::get_f32(bytes, 32 + i * 4);
  return g;
}

inline void save_grid(const GridData& g, const std::filesystem::path& path) {
  write_file(path, encode_grid(g));
}

inline GridData load_grid(const std::filesystem::path& path) {
  return decode_grid(read_file(path));
}

}  // namespace shapeseg
