#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "aslp/binary_io.hpp"
#include "aslp/files.hpp"
#include "aslp/grid.hpp"

namespace aslp {

/// On-disk dense map:
///   "DBMP" | u8 version (1) | u8 dtype | u32 height | u32 width | payload
/// little-endian, row-major. dtype 0 stores f32 values in [0,1], dtype 1
/// stores u8 hard labels in {0,1}.
enum class MapDtype : std::uint8_t { Probability = 0, HardLabel = 1 };

inline constexpr char kMapMagic[4] = {'D', 'B', 'M', 'P'};
inline constexpr std::uint8_t kMapVersion = 1;

inline std::vector<std::uint8_t> encode_map(const Grid& grid, MapDtype dtype) {
  io::ByteWriter w;
  w.raw(std::string_view(kMapMagic, 4));
  w.u8(kMapVersion);
  w.u8(static_cast<std::uint8_t>(dtype));
  w.u32(static_cast<std::uint32_t>(grid.height()));
  w.u32(static_cast<std::uint32_t>(grid.width()));
  for (double v : grid) {
    if (dtype == MapDtype::Probability) {
      if (!(v >= 0.0 && v <= 1.0)) throw DomainError("map value " + std::to_string(v) + " outside [0,1]");
      w.f32(static_cast<float>(v));
    } else {
      if (v != 0.0 && v != 1.0) throw DomainError("hard label value " + std::to_string(v) + " not in {0,1}");
      w.u8(v == 1.0 ? 1 : 0);
    }
  }
  return w.take();
}

struct DecodedMap {
  MapDtype dtype;
  Grid grid;
};

inline DecodedMap decode_map(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  io::ByteReader r(bytes.data(), bytes.size(), source);
  if (r.raw(4) != std::string_view(kMapMagic, 4)) r.fail("bad magic");
  if (r.u8() != kMapVersion) r.fail("unsupported version");
  const std::uint8_t dtype = r.u8();
  if (dtype > 1) r.fail("unknown dtype " + std::to_string(dtype));
  const std::uint32_t height = r.u32();
  const std::uint32_t width = r.u32();
  const std::size_t n = static_cast<std::size_t>(height) * width;
  r.need(n * (dtype == 0 ? 4 : 1));
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (dtype == 0) {
      const float v = r.f32();
      if (!(v >= 0.0f && v <= 1.0f)) r.fail("probability outside [0,1]");
      values[i] = v;
    } else {
      const std::uint8_t v = r.u8();
      if (v > 1) r.fail("hard label not in {0,1}");
      values[i] = v;
    }
  }
  if (r.remaining() != 0) r.fail("trailing bytes");
  return {static_cast<MapDtype>(dtype), Grid(height, width, std::move(values))};
}

inline void write_map(const std::filesystem::path& path, const Grid& grid, MapDtype dtype) {
  io::write_file(path, encode_map(grid, dtype));
}

inline DecodedMap read_map(const std::filesystem::path& path) {
  return decode_map(io::read_file(path), path.string());
}

/// Rounds every value to the nearest f32, the precision of a probability map file.
inline Grid quantize_f32(Grid g) {
  for (double& v : g) v = static_cast<double>(static_cast<float>(v));
  return g;
}

}  // namespace aslp
