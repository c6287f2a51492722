#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "ledetr/tensor.hpp"

namespace ledetr {

inline constexpr char kTensorMagic[4] = {'L', 'E', 'T', '4'};
inline constexpr std::uint32_t kTensorVersion = 1;
/// magic + version + four extents, all 32-bit little-endian words.
inline constexpr std::size_t kTensorHeaderBytes = 24;

/// Size in bytes of a serialized tensor of the given shape.
inline std::uint64_t tensor_record_bytes(const Shape4& s) {
  return kTensorHeaderBytes + 4 * static_cast<std::uint64_t>(s.size());
}

/// Writes the flat binary dump: "LET4", version, N, C, H, W, then f32 data.
void write_tensor(std::ostream& out, const Tensor4f& t);
Tensor4f read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor4f& t);
Tensor4f load_tensor(const std::filesystem::path& path);

}  // namespace ledetr
