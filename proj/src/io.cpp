#include "ledetr/io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <vector>

namespace ledetr {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                                 static_cast<char>((v >> 16) & 0xFF),
                                 static_cast<char>((v >> 24) & 0xFF)};
  out.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) throw Error("tensor dump: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint32_t narrow_extent(Index e) {
  if (e > std::numeric_limits<std::uint32_t>::max()) throw DimensionError("extent exceeds u32");
  return static_cast<std::uint32_t>(e);
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor4f& t) {
  out.write(kTensorMagic, 4);
  put_u32(out, kTensorVersion);
  const Shape4& s = t.shape();
  for (Index e : {s.n, s.c, s.h, s.w}) put_u32(out, narrow_extent(e));
  std::vector<char> buf(4 * static_cast<std::size_t>(t.size()));
  for (std::size_t i = 0; i < t.span().size(); ++i) {
    const auto v = std::bit_cast<std::uint32_t>(t.span()[i]);
    for (int b = 0; b < 4; ++b) buf[4 * i + b] = static_cast<char>((v >> (8 * b)) & 0xFF);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error("tensor dump: write failed");
}

Tensor4f read_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kTensorMagic, 4) != 0) throw Error("tensor dump: bad magic");
  const std::uint32_t version = get_u32(in);
  if (version != kTensorVersion) {
    throw Error("tensor dump: unsupported version " + std::to_string(version));
  }
  Shape4 s;
  s.n = get_u32(in);
  s.c = get_u32(in);
  s.h = get_u32(in);
  s.w = get_u32(in);
  Tensor4f t(s);
  std::vector<unsigned char> buf(4 * static_cast<std::size_t>(t.size()));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw Error("tensor dump: truncated data for shape " + s.str());
  for (std::size_t i = 0; i < t.span().size(); ++i) {
    const std::uint32_t v = static_cast<std::uint32_t>(buf[4 * i]) |
                            (static_cast<std::uint32_t>(buf[4 * i + 1]) << 8) |
                            (static_cast<std::uint32_t>(buf[4 * i + 2]) << 16) |
                            (static_cast<std::uint32_t>(buf[4 * i + 3]) << 24);
    t.span()[i] = std::bit_cast<float>(v);
  }
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor4f& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor4f load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace ledetr
