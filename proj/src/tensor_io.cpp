// SPDX-License-Identifier: Apache-2.0
#include "nca/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "nca/error.hpp"

namespace nca::io {

namespace {

void check_stream(std::istream& in) {
  if (!in) throw FormatError("NCAT: truncated input");
}

}  // namespace

void write_u8(std::ostream& out, std::uint8_t v) { out.put(static_cast<char>(v)); }

void write_u16(std::ostream& out, std::uint16_t v) {
  const std::array<char, 2> b{static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  out.write(b.data(), b.size());
}

void write_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b.data(), b.size());
}

std::uint8_t read_u8(std::istream& in) {
  const int c = in.get();
  check_stream(in);
  return static_cast<std::uint8_t>(c);
}

std::uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  check_stream(in);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  check_stream(in);
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
         (std::uint32_t{b[3]} << 24);
}

void write_tensor(std::ostream& out, const Tensor& t) {
  if (t.rank() > 255) throw FormatError("NCAT: rank exceeds 255");
  out.write(kMagic, 4);
  write_u8(out, kVersion);
  write_u8(out, kDtypeF32);
  write_u8(out, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) {
    if (d > UINT32_MAX) throw FormatError("NCAT: extent exceeds u32");
    write_u32(out, static_cast<std::uint32_t>(d));
  }
  for (float v : t.data()) write_u32(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw IoError("NCAT: write failed");
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  check_stream(in);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("NCAT: bad magic");
  if (const auto version = read_u8(in); version != kVersion)
    throw FormatError("NCAT: unsupported version " + std::to_string(version));
  if (const auto dtype = read_u8(in); dtype != kDtypeF32)
    throw FormatError("NCAT: unsupported dtype " + std::to_string(dtype));
  const std::uint8_t rank = read_u8(in);
  Shape shape(rank);
  for (auto& d : shape) {
    d = read_u32(in);
    if (d == 0) throw FormatError("NCAT: zero extent");
  }
  const std::size_t n = shape_product(shape);
  std::vector<unsigned char> raw(n * 4);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  check_stream(in);
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* b = raw.data() + 4 * i;
    const std::uint32_t bits = std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) |
                               (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
    data[i] = std::bit_cast<float>(bits);
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace nca::io
