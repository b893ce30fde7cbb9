// SPDX-License-Identifier: Apache-2.0
//
// NCAT binary tensor container:
//
//   "NCAT" | version u8 (=1) | dtype u8 (=1, f32) | rank u8 |
//   rank x u32 LE extents | prod(extents) x f32 LE payload
//
// Readers reject unknown magic, version or dtype.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "nca/tensor.hpp"

namespace nca::io {

inline constexpr char kMagic[4] = {'N', 'C', 'A', 'T'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// Little-endian primitives, shared with the checkpoint section table.
void write_u8(std::ostream& out, std::uint8_t v);
void write_u16(std::ostream& out, std::uint16_t v);
void write_u32(std::ostream& out, std::uint32_t v);
std::uint8_t read_u8(std::istream& in);
std::uint16_t read_u16(std::istream& in);
std::uint32_t read_u32(std::istream& in);

}  // namespace nca::io
