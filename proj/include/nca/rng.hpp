// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace nca {

using Rng = std::mt19937_64;

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Derives the seed of a named random stream ("fire", "init", "geometry",
/// ...) from a root seed plus optional integer coordinates (epoch, batch,
/// sample index). Streams with different names or coordinates are
/// decorrelated, so callers never share a generator across components.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view stream,
                                 std::initializer_list<std::uint64_t> coords = {}) {
  std::uint64_t h = detail::splitmix64(root ^ detail::fnv1a(stream));
  for (std::uint64_t c : coords) h = detail::splitmix64(h ^ detail::splitmix64(c));
  return h;
}

inline Rng make_rng(std::uint64_t root, std::string_view stream,
                    std::initializer_list<std::uint64_t> coords = {}) {
  return Rng(derive_seed(root, stream, coords));
}

/// Uniform float in [0, 1) with 24 random mantissa bits. Unlike
/// std::uniform_real_distribution the result is identical on every
/// standard library.
inline float uniform01(Rng& rng) {
  return static_cast<float>(rng() >> 40) * 0x1.0p-24f;
}

}  // namespace nca
