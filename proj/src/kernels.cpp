// SPDX-License-Identifier: Apache-2.0
#include "nca/kernels.hpp"

#include <algorithm>
#include <array>
#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace nca::kernels {

namespace {

constexpr std::size_t kTileN = 256;
constexpr std::size_t kLanes = 8;
constexpr std::size_t kRowBlock = 4;

// c_row[0, w) += sum_k coeff(k) * b_row(k)[0, w), sequential in k.
template <typename Coeff, typename Row>
inline void axpy_chain(float* __restrict c_row, std::size_t w, std::size_t k,
                       Coeff coeff, Row b_row) {
  std::size_t kk = 0;
  for (; kk + 4 <= k; kk += 4) {
    const float a0 = coeff(kk), a1 = coeff(kk + 1), a2 = coeff(kk + 2),
                a3 = coeff(kk + 3);
    const float* __restrict b0 = b_row(kk);
    const float* __restrict b1 = b_row(kk + 1);
    const float* __restrict b2 = b_row(kk + 2);
    const float* __restrict b3 = b_row(kk + 3);
#pragma omp simd
    for (std::size_t j = 0; j < w; ++j) {
      float t = c_row[j];
      t += a0 * b0[j];
      t += a1 * b1[j];
      t += a2 * b2[j];
      t += a3 * b3[j];
      c_row[j] = t;
    }
  }
  for (; kk < k; ++kk) {
    const float a0 = coeff(kk);
    const float* __restrict b0 = b_row(kk);
#pragma omp simd
    for (std::size_t j = 0; j < w; ++j) c_row[j] += a0 * b0[j];
  }
}

inline bool in_grid(std::ptrdiff_t i, std::ptrdiff_t j, Grid2d g) {
  return i >= 0 && j >= 0 && i < static_cast<std::ptrdiff_t>(g.rows) &&
         j < static_cast<std::ptrdiff_t>(g.cols);
}

}  // namespace

int max_threads() noexcept {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void gemm_nn(std::span<const float> a, std::span<const float> b,
             std::span<const float> bias, std::span<float> c, std::size_t m,
             std::size_t k, std::size_t n) {
  const std::size_t n_tiles = (n + kTileN - 1) / kTileN;
  const std::ptrdiff_t work = static_cast<std::ptrdiff_t>(n_tiles * m);
  const float* pa = a.data();
  const float* pb = b.data();
  float* pc = c.data();
  const bool has_bias = !bias.empty();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t idx = 0; idx < work; ++idx) {
    const std::size_t tile = static_cast<std::size_t>(idx) / m;
    const std::size_t row = static_cast<std::size_t>(idx) % m;
    const std::size_t n0 = tile * kTileN;
    const std::size_t w = std::min(kTileN, n - n0);
    float* c_row = pc + row * n + n0;
    std::fill(c_row, c_row + w, has_bias ? bias[row] : 0.0f);
    axpy_chain(
        c_row, w, k, [&](std::size_t kk) { return pa[row * k + kk]; },
        [&](std::size_t kk) { return pb + kk * n + n0; });
  }
}

void gemm_tn(std::span<const float> a, std::span<const float> b,
             std::span<float> c, std::size_t m, std::size_t k, std::size_t n) {
  const std::size_t n_tiles = (n + kTileN - 1) / kTileN;
  const std::ptrdiff_t work = static_cast<std::ptrdiff_t>(n_tiles * m);
  const float* pa = a.data();
  const float* pb = b.data();
  float* pc = c.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t idx = 0; idx < work; ++idx) {
    const std::size_t tile = static_cast<std::size_t>(idx) / m;
    const std::size_t row = static_cast<std::size_t>(idx) % m;
    const std::size_t n0 = tile * kTileN;
    const std::size_t w = std::min(kTileN, n - n0);
    float* c_row = pc + row * n + n0;
    std::fill(c_row, c_row + w, 0.0f);
    axpy_chain(
        c_row, w, k, [&](std::size_t kk) { return pa[kk * m + row]; },
        [&](std::size_t kk) { return pb + kk * n + n0; });
  }
}

void gemm_nt_acc(std::span<const float> a, std::span<const float> b,
                 std::span<float> c, std::size_t m, std::size_t n,
                 std::size_t p) {
  const std::size_t p_main = p - p % kLanes;
  const std::size_t blocks = (m + kRowBlock - 1) / kRowBlock;
  const float* pa = a.data();
  const float* pb = b.data();
  float* pc = c.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t blk = 0; blk < static_cast<std::ptrdiff_t>(blocks); ++blk) {
    const std::size_t i0 = static_cast<std::size_t>(blk) * kRowBlock;
    const std::size_t rows = std::min(kRowBlock, m - i0);
    for (std::size_t j = 0; j < n; ++j) {
      const float* __restrict bj = pb + j * p;
      alignas(32) float acc[kRowBlock][kLanes] = {};
      for (std::size_t q = 0; q < p_main; q += kLanes) {
        for (std::size_t r = 0; r < kRowBlock; ++r) {
          const float* __restrict ar = pa + (i0 + std::min(r, rows - 1)) * p + q;
#pragma omp simd
          for (std::size_t l = 0; l < kLanes; ++l) acc[r][l] += ar[l] * bj[q + l];
        }
      }
      for (std::size_t r = 0; r < rows; ++r) {
        const float* ar = pa + (i0 + r) * p;
        const float* s = acc[r];
        float sum = ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7]));
        for (std::size_t q = p_main; q < p; ++q) sum += ar[q] * bj[q];
        pc[(i0 + r) * n + j] += sum;
      }
    }
  }
}

void perceive_sites(std::span<const float> state, std::size_t channels,
                    Grid2d grid, std::span<const float> kernels,
                    std::size_t n_kernels, std::span<const std::uint32_t> sites,
                    std::span<float> out) {
  const std::size_t n_sites = sites.size();
  const std::size_t plane = grid.pixels();
  const std::ptrdiff_t cols = static_cast<std::ptrdiff_t>(grid.cols);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(channels); ++ci) {
    const std::size_t c = static_cast<std::size_t>(ci);
    const float* src = state.data() + c * plane;
    for (std::size_t s = 0; s < n_sites; ++s) {
      const std::ptrdiff_t i = sites[s] / cols;
      const std::ptrdiff_t j = sites[s] % cols;
      std::array<float, 9> v{};
      for (std::ptrdiff_t di = -1; di <= 1; ++di)
        for (std::ptrdiff_t dj = -1; dj <= 1; ++dj)
          if (in_grid(i + di, j + dj, grid))
            v[static_cast<std::size_t>((di + 1) * 3 + dj + 1)] =
                src[(i + di) * cols + j + dj];
      for (std::size_t kk = 0; kk < n_kernels; ++kk) {
        const float* kern = kernels.data() + kk * 9;
        float acc = 0.0f;
        for (std::size_t t = 0; t < 9; ++t) acc += kern[t] * v[t];
        out[(kk * channels + c) * n_sites + s] = acc;
      }
    }
  }
}

void perceive_sites_adjoint_acc(std::span<const float> grad_out,
                                std::size_t channels, Grid2d grid,
                                std::span<const float> kernels,
                                std::size_t n_kernels,
                                std::span<const std::uint32_t> sites,
                                std::span<float> grad_state) {
  const std::size_t n_sites = sites.size();
  const std::size_t plane = grid.pixels();
  const std::ptrdiff_t cols = static_cast<std::ptrdiff_t>(grid.cols);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(channels); ++ci) {
    const std::size_t c = static_cast<std::size_t>(ci);
    float* dst = grad_state.data() + c * plane;
    for (std::size_t s = 0; s < n_sites; ++s) {
      const std::ptrdiff_t i = sites[s] / cols;
      const std::ptrdiff_t j = sites[s] % cols;
      for (std::size_t kk = 0; kk < n_kernels; ++kk) {
        const float g = grad_out[(kk * channels + c) * n_sites + s];
        if (g == 0.0f) continue;
        const float* kern = kernels.data() + kk * 9;
        for (std::ptrdiff_t di = -1; di <= 1; ++di)
          for (std::ptrdiff_t dj = -1; dj <= 1; ++dj)
            if (in_grid(i + di, j + dj, grid))
              dst[(i + di) * cols + j + dj] +=
                  kern[(di + 1) * 3 + dj + 1] * g;
      }
    }
  }
}

}  // namespace nca::kernels
