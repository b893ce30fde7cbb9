// SPDX-License-Identifier: Apache-2.0
//
// Hot loops of the NCA. Every kernel exists twice: an OpenMP-parallel,
// cache-tiled version in `nca::kernels` (used by the library) and a plain
// serial reference in `nca::kernels::serial` (used by tests and the
// benchmark). Both compute each output element with the same accumulation
// order, and the parallel versions only split work across output elements,
// so results do not depend on the thread count.
//
// Matrices are row-major and contiguous. "Sites" are the columns of the
// channels-first pixel matrices: either all I*J pixels or a gathered subset.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace nca::kernels {

struct Grid2d {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t pixels() const noexcept { return rows * cols; }
};

/// c[M, N] = a[M, K] * b[K, N] (+ bias[m] broadcast along N when non-empty).
void gemm_nn(std::span<const float> a, std::span<const float> b,
             std::span<const float> bias, std::span<float> c, std::size_t m,
             std::size_t k, std::size_t n);

/// c[M, N] = a^T * b with a stored as [K, M] and b as [K, N].
void gemm_tn(std::span<const float> a, std::span<const float> b,
             std::span<float> c, std::size_t m, std::size_t k, std::size_t n);

/// c[M, N] += a[M, P] * b[N, P]^T. Reduction over P uses eight interleaved
/// partial sums combined in a fixed order.
void gemm_nt_acc(std::span<const float> a, std::span<const float> b,
                 std::span<float> c, std::size_t m, std::size_t n,
                 std::size_t p);

/// Perception at selected pixels. state is [C, rows, cols]; kernels [K, 9];
/// sites are flat pixel indices; out is [K*C, sites.size()] with row k*C + c
/// holding kernel k applied to channel c. Zero padding outside the grid.
void perceive_sites(std::span<const float> state, std::size_t channels,
                    Grid2d grid, std::span<const float> kernels,
                    std::size_t n_kernels, std::span<const std::uint32_t> sites,
                    std::span<float> out);

/// Adjoint of perceive_sites: grad_state[C, rows, cols] += P^T grad_out.
void perceive_sites_adjoint_acc(std::span<const float> grad_out,
                                std::size_t channels, Grid2d grid,
                                std::span<const float> kernels,
                                std::size_t n_kernels,
                                std::span<const std::uint32_t> sites,
                                std::span<float> grad_state);

namespace serial {

void gemm_nn(std::span<const float> a, std::span<const float> b,
             std::span<const float> bias, std::span<float> c, std::size_t m,
             std::size_t k, std::size_t n);
void gemm_tn(std::span<const float> a, std::span<const float> b,
             std::span<float> c, std::size_t m, std::size_t k, std::size_t n);
void gemm_nt_acc(std::span<const float> a, std::span<const float> b,
                 std::span<float> c, std::size_t m, std::size_t n,
                 std::size_t p);
void perceive_sites(std::span<const float> state, std::size_t channels,
                    Grid2d grid, std::span<const float> kernels,
                    std::size_t n_kernels, std::span<const std::uint32_t> sites,
                    std::span<float> out);
void perceive_sites_adjoint_acc(std::span<const float> grad_out,
                                std::size_t channels, Grid2d grid,
                                std::span<const float> kernels,
                                std::size_t n_kernels,
                                std::span<const std::uint32_t> sites,
                                std::span<float> grad_state);

}  // namespace serial

/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads() noexcept;

}  // namespace nca::kernels
