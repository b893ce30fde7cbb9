// SPDX-License-Identifier: Apache-2.0
//
// Reference kernels: straightforward loops, no tiling, no threads. Kept for
// testing the parallel versions and as the benchmark baseline.
#include <cstddef>

#include "nca/kernels.hpp"

namespace nca::kernels::serial {

void gemm_nn(std::span<const float> a, std::span<const float> b,
             std::span<const float> bias, std::span<float> c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] = bias.empty() ? 0.0f : bias[i];
    for (std::size_t kk = 0; kk < k; ++kk) {
      const float aik = a[i * k + kk];
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += aik * b[kk * n + j];
    }
  }
}

void gemm_tn(std::span<const float> a, std::span<const float> b,
             std::span<float> c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] = 0.0f;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const float aki = a[kk * m + i];
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += aki * b[kk * n + j];
    }
  }
}

void gemm_nt_acc(std::span<const float> a, std::span<const float> b,
                 std::span<float> c, std::size_t m, std::size_t n,
                 std::size_t p) {
  const std::size_t p_main = p - p % 8;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      float s[8] = {};
      for (std::size_t q = 0; q < p_main; ++q) s[q % 8] += a[i * p + q] * b[j * p + q];
      float sum = ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7]));
      for (std::size_t q = p_main; q < p; ++q) sum += a[i * p + q] * b[j * p + q];
      c[i * n + j] += sum;
    }
  }
}

void perceive_sites(std::span<const float> state, std::size_t channels,
                    Grid2d grid, std::span<const float> kernels,
                    std::size_t n_kernels, std::span<const std::uint32_t> sites,
                    std::span<float> out) {
  const std::size_t n_sites = sites.size();
  const long rows = static_cast<long>(grid.rows);
  const long cols = static_cast<long>(grid.cols);
  for (std::size_t kk = 0; kk < n_kernels; ++kk) {
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t s = 0; s < n_sites; ++s) {
        const long i = sites[s] / cols;
        const long j = sites[s] % cols;
        float acc = 0.0f;
        for (long di = -1; di <= 1; ++di) {
          for (long dj = -1; dj <= 1; ++dj) {
            const long ii = i + di;
            const long jj = j + dj;
            const float v = (ii >= 0 && jj >= 0 && ii < rows && jj < cols)
                                ? state[c * grid.pixels() + ii * cols + jj]
                                : 0.0f;
            acc += kernels[kk * 9 + (di + 1) * 3 + (dj + 1)] * v;
          }
        }
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
  const long rows = static_cast<long>(grid.rows);
  const long cols = static_cast<long>(grid.cols);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t s = 0; s < n_sites; ++s) {
      const long i = sites[s] / cols;
      const long j = sites[s] % cols;
      for (std::size_t kk = 0; kk < n_kernels; ++kk) {
        const float g = grad_out[(kk * channels + c) * n_sites + s];
        for (long di = -1; di <= 1; ++di) {
          for (long dj = -1; dj <= 1; ++dj) {
            const long ii = i + di;
            const long jj = j + dj;
            if (ii < 0 || jj < 0 || ii >= rows || jj >= cols) continue;
            grad_state[c * grid.pixels() + ii * cols + jj] +=
                kernels[kk * 9 + (di + 1) * 3 + (dj + 1)] * g;
          }
        }
      }
    }
  }
}

}  // namespace nca::kernels::serial
