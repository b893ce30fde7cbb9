// SPDX-License-Identifier: Apache-2.0
// Serial reference vs OpenMP kernels at the sizes one NCA step uses
// (D=32, H=128, 64x64 grid, all cells firing).
#include <benchmark/benchmark.h>

#include <numeric>
#include <random>
#include <vector>

#include "nca/kernels.hpp"
#include "nca/nca.hpp"
#include "nca/rng.hpp"

namespace {

using namespace nca;

constexpr std::size_t kD = 32, kH = 128, kK = 4, kSide = 64;
constexpr std::size_t kPix = kSide * kSide;

std::vector<float> noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (float& x : v) x = 2.0f * uniform01(rng) - 1.0f;
  return v;
}

std::vector<std::uint32_t> all_sites() {
  std::vector<std::uint32_t> s(kPix);
  std::iota(s.begin(), s.end(), 0u);
  return s;
}

std::vector<float> kernel_bank() {
  const Tensor k = perception_kernels();
  return {k.data().begin(), k.data().end()};
}

template <bool Serial>
void BM_Perceive(benchmark::State& st) {
  const auto state = noise(kD * kPix, 1), kernels = kernel_bank();
  const auto sites = all_sites();
  std::vector<float> out(kK * kD * kPix);
  for (auto _ : st) {
    if constexpr (Serial)
      kernels::serial::perceive_sites(state, kD, {kSide, kSide}, kernels, kK, sites, out);
    else
      kernels::perceive_sites(state, kD, {kSide, kSide}, kernels, kK, sites, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Serial>
void BM_PerceiveAdjoint(benchmark::State& st) {
  const auto grad = noise(kK * kD * kPix, 2), kernels = kernel_bank();
  const auto sites = all_sites();
  std::vector<float> out(kD * kPix);
  for (auto _ : st) {
    if constexpr (Serial)
      kernels::serial::perceive_sites_adjoint_acc(grad, kD, {kSide, kSide}, kernels, kK, sites,
                                                  out);
    else
      kernels::perceive_sites_adjoint_acc(grad, kD, {kSide, kSide}, kernels, kK, sites, out);
    benchmark::DoNotOptimize(out.data());
  }
}

// Hidden layer: [H, 4D] x [4D, pixels].
template <bool Serial>
void BM_GemmHidden(benchmark::State& st) {
  const auto w = noise(kH * kK * kD, 3), x = noise(kK * kD * kPix, 4), b = noise(kH, 5);
  std::vector<float> out(kH * kPix);
  for (auto _ : st) {
    if constexpr (Serial)
      kernels::serial::gemm_nn(w, x, b, out, kH, kK * kD, kPix);
    else
      kernels::gemm_nn(w, x, b, out, kH, kK * kD, kPix);
    benchmark::DoNotOptimize(out.data());
  }
}

// Backward through the hidden layer: W1^T [4D, H] x [H, pixels].
template <bool Serial>
void BM_GemmTransposed(benchmark::State& st) {
  const auto w = noise(kH * kK * kD, 6), g = noise(kH * kPix, 7);
  std::vector<float> out(kK * kD * kPix);
  for (auto _ : st) {
    if constexpr (Serial)
      kernels::serial::gemm_tn(w, g, out, kK * kD, kH, kPix);
    else
      kernels::gemm_tn(w, g, out, kK * kD, kH, kPix);
    benchmark::DoNotOptimize(out.data());
  }
}

// Weight gradient: [H, pixels] x [4D, pixels]^T.
template <bool Serial>
void BM_GemmWeightGrad(benchmark::State& st) {
  const auto g = noise(kH * kPix, 8), x = noise(kK * kD * kPix, 9);
  std::vector<float> out(kH * kK * kD);
  for (auto _ : st) {
    if constexpr (Serial)
      kernels::serial::gemm_nt_acc(g, x, out, kH, kK * kD, kPix);
    else
      kernels::gemm_nt_acc(g, x, out, kH, kK * kD, kPix);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_RolloutStep(benchmark::State& st) {
  NcaConfig cfg;
  Rng rng(10);
  RuleParams p = RuleParams::init(cfg, rng);
  for (float& v : p.w2.data()) v = 0.01f * (2.0f * uniform01(rng) - 1.0f);
  const Tensor image({1, kSide, kSide}, 0.5f);
  const CellGrid start = seed_grid(image, cfg);
  for (auto _ : st) {
    Rng fire(11);
    benchmark::DoNotOptimize(rollout(start, p, 1, fire).state.data().data());
  }
}

BENCHMARK(BM_Perceive<true>)->Name("perceive/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Perceive<false>)->Name("perceive/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PerceiveAdjoint<true>)->Name("perceive_adjoint/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PerceiveAdjoint<false>)->Name("perceive_adjoint/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GemmHidden<true>)->Name("gemm_nn/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GemmHidden<false>)->Name("gemm_nn/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GemmTransposed<true>)->Name("gemm_tn/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GemmTransposed<false>)->Name("gemm_tn/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GemmWeightGrad<true>)->Name("gemm_nt_acc/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GemmWeightGrad<false>)->Name("gemm_nt_acc/omp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RolloutStep)->Name("rollout_step/omp")->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
