// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode gradients through an unrolled NCA rollout.
//
// Step t maps s_t to s_{t+1} = s_t + M_t * (W2 relu(W1 P(s_t) + b1)), where
// P is the fixed perception operator and M_t zeroes non-fired cells and the
// image channels. Given dL/ds_T the backward sweep visits the steps in reverse
// and, per step, forms dL/dW2, dL/dW1, dL/db1 from the recorded
// activations and pushes dL/ds_t = dL/ds_{t+1} + P^T W1^T (relu' . W2^T M_t dL/ds_{t+1}).
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "nca/nca.hpp"
#include "nca/sample.hpp"

namespace nca {

struct Grads {
  Tensor g_w1;  // [H, 4D]
  Tensor g_b1;  // [H]
  Tensor g_w2;  // [D, H]

  static Grads zeros_like(const RuleParams& params);
  /// this += scale * other
  void add_scaled(const Grads& other, float scale);
  void scale(float factor);
  double global_norm() const;
  bool all_finite() const;
};

struct Tape {
  CellGrid initial;
  std::vector<detail::StepRecord> steps;
  NcaConfig config;
  std::uint64_t params_fingerprint = 0;

  std::size_t memory_bytes() const;
};

/// Default ceiling on tape size.
inline constexpr std::size_t kDefaultTapeBudget = std::size_t{3} << 30;

/// Upper bound on the tape size of a T-step rollout when every cell fires.
std::size_t estimate_tape_bytes(const NcaConfig& config, std::size_t rows, std::size_t cols,
                                int steps);

std::uint64_t fingerprint(const RuleParams& params);

struct ForwardResult {
  CellGrid final;
  Tape tape;
};

/// Same result as rollout() with the same generator state, plus the tape.
/// Throws ConfigError if the estimated tape exceeds `memory_budget`.
ForwardResult forward_with_tape(const CellGrid& grid, const RuleParams& params, int steps,
                                Rng& rng, std::size_t memory_budget = kDefaultTapeBudget);

/// Re-runs the recorded fire masks from the tape's initial grid.
CellGrid replay(const Tape& tape, const RuleParams& params);

Grads backward(const Tape& tape, const RuleParams& params, const Tensor& grad_final_state);

/// Dice loss of a rollout and d loss / d final state (zero outside the class
/// channels).
struct LossAndGrad {
  double loss = 0.0;
  Tensor grad_state;
};
LossAndGrad dice_objective(const CellGrid& final, const Tensor& target_onehot);

// ---------------------------------------------------------------------------
// Finite-difference verification

enum class ParamTensor { W1, B1, W2, FixedKernels };

struct ParamCoord {
  ParamTensor tensor = ParamTensor::W1;
  std::size_t index = 0;
};

struct GradCheckOptions {
  int steps = 4;
  double eps = 1e-3;
  int n_probe = 64;
  std::uint64_t seed = 0;
  /// Negative control: perturbs the analytic gradient before comparison.
  bool corrupt_backward = false;
};

struct ProbeResult {
  ParamCoord coord;
  double analytic = 0.0;
  double numeric = 0.0;
  double error = 0.0;  // relative, or absolute when |analytic| < 1e-6
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  int probes = 0;
  int skipped_kinks = 0;  // probes whose +-eps stencil crossed a ReLU kink
  std::vector<ProbeResult> results;
};

/// Loss of the full objective evaluated in double precision by a reference
/// forward pass independent of the kernels, with one coordinate shifted by
/// `delta`. The fire masks are drawn from Rng(seed) exactly as
/// forward_with_tape draws them. `relu_pattern`, when non-null, receives the
/// sign of every hidden pre-activation.
double reference_loss(const RuleParams& params, const Sample& sample, int steps,
                      std::uint64_t seed, ParamCoord coord, double delta,
                      std::vector<bool>* relu_pattern = nullptr);

/// Central difference (L(+eps) - L(-eps)) / 2 eps of the reference loss.
/// Throws ConfigError for non-trainable coordinates.
double finite_difference(const RuleParams& params, const Sample& sample, int steps,
                         std::uint64_t seed, ParamCoord coord, double eps);

/// Analytic gradient of the dice objective for one sample.
Grads analytic_gradient(const RuleParams& params, const Sample& sample, int steps,
                        std::uint64_t seed, double* loss = nullptr);

GradCheckReport grad_check(const RuleParams& params, const Sample& sample,
                           const GradCheckOptions& options);

}  // namespace nca
