// SPDX-License-Identifier: Apache-2.0
//
// Neural cellular automaton for 2D segmentation.
//
// Cell state layout along the channel axis of a [D, I, J] grid:
//   [0, d_img)                 input image, pinned for the whole rollout
//   [d_img, d_img + n_cls)     class logits
//   [d_img + n_cls, D)         latent channels
//
// One update: perceive the 3x3 neighbourhood with four fixed filters
// (4*D features per cell), map through a two-layer 1x1 MLP
// (4D -> H with bias and ReLU, H -> D without bias) and add the result
// to the cells selected by a random fire mask.
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "nca/rng.hpp"
#include "nca/tensor.hpp"

namespace nca {

inline constexpr std::size_t kNumPerceptionKernels = 4;

struct NcaConfig {
  std::size_t d_img = 1;
  std::size_t n_cls = 4;
  std::size_t state_dim = 32;  // D
  std::size_t hidden = 128;    // H
  float fire_rate = 0.5f;

  std::size_t perception_dim() const noexcept { return kNumPerceptionKernels * state_dim; }
  void validate() const;
  friend bool operator==(const NcaConfig&, const NcaConfig&) = default;
};

struct CellGrid {
  Tensor state;  // [D, I, J]
  std::size_t d_img = 1;
  std::size_t n_cls = 4;

  std::size_t state_dim() const { return state.dim(0); }
  std::size_t rows() const { return state.dim(1); }
  std::size_t cols() const { return state.dim(2); }
  std::size_t latent_dim() const { return state_dim() - d_img - n_cls; }
};

struct RuleParams {
  NcaConfig config;
  Tensor w1;             // [H, 4D]
  Tensor b1;             // [H]
  Tensor w2;             // [D, H], zero at initialisation
  Tensor fixed_kernels;  // [4, 3, 3], never trained

  /// w1, b1 ~ U(-a, a) with a = sqrt(1 / 4D); w2 = 0.
  static RuleParams init(const NcaConfig& config, Rng& rng);
  /// Throws ShapeError if tensor shapes disagree with `config`.
  void validate() const;
};

struct FireMask {
  Tensor mask;  // [I, J], entries exactly 0 or 1
  float fire_rate = 1.0f;

  static FireMask draw(std::size_t rows, std::size_t cols, float fire_rate, Rng& rng);
  static FireMask constant(std::size_t rows, std::size_t cols, bool fire);
};

CellGrid seed_grid(const Tensor& image, const NcaConfig& config);

/// Full-grid perception, [4D, I, J]; block k holds kernel k over all channels.
Tensor perceive(const CellGrid& grid, const RuleParams& params);

CellGrid nca_step(const CellGrid& grid, const RuleParams& params, const FireMask& fire);

/// T steps, drawing one fresh fire mask per step from `rng`.
CellGrid rollout(CellGrid grid, const RuleParams& params, int steps, Rng& rng);

Tensor read_class_logits(const CellGrid& grid);

std::size_t count_trainable_params(const RuleParams& params);

namespace detail {

/// Everything the backward pass needs from one step. Columns of the
/// perception and pre-activation matrices are the fired cells, in `sites`
/// order.
struct StepRecord {
  std::vector<std::uint32_t> sites;
  std::vector<float> perception;      // [4D, n]
  std::vector<float> preactivation;   // [H, n]
  std::vector<float> fire;            // [I * J]
};

/// Applies one update to `state` in place. `fire` is the flat 0/1 mask.
/// When `record` is non-null the step's activations are moved into it.
/// Throws DivergenceError if any updated value is non-finite.
void step_in_place(Tensor& state, const RuleParams& params, std::span<const float> fire,
                   StepRecord* record);

}  // namespace detail

}  // namespace nca
