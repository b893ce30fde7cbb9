// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "nca/tensor.hpp"

namespace nca {

inline constexpr double kDiceSmooth = 1e-6;

/// Soft Dice loss summed over classes:
///   sum_c 1 - (2 sum_p probs*target + eps) / (sum_p probs + sum_p target + eps)
/// `probs` must be normalised per pixel (within 1e-4); result in [0, C).
double dice_loss(const Tensor& probs, const Tensor& target_onehot);

/// d dice_loss / d probs, same shape as probs.
Tensor dice_loss_grad(const Tensor& probs, const Tensor& target_onehot);

/// Backpropagates a gradient w.r.t. softmax outputs to the logits.
Tensor softmax_backward(const Tensor& probs, const Tensor& grad_probs);

struct DiceScore {
  std::vector<double> per_class;
  double mean_foreground = 0.0;  // mean over classes 1..n_cls-1
};

/// Hard Dice 2|A∩B| / (|A| + |B|) per class. A class absent from both maps
/// scores 1.
DiceScore dice_score(const Tensor& pred_labels, const Tensor& true_labels, std::size_t n_cls);

}  // namespace nca
