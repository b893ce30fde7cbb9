// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <string>

#include "nca/error.hpp"
#include "nca/loss.hpp"
#include "nca/sample.hpp"

namespace nca {

namespace {

struct ClassSums {
  std::vector<double> inter, pred, truth;
};

ClassSums class_sums(const Tensor& probs, const Tensor& target) {
  if (probs.rank() != 3 || probs.shape() != target.shape())
    throw ShapeError("dice: probs " + shape_to_string(probs.shape()) + " vs target " +
                     shape_to_string(target.shape()));
  const std::size_t classes = probs.dim(0);
  const std::size_t pixels = probs.dim(1) * probs.dim(2);
  for (std::size_t p = 0; p < pixels; ++p) {
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += probs[c * pixels + p];
    if (std::abs(s - 1.0) > 1e-4)
      throw NumericError("dice: probabilities at pixel " + std::to_string(p) + " sum to " +
                         std::to_string(s));
  }
  ClassSums sums{std::vector<double>(classes), std::vector<double>(classes),
                 std::vector<double>(classes)};
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t p = 0; p < pixels; ++p) {
      const double y_hat = probs[c * pixels + p];
      const double y = target[c * pixels + p];
      sums.inter[c] += y_hat * y;
      sums.pred[c] += y_hat;
      sums.truth[c] += y;
    }
  }
  return sums;
}

}  // namespace

Tensor one_hot(const Tensor& labels, std::size_t n_cls) {
  if (labels.rank() != 2) throw ShapeError("one_hot: labels must be [I, J]");
  const std::size_t pixels = labels.size();
  Tensor out({n_cls, labels.dim(0), labels.dim(1)});
  for (std::size_t p = 0; p < pixels; ++p) {
    const float v = labels[p];
    if (!(v >= 0.0f) || v != std::floor(v) || v >= static_cast<float>(n_cls))
      throw ShapeError("one_hot: label " + std::to_string(v) + " out of range");
    out[static_cast<std::size_t>(v) * pixels + p] = 1.0f;
  }
  return out;
}

double dice_loss(const Tensor& probs, const Tensor& target_onehot) {
  const ClassSums s = class_sums(probs, target_onehot);
  double loss = 0.0;
  for (std::size_t c = 0; c < s.inter.size(); ++c)
    loss += 1.0 - (2.0 * s.inter[c] + kDiceSmooth) / (s.pred[c] + s.truth[c] + kDiceSmooth);
  if (!std::isfinite(loss)) throw NumericError("dice_loss: non-finite");
  return loss;
}

Tensor dice_loss_grad(const Tensor& probs, const Tensor& target_onehot) {
  const ClassSums s = class_sums(probs, target_onehot);
  const std::size_t pixels = probs.dim(1) * probs.dim(2);
  Tensor grad(probs.shape());
  for (std::size_t c = 0; c < s.inter.size(); ++c) {
    const double num = 2.0 * s.inter[c] + kDiceSmooth;
    const double den = s.pred[c] + s.truth[c] + kDiceSmooth;
    // d/dp [-(2I + e) / (S + G + e)] = -2y / den + num / den^2
    const double base = num / (den * den);
    for (std::size_t p = 0; p < pixels; ++p) {
      const double y = target_onehot[c * pixels + p];
      grad[c * pixels + p] = static_cast<float>(base - 2.0 * y / den);
    }
  }
  return grad;
}

Tensor softmax_backward(const Tensor& probs, const Tensor& grad_probs) {
  if (probs.shape() != grad_probs.shape() || probs.rank() != 3)
    throw ShapeError("softmax_backward: shape mismatch");
  const std::size_t classes = probs.dim(0);
  const std::size_t pixels = probs.dim(1) * probs.dim(2);
  Tensor out(probs.shape());
  for (std::size_t p = 0; p < pixels; ++p) {
    double dot = 0.0;
    for (std::size_t c = 0; c < classes; ++c)
      dot += static_cast<double>(probs[c * pixels + p]) * grad_probs[c * pixels + p];
    for (std::size_t c = 0; c < classes; ++c)
      out[c * pixels + p] = static_cast<float>(probs[c * pixels + p] *
                                               (grad_probs[c * pixels + p] - dot));
  }
  return out;
}

DiceScore dice_score(const Tensor& pred_labels, const Tensor& true_labels, std::size_t n_cls) {
  if (pred_labels.rank() != 2 || pred_labels.shape() != true_labels.shape())
    throw ShapeError("dice_score: label maps must be equal-shaped [I, J]");
  if (n_cls < 2) throw ConfigError("dice_score: need at least two classes");
  std::vector<std::size_t> inter(n_cls), pred(n_cls), truth(n_cls);
  auto class_of = [n_cls](float v) {
    if (!(v >= 0.0f) || v != std::floor(v) || v >= static_cast<float>(n_cls))
      throw ShapeError("dice_score: label " + std::to_string(v) + " out of range");
    return static_cast<std::size_t>(v);
  };
  for (std::size_t p = 0; p < pred_labels.size(); ++p) {
    const std::size_t a = class_of(pred_labels[p]);
    const std::size_t b = class_of(true_labels[p]);
    ++pred[a];
    ++truth[b];
    if (a == b) ++inter[a];
  }
  DiceScore score;
  score.per_class.resize(n_cls);
  for (std::size_t c = 0; c < n_cls; ++c) {
    const std::size_t den = pred[c] + truth[c];
    score.per_class[c] = den == 0 ? 1.0 : 2.0 * static_cast<double>(inter[c]) / den;
  }
  double fg = 0.0;
  for (std::size_t c = 1; c < n_cls; ++c) fg += score.per_class[c];
  score.mean_foreground = fg / static_cast<double>(n_cls - 1);
  return score;
}

}  // namespace nca
