// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference verification of the BPTT gradients. The numeric side runs
// a separate double-precision forward pass written with plain loops, so it
// shares no code with the float kernels it checks; only the fire-mask draws
// are shared, which is the point.
#include <algorithm>
#include <cmath>
#include <string>

#include "nca/bptt.hpp"
#include "nca/error.hpp"
#include "nca/loss.hpp"

namespace nca {

namespace {

double* coord_slot(std::vector<double>& w1, std::vector<double>& b1, std::vector<double>& w2,
                   ParamCoord coord) {
  std::vector<double>* target = nullptr;
  switch (coord.tensor) {
    case ParamTensor::W1: target = &w1; break;
    case ParamTensor::B1: target = &b1; break;
    case ParamTensor::W2: target = &w2; break;
    case ParamTensor::FixedKernels:
      throw ConfigError("fixed_kernels are not trainable and cannot be probed");
  }
  if (coord.index >= target->size())
    throw ConfigError("probe index " + std::to_string(coord.index) + " out of range");
  return &(*target)[coord.index];
}

float analytic_at(const Grads& g, ParamCoord coord) {
  switch (coord.tensor) {
    case ParamTensor::W1: return g.g_w1[coord.index];
    case ParamTensor::B1: return g.g_b1[coord.index];
    case ParamTensor::W2: return g.g_w2[coord.index];
    case ParamTensor::FixedKernels: break;
  }
  throw ConfigError("fixed_kernels are not trainable and cannot be probed");
}

}  // namespace

double reference_loss(const RuleParams& params, const Sample& sample, int steps,
                      std::uint64_t seed, ParamCoord coord, double delta,
                      std::vector<bool>* relu_pattern) {
  const NcaConfig& cfg = params.config;
  const std::size_t d = cfg.state_dim, h = cfg.hidden, d_img = cfg.d_img, n_cls = cfg.n_cls;
  const std::size_t k4 = 4 * d;
  if (sample.image.rank() != 3 || sample.image.dim(0) != d_img)
    throw ShapeError("reference_loss: image does not match d_img");
  const std::size_t rows = sample.image.dim(1), cols = sample.image.dim(2);
  const std::size_t plane = rows * cols;

  std::vector<double> w1(params.w1.data().begin(), params.w1.data().end());
  std::vector<double> b1(params.b1.data().begin(), params.b1.data().end());
  std::vector<double> w2(params.w2.data().begin(), params.w2.data().end());
  std::vector<double> kern(params.fixed_kernels.data().begin(), params.fixed_kernels.data().end());
  *coord_slot(w1, b1, w2, coord) += delta;

  std::vector<double> state(d * plane, 0.0);
  for (std::size_t i = 0; i < d_img * plane; ++i) state[i] = sample.image[i];
  if (relu_pattern) relu_pattern->clear();

  Rng rng(seed);
  std::vector<double> perc(k4), hid(h);
  for (int t = 0; t < steps; ++t) {
    const FireMask fire = FireMask::draw(rows, cols, cfg.fire_rate, rng);
    std::vector<double> next = state;
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        const std::size_t p = i * cols + j;
        if (fire.mask[p] == 0.0f) continue;
        for (std::size_t k = 0; k < 4; ++k) {
          for (std::size_t c = 0; c < d; ++c) {
            double acc = 0.0;
            for (int di = -1; di <= 1; ++di) {
              for (int dj = -1; dj <= 1; ++dj) {
                const long ii = static_cast<long>(i) + di;
                const long jj = static_cast<long>(j) + dj;
                if (ii < 0 || jj < 0 || ii >= static_cast<long>(rows) ||
                    jj >= static_cast<long>(cols))
                  continue;
                acc += kern[k * 9 + static_cast<std::size_t>((di + 1) * 3 + dj + 1)] *
                       state[c * plane + static_cast<std::size_t>(ii) * cols +
                             static_cast<std::size_t>(jj)];
              }
            }
            perc[k * d + c] = acc;
          }
        }
        for (std::size_t u = 0; u < h; ++u) {
          double z = b1[u];
          for (std::size_t m = 0; m < k4; ++m) z += w1[u * k4 + m] * perc[m];
          if (relu_pattern) relu_pattern->push_back(z > 0.0);
          hid[u] = z > 0.0 ? z : 0.0;
        }
        for (std::size_t c = d_img; c < d; ++c) {
          double acc = 0.0;
          for (std::size_t u = 0; u < h; ++u) acc += w2[c * h + u] * hid[u];
          next[c * plane + p] += acc;
        }
      }
    }
    state.swap(next);
  }

  // Softmax over the class channels, then soft Dice against the labels.
  std::vector<double> inter(n_cls), pred(n_cls), truth(n_cls);
  std::vector<double> prob(n_cls);
  for (std::size_t p = 0; p < plane; ++p) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < n_cls; ++c) mx = std::max(mx, state[(d_img + c) * plane + p]);
    double norm = 0.0;
    for (std::size_t c = 0; c < n_cls; ++c) {
      prob[c] = std::exp(state[(d_img + c) * plane + p] - mx);
      norm += prob[c];
    }
    const auto label = static_cast<std::size_t>(sample.mask[p]);
    for (std::size_t c = 0; c < n_cls; ++c) {
      const double y_hat = prob[c] / norm;
      const double y = (c == label) ? 1.0 : 0.0;
      inter[c] += y_hat * y;
      pred[c] += y_hat;
      truth[c] += y;
    }
  }
  double loss = 0.0;
  for (std::size_t c = 0; c < n_cls; ++c)
    loss += 1.0 - (2.0 * inter[c] + kDiceSmooth) / (pred[c] + truth[c] + kDiceSmooth);
  if (!std::isfinite(loss)) throw NumericError("reference_loss: non-finite loss");
  return loss;
}

double finite_difference(const RuleParams& params, const Sample& sample, int steps,
                         std::uint64_t seed, ParamCoord coord, double eps) {
  const double up = reference_loss(params, sample, steps, seed, coord, eps);
  const double down = reference_loss(params, sample, steps, seed, coord, -eps);
  return (up - down) / (2.0 * eps);
}

Grads analytic_gradient(const RuleParams& params, const Sample& sample, int steps,
                        std::uint64_t seed, double* loss) {
  Rng rng(seed);
  const CellGrid grid = seed_grid(sample.image, params.config);
  const ForwardResult fwd = forward_with_tape(grid, params, steps, rng);
  const LossAndGrad lg = dice_objective(fwd.final, one_hot(sample.mask, params.config.n_cls));
  if (loss) *loss = lg.loss;
  return backward(fwd.tape, params, lg.grad_state);
}

GradCheckReport grad_check(const RuleParams& params, const Sample& sample,
                           const GradCheckOptions& options) {
  if (options.n_probe < 1 || !(options.eps > 0.0)) throw ConfigError("grad_check: bad options");
  Grads grads = analytic_gradient(params, sample, options.steps, options.seed);
  if (options.corrupt_backward) grads.scale(1.05f);

  std::vector<bool> center;
  reference_loss(params, sample, options.steps, options.seed, {}, 0.0, &center);

  const std::size_t n_w1 = params.w1.size(), n_b1 = params.b1.size(), n_w2 = params.w2.size();
  Rng pick = make_rng(options.seed, "probe");
  GradCheckReport report;
  const int max_attempts = 50 * options.n_probe;
  for (int attempt = 0; attempt < max_attempts && report.probes < options.n_probe; ++attempt) {
    std::size_t flat = pick() % (n_w1 + n_b1 + n_w2);
    ParamCoord coord;
    if (flat < n_w1) {
      coord = {ParamTensor::W1, flat};
    } else if (flat < n_w1 + n_b1) {
      coord = {ParamTensor::B1, flat - n_w1};
    } else {
      coord = {ParamTensor::W2, flat - n_w1 - n_b1};
    }

    std::vector<bool> up_pattern, down_pattern;
    const double up = reference_loss(params, sample, options.steps, options.seed, coord,
                                     options.eps, &up_pattern);
    const double down = reference_loss(params, sample, options.steps, options.seed, coord,
                                       -options.eps, &down_pattern);
    if (up_pattern != center || down_pattern != center) {
      ++report.skipped_kinks;
      continue;
    }
    ProbeResult r{coord, analytic_at(grads, coord), (up - down) / (2.0 * options.eps), 0.0};
    const double diff = std::abs(r.analytic - r.numeric);
    r.error = std::abs(r.analytic) < 1e-6
                  ? diff
                  : diff / std::max(std::abs(r.analytic), std::abs(r.numeric));
    report.max_rel_error = std::max(report.max_rel_error, r.error);
    report.results.push_back(r);
    ++report.probes;
  }
  return report;
}

}  // namespace nca
