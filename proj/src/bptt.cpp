// SPDX-License-Identifier: Apache-2.0
#include "nca/bptt.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "nca/error.hpp"
#include "nca/kernels.hpp"
#include "nca/loss.hpp"

namespace nca {

Grads Grads::zeros_like(const RuleParams& params) {
  return Grads{Tensor(params.w1.shape()), Tensor(params.b1.shape()), Tensor(params.w2.shape())};
}

void Grads::add_scaled(const Grads& other, float scale) {
  auto axpy = [scale](Tensor& dst, const Tensor& src) {
    if (dst.shape() != src.shape()) throw ShapeError("Grads::add_scaled: shape mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
  };
  axpy(g_w1, other.g_w1);
  axpy(g_b1, other.g_b1);
  axpy(g_w2, other.g_w2);
}

void Grads::scale(float factor) {
  for (Tensor* t : {&g_w1, &g_b1, &g_w2})
    for (float& v : t->data()) v *= factor;
}

double Grads::global_norm() const {
  double sq = 0.0;
  for (const Tensor* t : {&g_w1, &g_b1, &g_w2})
    for (float v : t->data()) sq += static_cast<double>(v) * v;
  return std::sqrt(sq);
}

bool Grads::all_finite() const {
  return g_w1.all_finite() && g_b1.all_finite() && g_w2.all_finite();
}

std::size_t Tape::memory_bytes() const {
  std::size_t bytes = initial.state.size() * sizeof(float);
  for (const auto& s : steps)
    bytes += s.sites.capacity() * sizeof(std::uint32_t) +
             (s.perception.capacity() + s.preactivation.capacity() + s.fire.capacity()) *
                 sizeof(float);
  return bytes;
}

std::size_t estimate_tape_bytes(const NcaConfig& config, std::size_t rows, std::size_t cols,
                                int steps) {
  const std::size_t pixels = rows * cols;
  const std::size_t per_step =
      pixels * (sizeof(std::uint32_t) +
                (config.perception_dim() + config.hidden + 1) * sizeof(float));
  return pixels * config.state_dim * sizeof(float) +
         per_step * static_cast<std::size_t>(std::max(steps, 0));
}

std::uint64_t fingerprint(const RuleParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor* t : {&params.w1, &params.b1, &params.w2}) {
    for (float v : t->data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      h = (h ^ bits) * 0x100000001b3ULL;
    }
  }
  return h;
}

ForwardResult forward_with_tape(const CellGrid& grid, const RuleParams& params, int steps,
                                Rng& rng, std::size_t memory_budget) {
  if (steps < 1) throw ConfigError("forward_with_tape: need at least one step");
  const std::size_t need = estimate_tape_bytes(params.config, grid.rows(), grid.cols(), steps);
  if (need > memory_budget)
    throw ConfigError("forward_with_tape: tape needs ~" + std::to_string(need >> 20) +
                      " MiB, budget is " + std::to_string(memory_budget >> 20) + " MiB");
  ForwardResult out{grid, Tape{grid, {}, params.config, fingerprint(params)}};
  out.tape.steps.resize(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    const FireMask fire =
        FireMask::draw(grid.rows(), grid.cols(), params.config.fire_rate, rng);
    try {
      detail::step_in_place(out.final.state, params, fire.mask.data(),
                            &out.tape.steps[static_cast<std::size_t>(t)]);
    } catch (const DivergenceError& e) {
      throw DivergenceError(e.what(), t);
    }
  }
  return out;
}

CellGrid replay(const Tape& tape, const RuleParams& params) {
  CellGrid grid = tape.initial;
  for (const auto& rec : tape.steps) detail::step_in_place(grid.state, params, rec.fire, nullptr);
  return grid;
}

Grads backward(const Tape& tape, const RuleParams& params, const Tensor& grad_final_state) {
  if (!(tape.config == params.config) || tape.params_fingerprint != fingerprint(params))
    throw ConfigError("backward: tape was recorded with different parameters");
  if (grad_final_state.shape() != tape.initial.state.shape())
    throw ShapeError("backward: upstream gradient shape " +
                     shape_to_string(grad_final_state.shape()) + " does not match state");

  const std::size_t d = params.config.state_dim;
  const std::size_t h = params.config.hidden;
  const std::size_t d_img = params.config.d_img;
  const kernels::Grid2d grid{tape.initial.rows(), tape.initial.cols()};
  const std::size_t plane = grid.pixels();

  Grads grads = Grads::zeros_like(params);
  Tensor grad_state = grad_final_state;
  std::vector<float> g_delta, hidden, g_pre, g_perc;

  for (auto it = tape.steps.rbegin(); it != tape.steps.rend(); ++it) {
    const detail::StepRecord& rec = *it;
    const std::size_t n = rec.sites.size();
    if (n == 0) continue;

    // Only fired cells outside the image channels received the update.
    g_delta.assign(d * n, 0.0f);
    for (std::size_t c = d_img; c < d; ++c) {
      const float* gs = grad_state.data().data() + c * plane;
      float* gd = g_delta.data() + c * n;
      for (std::size_t q = 0; q < n; ++q) gd[q] = gs[rec.sites[q]];
    }

    hidden.assign(rec.preactivation.begin(), rec.preactivation.end());
    for (float& v : hidden) v = v > 0.0f ? v : 0.0f;
    kernels::gemm_nt_acc(g_delta, hidden, grads.g_w2.data(), d, h, n);

    g_pre.resize(h * n);
    kernels::gemm_tn(params.w2.data(), g_delta, g_pre, h, d, n);
    for (std::size_t i = 0; i < h * n; ++i)
      if (!(rec.preactivation[i] > 0.0f)) g_pre[i] = 0.0f;
    for (std::size_t r = 0; r < h; ++r) {
      float acc = 0.0f;
      for (std::size_t q = 0; q < n; ++q) acc += g_pre[r * n + q];
      grads.g_b1[r] += acc;
    }
    kernels::gemm_nt_acc(g_pre, rec.perception, grads.g_w1.data(), h, 4 * d, n);

    g_perc.resize(4 * d * n);
    kernels::gemm_tn(params.w1.data(), g_pre, g_perc, 4 * d, h, n);
    kernels::perceive_sites_adjoint_acc(g_perc, d, grid, params.fixed_kernels.data(),
                                        kNumPerceptionKernels, rec.sites, grad_state.data());
  }
  if (!grads.all_finite()) throw DivergenceError("backward: non-finite gradient");
  return grads;
}

LossAndGrad dice_objective(const CellGrid& final, const Tensor& target_onehot) {
  const Tensor probs = softmax_over_channels(read_class_logits(final));
  LossAndGrad out{dice_loss(probs, target_onehot), Tensor(final.state.shape())};
  const Tensor g_logits = softmax_backward(probs, dice_loss_grad(probs, target_onehot));
  const std::size_t plane = final.rows() * final.cols();
  std::copy(g_logits.data().begin(), g_logits.data().end(),
            out.grad_state.data().begin() + static_cast<std::ptrdiff_t>(final.d_img * plane));
  return out;
}

}  // namespace nca
