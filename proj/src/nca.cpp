// SPDX-License-Identifier: Apache-2.0
#include "nca/nca.hpp"

#include <cmath>
#include <string>

#include "nca/error.hpp"
#include "nca/kernels.hpp"

namespace nca {

void NcaConfig::validate() const {
  if (d_img == 0 || n_cls < 2) throw ConfigError("need d_img >= 1 and n_cls >= 2");
  if (d_img + n_cls > state_dim)
    throw ConfigError("state_dim " + std::to_string(state_dim) + " too small for " +
                      std::to_string(d_img) + " image + " + std::to_string(n_cls) +
                      " class channels");
  if (hidden == 0) throw ConfigError("hidden width must be positive");
  if (!(fire_rate > 0.0f && fire_rate <= 1.0f))
    throw ConfigError("fire_rate must be in (0, 1]");
}

RuleParams RuleParams::init(const NcaConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.state_dim;
  const std::size_t h = config.hidden;
  RuleParams p{config, Tensor({h, 4 * d}), Tensor({h}), Tensor({d, h}), perception_kernels()};
  const float a = std::sqrt(1.0f / static_cast<float>(4 * d));
  for (float& w : p.w1.data()) w = (2.0f * uniform01(rng) - 1.0f) * a;
  for (float& b : p.b1.data()) b = (2.0f * uniform01(rng) - 1.0f) * a;
  return p;
}

void RuleParams::validate() const {
  config.validate();
  const std::size_t d = config.state_dim;
  const std::size_t h = config.hidden;
  if (w1.shape() != Shape{h, 4 * d} || b1.shape() != Shape{h} || w2.shape() != Shape{d, h} ||
      fixed_kernels.shape() != Shape{4, 3, 3})
    throw ShapeError("rule parameters do not match D=" + std::to_string(d) +
                     ", H=" + std::to_string(h));
}

FireMask FireMask::draw(std::size_t rows, std::size_t cols, float fire_rate, Rng& rng) {
  FireMask m{Tensor({rows, cols}), fire_rate};
  for (float& v : m.mask.data()) v = uniform01(rng) < fire_rate ? 1.0f : 0.0f;
  return m;
}

FireMask FireMask::constant(std::size_t rows, std::size_t cols, bool fire) {
  return FireMask{Tensor({rows, cols}, fire ? 1.0f : 0.0f), fire ? 1.0f : 0.0f};
}

CellGrid seed_grid(const Tensor& image, const NcaConfig& config) {
  config.validate();
  if (image.rank() != 3 || image.dim(0) != config.d_img)
    throw ShapeError("seed_grid: image must be [" + std::to_string(config.d_img) +
                     ", I, J], got " + shape_to_string(image.shape()));
  CellGrid grid{Tensor({config.state_dim, image.dim(1), image.dim(2)}), config.d_img,
                config.n_cls};
  std::copy(image.data().begin(), image.data().end(), grid.state.data().begin());
  return grid;
}

Tensor perceive(const CellGrid& grid, const RuleParams& params) {
  return conv3x3_depthwise(grid.state, params.fixed_kernels, PadMode::Zero);
}

namespace detail {

void step_in_place(Tensor& state, const RuleParams& params, std::span<const float> fire,
                   StepRecord* record) {
  const std::size_t d = params.config.state_dim;
  const std::size_t h = params.config.hidden;
  const std::size_t d_img = params.config.d_img;
  const kernels::Grid2d grid{state.dim(1), state.dim(2)};
  const std::size_t plane = grid.pixels();
  if (state.dim(0) != d) throw ShapeError("step: state channels do not match D");
  if (fire.size() != plane) throw ShapeError("step: fire mask does not match grid");

  StepRecord local;
  StepRecord& rec = record ? *record : local;
  rec.sites.clear();
  for (std::size_t p = 0; p < plane; ++p)
    if (fire[p] != 0.0f) rec.sites.push_back(static_cast<std::uint32_t>(p));
  if (record) rec.fire.assign(fire.begin(), fire.end());
  const std::size_t n = rec.sites.size();
  rec.perception.resize(4 * d * n);
  rec.preactivation.resize(h * n);
  if (n == 0) return;

  kernels::perceive_sites(state.data(), d, grid, params.fixed_kernels.data(),
                          kNumPerceptionKernels, rec.sites, rec.perception);
  kernels::gemm_nn(params.w1.data(), rec.perception, params.b1.data(), rec.preactivation, h,
                   4 * d, n);

  std::vector<float> hidden(rec.preactivation);
  for (float& v : hidden) v = v > 0.0f ? v : 0.0f;
  std::vector<float> delta(d * n);
  kernels::gemm_nn(params.w2.data(), hidden, {}, delta, d, h, n);

  // Image channels are never written, which pins them to the seed image.
  bool finite = true;
  float* s = state.data().data();
  for (std::size_t c = d_img; c < d; ++c) {
    float* plane_c = s + c * plane;
    const float* delta_c = delta.data() + c * n;
    for (std::size_t q = 0; q < n; ++q) {
      const float v = plane_c[rec.sites[q]] + delta_c[q];
      finite &= std::isfinite(v);
      plane_c[rec.sites[q]] = v;
    }
  }
  if (!finite) throw DivergenceError("non-finite cell state after update");
}

}  // namespace detail

CellGrid nca_step(const CellGrid& grid, const RuleParams& params, const FireMask& fire) {
  if (fire.mask.rank() != 2 || fire.mask.dim(0) != grid.rows() || fire.mask.dim(1) != grid.cols())
    throw ShapeError("nca_step: fire mask shape " + shape_to_string(fire.mask.shape()) +
                     " does not match grid");
  CellGrid out = grid;
  detail::step_in_place(out.state, params, fire.mask.data(), nullptr);
  return out;
}

CellGrid rollout(CellGrid grid, const RuleParams& params, int steps, Rng& rng) {
  if (steps < 0) throw ConfigError("rollout: negative step count");
  const std::size_t rows = grid.rows();
  const std::size_t cols = grid.cols();
  for (int t = 0; t < steps; ++t) {
    const FireMask fire = FireMask::draw(rows, cols, params.config.fire_rate, rng);
    try {
      detail::step_in_place(grid.state, params, fire.mask.data(), nullptr);
    } catch (const DivergenceError& e) {
      throw DivergenceError(e.what(), t);
    }
  }
  return grid;
}

Tensor read_class_logits(const CellGrid& grid) {
  return slice_channels(grid.state, grid.d_img, grid.d_img + grid.n_cls);
}

std::size_t count_trainable_params(const RuleParams& params) {
  return params.w1.size() + params.b1.size() + params.w2.size();
}

}  // namespace nca
