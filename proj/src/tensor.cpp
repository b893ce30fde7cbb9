// SPDX-License-Identifier: Apache-2.0
#include "nca/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <sstream>

#include "nca/error.hpp"
#include "nca/kernels.hpp"

namespace nca {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_product(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  for (std::size_t d : shape_)
    if (d == 0) throw ShapeError("tensor extents must be positive: " + shape_to_string(shape_));
  data_.assign(shape_product(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t d : shape_)
    if (d == 0) throw ShapeError("tensor extents must be positive: " + shape_to_string(shape_));
  if (shape_product(shape_) != data_.size())
    throw ShapeError("shape " + shape_to_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_to_string(shape_));
  return shape_[axis];
}

float& Tensor::at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
float Tensor::at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

float& Tensor::at(std::size_t c, std::size_t i, std::size_t j) {
  return data_[(c * shape_[1] + i) * shape_[2] + j];
}
float Tensor::at(std::size_t c, std::size_t i, std::size_t j) const {
  return data_[(c * shape_[1] + i) * shape_[2] + j];
}

std::span<float> Tensor::slab(std::size_t index) {
  const std::size_t stride = data_.size() / shape_.at(0);
  return std::span<float>(data_).subspan(index * stride, stride);
}

std::span<const float> Tensor::slab(std::size_t index) const {
  const std::size_t stride = data_.size() / shape_.at(0);
  return std::span<const float>(data_).subspan(index * stride, stride);
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

void Tensor::require_finite(const char* context) const {
  if (!all_finite()) throw NumericError(std::string(context) + ": non-finite value");
}

bool bit_equal(const Tensor& a, const Tensor& b) noexcept {
  return a.shape_ == b.shape_ &&
         (a.data_.empty() ||
          std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(float)) == 0);
}

Tensor perception_kernels() {
  constexpr float n = 1.0f / 9.0f;
  constexpr float e = 1.0f / 8.0f;
  constexpr float q = 2.0f / 8.0f;
  return Tensor({4, 3, 3}, {
                               0, 0, 0, 0, 1, 0, 0, 0, 0,           // identity
                               n, n, n, n, n, n, n, n, n,           // mean
                               -e, -q, -e, 0, 0, 0, e, q, e,        // d/di
                               -e, 0, e, -q, 0, q, -e, 0, e,        // d/dj
                           });
}

Tensor conv3x3_depthwise(const Tensor& input, const Tensor& kernels, PadMode) {
  if (input.rank() != 3) throw ShapeError("conv3x3_depthwise: input must be [C, I, J]");
  if (kernels.rank() != 3 || kernels.dim(1) != 3 || kernels.dim(2) != 3)
    throw ShapeError("conv3x3_depthwise: kernels must be [K, 3, 3], got " +
                     shape_to_string(kernels.shape()));
  const std::size_t channels = input.dim(0);
  const kernels::Grid2d grid{input.dim(1), input.dim(2)};
  const std::size_t n_kernels = kernels.dim(0);

  std::vector<std::uint32_t> sites(grid.pixels());
  std::iota(sites.begin(), sites.end(), 0u);
  Tensor out({n_kernels * channels, grid.rows, grid.cols});
  kernels::perceive_sites(input.data(), channels, grid, kernels.data(), n_kernels, sites,
                          out.data());
  out.require_finite("conv3x3_depthwise");
  return out;
}

Tensor conv1x1(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias) {
  if (input.rank() != 3) throw ShapeError("conv1x1: input must be [C, I, J]");
  if (weight.rank() != 2 || weight.dim(1) != input.dim(0))
    throw ShapeError("conv1x1: weight " + shape_to_string(weight.shape()) +
                     " incompatible with input " + shape_to_string(input.shape()));
  const std::size_t c_out = weight.dim(0);
  if (bias && (bias->rank() != 1 || bias->dim(0) != c_out))
    throw ShapeError("conv1x1: bias must be [" + std::to_string(c_out) + "]");
  const std::size_t pixels = input.dim(1) * input.dim(2);
  Tensor out({c_out, input.dim(1), input.dim(2)});
  kernels::gemm_nn(weight.data(), input.data(),
                   bias ? bias->data() : std::span<const float>{}, out.data(), c_out,
                   input.dim(0), pixels);
  out.require_finite("conv1x1");
  return out;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (float& v : out.data()) v = v > 0.0f ? v : 0.0f;
  return out;
}

Tensor softmax_over_channels(const Tensor& input) {
  if (input.rank() != 3 || input.dim(0) < 2)
    throw ShapeError("softmax_over_channels: need [C >= 2, I, J], got " +
                     shape_to_string(input.shape()));
  input.require_finite("softmax_over_channels input");
  const std::size_t channels = input.dim(0);
  const std::size_t pixels = input.dim(1) * input.dim(2);
  Tensor out(input.shape());
  const float* in = input.data().data();
  float* o = out.data().data();
  for (std::size_t p = 0; p < pixels; ++p) {
    float mx = in[p];
    for (std::size_t c = 1; c < channels; ++c) mx = std::max(mx, in[c * pixels + p]);
    double norm = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const double e = std::exp(static_cast<double>(in[c * pixels + p]) - mx);
      o[c * pixels + p] = static_cast<float>(e);
      norm += e;
    }
    for (std::size_t c = 0; c < channels; ++c)
      o[c * pixels + p] = static_cast<float>(o[c * pixels + p] / norm);
  }
  return out;
}

Tensor argmax_over_channels(const Tensor& input) {
  if (input.rank() != 3) throw ShapeError("argmax_over_channels: input must be [C, I, J]");
  const std::size_t channels = input.dim(0);
  const std::size_t pixels = input.dim(1) * input.dim(2);
  Tensor out({input.dim(1), input.dim(2)});
  for (std::size_t p = 0; p < pixels; ++p) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < channels; ++c)
      if (input[c * pixels + p] > input[best * pixels + p]) best = c;
    out[p] = static_cast<float>(best);
  }
  return out;
}

Tensor slice_channels(const Tensor& input, std::size_t begin, std::size_t end) {
  if (input.rank() != 3 || begin >= end || end > input.dim(0))
    throw ShapeError("slice_channels: bad range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") for " + shape_to_string(input.shape()));
  const std::size_t plane = input.dim(1) * input.dim(2);
  std::vector<float> data(input.data().begin() + begin * plane,
                          input.data().begin() + end * plane);
  return Tensor({end - begin, input.dim(1), input.dim(2)}, std::move(data));
}

}  // namespace nca
