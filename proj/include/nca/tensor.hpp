// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nca {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

/// Dense row-major float32 array (last axis fastest). The only numeric value
/// type in the project; channels-first [C, I, J] for anything image-shaped.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  float& at(std::size_t i, std::size_t j);
  float at(std::size_t i, std::size_t j) const;
  float& at(std::size_t c, std::size_t i, std::size_t j);
  float at(std::size_t c, std::size_t i, std::size_t j) const;

  /// Contiguous view of one leading-axis slab, e.g. channel c of [C, I, J].
  std::span<float> slab(std::size_t index);
  std::span<const float> slab(std::size_t index) const;

  void fill(float value);
  bool all_finite() const noexcept;
  /// Throws NumericError naming `context` if any value is NaN/Inf.
  void require_finite(const char* context) const;

  /// Same shape and identical bit patterns.
  friend bool bit_equal(const Tensor& a, const Tensor& b) noexcept;

 private:
  Shape shape_;
  std::vector<float> data_;
};

std::size_t shape_product(const Shape& shape) noexcept;

enum class PadMode { Zero };

/// The four fixed perception filters (identity, 3x3 mean, vertical and
/// horizontal Sobel scaled by 1/8), shape [4, 3, 3].
Tensor perception_kernels();

/// Same-size 3x3 depthwise cross-correlation. Output channel k*Cin + c is
/// kernel k applied to input channel c. `input` is [Cin, I, J] and `kernels`
/// is [K, 3, 3].
Tensor conv3x3_depthwise(const Tensor& input, const Tensor& kernels,
                         PadMode padding = PadMode::Zero);

/// Per-pixel affine map: out[:, i, j] = weight * input[:, i, j] + bias.
Tensor conv1x1(const Tensor& input, const Tensor& weight,
               const std::optional<Tensor>& bias = std::nullopt);

Tensor relu(const Tensor& input);

/// Max-subtracted softmax over axis 0 of a [C, I, J] tensor.
Tensor softmax_over_channels(const Tensor& input);

/// Per-pixel argmax over axis 0 of [C, I, J]; ties go to the lowest index.
Tensor argmax_over_channels(const Tensor& input);

/// Channels [begin, end) of a [C, I, J] tensor, by value.
Tensor slice_channels(const Tensor& input, std::size_t begin, std::size_t end);

}  // namespace nca
