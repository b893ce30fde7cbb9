// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "nca/tensor.hpp"

namespace nca {

/// One segmentation example: image [d_img, I, J] in [0, 1] and a label map
/// [I, J] holding class ids as floats.
struct Sample {
  Tensor image;
  Tensor mask;
  std::string domain;
  std::string sample_id;
};

/// [n_cls, I, J] one-hot encoding of a label map. Throws on ids >= n_cls.
Tensor one_hot(const Tensor& labels, std::size_t n_cls);

}  // namespace nca
