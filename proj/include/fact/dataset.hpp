// Copyright 2026 The fact Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fact/error.hpp"
#include "fact/tensor.hpp"

namespace fact {

/// Images in [0,1] with labels and per-concept ground-truth masks.
struct LabeledImages {
  Tensor<float> images;                // [N, 3, H, W]
  std::vector<std::uint32_t> labels;   // N
  Tensor<std::uint8_t> masks;          // [N, concepts, H, W]; may be empty
  std::string split = "train";

  std::size_t size() const { return labels.size(); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  std::size_t concept_count() const { return masks.empty() ? 0 : masks.dim(1); }

  template <class T = float>
  Tensor<T> image(std::size_t n) const {
    require(n < size(), ErrorKind::kIndex, "image index " + std::to_string(n) + " out of range");
    const std::size_t len = 3 * height() * width();
    const float* p = images.data() + n * len;
    return Tensor<T>({3, height(), width()}, std::vector<T>(p, p + len));
  }

  /// Mask of concept k on image n as an [H,W] view copy.
  Tensor<std::uint8_t> mask(std::size_t n, std::size_t k) const {
    const std::size_t area = height() * width();
    const std::uint8_t* p = masks.data() + (n * concept_count() + k) * area;
    return Tensor<std::uint8_t>({height(), width()}, std::vector<std::uint8_t>(p, p + area));
  }

  std::uint32_t class_count() const {
    std::uint32_t m = 0;
    for (auto l : labels) m = std::max(m, l + 1);
    return m;
  }

  /// Copy of the given images, in the given order.
  LabeledImages subset(const std::vector<std::size_t>& idx, std::string split_tag) const {
    LabeledImages out;
    const std::size_t len = 3 * height() * width();
    std::vector<float> px;
    px.reserve(idx.size() * len);
    std::vector<std::uint8_t> mk;
    const std::size_t mlen = concept_count() * height() * width();
    for (std::size_t n : idx) {
      require(n < size(), ErrorKind::kIndex, "subset index out of range");
      px.insert(px.end(), images.data() + n * len, images.data() + (n + 1) * len);
      if (mlen) mk.insert(mk.end(), masks.data() + n * mlen, masks.data() + (n + 1) * mlen);
      out.labels.push_back(labels[n]);
    }
    if (!idx.empty()) {
      out.images = Tensor<float>({idx.size(), 3, height(), width()}, std::move(px));
      if (mlen) out.masks = Tensor<std::uint8_t>({idx.size(), concept_count(), height(), width()}, std::move(mk));
    }
    out.split = std::move(split_tag);
    return out;
  }

  void validate() const {
    require(images.rank() == 4 && images.dim(1) == 3, ErrorKind::kFormat, "images must be [N,3,H,W]");
    require(images.dim(0) == labels.size(), ErrorKind::kFormat, "label count does not match images");
    if (!masks.empty())
      require(masks.rank() == 4 && masks.dim(0) == size() && masks.dim(2) == height() && masks.dim(3) == width(),
              ErrorKind::kFormat, "masks must be [N,concepts,H,W] aligned with images");
  }
};

}  // namespace fact
