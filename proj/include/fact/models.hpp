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

#include <cmath>
#include <cstddef>
#include <cstdint>

#include "fact/bcos.hpp"
#include "fact/network.hpp"
#include "fact/rng.hpp"

namespace fact {

template <class T>
Tensor<T> random_weights(Shape shape, Rng& rng) {
  Tensor<T> w(std::move(shape));
  for (auto& v : w.vec()) v = static_cast<T>(rng.normal());
  return w;
}

/// Four B-cos convolutions on a 32x32 canvas:
///   conv3x3(16) pool2 conv3x3(32) pool2 | conv3x3(32) conv1x1(classes) sum
/// Layer 3 (the second pooling) is the default SAE site, a 32x8x8 map.
template <class T>
Network<T> make_toy_convnet(std::size_t classes, std::uint64_t seed, double b = 2.0, bool six_channel = true,
                            std::size_t canvas = 32) {
  Rng rng(seed, "init/toy_convnet");
  const std::size_t in = six_channel ? 6 : 3;
  std::vector<Layer<T>> layers;
  layers.emplace_back(BcosConv<T>(random_weights<T>({16, in, 3, 3}, rng), 1, 1, b));
  layers.emplace_back(AvgPool{2});
  layers.emplace_back(BcosConv<T>(random_weights<T>({32, 16, 3, 3}, rng), 1, 1, b));
  layers.emplace_back(AvgPool{2});
  layers.emplace_back(BcosConv<T>(random_weights<T>({32, 32, 3, 3}, rng), 1, 1, b));
  layers.emplace_back(BcosConv<T>(random_weights<T>({classes, 32, 1, 1}, rng), 1, 0, b));
  layers.emplace_back(GlobalSumPool{});
  return Network<T>({in, canvas, canvas}, std::move(layers), classes, six_channel);
}

inline constexpr std::size_t kToySaeLayer = 3;
inline constexpr std::size_t kToyLateSaeLayer = 4;

}  // namespace fact
