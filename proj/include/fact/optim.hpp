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
#include <numbers>
#include <vector>

#include "fact/tensor.hpp"

namespace fact {

/// Adam over a fixed list of parameter tensors.
template <class T>
class Adam {
 public:
  explicit Adam(std::vector<Shape> shapes, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& s : shapes) {
      m_.emplace_back(s);
      v_.emplace_back(s);
    }
  }

  /// params[i] -= lr * mhat / (sqrt(vhat) + eps). lr == 0 leaves params
  /// untouched bitwise.
  void step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      auto& m = m_[i];
      auto& v = v_[i];
      const auto& g = grads[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = g[j];
        m[j] = static_cast<T>(beta1_ * m[j] + (1.0 - beta1_) * gj);
        v[j] = static_cast<T>(beta2_ * v[j] + (1.0 - beta2_) * gj * gj);
        if (lr == 0.0) continue;
        const double mhat = m[j] / c1, vhat = v[j] / c2;
        p[j] = static_cast<T>(p[j] - lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

/// Linear warmup to `base` over `warmup` steps, then cosine decay to zero at
/// `total`.
inline double warmup_cosine_lr(double base, std::size_t step, std::size_t warmup, std::size_t total) {
  if (warmup > 0 && step < warmup) return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (total <= warmup) return base;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

}  // namespace fact
