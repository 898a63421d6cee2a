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

// Bias-free TopK sparse autoencoder applied positionwise (1x1 convolution).

#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "fact/bcos.hpp"
#include "fact/error.hpp"
#include "fact/tensor.hpp"

namespace fact {

template <class T>
struct SaeModel {
  Tensor<T> encoder;     // [K, C]
  Tensor<T> dictionary;  // [K, C]
  std::size_t topk = 1;
  std::size_t layer_index = 0;  // network layer whose output is bottlenecked

  SaeModel() = default;
  SaeModel(Tensor<T> enc, Tensor<T> dict, std::size_t k, std::size_t layer)
      : encoder(std::move(enc)), dictionary(std::move(dict)), topk(k), layer_index(layer) {
    validate();
  }

  std::size_t latents() const { return encoder.dim(0); }
  std::size_t channels() const { return encoder.dim(1); }

  void validate() const {
    require(encoder.rank() == 2 && dictionary.rank() == 2, ErrorKind::kConfig,
            "SAE encoder and dictionary must be rank 2");
    require(encoder.shape() == dictionary.shape(), ErrorKind::kConfig,
            "SAE encoder " + shape_str(encoder.shape()) + " and dictionary " +
                shape_str(dictionary.shape()) + " differ in shape");
    require(topk >= 1 && topk <= latents(), ErrorKind::kConfig,
            "SAE topk must be in [1, K], got " + std::to_string(topk));
  }

  template <class U>
  SaeModel<U> cast() const {
    return SaeModel<U>(encoder.template cast<U>(), dictionary.template cast<U>(), topk, layer_index);
  }
};

namespace detail {

inline void check_feature_shape(const Shape& s, std::size_t channels, const char* what) {
  require(s.size() == 3 && s[0] == channels, ErrorKind::kShape,
          std::string(what) + " expects [" + std::to_string(channels) + ",H,W], got " + shape_str(s));
}

}  // namespace detail

/// Indices of the `k` largest entries of `values` (stride apart); ties go to
/// the lower index. Writes into `out`, which is resized to k.
template <class T>
void topk_indices(const T* values, std::size_t count, std::size_t stride, std::size_t k,
                  std::vector<std::size_t>& out) {
  out.resize(count);
  std::iota(out.begin(), out.end(), std::size_t{0});
  auto better = [&](std::size_t a, std::size_t b) {
    const T va = values[a * stride], vb = values[b * stride];
    return va > vb || (va == vb && a < b);
  };
  std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(k), out.end(), better);
  out.resize(k);
}

/// U = TopK(ReLU(W f)) at every position. `gate`, when given, receives the
/// frozen 0/1 factor so that U == gate * (W F) exactly.
template <class T>
Tensor<T> sae_encode(const Tensor<T>& features, const SaeModel<T>& sae, Tensor<T>* gate = nullptr) {
  detail::check_feature_shape(features.shape(), sae.channels(), "sae_encode");
  const std::size_t k = sae.latents();
  const std::size_t positions = features.dim(1) * features.dim(2);
  const Shape out_shape{k, features.dim(1), features.dim(2)};
  RowMatrix<T> pre = as_matrix(sae.encoder, k, sae.channels()) * as_matrix(features, sae.channels(), positions);

  Tensor<T> u(out_shape);
  if (gate) *gate = Tensor<T>(out_shape);
  std::vector<T> relu(k);
  std::vector<std::size_t> keep;
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t j = 0; j < k; ++j) relu[j] = std::max(pre(j, p), T(0));
    topk_indices(relu.data(), k, 1, sae.topk, keep);
    for (std::size_t j : keep) {
      if (pre(j, p) >= T(0)) {
        u[j * positions + p] = pre(j, p);
        if (gate) (*gate)[j * positions + p] = T(1);
      }
    }
  }
  return u;
}

/// Replays the frozen encoder map gate * (W F); bitwise equal to
/// sae_encode on the recorded features.
template <class T>
Tensor<T> sae_encode_frozen(const Tensor<T>& features, const Tensor<T>& gate, const SaeModel<T>& sae) {
  const std::size_t positions = features.dim(1) * features.dim(2);
  RowMatrix<T> pre = as_matrix(sae.encoder, sae.latents(), sae.channels()) *
                     as_matrix(features, sae.channels(), positions);
  Tensor<T> u(gate.shape());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = gate[i] != T(0) ? pre.data()[i] : T(0);
  return u;
}

/// F_breve = V^T u at every position.
template <class T>
Tensor<T> sae_decode(const Tensor<T>& codes, const SaeModel<T>& sae) {
  detail::check_feature_shape(codes.shape(), sae.latents(), "sae_decode");
  const std::size_t positions = codes.dim(1) * codes.dim(2);
  Tensor<T> f({sae.channels(), codes.dim(1), codes.dim(2)});
  as_matrix(f, sae.channels(), positions).noalias() =
      as_matrix(sae.dictionary, sae.latents(), sae.channels()).transpose() *
      as_matrix(codes, sae.latents(), positions);
  return f;
}

/// Transposed frozen encoder map: g_F = W^T (g_U * gate).
template <class T>
Tensor<T> sae_encode_vjp(const Tensor<T>& gate, const SaeModel<T>& sae, const Tensor<T>& g) {
  const std::size_t positions = g.dim(1) * g.dim(2);
  Tensor<T> out({sae.channels(), g.dim(1), g.dim(2)});
  as_matrix(out, sae.channels(), positions).noalias() =
      as_matrix(sae.encoder, sae.latents(), sae.channels()).transpose() *
      as_matrix(g, sae.latents(), positions).cwiseProduct(as_matrix(gate, sae.latents(), positions));
  return out;
}

/// Transposed decoder map: g_U = V g_F.
template <class T>
Tensor<T> sae_decode_vjp(const SaeModel<T>& sae, const Tensor<T>& g) {
  const std::size_t positions = g.dim(1) * g.dim(2);
  Tensor<T> out({sae.latents(), g.dim(1), g.dim(2)});
  as_matrix(out, sae.latents(), positions).noalias() =
      as_matrix(sae.dictionary, sae.latents(), sae.channels()) * as_matrix(g, sae.channels(), positions);
  return out;
}

}  // namespace fact
