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

// B-cos layers and the bias-free linear glue layers they compose with.
//
// Every layer offers three passes:
//   forward   y = f(x), optionally recording the frozen dynamic-linear factor
//   vjp       transpose of the frozen map W~(x); used by all faithful traces
//   backward  true gradient of f; used only for training

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "fact/error.hpp"
#include "fact/tensor.hpp"

namespace fact {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

template <class T>
MatrixMap<T> as_matrix(Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return MatrixMap<T>(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <class T>
ConstMatrixMap<T> as_matrix(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return ConstMatrixMap<T>(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

namespace detail {

/// Row-wise l2 normalization. A zero row has no direction and is rejected.
template <class T>
RowMatrix<T> normalized_rows(const Tensor<T>& weight, std::size_t rows, std::size_t cols,
                             RowMatrix<T>* norms_out = nullptr) {
  RowMatrix<T> w = as_matrix(weight, rows, cols);
  RowMatrix<T> norms(rows, 1);
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    const T n = w.row(r).norm();
    require(n > T(0) && std::isfinite(n), ErrorKind::kConfig,
            "B-cos weight row " + std::to_string(r) + " has zero or non-finite norm");
    norms(r, 0) = n;
    w.row(r) /= n;
  }
  if (norms_out) *norms_out = std::move(norms);
  return w;
}

/// |c|^(B-1) with the conventions |0|^0 = 1 and cosine 0 for a zero input.
template <class T>
T cosine_scale(T dot, T norm, double b) {
  if (b == 1.0) return T(1);
  if (!(norm > T(0))) return T(0);
  const T c = std::abs(dot / norm);
  if (b == 2.0) return c;
  return static_cast<T>(std::pow(c, static_cast<T>(b - 1.0)));
}

/// Shared kernel over a patch matrix `cols` [D x P]: dots = What * cols,
/// y = dots * scale per entry. Column norms are returned for backward.
template <class T>
void bcos_apply(const RowMatrix<T>& w_hat, const RowMatrix<T>& cols, double b, T* y, T* scales,
                RowMatrix<T>* dots_out = nullptr, std::vector<T>* norms_out = nullptr) {
  const Eigen::Index out = w_hat.rows();
  const Eigen::Index positions = cols.cols();
  RowMatrix<T> dots = w_hat * cols;
  std::vector<T> norms(static_cast<std::size_t>(positions));
  for (Eigen::Index p = 0; p < positions; ++p) norms[p] = cols.col(p).norm();
  for (Eigen::Index o = 0; o < out; ++o) {
    for (Eigen::Index p = 0; p < positions; ++p) {
      const T a = dots(o, p);
      const T s = cosine_scale(a, norms[p], b);
      y[o * positions + p] = a * s;
      if (scales) scales[o * positions + p] = s;
    }
  }
  if (dots_out) *dots_out = std::move(dots);
  if (norms_out) *norms_out = std::move(norms);
}

/// True gradient of the B-cos kernel. Accumulates into grad_weight (w.r.t.
/// the unnormalized weight, allocated if empty) and returns the gradient w.r.t. `cols`.
template <class T>
RowMatrix<T> bcos_backward(const Tensor<T>& weight, std::size_t rows, std::size_t dim,
                           const RowMatrix<T>& cols, double b, const T* grad_y,
                           Tensor<T>* grad_weight) {
  RowMatrix<T> norms_w;
  const RowMatrix<T> w_hat = normalized_rows(weight, rows, dim, &norms_w);
  const Eigen::Index positions = cols.cols();
  RowMatrix<T> dots = w_hat * cols;
  std::vector<T> n(static_cast<std::size_t>(positions));
  for (Eigen::Index p = 0; p < positions; ++p) n[p] = cols.col(p).norm();

  // y = a |a|^(B-1) n^(1-B):  dy/da = B s,  dy/dn = (1-B) y / n.
  RowMatrix<T> grad_dots(rows, positions);
  std::vector<T> grad_norm(static_cast<std::size_t>(positions), T(0));
  for (Eigen::Index o = 0; o < static_cast<Eigen::Index>(rows); ++o) {
    for (Eigen::Index p = 0; p < positions; ++p) {
      const T g = grad_y[o * positions + p];
      if (!(n[p] > T(0))) {
        grad_dots(o, p) = T(0);
        continue;
      }
      const T a = dots(o, p);
      const T s = cosine_scale(a, n[p], b);
      grad_dots(o, p) = g * static_cast<T>(b) * s;
      if (b != 1.0) grad_norm[p] += g * static_cast<T>(1.0 - b) * a * s / n[p];
    }
  }
  RowMatrix<T> grad_cols = w_hat.transpose() * grad_dots;
  for (Eigen::Index p = 0; p < positions; ++p) {
    if (n[p] > T(0) && grad_norm[p] != T(0)) grad_cols.col(p) += (grad_norm[p] / n[p]) * cols.col(p);
  }
  if (grad_weight) {
    // d(w_hat . x)/dw = (x - w_hat (w_hat . x)) / |w|
    if (grad_weight->shape() != weight.shape()) *grad_weight = Tensor<T>(weight.shape());
    RowMatrix<T> g_hat = grad_dots * cols.transpose();
    auto gw = as_matrix(*grad_weight, rows, dim);
    for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(rows); ++r) {
      const T proj = g_hat.row(r).dot(w_hat.row(r));
      gw.row(r) += (g_hat.row(r) - proj * w_hat.row(r)) / norms_w(r, 0);
    }
  }
  return grad_cols;
}

inline void check_exponent(double b) {
  require(std::isfinite(b) && b >= 1.0, ErrorKind::kConfig,
          "B-cos exponent must be >= 1, got " + std::to_string(b));
}

}  // namespace detail

/// Bias-free B-cos dense layer: y = (What x) * |cos(What; x)|^(B-1).
template <class T>
struct BcosLinear {
  Tensor<T> weight;  // [out, in]
  double b_exponent = 2.0;

  BcosLinear() = default;
  BcosLinear(Tensor<T> w, double b = 2.0) : weight(std::move(w)), b_exponent(b) { validate(); }

  std::size_t out_features() const { return weight.dim(0); }
  std::size_t in_features() const { return weight.dim(1); }

  void validate() const {
    require(weight.rank() == 2, ErrorKind::kConfig, "B-cos linear weight must be rank 2");
    detail::check_exponent(b_exponent);
    detail::normalized_rows(weight, out_features(), in_features());
  }

  Shape output_shape(const Shape& in) const {
    require(in.size() == 1 && in[0] == in_features(), ErrorKind::kConfig,
            "B-cos linear expects input [" + std::to_string(in_features()) + "], got " + shape_str(in));
    return {out_features()};
  }

  Tensor<T> forward(const Tensor<T>& x, Tensor<T>* scales) const {
    output_shape(x.shape());
    const auto w_hat = detail::normalized_rows(weight, out_features(), in_features());
    RowMatrix<T> cols = as_matrix(x, in_features(), 1);
    Tensor<T> y({out_features()});
    if (scales) *scales = Tensor<T>({out_features()});
    detail::bcos_apply(w_hat, cols, b_exponent, y.data(), scales ? scales->data() : nullptr);
    return y;
  }

  /// Frozen map (What * scales) x, bitwise identical to forward on the
  /// recorded input.
  Tensor<T> frozen_apply(const Tensor<T>& x, const Tensor<T>& scales) const {
    const auto w_hat = detail::normalized_rows(weight, out_features(), in_features());
    RowMatrix<T> dots = w_hat * RowMatrix<T>(as_matrix(x, in_features(), 1));
    Tensor<T> y({out_features()});
    for (std::size_t o = 0; o < out_features(); ++o) y[o] = dots(o, 0) * scales[o];
    return y;
  }

  Tensor<T> vjp(const Tensor<T>& x, const Tensor<T>& scales, const Tensor<T>& g) const {
    const auto w_hat = detail::normalized_rows(weight, out_features(), in_features());
    Eigen::Matrix<T, Eigen::Dynamic, 1> gs(out_features());
    for (std::size_t o = 0; o < out_features(); ++o) gs(o) = g[o] * scales[o];
    Tensor<T> out(x.shape());
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(out.data(), in_features()) = w_hat.transpose() * gs;
    return out;
  }

  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& g, Tensor<T>* grad_weight) const {
    RowMatrix<T> cols = as_matrix(x, in_features(), 1);
    RowMatrix<T> gc = detail::bcos_backward(weight, out_features(), in_features(), cols, b_exponent,
                                            g.data(), grad_weight);
    return Tensor<T>(x.shape(), std::vector<T>(gc.data(), gc.data() + gc.size()));
  }
};

/// Bias-free B-cos convolution. Each filter acts as one row of a B-cos
/// linear layer over zero-padded im2col patches.
template <class T>
struct BcosConv {
  Tensor<T> filters;  // [C_out, C_in, kh, kw]
  std::size_t stride = 1;
  std::size_t padding = 0;
  double b_exponent = 2.0;

  BcosConv() = default;
  BcosConv(Tensor<T> f, std::size_t s, std::size_t p, double b = 2.0)
      : filters(std::move(f)), stride(s), padding(p), b_exponent(b) {
    validate();
  }

  std::size_t out_channels() const { return filters.dim(0); }
  std::size_t in_channels() const { return filters.dim(1); }
  std::size_t kh() const { return filters.dim(2); }
  std::size_t kw() const { return filters.dim(3); }
  std::size_t patch_dim() const { return in_channels() * kh() * kw(); }

  void validate() const {
    require(filters.rank() == 4, ErrorKind::kConfig, "B-cos conv filters must be rank 4");
    require(stride >= 1, ErrorKind::kConfig, "conv stride must be >= 1");
    detail::check_exponent(b_exponent);
    detail::normalized_rows(filters, out_channels(), patch_dim());
  }

  Shape output_shape(const Shape& in) const {
    require(in.size() == 3 && in[0] == in_channels(), ErrorKind::kConfig,
            "B-cos conv expects [" + std::to_string(in_channels()) + ",H,W], got " + shape_str(in));
    require(in[1] + 2 * padding >= kh() && in[2] + 2 * padding >= kw(), ErrorKind::kShape,
            "conv kernel larger than padded input " + shape_str(in));
    return {out_channels(), (in[1] + 2 * padding - kh()) / stride + 1,
            (in[2] + 2 * padding - kw()) / stride + 1};
  }

  /// Zero-padded patch matrix [C_in*kh*kw, H'*W'].
  RowMatrix<T> im2col(const Tensor<T>& x) const {
    const Shape out = output_shape(x.shape());
    const std::size_t h = x.dim(1), w = x.dim(2), oh = out[1], ow = out[2];
    RowMatrix<T> cols = RowMatrix<T>::Zero(patch_dim(), oh * ow);
    for (std::size_t c = 0; c < in_channels(); ++c)
      for (std::size_t di = 0; di < kh(); ++di)
        for (std::size_t dj = 0; dj < kw(); ++dj) {
          const std::size_t row = (c * kh() + di) * kw() + dj;
          T* dst = cols.row(row).data();
          for (std::size_t i = 0; i < oh; ++i) {
            const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i * stride + di) - padding;
            if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t j = 0; j < ow; ++j) {
              const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j * stride + dj) - padding;
              if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(w)) continue;
              dst[i * ow + j] = x.at(c, static_cast<std::size_t>(si), static_cast<std::size_t>(sj));
            }
          }
        }
    return cols;
  }

  /// Adjoint of im2col: scatter-add patch gradients back onto the input.
  Tensor<T> col2im(const RowMatrix<T>& cols, const Shape& in) const {
    const Shape out = output_shape(in);
    const std::size_t h = in[1], w = in[2], oh = out[1], ow = out[2];
    Tensor<T> x(in);
    for (std::size_t c = 0; c < in_channels(); ++c)
      for (std::size_t di = 0; di < kh(); ++di)
        for (std::size_t dj = 0; dj < kw(); ++dj) {
          const std::size_t row = (c * kh() + di) * kw() + dj;
          const T* src = cols.row(row).data();
          for (std::size_t i = 0; i < oh; ++i) {
            const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i * stride + di) - padding;
            if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t j = 0; j < ow; ++j) {
              const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j * stride + dj) - padding;
              if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(w)) continue;
              x.at(c, static_cast<std::size_t>(si), static_cast<std::size_t>(sj)) += src[i * ow + j];
            }
          }
        }
    return x;
  }

  Tensor<T> forward(const Tensor<T>& x, Tensor<T>* scales) const {
    const Shape out = output_shape(x.shape());
    const auto w_hat = detail::normalized_rows(filters, out_channels(), patch_dim());
    const RowMatrix<T> cols = im2col(x);
    Tensor<T> y(out);
    if (scales) *scales = Tensor<T>(out);
    detail::bcos_apply(w_hat, cols, b_exponent, y.data(), scales ? scales->data() : nullptr);
    return y;
  }

  Tensor<T> frozen_apply(const Tensor<T>& x, const Tensor<T>& scales) const {
    const auto w_hat = detail::normalized_rows(filters, out_channels(), patch_dim());
    RowMatrix<T> dots = w_hat * im2col(x);
    Tensor<T> y(output_shape(x.shape()));
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = dots.data()[i] * scales[i];
    return y;
  }

  Tensor<T> vjp(const Tensor<T>& x, const Tensor<T>& scales, const Tensor<T>& g) const {
    const auto w_hat = detail::normalized_rows(filters, out_channels(), patch_dim());
    const std::size_t positions = g.size() / out_channels();
    RowMatrix<T> gs = as_matrix(g, out_channels(), positions).cwiseProduct(
        as_matrix(scales, out_channels(), positions));
    RowMatrix<T> gcols = w_hat.transpose() * gs;
    return col2im(gcols, x.shape());
  }

  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& g, Tensor<T>* grad_filters) const {
    const RowMatrix<T> cols = im2col(x);
    RowMatrix<T> gcols = detail::bcos_backward(filters, out_channels(), patch_dim(), cols,
                                               b_exponent, g.data(), grad_filters);
    return col2im(gcols, x.shape());
  }
};

/// ReLU with its 0/1 gate as frozen factor; the gate is 1 at exactly zero.
struct Relu {
  Shape output_shape(const Shape& in) const { return in; }

  template <class T>
  Tensor<T> forward(const Tensor<T>& x, Tensor<T>* gate) const {
    Tensor<T> y(x.shape());
    if (gate) *gate = Tensor<T>(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const bool on = x[i] >= T(0);
      y[i] = on ? x[i] : T(0);
      if (gate) (*gate)[i] = on ? T(1) : T(0);
    }
    return y;
  }

  template <class T>
  Tensor<T> frozen_apply(const Tensor<T>& x, const Tensor<T>& gate) const {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = gate[i] != T(0) ? x[i] : T(0);
    return y;
  }

  template <class T>
  Tensor<T> vjp(const Tensor<T>&, const Tensor<T>& gate, const Tensor<T>& g) const {
    Tensor<T> out(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i] * gate[i];
    return out;
  }

  template <class T>
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& g, Tensor<T>*) const {
    Tensor<T> out(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = x[i] >= T(0) ? g[i] : T(0);
    return out;
  }
};

/// Non-overlapping k x k average pooling (stride k).
struct AvgPool {
  std::size_t size = 2;

  Shape output_shape(const Shape& in) const {
    require(size >= 1, ErrorKind::kConfig, "pool size must be >= 1");
    require(in.size() == 3, ErrorKind::kConfig, "avg pool expects [C,H,W], got " + shape_str(in));
    require(in[1] % size == 0 && in[2] % size == 0, ErrorKind::kShape,
            "avg pool size " + std::to_string(size) + " does not divide " + shape_str(in));
    return {in[0], in[1] / size, in[2] / size};
  }

  template <class T>
  Tensor<T> forward(const Tensor<T>& x, Tensor<T>*) const {
    Tensor<T> y(output_shape(x.shape()));
    const T inv = T(1) / static_cast<T>(size * size);
    for (std::size_t c = 0; c < y.dim(0); ++c)
      for (std::size_t i = 0; i < y.dim(1); ++i)
        for (std::size_t j = 0; j < y.dim(2); ++j) {
          T s = T(0);
          for (std::size_t di = 0; di < size; ++di)
            for (std::size_t dj = 0; dj < size; ++dj) s += x.at(c, i * size + di, j * size + dj);
          y.at(c, i, j) = s * inv;
        }
    return y;
  }

  template <class T>
  Tensor<T> frozen_apply(const Tensor<T>& x, const Tensor<T>&) const {
    return forward(x, static_cast<Tensor<T>*>(nullptr));
  }
  template <class T>
  Tensor<T> vjp(const Tensor<T>& x, const Tensor<T>&, const Tensor<T>& g) const {
    Tensor<T> out(x.shape());
    const T inv = T(1) / static_cast<T>(size * size);
    for (std::size_t c = 0; c < out.dim(0); ++c)
      for (std::size_t i = 0; i < out.dim(1); ++i)
        for (std::size_t j = 0; j < out.dim(2); ++j) out.at(c, i, j) = g.at(c, i / size, j / size) * inv;
    return out;
  }

  template <class T>
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& g, Tensor<T>*) const {
    return vjp(x, Tensor<T>{}, g);
  }
};

struct Flatten {
  Shape output_shape(const Shape& in) const { return {numel(in)}; }

  template <class T>
  Tensor<T> forward(const Tensor<T>& x, Tensor<T>*) const {
    return x.reshaped({x.size()});
  }
  template <class T>
  Tensor<T> frozen_apply(const Tensor<T>& x, const Tensor<T>&) const {
    return forward(x, static_cast<Tensor<T>*>(nullptr));
  }
  template <class T>
  Tensor<T> vjp(const Tensor<T>& x, const Tensor<T>&, const Tensor<T>& g) const {
    return g.reshaped(x.shape());
  }
  template <class T>
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& g, Tensor<T>*) const {
    return g.reshaped(x.shape());
  }
};

/// [C,H,W] -> [C], summing each channel over all positions.
struct GlobalSumPool {
  Shape output_shape(const Shape& in) const {
    require(in.size() == 3, ErrorKind::kConfig, "global sum pool expects [C,H,W], got " + shape_str(in));
    return {in[0]};
  }

  template <class T>
  Tensor<T> forward(const Tensor<T>& x, Tensor<T>*) const {
    output_shape(x.shape());
    const std::size_t area = x.dim(1) * x.dim(2);
    Tensor<T> y({x.dim(0)});
    for (std::size_t c = 0; c < x.dim(0); ++c) {
      T s = T(0);
      for (std::size_t p = 0; p < area; ++p) s += x[c * area + p];
      y[c] = s;
    }
    return y;
  }
  template <class T>
  Tensor<T> frozen_apply(const Tensor<T>& x, const Tensor<T>&) const {
    return forward(x, static_cast<Tensor<T>*>(nullptr));
  }
  template <class T>
  Tensor<T> vjp(const Tensor<T>& x, const Tensor<T>&, const Tensor<T>& g) const {
    const std::size_t area = x.dim(1) * x.dim(2);
    Tensor<T> out(x.shape());
    for (std::size_t c = 0; c < x.dim(0); ++c)
      for (std::size_t p = 0; p < area; ++p) out[c * area + p] = g[c];
    return out;
  }
  template <class T>
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& g, Tensor<T>*) const {
    return vjp(x, Tensor<T>{}, g);
  }
};

template <class T>
using Layer = std::variant<BcosLinear<T>, BcosConv<T>, Relu, AvgPool, Flatten, GlobalSumPool>;

template <class T>
Tensor<T>* layer_params(Layer<T>& layer) {
  if (auto* l = std::get_if<BcosLinear<T>>(&layer)) return &l->weight;
  if (auto* c = std::get_if<BcosConv<T>>(&layer)) return &c->filters;
  return nullptr;
}

template <class T>
const Tensor<T>* layer_params(const Layer<T>& layer) {
  return layer_params(const_cast<Layer<T>&>(layer));
}

template <class T>
std::string layer_name(const Layer<T>& layer) {
  return std::visit(
      [](const auto& l) -> std::string {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, BcosLinear<T>>) return "bcos_linear";
        else if constexpr (std::is_same_v<L, BcosConv<T>>) return "bcos_conv";
        else if constexpr (std::is_same_v<L, Relu>) return "relu";
        else if constexpr (std::is_same_v<L, AvgPool>) return "avg_pool";
        else if constexpr (std::is_same_v<L, Flatten>) return "flatten";
        else return "global_sum_pool";
      },
      layer);
}

}  // namespace fact
