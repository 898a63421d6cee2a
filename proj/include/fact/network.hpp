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
#include <string>
#include <variant>
#include <vector>

#include "fact/bcos.hpp"
#include "fact/error.hpp"
#include "fact/sae_model.hpp"
#include "fact/tensor.hpp"

namespace fact {

/// Ordered stack of bias-free layers mapping an input tensor to class logits.
template <class T>
class Network {
 public:
  Network() = default;
  Network(Shape input_shape, std::vector<Layer<T>> layers, std::size_t class_count,
          bool six_channel = true)
      : input_shape_(std::move(input_shape)),
        layers_(std::move(layers)),
        class_count_(class_count),
        six_channel_(six_channel) {
    validate();
  }

  const Shape& input_shape() const { return input_shape_; }
  std::size_t class_count() const { return class_count_; }
  std::size_t layer_count() const { return layers_.size(); }
  bool six_channel() const { return six_channel_; }
  const std::vector<Layer<T>>& layers() const { return layers_; }
  const Layer<T>& layer(std::size_t i) const { return layers_.at(i); }
  Layer<T>& mutable_layer(std::size_t i) { return layers_.at(i); }

  /// Output extents of layer i.
  const Shape& output_shape(std::size_t i) const { return shapes_.at(i + 1); }
  /// Input extents of layer i (layer_count() gives the logits shape).
  const Shape& input_shape_of(std::size_t i) const { return shapes_.at(i); }

  /// Recomputes the shape chain; throws on miswired layers or zero weights.
  void validate() {
    require(!layers_.empty(), ErrorKind::kConfig, "network has no layers");
    shapes_.assign(1, input_shape_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      try {
        std::visit(
            [&](const auto& l) {
              using L = std::decay_t<decltype(l)>;
              if constexpr (std::is_same_v<L, BcosLinear<T>> || std::is_same_v<L, BcosConv<T>>) l.validate();
              shapes_.push_back(l.output_shape(shapes_.back()));
            },
            layers_[i]);
      } catch (const Error& e) {
        fail(e.kind() == ErrorKind::kShape ? ErrorKind::kShape : ErrorKind::kConfig,
             "layer " + std::to_string(i) + " (" + layer_name(layers_[i]) + "): " + e.what());
      }
    }
    require(shapes_.back() == Shape{class_count_}, ErrorKind::kConfig,
            "network output " + shape_str(shapes_.back()) + " does not match class count " +
                std::to_string(class_count_));
  }

  template <class U>
  Network<U> cast() const {
    std::vector<Layer<U>> out;
    for (const auto& layer : layers_) {
      std::visit(
          [&](const auto& l) {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, BcosLinear<T>>)
              out.emplace_back(BcosLinear<U>(l.weight.template cast<U>(), l.b_exponent));
            else if constexpr (std::is_same_v<L, BcosConv<T>>)
              out.emplace_back(BcosConv<U>(l.filters.template cast<U>(), l.stride, l.padding, l.b_exponent));
            else
              out.emplace_back(l);
          },
          layer);
    }
    return Network<U>(input_shape_, std::move(out), class_count_, six_channel_);
  }

 private:
  Shape input_shape_;
  std::vector<Layer<T>> layers_;
  std::size_t class_count_ = 0;
  bool six_channel_ = true;
  std::vector<Shape> shapes_;
};

/// [r,g,b] -> [r,g,b,1-r,1-g,1-b].
template <class T>
Tensor<T> encode_six_channel(const Tensor<T>& rgb) {
  require(rgb.rank() == 3 && rgb.dim(0) == 3, ErrorKind::kShape,
          "six-channel encoding expects [3,H,W], got " + shape_str(rgb.shape()));
  const std::size_t area = rgb.dim(1) * rgb.dim(2);
  Tensor<T> out({6, rgb.dim(1), rgb.dim(2)});
  for (std::size_t i = 0; i < 3 * area; ++i) {
    out[i] = rgb[i];
    out[i + 3 * area] = T(1) - rgb[i];
  }
  return out;
}

/// Sums complementary channel pairs so per-pixel totals are preserved.
template <class T>
Tensor<T> collapse_six_channel(const Tensor<T>& map) {
  require(map.rank() == 3 && map.dim(0) == 6, ErrorKind::kShape,
          "collapse expects [6,H,W], got " + shape_str(map.shape()));
  const std::size_t area = map.dim(1) * map.dim(2);
  Tensor<T> out({3, map.dim(1), map.dim(2)});
  for (std::size_t i = 0; i < 3 * area; ++i) out[i] = map[i] + map[i + 3 * area];
  return out;
}

/// Network input for an RGB image in [0,1] under the network's encoding.
template <class T>
Tensor<T> prepare_input(const Network<T>& net, const Tensor<T>& rgb) {
  return net.six_channel() ? encode_six_channel(rgb) : rgb;
}

enum class StepKind { kLayer, kSaeEncode, kSaeDecode };

template <class T>
struct Step {
  StepKind kind = StepKind::kLayer;
  std::size_t index = 0;  // layer index, or SAE slot for encode/decode
  Tensor<T> frozen;       // B-cos scales, ReLU gate or TopK gate; empty for linear glue
};

/// Activation indices of one installed SAE inside a record.
struct SaeTap {
  std::size_t layer_index = 0;
  std::size_t features = 0;        // F
  std::size_t codes = 0;           // U
  std::size_t reconstruction = 0;  // F_breve
};

/// Everything needed to replay or trace one forward pass. activations[t] is
/// the input of steps[t]; activations.back() are the logits. The record
/// points at the network and SAEs that produced it, which must outlive it.
template <class T>
struct ForwardRecord {
  const Network<T>* net = nullptr;
  std::vector<const SaeModel<T>*> saes;
  std::vector<Tensor<T>> activations;
  std::vector<Step<T>> steps;
  std::vector<SaeTap> taps;
  std::vector<std::size_t> layer_inputs;  // activation index of each layer's input

  const Tensor<T>& input() const { return activations.front(); }
  const Tensor<T>& logits() const { return activations.back(); }
  bool has_sae() const { return !taps.empty(); }
  std::size_t sae_count() const { return taps.size(); }

  const SaeTap& tap(std::size_t slot) const {
    require(slot < taps.size(), ErrorKind::kContract,
            "record has " + std::to_string(taps.size()) + " SAEs, asked for slot " + std::to_string(slot));
    return taps[slot];
  }
  const Tensor<T>& features(std::size_t slot = 0) const { return activations[tap(slot).features]; }
  const Tensor<T>& codes(std::size_t slot = 0) const { return activations[tap(slot).codes]; }
  const Tensor<T>& reconstruction(std::size_t slot = 0) const {
    return activations[tap(slot).reconstruction];
  }
};

namespace detail {

template <class T>
std::vector<const SaeModel<T>*> sorted_saes(const Network<T>& net, std::vector<const SaeModel<T>*> saes) {
  std::sort(saes.begin(), saes.end(),
            [](const SaeModel<T>* a, const SaeModel<T>* b) { return a->layer_index < b->layer_index; });
  for (std::size_t s = 0; s < saes.size(); ++s) {
    const auto& sae = *saes[s];
    require(sae.layer_index < net.layer_count(), ErrorKind::kIndex,
            "SAE layer index " + std::to_string(sae.layer_index) + " outside network of " +
                std::to_string(net.layer_count()) + " layers");
    require(s == 0 || saes[s - 1]->layer_index != sae.layer_index, ErrorKind::kConfig,
            "two SAEs installed at layer " + std::to_string(sae.layer_index));
    const Shape& f = net.output_shape(sae.layer_index);
    require(f.size() == 3 && f[0] == sae.channels(), ErrorKind::kConfig,
            "SAE with " + std::to_string(sae.channels()) + " channels cannot bottleneck layer output " +
                shape_str(f));
  }
  return saes;
}

template <class T>
void check_input(const Network<T>& net, const Tensor<T>& x) {
  require(x.shape() == net.input_shape(), ErrorKind::kShape,
          "network input must be " + shape_str(net.input_shape()) + ", got " + shape_str(x.shape()));
}

}  // namespace detail

/// Forward pass with SAE bottlenecks: downstream of each SAE the network
/// consumes decode(encode(F)), never F.
template <class T>
ForwardRecord<T> fact_forward(const Network<T>& net, std::vector<const SaeModel<T>*> saes,
                              const Tensor<T>& input) {
  detail::check_input(net, input);
  ForwardRecord<T> rec;
  rec.net = &net;
  rec.saes = detail::sorted_saes(net, std::move(saes));
  rec.activations.push_back(input);
  std::size_t next_sae = 0;
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    rec.layer_inputs.push_back(rec.activations.size() - 1);
    Step<T> step{StepKind::kLayer, i, {}};
    Tensor<T> y = std::visit([&](const auto& l) { return l.forward(rec.activations.back(), &step.frozen); },
                             net.layer(i));
    rec.steps.push_back(std::move(step));
    rec.activations.push_back(std::move(y));
    if (next_sae < rec.saes.size() && rec.saes[next_sae]->layer_index == i) {
      const SaeModel<T>& sae = *rec.saes[next_sae];
      SaeTap tap{i, rec.activations.size() - 1, 0, 0};
      Step<T> enc{StepKind::kSaeEncode, next_sae, {}};
      Tensor<T> u = sae_encode(rec.activations.back(), sae, &enc.frozen);
      rec.steps.push_back(std::move(enc));
      rec.activations.push_back(std::move(u));
      tap.codes = rec.activations.size() - 1;
      rec.steps.push_back(Step<T>{StepKind::kSaeDecode, next_sae, {}});
      rec.activations.push_back(sae_decode(rec.activations.back(), sae));
      tap.reconstruction = rec.activations.size() - 1;
      rec.taps.push_back(tap);
      ++next_sae;
    }
  }
  for (const auto& a : rec.activations)
    require(a.all_finite(), ErrorKind::kNumeric, "non-finite activation in forward pass");
  return rec;
}

template <class T>
ForwardRecord<T> fact_forward(const Network<T>& net, const SaeModel<T>& sae, const Tensor<T>& input) {
  return fact_forward(net, std::vector<const SaeModel<T>*>{&sae}, input);
}

template <class T>
ForwardRecord<T> network_forward(const Network<T>& net, const Tensor<T>& input) {
  return fact_forward(net, std::vector<const SaeModel<T>*>{}, input);
}

/// Runs layers [first, end) on x without recording; SAEs installed at any of
/// those layers are applied.
template <class T>
Tensor<T> run_layers(const Network<T>& net, const std::vector<const SaeModel<T>*>& saes,
                     std::size_t first, Tensor<T> x) {
  for (std::size_t i = first; i < net.layer_count(); ++i) {
    x = std::visit([&](const auto& l) { return l.forward(x, static_cast<Tensor<T>*>(nullptr)); }, net.layer(i));
    for (const SaeModel<T>* sae : saes)
      if (sae->layer_index == i) x = sae_decode(sae_encode(x, *sae), *sae);
  }
  return x;
}

/// Logits only; no record is kept.
template <class T>
Tensor<T> predict(const Network<T>& net, const std::vector<const SaeModel<T>*>& saes, const Tensor<T>& input) {
  detail::check_input(net, input);
  return run_layers(net, saes, 0, input);
}

template <class T>
Tensor<T> predict(const Network<T>& net, const Tensor<T>& input) {
  return predict(net, std::vector<const SaeModel<T>*>{}, input);
}

/// Re-applies every frozen map to the recorded input. Equal to the recorded
/// logits bitwise.
template <class T>
Tensor<T> replay(const ForwardRecord<T>& rec) {
  Tensor<T> x = rec.input();
  for (const Step<T>& step : rec.steps) {
    switch (step.kind) {
      case StepKind::kLayer:
        x = std::visit([&](const auto& l) { return l.frozen_apply(x, step.frozen); },
                       rec.net->layer(step.index));
        break;
      case StepKind::kSaeEncode:
        x = sae_encode_frozen(x, step.frozen, *rec.saes[step.index]);
        break;
      case StepKind::kSaeDecode:
        x = sae_decode(x, *rec.saes[step.index]);
        break;
    }
  }
  return x;
}

/// Pulls a cotangent on activations[from] back to activations[to] through
/// the frozen linear maps, so that <result, a_to> == <cotangent, a_from> in
/// exact arithmetic. from == to is the empty composition.
template <class T>
Tensor<T> vjp_frozen(const ForwardRecord<T>& rec, std::size_t from, std::size_t to, Tensor<T> cotangent) {
  require(from < rec.activations.size() && to <= from, ErrorKind::kIndex,
          "vjp range [" + std::to_string(to) + ", " + std::to_string(from) + "] outside record of " +
              std::to_string(rec.activations.size()) + " activations");
  require(cotangent.shape() == rec.activations[from].shape(), ErrorKind::kShape,
          "cotangent " + shape_str(cotangent.shape()) + " does not match activation " +
              shape_str(rec.activations[from].shape()));
  for (std::size_t t = from; t > to; --t) {
    const Step<T>& step = rec.steps[t - 1];
    const Tensor<T>& x = rec.activations[t - 1];
    switch (step.kind) {
      case StepKind::kLayer:
        cotangent = std::visit([&](const auto& l) { return l.vjp(x, step.frozen, cotangent); },
                               rec.net->layer(step.index));
        break;
      case StepKind::kSaeEncode:
        cotangent = sae_encode_vjp(step.frozen, *rec.saes[step.index], cotangent);
        break;
      case StepKind::kSaeDecode:
        cotangent = sae_decode_vjp(*rec.saes[step.index], cotangent);
        break;
    }
  }
  return cotangent;
}

/// Unit cotangent on class c of the logits.
template <class T>
Tensor<T> logit_cotangent(const ForwardRecord<T>& rec, std::size_t class_id) {
  require(class_id < rec.logits().size(), ErrorKind::kIndex,
          "class " + std::to_string(class_id) + " outside " + std::to_string(rec.logits().size()) + " logits");
  Tensor<T> e(rec.logits().shape());
  e[class_id] = T(1);
  return e;
}

template <class T>
std::size_t argmax(std::span<const T> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// First index of the maximum.
template <class T>
std::size_t argmax(const Tensor<T>& t) {
  return argmax(std::span<const T>(t.data(), t.size()));
}

}  // namespace fact
