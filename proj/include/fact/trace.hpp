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

// Faithful decompositions of FaCT logits and concept activations: concept
// contributions, input attributions and cross-layer contributions. Every
// trace is a cotangent pulled back through the frozen maps of a record.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fact/error.hpp"
#include "fact/network.hpp"
#include "fact/tensor.hpp"

namespace fact {

enum class TraceTarget { kClass, kLateConcept };

template <class T>
struct ConceptTrace {
  TraceTarget target = TraceTarget::kClass;
  std::size_t target_id = 0;
  Tensor<T> contributions;  // [K]
  T total = T(0);
};

template <class T>
struct AttributionMap {
  Tensor<T> values;  // [3, H0, W0]
  std::size_t concept_id = 0;
  std::optional<std::size_t> class_id;
  T total = T(0);
};

/// Relative tolerance of the additivity identities for scalar type T.
template <class T>
constexpr double additivity_tolerance() {
  return sizeof(T) >= sizeof(double) ? 1e-9 : 1e-4;
}

template <class T>
bool within_tolerance(double sum, double total) {
  return std::abs(sum - total) <= additivity_tolerance<T>() * std::max(1.0, std::abs(total));
}

namespace detail {

template <class T>
void enforce_additive(double sum, double total, const std::string& what) {
  if (within_tolerance<T>(sum, total)) return;
  std::ostringstream os;
  os.precision(17);
  os << what << ": decomposition sums to " << sum << " but target is " << total;
  fail(ErrorKind::kNumeric, os.str());
}

/// Per-channel sums of cot ⊙ a over all spatial positions.
template <class T>
Tensor<T> channel_contributions(const Tensor<T>& cot, const Tensor<T>& a) {
  const std::size_t channels = a.dim(0), area = a.size() / channels;
  Tensor<T> out({channels});
  for (std::size_t k = 0; k < channels; ++k) {
    double acc = 0.0;
    for (std::size_t p = 0; p < area; ++p)
      acc += static_cast<double>(cot[k * area + p]) * static_cast<double>(a[k * area + p]);
    out[k] = static_cast<T>(acc);
  }
  return out;
}

template <class T>
double total_of(const Tensor<T>& t) {
  double acc = 0.0;
  for (T v : t.span()) acc += static_cast<double>(v);
  return acc;
}

/// Cotangent that is `weights` on channel k of a [K,H,W] tensor and 0 elsewhere.
template <class T>
Tensor<T> channel_cotangent(const Shape& shape, std::size_t k, const T* weights) {
  require(k < shape[0], ErrorKind::kIndex,
          "concept " + std::to_string(k) + " out of range for " + std::to_string(shape[0]) + " concepts");
  Tensor<T> cot(shape);
  const std::size_t area = cot.size() / shape[0];
  for (std::size_t p = 0; p < area; ++p) cot[k * area + p] = weights ? weights[k * area + p] : T(1);
  return cot;
}

/// Input-space map cot ⊙ x, collapsed to RGB for six-channel networks.
template <class T>
Tensor<T> input_contributions(const ForwardRecord<T>& rec, const Tensor<T>& input_cot) {
  const Tensor<T>& x = rec.input();
  Tensor<T> values(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) values[i] = input_cot[i] * x[i];
  return rec.net->six_channel() ? collapse_six_channel(values) : values;
}

template <class T>
void require_sae(const ForwardRecord<T>& rec, std::size_t slot) {
  require(rec.has_sae(), ErrorKind::kContract, "record was produced without an SAE bottleneck");
  rec.tap(slot);
}

}  // namespace detail

/// Contribution of every concept at SAE `slot` to logit `class_id`; the
/// contributions sum to the logit.
template <class T>
ConceptTrace<T> concept_contributions(const ForwardRecord<T>& rec, std::size_t class_id, std::size_t slot = 0) {
  detail::require_sae(rec, slot);
  const std::size_t u = rec.tap(slot).codes;
  const Tensor<T> cot = vjp_frozen(rec, rec.activations.size() - 1, u, logit_cotangent(rec, class_id));
  ConceptTrace<T> trace{TraceTarget::kClass, class_id, detail::channel_contributions(cot, rec.activations[u]),
                        rec.logits()[class_id]};
  detail::enforce_additive<T>(detail::total_of(trace.contributions), trace.total,
                              "concept contributions to class " + std::to_string(class_id));
  return trace;
}

/// Pixel contributions to the spatially summed activation of `concept_id`.
template <class T>
AttributionMap<T> concept_attribution(const ForwardRecord<T>& rec, std::size_t concept_id, std::size_t slot = 0) {
  detail::require_sae(rec, slot);
  const std::size_t u = rec.tap(slot).codes;
  const Tensor<T>& codes = rec.activations[u];
  Tensor<T> cot = detail::channel_cotangent<T>(codes.shape(), concept_id, nullptr);
  const std::size_t area = codes.size() / codes.dim(0);
  double activation = 0.0;
  for (std::size_t p = 0; p < area; ++p) activation += codes[concept_id * area + p];
  AttributionMap<T> map;
  map.concept_id = concept_id;
  map.total = static_cast<T>(activation);
  map.values = detail::input_contributions(rec, vjp_frozen(rec, u, 0, std::move(cot)));
  detail::enforce_additive<T>(detail::total_of(map.values), activation,
                              "attribution of concept " + std::to_string(concept_id));
  return map;
}

/// Pixel contributions to Contribution_k of `class_id`.
template <class T>
AttributionMap<T> contribution_attribution(const ForwardRecord<T>& rec, std::size_t concept_id, std::size_t class_id,
                                           std::size_t slot = 0) {
  detail::require_sae(rec, slot);
  const std::size_t u = rec.tap(slot).codes;
  const Tensor<T>& codes = rec.activations[u];
  const Tensor<T> downstream = vjp_frozen(rec, rec.activations.size() - 1, u, logit_cotangent(rec, class_id));
  Tensor<T> cot = detail::channel_cotangent<T>(codes.shape(), concept_id, downstream.data());
  const std::size_t area = codes.size() / codes.dim(0);
  double contribution = 0.0;
  for (std::size_t p = 0; p < area; ++p)
    contribution += static_cast<double>(cot[concept_id * area + p]) * codes[concept_id * area + p];
  AttributionMap<T> map;
  map.concept_id = concept_id;
  map.class_id = class_id;
  map.total = static_cast<T>(contribution);
  map.values = detail::input_contributions(rec, vjp_frozen(rec, u, 0, std::move(cot)));
  detail::enforce_additive<T>(detail::total_of(map.values), contribution,
                              "attribution of concept " + std::to_string(concept_id) + " contribution to class " +
                                  std::to_string(class_id));
  return map;
}

/// Contributions of early concepts (slot `early`) to the spatially summed
/// activation of late concept `late_concept_id` (slot `late`).
template <class T>
ConceptTrace<T> cross_layer_contributions(const ForwardRecord<T>& rec, std::size_t late_concept_id,
                                          std::size_t early = 0, std::size_t late = 1) {
  require(rec.sae_count() >= 2, ErrorKind::kContract,
          "cross-layer contributions need two SAEs, record has " + std::to_string(rec.sae_count()));
  require(early < late, ErrorKind::kContract, "early SAE slot must precede the late one");
  const std::size_t ue = rec.tap(early).codes, ug = rec.tap(late).codes;
  const Tensor<T>& late_codes = rec.activations[ug];
  const Tensor<T> cot =
      vjp_frozen(rec, ug, ue, detail::channel_cotangent<T>(late_codes.shape(), late_concept_id, nullptr));
  const std::size_t area = late_codes.size() / late_codes.dim(0);
  double activation = 0.0;
  for (std::size_t p = 0; p < area; ++p) activation += late_codes[late_concept_id * area + p];
  ConceptTrace<T> trace{TraceTarget::kLateConcept, late_concept_id,
                        detail::channel_contributions(cot, rec.activations[ue]), static_cast<T>(activation)};
  detail::enforce_additive<T>(detail::total_of(trace.contributions), activation,
                              "early contributions to late concept " + std::to_string(late_concept_id));
  return trace;
}

/// Full early x late matrix of cross-layer contributions, [K_late, K_early].
template <class T>
Tensor<T> cross_layer_matrix(const ForwardRecord<T>& rec, std::size_t early = 0, std::size_t late = 1) {
  const std::size_t kg = rec.codes(late).dim(0), kl = rec.codes(early).dim(0);
  Tensor<T> m({kg, kl});
  for (std::size_t c = 0; c < kg; ++c) {
    const ConceptTrace<T> t = cross_layer_contributions(rec, c, early, late);
    std::copy(t.contributions.data(), t.contributions.data() + kl, m.data() + c * kl);
  }
  return m;
}

/// Per-pixel spatial map (channel sum) of an attribution, [H, W].
template <class T>
std::vector<double> spatial_map(const AttributionMap<T>& map) {
  const std::size_t area = map.values.dim(1) * map.values.dim(2);
  std::vector<double> out(area, 0.0);
  for (std::size_t c = 0; c < map.values.dim(0); ++c)
    for (std::size_t p = 0; p < area; ++p) out[p] += map.values[c * area + p];
  return out;
}

}  // namespace fact
