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

// Concept-level metrics: activation tables, C2 score with its random
// baseline, label entropy, spatial size and l0 statistics.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "fact/dataset.hpp"
#include "fact/embedding.hpp"
#include "fact/network.hpp"
#include "fact/parallel.hpp"
#include "fact/rng.hpp"
#include "fact/trace.hpp"

namespace fact {

/// Spatially summed concept activations, one row per concept.
struct ConceptActivationTable {
  Tensor<double> activations;  // [K, N]
  std::vector<std::uint32_t> labels;

  std::size_t concepts() const { return activations.dim(0); }
  std::size_t images() const { return activations.dim(1); }
  double at(std::size_t k, std::size_t n) const { return activations[k * images() + n]; }

  /// Activation shares of concept k over `subset`, summing to 1 (all zero if
  /// the concept never fires there).
  std::vector<double> shares(std::size_t k, const std::vector<std::size_t>& subset) const {
    std::vector<double> s;
    double total = 0.0;
    for (std::size_t n : subset) {
      s.push_back(std::max(at(k, n), 0.0));
      total += s.back();
    }
    if (total > 0.0)
      for (auto& v : s) v /= total;
    return s;
  }
};

template <class T>
std::vector<double> concept_totals(const ForwardRecord<T>& rec, std::size_t slot = 0) {
  const Tensor<T>& u = rec.codes(slot);
  const std::size_t area = u.size() / u.dim(0);
  std::vector<double> out(u.dim(0), 0.0);
  for (std::size_t k = 0; k < u.dim(0); ++k)
    for (std::size_t p = 0; p < area; ++p) out[k] += u[k * area + p];
  return out;
}

template <class T>
ConceptActivationTable build_activation_table(const Network<T>& net, const SaeModel<T>& sae,
                                              const LabeledImages& data, std::size_t threads = 1) {
  ConceptActivationTable table{Tensor<double>({sae.latents(), data.size()}), data.labels};
  parallel_for(data.size(), threads, [&](std::size_t n) {
    const auto rec = fact_forward(net, sae, prepare_input(net, data.image<T>(n)));
    const auto totals = concept_totals(rec);
    for (std::size_t k = 0; k < totals.size(); ++k) table.activations[k * data.size() + n] = totals[k];
  });
  return table;
}

struct ConceptSelection {
  std::vector<std::size_t> images;  // by decreasing activation
  std::size_t activating = 0;
  bool discarded = false;
};

inline constexpr std::size_t kMinSelected = 10;
inline constexpr double kTopFraction = 0.05;
inline constexpr std::size_t kMinActivating = 5;

/// Top 5% of activating images, at least 10 (all of them if fewer). Concepts
/// firing on fewer than 5 images are flagged discarded.
inline ConceptSelection select_concept_images(const ConceptActivationTable& table, std::size_t k) {
  require(k < table.concepts(), ErrorKind::kIndex, "concept index out of range");
  std::vector<std::size_t> active;
  for (std::size_t n = 0; n < table.images(); ++n)
    if (table.at(k, n) > 0.0) active.push_back(n);
  std::stable_sort(active.begin(), active.end(),
                   [&](std::size_t a, std::size_t b) { return table.at(k, a) > table.at(k, b); });
  ConceptSelection sel;
  sel.activating = active.size();
  sel.discarded = active.size() < kMinActivating;
  const auto top = static_cast<std::size_t>(std::ceil(kTopFraction * static_cast<double>(active.size())));
  active.resize(std::min(active.size(), std::max(kMinSelected, top)));
  sel.images = std::move(active);
  return sel;
}

/// Positive part normalized to unit mass; nullopt when nothing is positive.
inline std::optional<std::vector<double>> normalize_attribution(const std::vector<double>& raw) {
  std::vector<double> out(raw.size());
  double total = 0.0;
  for (std::size_t p = 0; p < raw.size(); ++p) total += (out[p] = std::max(raw[p], 0.0));
  if (!(total > 0.0)) return std::nullopt;
  for (auto& v : out) v /= total;
  return out;
}

/// Attribution-weighted embedding sum over pixels.
inline std::vector<double> concept_embedding(const EmbeddingField& field, const std::vector<double>& attr) {
  const std::size_t dims = field.dims(), area = field.values.size() / dims;
  require(attr.size() == area, ErrorKind::kShape,
          "attribution has " + std::to_string(attr.size()) + " pixels, embedding field has " + std::to_string(area));
  std::vector<double> e(dims, 0.0);
  for (std::size_t d = 0; d < dims; ++d)
    for (std::size_t p = 0; p < area; ++p) e[d] += static_cast<double>(field.values[d * area + p]) * attr[p];
  return e;
}

/// Cosine similarity; 0 when either vector is zero.
inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return aa > 0.0 && bb > 0.0 ? ab / std::sqrt(aa * bb) : 0.0;
}

/// sum over ordered pairs I != J of S_I S_J cos(E_I, E_J), with S renormalized
/// to unit sum. nullopt for fewer than two embeddings.
inline std::optional<double> concept_consistency(const std::vector<std::vector<double>>& embeddings,
                                                 std::vector<double> shares) {
  require(embeddings.size() == shares.size(), ErrorKind::kShape, "one share per embedding required");
  if (embeddings.size() < 2) return std::nullopt;
  const double total = std::accumulate(shares.begin(), shares.end(), 0.0);
  if (!(total > 0.0)) return std::nullopt;
  for (auto& s : shares) s /= total;
  double acc = 0.0;
  for (std::size_t i = 0; i < embeddings.size(); ++i)
    for (std::size_t j = i + 1; j < embeddings.size(); ++j)
      acc += 2.0 * shares[i] * shares[j] * cosine(embeddings[i], embeddings[j]);
  return acc;
}

/// Consistency of one concept from its raw signed spatial maps over the
/// chosen images. Maps without positive mass leave the pair set.
inline std::optional<double> consistency_from_maps(const std::vector<const EmbeddingField*>& fields,
                                                   const std::vector<std::vector<double>>& raw_maps,
                                                   const std::vector<double>& activations) {
  require(fields.size() == raw_maps.size() && fields.size() == activations.size(), ErrorKind::kShape,
          "fields, maps and activations must align");
  std::vector<std::vector<double>> embeddings;
  std::vector<double> shares;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const auto attr = normalize_attribution(raw_maps[i]);
    if (!attr) continue;
    embeddings.push_back(concept_embedding(*fields[i], *attr));
    shares.push_back(std::max(activations[i], 0.0));
  }
  return concept_consistency(embeddings, shares);
}

/// Random attribution: uniform values, zeroed below a uniform threshold.
inline std::vector<double> random_attribution(std::size_t pixels, Rng& rng) {
  std::vector<double> a(pixels);
  for (auto& v : a) v = rng.uniform();
  const double threshold = rng.uniform();
  for (auto& v : a)
    if (v < threshold) v = 0.0;
  return a;
}

inline const std::vector<std::uint64_t> kDefaultBaselineSeeds = {0, 1, 2};

/// Consistency of a concept with random attribution maps and uniform shares,
/// averaged over seeds.
inline double random_baseline(const std::vector<EmbeddingField>& fields,
                              const std::vector<std::uint64_t>& seeds = kDefaultBaselineSeeds) {
  require(fields.size() >= 2, ErrorKind::kContract, "random baseline needs at least two images");
  require(!seeds.empty(), ErrorKind::kConfig, "random baseline needs at least one seed");
  double acc = 0.0;
  for (std::uint64_t seed : seeds) {
    Rng rng(seed, "random_baseline");
    std::vector<const EmbeddingField*> ptrs;
    std::vector<std::vector<double>> maps;
    for (const auto& f : fields) {
      ptrs.push_back(&f);
      maps.push_back(random_attribution(f.values.size() / f.dims(), rng));
    }
    acc += consistency_from_maps(ptrs, maps, std::vector<double>(fields.size(), 1.0)).value_or(0.0);
  }
  return acc / static_cast<double>(seeds.size());
}

struct C2Result {
  std::vector<std::optional<double>> scores;  // nullopt for discarded or undefined concepts
  double mean = 0.0;
  double baseline = 0.0;
  std::size_t scored = 0;
};

inline C2Result c2_score(const std::vector<std::optional<double>>& consistencies, double baseline) {
  C2Result r;
  r.baseline = baseline;
  double acc = 0.0;
  for (const auto& c : consistencies) {
    r.scores.push_back(c ? std::optional<double>(*c - baseline) : std::nullopt);
    if (c) {
      acc += *c - baseline;
      ++r.scored;
    }
  }
  require(r.scored > 0, ErrorKind::kContract, "no concept left to score after discards");
  r.mean = acc / static_cast<double>(r.scored);
  return r;
}

/// Entropy (nats) of a concept's activation mass over labels; nullopt when
/// the concept never fires.
inline std::optional<double> label_entropy(const ConceptActivationTable& table, std::size_t k,
                                           std::size_t label_count) {
  std::vector<double> mass(label_count, 0.0);
  double total = 0.0;
  for (std::size_t n = 0; n < table.images(); ++n) {
    require(table.labels[n] < label_count, ErrorKind::kIndex, "label out of range");
    const double a = std::max(table.at(k, n), 0.0);
    mass[table.labels[n]] += a;
    total += a;
  }
  if (!(total > 0.0)) return std::nullopt;
  double h = 0.0;
  for (double m : mass)
    if (m > 0.0) h -= (m / total) * std::log(m / total);
  return std::max(h, 0.0);
}

inline constexpr double kCoverage = 0.8;
inline constexpr double kCoverageEpsilon = 1e-9;

namespace detail {

/// Fewest largest values whose sum reaches `fraction` of the total.
inline std::size_t coverage_count(std::vector<double> values, double fraction) {
  double total = 0.0;
  for (double v : values) total += v;
  if (!(total > 0.0)) return 0;
  std::sort(values.begin(), values.end(), std::greater<>());
  const double goal = fraction * total * (1.0 - kCoverageEpsilon);
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    acc += values[i];
    if (acc >= goal) return i + 1;
  }
  return values.size();
}

}  // namespace detail

/// Pixels needed to cover 80% of the positive mass of one map; nullopt when
/// there is no positive mass.
inline std::optional<std::size_t> spatial_size_of(const std::vector<double>& raw_map) {
  std::vector<double> pos(raw_map.size());
  for (std::size_t p = 0; p < raw_map.size(); ++p) pos[p] = std::max(raw_map[p], 0.0);
  const std::size_t n = detail::coverage_count(std::move(pos), kCoverage);
  return n == 0 ? std::nullopt : std::optional<std::size_t>(n);
}

/// Mean spatial size over maps with positive mass.
inline std::optional<double> spatial_size(const std::vector<std::vector<double>>& raw_maps) {
  double acc = 0.0;
  std::size_t counted = 0;
  for (const auto& m : raw_maps)
    if (auto s = spatial_size_of(m)) {
      acc += static_cast<double>(*s);
      ++counted;
    }
  if (counted == 0) return std::nullopt;
  return acc / static_cast<double>(counted);
}

/// Concepts with nonzero total activation.
template <class T>
std::size_t per_image_l0(const ForwardRecord<T>& rec, std::size_t slot = 0) {
  std::size_t n = 0;
  for (double v : concept_totals(rec, slot)) n += v != 0.0;
  return n;
}

/// Fewest top positive contributors covering `threshold` of the positive
/// contribution to class_id.
template <class T>
std::size_t explanation_l0(const ForwardRecord<T>& rec, std::size_t class_id, double threshold = kCoverage,
                           std::size_t slot = 0) {
  const ConceptTrace<T> trace = concept_contributions(rec, class_id, slot);
  std::vector<double> pos;
  for (T v : trace.contributions.span())
    if (v > T(0)) pos.push_back(static_cast<double>(v));
  return detail::coverage_count(std::move(pos), threshold);
}

}  // namespace fact
