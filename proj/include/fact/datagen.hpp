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

// Synthetic concept scenes with ground-truth masks. Class labels are a
// deterministic function of which concepts appear, and every concept used by
// a class rule is shared by two classes.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fact/dataset.hpp"
#include "fact/error.hpp"
#include "fact/rng.hpp"
#include "fact/tensor.hpp"

namespace fact {

enum class ConceptKind { kSquare, kCircle, kTriangle, kCross, kStripes, kChecker };

struct ConceptSpec {
  std::string name;
  ConceptKind kind = ConceptKind::kSquare;
  std::array<float, 3> color{1.f, 1.f, 1.f};
  std::array<float, 3> color2{0.f, 0.f, 0.f};  // second texture color
};

struct SceneSpec {
  std::size_t height = 32;
  std::size_t width = 32;
  std::vector<ConceptSpec> concepts;
  std::vector<std::vector<std::size_t>> class_rules;  // concept ids per class
  std::vector<std::size_t> distractors;                // concepts outside every rule
  double distractor_prob = 0.3;
  std::size_t min_size = 8;
  std::size_t max_size = 12;
  double noise_sigma = 0.02;
  float background_lo = 0.25f;
  float background_hi = 0.55f;

  std::size_t class_count() const { return class_rules.size(); }

  /// 8 concepts (6 colored shapes, 2 textures) and 5 classes whose two-concept
  /// rules form a cycle, so each rule concept is shared by two classes.
  static SceneSpec defaults() {
    SceneSpec s;
    s.concepts = {
        {"red_square", ConceptKind::kSquare, {0.9f, 0.1f, 0.1f}, {}},
        {"blue_circle", ConceptKind::kCircle, {0.1f, 0.2f, 0.9f}, {}},
        {"green_triangle", ConceptKind::kTriangle, {0.1f, 0.8f, 0.2f}, {}},
        {"yellow_cross", ConceptKind::kCross, {0.95f, 0.9f, 0.1f}, {}},
        {"red_circle", ConceptKind::kCircle, {0.9f, 0.1f, 0.1f}, {}},
        {"blue_square", ConceptKind::kSquare, {0.1f, 0.2f, 0.9f}, {}},
        {"stripes", ConceptKind::kStripes, {0.95f, 0.95f, 0.95f}, {0.05f, 0.05f, 0.05f}},
        {"checker", ConceptKind::kChecker, {0.95f, 0.6f, 0.1f}, {0.2f, 0.05f, 0.4f}},
    };
    s.class_rules = {{0, 1}, {1, 2}, {2, 6}, {6, 7}, {7, 0}};
    s.distractors = {3, 4, 5};
    return s;
  }

  void validate() const {
    require(!class_rules.empty(), ErrorKind::kConfig, "scene spec has no classes");
    std::set<std::size_t> in_rules;
    for (std::size_t c = 0; c < class_rules.size(); ++c) {
      require(class_rules[c].size() >= 2, ErrorKind::kConfig,
              "class rule " + std::to_string(c) + " references fewer than 2 concepts");
      for (std::size_t k : class_rules[c]) {
        require(k < concepts.size(), ErrorKind::kConfig,
                "class rule " + std::to_string(c) + " references missing concept " + std::to_string(k));
        in_rules.insert(k);
      }
      for (std::size_t d = 0; d < c; ++d)
        require(std::set<std::size_t>(class_rules[c].begin(), class_rules[c].end()) !=
                    std::set<std::size_t>(class_rules[d].begin(), class_rules[d].end()),
                ErrorKind::kConfig, "class rules " + std::to_string(d) + " and " + std::to_string(c) + " coincide");
    }
    for (std::size_t k : distractors) {
      require(k < concepts.size(), ErrorKind::kConfig, "distractor references missing concept " + std::to_string(k));
      require(!in_rules.count(k), ErrorKind::kConfig, "distractor " + std::to_string(k) + " is used by a class rule");
    }
    require(min_size >= 3 && min_size <= max_size && max_size <= std::min(height, width), ErrorKind::kConfig,
            "concept size range is invalid for the canvas");
  }
};

/// Class whose rule concepts are all present while no other rule's are.
/// Empty when no rule or more than one rule matches.
inline std::optional<std::size_t> label_from_presence(const SceneSpec& spec, const std::vector<bool>& present) {
  std::optional<std::size_t> found;
  for (std::size_t c = 0; c < spec.class_count(); ++c) {
    const auto& rule = spec.class_rules[c];
    if (std::all_of(rule.begin(), rule.end(), [&](std::size_t k) { return present.at(k); })) {
      if (found) return std::nullopt;
      found = c;
    }
  }
  return found;
}

namespace detail {

inline bool concept_covers(ConceptKind kind, std::size_t size, std::size_t di, std::size_t dj) {
  const double s = static_cast<double>(size);
  const double y = di + 0.5, x = dj + 0.5;
  switch (kind) {
    case ConceptKind::kSquare:
    case ConceptKind::kStripes:
    case ConceptKind::kChecker:
      return true;
    case ConceptKind::kCircle: {
      const double r = s / 2.0;
      return (y - r) * (y - r) + (x - r) * (x - r) <= r * r;
    }
    case ConceptKind::kTriangle:
      // apex at top centre, base along the bottom row
      return std::abs(x - s / 2.0) <= (y / s) * (s / 2.0);
    case ConceptKind::kCross: {
      const double t = s / 3.0;
      return (y >= t && y <= 2 * t) || (x >= t && x <= 2 * t);
    }
  }
  return false;
}

inline std::array<float, 3> concept_color(const ConceptSpec& c, std::size_t di, std::size_t dj) {
  if (c.kind == ConceptKind::kStripes) return (di / 2) % 2 == 0 ? c.color : c.color2;
  if (c.kind == ConceptKind::kChecker) return ((di / 2) + (dj / 2)) % 2 == 0 ? c.color : c.color2;
  return c.color;
}

struct Placement {
  std::size_t concept_id, top, left, size;
};

}  // namespace detail

/// Class-balanced dataset: image n has label n % classes. Each image draws
/// from its own substream, so generation is order-independent.
inline LabeledImages generate_dataset(const SceneSpec& spec, std::size_t n_per_class, std::uint64_t seed,
                                      const std::string& split = "train") {
  spec.validate();
  require(n_per_class >= 1, ErrorKind::kContract, "n_per_class must be >= 1");
  const std::size_t classes = spec.class_count(), n = classes * n_per_class;
  const std::size_t h = spec.height, w = spec.width, area = h * w, kc = spec.concepts.size();
  LabeledImages out;
  out.split = split;
  out.images = Tensor<float>({n, 3, h, w});
  out.masks = Tensor<std::uint8_t>({n, kc, h, w});
  out.labels.resize(n);

  for (std::size_t img = 0; img < n; ++img) {
    Rng rng(derive_seed(seed, img));
    const std::size_t label = img % classes;
    out.labels[img] = static_cast<std::uint32_t>(label);

    std::vector<std::size_t> todo = spec.class_rules[label];
    for (std::size_t d : spec.distractors)
      if (rng.bernoulli(spec.distractor_prob)) todo.push_back(d);
    rng.shuffle(todo.begin(), todo.end());

    std::vector<detail::Placement> placed;
    for (std::size_t k : todo) {
      detail::Placement best{};
      bool ok = false;
      for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
        const std::size_t size = spec.min_size + rng.below(spec.max_size - spec.min_size + 1);
        const std::size_t top = rng.below(h - size + 1), left = rng.below(w - size + 1);
        best = {k, top, left, size};
        ok = std::none_of(placed.begin(), placed.end(), [&](const detail::Placement& p) {
          return top < p.top + p.size + 1 && p.top < top + size + 1 && left < p.left + p.size + 1 &&
                 p.left < left + size + 1;
        });
      }
      placed.push_back(best);  // overlap, if any, resolves to the later draw
    }

    float* px = out.images.data() + img * 3 * area;
    const float bg = static_cast<float>(rng.uniform(spec.background_lo, spec.background_hi));
    const std::array<float, 3> bg_rgb{bg, bg * 0.95f, bg * 0.9f};
    std::vector<int> owner(area, -1);
    for (std::size_t p = 0; p < area; ++p)
      for (std::size_t c = 0; c < 3; ++c) px[c * area + p] = bg_rgb[c];
    for (const auto& pl : placed) {
      const ConceptSpec& cs = spec.concepts[pl.concept_id];
      for (std::size_t di = 0; di < pl.size; ++di)
        for (std::size_t dj = 0; dj < pl.size; ++dj) {
          if (!detail::concept_covers(cs.kind, pl.size, di, dj)) continue;
          const std::size_t p = (pl.top + di) * w + (pl.left + dj);
          const auto col = detail::concept_color(cs, di, dj);
          for (std::size_t c = 0; c < 3; ++c) px[c * area + p] = col[c];
          owner[p] = static_cast<int>(pl.concept_id);
        }
    }
    std::uint8_t* mk = out.masks.data() + img * kc * area;
    for (std::size_t p = 0; p < area; ++p)
      if (owner[p] >= 0) mk[static_cast<std::size_t>(owner[p]) * area + p] = 1;
    for (std::size_t i = 0; i < 3 * area; ++i)
      px[i] = std::clamp(static_cast<float>(px[i] + spec.noise_sigma * rng.normal()), 0.f, 1.f);

    std::vector<bool> present(kc, false);
    for (std::size_t k = 0; k < kc; ++k)
      present[k] = std::any_of(mk + k * area, mk + (k + 1) * area, [](std::uint8_t v) { return v != 0; });
    const auto recovered = label_from_presence(spec, present);
    require(recovered && *recovered == label, ErrorKind::kContract,
            "generated image " + std::to_string(img) + " does not satisfy its class rule");
  }
  return out;
}

/// Presence flags of every concept on image n.
inline std::vector<bool> concept_presence(const LabeledImages& data, std::size_t n) {
  std::vector<bool> present(data.concept_count(), false);
  const std::size_t area = data.height() * data.width();
  for (std::size_t k = 0; k < present.size(); ++k) {
    const std::uint8_t* m = data.masks.data() + (n * data.concept_count() + k) * area;
    present[k] = std::any_of(m, m + area, [](std::uint8_t v) { return v != 0; });
  }
  return present;
}

/// Per-pixel concept id: 0 for background, k + 1 for concept k.
inline std::vector<std::size_t> concept_id_map(const LabeledImages& data, std::size_t n) {
  const std::size_t area = data.height() * data.width();
  std::vector<std::size_t> ids(area, 0);
  for (std::size_t k = 0; k < data.concept_count(); ++k) {
    const std::uint8_t* m = data.masks.data() + (n * data.concept_count() + k) * area;
    for (std::size_t p = 0; p < area; ++p)
      if (m[p]) ids[p] = k + 1;
  }
  return ids;
}

}  // namespace fact
