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

// Concept deletion curves and the per-concept importance measures that
// order them.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "fact/dataset.hpp"
#include "fact/metrics.hpp"
#include "fact/network.hpp"
#include "fact/parallel.hpp"
#include "fact/rng.hpp"
#include "fact/trace.hpp"

namespace fact {

enum class Ordering { kContribution, kSaliency, kSobol, kActivation, kRandom };

inline Ordering parse_ordering(std::string_view s) {
  if (s == "contribution") return Ordering::kContribution;
  if (s == "saliency") return Ordering::kSaliency;
  if (s == "sobol") return Ordering::kSobol;
  if (s == "activation") return Ordering::kActivation;
  if (s == "random") return Ordering::kRandom;
  fail(ErrorKind::kConfig, "unknown ordering '" + std::string(s) +
                               "' (expected contribution, saliency, sobol, activation or random)");
}

inline const char* ordering_name(Ordering o) {
  switch (o) {
    case Ordering::kContribution: return "contribution";
    case Ordering::kSaliency: return "saliency";
    case Ordering::kSobol: return "sobol";
    case Ordering::kActivation: return "activation";
    case Ordering::kRandom: return "random";
  }
  return "?";
}

/// |d logit / d concept total| under frozen downstream maps: per concept the
/// absolute spatial sum of the logit cotangent at U.
template <class T>
Tensor<T> importance_saliency(const ForwardRecord<T>& rec, std::size_t class_id, std::size_t slot = 0) {
  detail::require_sae(rec, slot);
  const std::size_t u = rec.tap(slot).codes;
  const Tensor<T> cot = vjp_frozen(rec, rec.activations.size() - 1, u, logit_cotangent(rec, class_id));
  const std::size_t k = cot.dim(0), area = cot.size() / k;
  Tensor<T> out({k});
  for (std::size_t c = 0; c < k; ++c) {
    double acc = 0.0;
    for (std::size_t p = 0; p < area; ++p) acc += cot[c * area + p];
    out[c] = static_cast<T>(std::abs(acc));
  }
  return out;
}

/// Logit of class_id when concept channels of U are scaled by `mask`.
template <class T>
T masked_logit(const Network<T>& net, const SaeModel<T>& sae, const Tensor<T>& codes, const std::vector<T>& mask,
               std::size_t class_id) {
  Tensor<T> u = codes;
  const std::size_t area = u.size() / u.dim(0);
  for (std::size_t k = 0; k < u.dim(0); ++k)
    if (mask[k] != T(1))
      for (std::size_t p = 0; p < area; ++p) u[k * area + p] *= mask[k];
  return run_layers(net, {}, sae.layer_index + 1, sae_decode(u, sae))[class_id];
}

struct SobolOptions {
  std::size_t designs = 4;
  std::uint64_t seed = 0;
  std::size_t max_forward_passes = 200000;
};

inline std::size_t sobol_forward_passes(std::size_t designs, std::size_t concepts) {
  return designs * (concepts + 2);
}

/// Total-order Sobol indices of the logit under Bernoulli(1/2) concept
/// masking, Jansen estimator: S_k = E[(f(A) - f(A_B^k))^2] / (2 Var f).
template <class T>
Tensor<T> importance_sobol(const Network<T>& net, const SaeModel<T>& sae, const ForwardRecord<T>& rec,
                           std::size_t class_id, const SobolOptions& opt = {}) {
  require(opt.designs >= 2, ErrorKind::kConfig, "Sobol estimation needs at least 2 designs");
  const Tensor<T>& codes = rec.codes(0);
  const std::size_t k = codes.dim(0), n = opt.designs;
  const std::size_t passes = sobol_forward_passes(n, k);
  require(passes <= opt.max_forward_passes, ErrorKind::kContract,
          "Sobol estimation needs " + std::to_string(passes) + " forward passes, budget is " +
              std::to_string(opt.max_forward_passes));
  Rng rng(opt.seed, "sobol");
  std::vector<std::vector<T>> a(n, std::vector<T>(k)), b(n, std::vector<T>(k));
  for (std::size_t d = 0; d < n; ++d)
    for (std::size_t c = 0; c < k; ++c) {
      a[d][c] = rng.bernoulli(0.5) ? T(1) : T(0);
      b[d][c] = rng.bernoulli(0.5) ? T(1) : T(0);
    }
  std::vector<double> fa(n), fb(n);
  for (std::size_t d = 0; d < n; ++d) {
    fa[d] = masked_logit(net, sae, codes, a[d], class_id);
    fb[d] = masked_logit(net, sae, codes, b[d], class_id);
  }
  double mean = 0.0, var = 0.0;
  for (std::size_t d = 0; d < n; ++d) mean += fa[d] + fb[d];
  mean /= static_cast<double>(2 * n);
  for (std::size_t d = 0; d < n; ++d) var += (fa[d] - mean) * (fa[d] - mean) + (fb[d] - mean) * (fb[d] - mean);
  var /= static_cast<double>(2 * n - 1);
  Tensor<T> out({k});
  if (!(var > 0.0)) return out;
  for (std::size_t c = 0; c < k; ++c) {
    double acc = 0.0;
    for (std::size_t d = 0; d < n; ++d) {
      if (a[d][c] == b[d][c]) continue;
      std::vector<T> mix = a[d];
      mix[c] = b[d][c];
      const double diff = fa[d] - static_cast<double>(masked_logit(net, sae, codes, mix, class_id));
      acc += diff * diff;
    }
    out[c] = static_cast<T>(acc / (2.0 * static_cast<double>(n) * var));
  }
  return out;
}

struct DeletionCurve {
  std::string ordering;
  std::vector<std::size_t> order;  // concepts in deletion order
  std::vector<std::size_t> x;
  std::vector<double> y_logit;
  std::vector<double> y_acc;
  double auc_logit = 0.0;
  double auc_acc = 0.0;
};

/// Trapezoid area with x rescaled to [0, 1]; a single point is its value.
inline double normalized_auc(const std::vector<std::size_t>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && !x.empty(), ErrorKind::kShape, "AUC needs matching non-empty x and y");
  if (x.size() == 1) return y.front();
  const double span = static_cast<double>(x.back() - x.front());
  double area = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i)
    area += 0.5 * (y[i] + y[i - 1]) * static_cast<double>(x[i] - x[i - 1]);
  return area / span;
}

struct DeletionOptions {
  Ordering ordering = Ordering::kContribution;
  std::set<std::size_t> exclude;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  SobolOptions sobol;
};

/// Per-concept dataset-mean importance for the originally predicted class.
template <class T>
std::vector<double> mean_importance(const Network<T>& net, const SaeModel<T>& sae, const LabeledImages& data,
                                    const DeletionOptions& opt) {
  const std::size_t k = sae.latents();
  std::vector<std::vector<double>> per_image(data.size(), std::vector<double>(k, 0.0));
  parallel_for(data.size(), opt.threads, [&](std::size_t n) {
    const auto rec = fact_forward(net, sae, prepare_input(net, data.image<T>(n)));
    const std::size_t pred = argmax(rec.logits().span());
    Tensor<T> imp;
    switch (opt.ordering) {
      case Ordering::kContribution: imp = concept_contributions(rec, pred).contributions; break;
      case Ordering::kSaliency: imp = importance_saliency(rec, pred); break;
      case Ordering::kSobol: {
        SobolOptions s = opt.sobol;
        s.seed = derive_seed(opt.sobol.seed, n);
        imp = importance_sobol(net, sae, rec, pred, s);
        break;
      }
      case Ordering::kActivation: {
        const auto totals = concept_totals(rec);
        for (std::size_t c = 0; c < k; ++c) per_image[n][c] = totals[c];
        return;
      }
      case Ordering::kRandom: return;
    }
    for (std::size_t c = 0; c < k; ++c) per_image[n][c] = static_cast<double>(imp[c]);
  });
  std::vector<double> mean(k, 0.0);
  for (const auto& row : per_image)
    for (std::size_t c = 0; c < k; ++c) mean[c] += row[c];
  for (auto& m : mean) m /= static_cast<double>(std::max<std::size_t>(1, data.size()));
  return mean;
}

/// Deletion order: decreasing mean importance (ties by index), or a seeded
/// shuffle for the random ordering. Excluded concepts are left out.
template <class T>
std::vector<std::size_t> deletion_order(const Network<T>& net, const SaeModel<T>& sae, const LabeledImages& data,
                                        const DeletionOptions& opt) {
  std::vector<std::size_t> order;
  for (std::size_t c = 0; c < sae.latents(); ++c)
    if (!opt.exclude.count(c)) order.push_back(c);
  if (opt.ordering == Ordering::kRandom) {
    Rng rng(opt.seed, "deletion/random");
    rng.shuffle(order.begin(), order.end());
    return order;
  }
  const std::vector<double> imp = mean_importance(net, sae, data, opt);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return imp[a] > imp[b]; });
  return order;
}

/// Zeroes concepts of U globally in deletion order; after each step records
/// the mean logit of every image's originally predicted class and accuracy.
template <class T>
DeletionCurve deletion_curve(const Network<T>& net, const SaeModel<T>& sae, const LabeledImages& data,
                             const DeletionOptions& opt) {
  require(data.size() > 0, ErrorKind::kContract, "deletion needs at least one image");
  for (std::size_t c : opt.exclude)
    require(c < sae.latents(), ErrorKind::kIndex, "excluded concept " + std::to_string(c) + " out of range");
  DeletionCurve curve;
  curve.ordering = ordering_name(opt.ordering);
  curve.order = deletion_order(net, sae, data, opt);

  const std::size_t n_img = data.size(), steps = curve.order.size() + 1;
  std::vector<Tensor<T>> codes(n_img);
  std::vector<std::size_t> pred(n_img);
  parallel_for(n_img, opt.threads, [&](std::size_t n) {
    Tensor<T> x = prepare_input(net, data.image<T>(n));
    for (std::size_t i = 0; i <= sae.layer_index; ++i)
      x = std::visit([&](const auto& l) { return l.forward(x, static_cast<Tensor<T>*>(nullptr)); }, net.layer(i));
    codes[n] = sae_encode(x, sae);
    pred[n] = argmax(run_layers(net, {}, sae.layer_index + 1, sae_decode(codes[n], sae)));
  });
  std::vector<std::vector<double>> logit(n_img, std::vector<double>(steps));
  std::vector<std::vector<char>> correct(n_img, std::vector<char>(steps));
  parallel_for(n_img, opt.threads, [&](std::size_t n) {
    std::vector<T> mask(sae.latents(), T(1));
    for (std::size_t s = 0; s < steps; ++s) {
      if (s > 0) mask[curve.order[s - 1]] = T(0);
      Tensor<T> u = codes[n];
      const std::size_t area = u.size() / u.dim(0);
      for (std::size_t c = 0; c < u.dim(0); ++c)
        if (mask[c] == T(0)) std::fill(u.data() + c * area, u.data() + (c + 1) * area, T(0));
      const Tensor<T> out = run_layers(net, {}, sae.layer_index + 1, sae_decode(u, sae));
      logit[n][s] = out[pred[n]];
      correct[n][s] = argmax(out) == data.labels[n];
    }
  });
  for (std::size_t s = 0; s < steps; ++s) {
    double l = 0.0, a = 0.0;
    for (std::size_t n = 0; n < n_img; ++n) {
      l += logit[n][s];
      a += correct[n][s];
    }
    curve.x.push_back(s);
    curve.y_logit.push_back(l / static_cast<double>(n_img));
    curve.y_acc.push_back(a / static_cast<double>(n_img));
  }
  curve.auc_logit = normalized_auc(curve.x, curve.y_logit);
  curve.auc_acc = normalized_auc(curve.x, curve.y_acc);
  return curve;
}

}  // namespace fact
