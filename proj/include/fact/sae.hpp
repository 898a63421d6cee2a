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

// SAE pipeline: importance-sampled feature datasets, TopK SAE training,
// latent diagnosis and checkpoint selection.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fact/config.hpp"
#include "fact/dataset.hpp"
#include "fact/log.hpp"
#include "fact/network.hpp"
#include "fact/optim.hpp"
#include "fact/parallel.hpp"
#include "fact/rng.hpp"
#include "fact/sae_model.hpp"

namespace fact {

struct FeatureProvenance {
  std::uint32_t image = 0;
  std::uint32_t row = 0;
  std::uint32_t col = 0;
};

/// Spatial feature vectors F_I[i,j] gathered from a set of images.
struct FeatureDataset {
  Tensor<float> samples;  // [N, C]
  std::vector<FeatureProvenance> provenance;
  bool heldout = false;

  std::size_t size() const { return provenance.size(); }
  std::size_t channels() const { return samples.dim(1); }
};

/// Reserves the first `per_class` images of every class (in index order)
/// as a held-out split. Returns {remaining, heldout}.
inline std::pair<LabeledImages, LabeledImages> split_heldout(const LabeledImages& data, std::size_t per_class) {
  std::vector<std::size_t> taken(data.class_count(), 0), rest, held;
  for (std::size_t n = 0; n < data.size(); ++n) {
    if (taken[data.labels[n]] < per_class) {
      ++taken[data.labels[n]];
      held.push_back(n);
    } else {
      rest.push_back(n);
    }
  }
  return {data.subset(rest, data.split), data.subset(held, "heldout")};
}

/// Per-position contribution of F = output of `layer` to logit `class_id`:
/// sum over channels of cotangent * F, as an [H*W] vector.
template <class T>
std::vector<double> spatial_contributions(const ForwardRecord<T>& rec, std::size_t layer, std::size_t class_id) {
  const std::size_t idx = rec.layer_inputs.at(layer) + 1;
  const Tensor<T>& f = rec.activations[idx];
  const Tensor<T> cot = vjp_frozen(rec, rec.activations.size() - 1, idx, logit_cotangent(rec, class_id));
  const std::size_t positions = f.dim(1) * f.dim(2);
  std::vector<double> out(positions, 0.0);
  for (std::size_t c = 0; c < f.dim(0); ++c)
    for (std::size_t p = 0; p < positions; ++p)
      out[p] += static_cast<double>(cot[c * positions + p]) * f[c * positions + p];
  return out;
}

/// Draws `m` positions proportionally to the positive part of `weights`,
/// with replacement; uniform when no weight is positive.
inline std::vector<std::size_t> importance_sample(const std::vector<double>& weights, std::size_t m, Rng& rng) {
  std::vector<double> cdf(weights.size());
  double total = 0.0;
  for (std::size_t p = 0; p < weights.size(); ++p) cdf[p] = (total += std::max(weights[p], 0.0));
  if (!(total > 0.0))
    for (std::size_t p = 0; p < cdf.size(); ++p) cdf[p] = static_cast<double>(p + 1);
  std::vector<std::size_t> picks(m);
  for (auto& v : picks) v = rng.categorical(cdf);
  return picks;
}

/// Importance-sampled SAE training set from the output of `layer` of the base
/// model, weighted by each position's contribution to the predicted logit.
template <class T>
FeatureDataset build_sae_dataset(const Network<T>& net, std::size_t layer, const LabeledImages& images,
                                 std::size_t m, std::uint64_t seed, std::size_t threads = 1) {
  require(m >= 1, ErrorKind::kContract, "samples per image must be >= 1");
  require(layer < net.layer_count(), ErrorKind::kIndex, "feature layer out of range");
  const Shape& fs = net.output_shape(layer);
  require(fs.size() == 3, ErrorKind::kContract, "feature layer output must be [C,H,W]");
  const std::size_t channels = fs[0], positions = fs[1] * fs[2];
  std::vector<std::vector<float>> rows(images.size());
  std::vector<std::vector<FeatureProvenance>> prov(images.size());
  parallel_for(images.size(), threads, [&](std::size_t n) {
    const ForwardRecord<T> rec = network_forward(net, prepare_input(net, images.image<T>(n)));
    const std::size_t pred = argmax(rec.logits().span());
    const auto contrib = spatial_contributions(rec, layer, pred);
    Rng rng(derive_seed(derive_seed(seed, "sae_dataset"), n));
    const Tensor<T>& f = rec.activations[rec.layer_inputs[layer] + 1];
    for (std::size_t p : importance_sample(contrib, m, rng)) {
      for (std::size_t c = 0; c < channels; ++c) rows[n].push_back(static_cast<float>(f[c * positions + p]));
      prov[n].push_back({static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(p / fs[2]),
                         static_cast<std::uint32_t>(p % fs[2])});
    }
  });
  FeatureDataset ds;
  std::vector<float> all;
  for (std::size_t n = 0; n < images.size(); ++n) {
    all.insert(all.end(), rows[n].begin(), rows[n].end());
    ds.provenance.insert(ds.provenance.end(), prov[n].begin(), prov[n].end());
  }
  require(!ds.provenance.empty(), ErrorKind::kContract, "no images to sample features from");
  ds.samples = Tensor<float>({ds.provenance.size(), channels}, std::move(all));
  return ds;
}

/// Every spatial feature vector of every image (no sampling); used for
/// held-out evaluation.
template <class T>
FeatureDataset dense_feature_dataset(const Network<T>& net, std::size_t layer, const LabeledImages& images,
                                     std::size_t threads = 1) {
  const Shape& fs = net.output_shape(layer);
  require(fs.size() == 3, ErrorKind::kContract, "feature layer output must be [C,H,W]");
  const std::size_t channels = fs[0], positions = fs[1] * fs[2];
  std::vector<float> all(images.size() * positions * channels);
  parallel_for(images.size(), threads, [&](std::size_t n) {
    const Tensor<T> x = prepare_input(net, images.image<T>(n));
    Tensor<T> f = x;
    for (std::size_t i = 0; i <= layer; ++i)
      f = std::visit([&](const auto& l) { return l.forward(f, static_cast<Tensor<T>*>(nullptr)); }, net.layer(i));
    for (std::size_t p = 0; p < positions; ++p)
      for (std::size_t c = 0; c < channels; ++c)
        all[(n * positions + p) * channels + c] = static_cast<float>(f[c * positions + p]);
  });
  FeatureDataset ds;
  ds.heldout = true;
  for (std::size_t n = 0; n < images.size(); ++n)
    for (std::size_t p = 0; p < positions; ++p)
      ds.provenance.push_back({static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(p / fs[2]),
                               static_cast<std::uint32_t>(p % fs[2])});
  ds.samples = Tensor<float>({ds.provenance.size(), channels}, std::move(all));
  return ds;
}

struct SaeTrainConfig {
  std::size_t latents = 64;
  std::size_t topk = 4;
  double lr = 1e-3;
  std::size_t epochs = 16;
  std::size_t warmup_epochs = 2;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  std::size_t layer_index = 0;

  static SaeTrainConfig from(const KeyValueConfig& kv) {
    SaeTrainConfig c;
    c.latents = kv.get_count("latents", c.latents);
    c.topk = kv.get_count("topk", c.topk);
    c.lr = kv.get_double("lr", c.lr);
    c.epochs = kv.get_count("epochs", c.epochs);
    c.warmup_epochs = kv.get_count("warmup_epochs", c.warmup_epochs);
    c.batch_size = kv.get_count("batch_size", c.batch_size);
    c.seed = static_cast<std::uint64_t>(kv.get_count("seed", static_cast<std::size_t>(c.seed)));
    c.layer_index = kv.get_count("layer_index", c.layer_index);
    return c;
  }

  void validate() const {
    require(latents >= 1 && topk >= 1 && topk <= latents, ErrorKind::kConfig, "SAE needs 1 <= topk <= latents");
    require(epochs >= 1 && batch_size >= 1, ErrorKind::kConfig, "SAE epochs and batch_size must be >= 1");
    require(lr >= 0.0 && std::isfinite(lr), ErrorKind::kConfig, "SAE lr must be finite and >= 0");
  }
};

namespace detail {

/// Codes for a batch of row vectors X [B, C]: TopK(ReLU(X W^T)) and the gate.
template <class T>
void encode_rows(const RowMatrix<T>& x, const RowMatrix<T>& w, std::size_t topk, RowMatrix<T>& codes,
                 RowMatrix<T>& gate) {
  const RowMatrix<T> pre = x * w.transpose();
  const std::size_t k = static_cast<std::size_t>(w.rows());
  codes = RowMatrix<T>::Zero(pre.rows(), pre.cols());
  gate = RowMatrix<T>::Zero(pre.rows(), pre.cols());
  std::vector<T> relu(k);
  std::vector<std::size_t> keep;
  for (Eigen::Index r = 0; r < pre.rows(); ++r) {
    for (std::size_t j = 0; j < k; ++j) relu[j] = std::max(pre(r, j), T(0));
    topk_indices(relu.data(), k, 1, topk, keep);
    for (std::size_t j : keep)
      if (pre(r, j) >= T(0)) {
        codes(r, j) = pre(r, j);
        gate(r, j) = T(1);
      }
  }
}

template <class T>
RowMatrix<T> rows_of(const FeatureDataset& ds, std::span<const std::size_t> idx) {
  RowMatrix<T> x(idx.size(), ds.channels());
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t c = 0; c < ds.channels(); ++c) x(r, c) = static_cast<T>(ds.samples[idx[r] * ds.channels() + c]);
  return x;
}

}  // namespace detail

/// Reconstruction quality of an SAE on a feature set.
struct ReconstructionStats {
  double mse = 0.0;  // mean over vectors of the squared error norm
  double r2 = 0.0;   // 1 - SSE / total sum of squares about the mean vector
};

template <class T>
ReconstructionStats reconstruction_stats(const SaeModel<T>& sae, const FeatureDataset& ds) {
  require(ds.size() > 0, ErrorKind::kContract, "feature set is empty");
  const RowMatrix<T> w = as_matrix(sae.encoder, sae.latents(), sae.channels());
  const RowMatrix<T> v = as_matrix(sae.dictionary, sae.latents(), sae.channels());
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<double> mean(ds.channels(), 0.0);
  for (std::size_t n = 0; n < ds.size(); ++n)
    for (std::size_t c = 0; c < ds.channels(); ++c) mean[c] += ds.samples[n * ds.channels() + c];
  for (auto& m : mean) m /= static_cast<double>(ds.size());
  double sse = 0.0, sst = 0.0;
  constexpr std::size_t kBlock = 4096;
  for (std::size_t b = 0; b < ds.size(); b += kBlock) {
    const std::size_t e = std::min(ds.size(), b + kBlock);
    const RowMatrix<T> x = detail::rows_of<T>(ds, std::span<const std::size_t>(idx.data() + b, e - b));
    RowMatrix<T> codes, gate;
    detail::encode_rows(x, w, sae.topk, codes, gate);
    const RowMatrix<T> xhat = codes * v;
    for (Eigen::Index r = 0; r < x.rows(); ++r)
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        const double d = static_cast<double>(x(r, c)) - xhat(r, c);
        const double m = static_cast<double>(x(r, c)) - mean[static_cast<std::size_t>(c)];
        sse += d * d;
        sst += m * m;
      }
  }
  return {sse / static_cast<double>(ds.size()), sst > 0.0 ? 1.0 - sse / sst : (sse == 0.0 ? 1.0 : 0.0)};
}

namespace detail {

/// k-means++ seeding on unit directions: rows are normalized training
/// vectors from a pool of up to 4096 samples, each drawn with probability
/// proportional to its squared distance to the nearest row already chosen.
template <class T>
Tensor<T> seed_directions(const FeatureDataset& ds, std::size_t k, Rng& rng) {
  const std::size_t c = ds.channels(), pool_size = std::min<std::size_t>(ds.size(), 4096);
  std::vector<std::vector<double>> pool(pool_size, std::vector<double>(c));
  for (auto& row : pool) {
    const std::size_t n = rng.below(ds.size());
    double norm2 = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      row[ch] = ds.samples[n * c + ch] + 1e-3 * rng.normal();
      norm2 += row[ch] * row[ch];
    }
    const double inv = 1.0 / std::sqrt(std::max(norm2, 1e-30));
    for (auto& v : row) v *= inv;
  }
  Tensor<T> enc({k, c});
  std::vector<double> d2(pool_size, 4.0), cdf(pool_size);
  for (std::size_t j = 0; j < k; ++j) {
    double total = 0.0;
    for (std::size_t i = 0; i < pool_size; ++i) cdf[i] = (total += d2[i]);
    const std::vector<double>& pick = pool[total > 0.0 ? rng.categorical(cdf) : rng.below(pool_size)];
    for (std::size_t ch = 0; ch < c; ++ch) enc[j * c + ch] = static_cast<T>(pick[ch]);
    for (std::size_t i = 0; i < pool_size; ++i) {
      double dot = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) dot += pool[i][ch] * pick[ch];
      d2[i] = std::min(d2[i], std::max(0.0, 2.0 - 2.0 * dot));
    }
  }
  return enc;
}

/// Scalar a minimizing sum ||x - a V^T TopK(ReLU(V x))||^2 over a sample.
template <class T>
T least_squares_gain(const FeatureDataset& ds, const Tensor<T>& atoms, std::size_t topk, Rng& rng) {
  const std::size_t k = atoms.dim(0), c = atoms.dim(1);
  std::vector<std::size_t> idx(std::min<std::size_t>(ds.size(), 4096));
  for (auto& i : idx) i = rng.below(ds.size());
  const RowMatrix<T> x = rows_of<T>(ds, idx);
  const RowMatrix<T> v = as_matrix(atoms, k, c);
  RowMatrix<T> codes, gate;
  encode_rows(x, v, topk, codes, gate);
  const RowMatrix<T> xhat = codes * v;
  const double num = static_cast<double>(x.cwiseProduct(xhat).sum());
  const double den = static_cast<double>(xhat.squaredNorm());
  return den > 0.0 && num > 0.0 ? static_cast<T>(num / den) : T(1);
}

}  // namespace detail

/// Minimizes mean ||f - V^T TopK(ReLU(W f))||^2 with Adam under a linear
/// warmup + cosine schedule. Encoder rows start at k-means++ seeded
/// training directions; the dictionary starts tied to them, rescaled by the
/// least-squares gain.
template <class T>
SaeModel<T> train_sae(const FeatureDataset& ds, const SaeTrainConfig& cfg, std::vector<double>* loss_history = nullptr) {
  cfg.validate();
  require(ds.size() > 0, ErrorKind::kContract, "SAE training set is empty");
  const std::size_t k = cfg.latents, c = ds.channels();
  Rng rng(cfg.seed, "train_sae/init");
  Tensor<T> enc = detail::seed_directions<T>(ds, k, rng);
  const T gain = detail::least_squares_gain(ds, enc, cfg.topk, rng);
  Tensor<T> dict = scaled(enc, gain);
  SaeModel<T> sae(std::move(enc), std::move(dict), cfg.topk, cfg.layer_index);
  Adam<T> adam({sae.encoder.shape(), sae.dictionary.shape()});

  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(cfg.seed, "train_sae/shuffle");
  const std::size_t steps_per_epoch = (ds.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = steps_per_epoch * cfg.epochs, warmup = steps_per_epoch * cfg.warmup_epochs;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < ds.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(ds.size(), b + cfg.batch_size);
      const RowMatrix<T> x = detail::rows_of<T>(ds, std::span<const std::size_t>(order.data() + b, e - b));
      const RowMatrix<T> w = as_matrix(sae.encoder, k, c);
      const RowMatrix<T> v = as_matrix(sae.dictionary, k, c);
      RowMatrix<T> codes, gate;
      detail::encode_rows(x, w, cfg.topk, codes, gate);
      const RowMatrix<T> resid = codes * v - x;
      const double batch_loss = static_cast<double>(resid.squaredNorm());
      if (!std::isfinite(batch_loss)) {
        std::ostringstream os;
        os << "SAE training diverged at epoch " << epoch << ", step " << step << ": loss " << batch_loss;
        fail(ErrorKind::kNumeric, os.str());
      }
      epoch_loss += batch_loss;
      const T scale = T(2) / static_cast<T>(e - b);
      const RowMatrix<T> g_out = scale * resid;
      const RowMatrix<T> g_v = codes.transpose() * g_out;
      const RowMatrix<T> g_pre = (g_out * v.transpose()).cwiseProduct(gate);
      const RowMatrix<T> g_w = g_pre.transpose() * x;
      std::vector<Tensor<T>> grads{Tensor<T>({k, c}, std::vector<T>(g_w.data(), g_w.data() + g_w.size())),
                                   Tensor<T>({k, c}, std::vector<T>(g_v.data(), g_v.data() + g_v.size()))};
      adam.step({&sae.encoder, &sae.dictionary}, grads, warmup_cosine_lr(cfg.lr, step, warmup, total));
      ++step;
    }
    epoch_loss /= static_cast<double>(ds.size());
    if (loss_history) loss_history->push_back(epoch_loss);
    std::ostringstream os;
    os << "train_sae epoch " << epoch + 1 << "/" << cfg.epochs << " mse " << epoch_loss;
    log::info(os.str());
  }
  return sae;
}

struct LatentDiagnosis {
  std::vector<std::size_t> dead;
  std::vector<std::size_t> always_active;
  std::vector<double> activation_frequency;  // K, fraction of feature vectors with u_k > 0
};

inline constexpr double kAlwaysActiveFrequency = 0.6;

/// Dead: never active; always-active: active on more than 60% of vectors.
template <class T>
LatentDiagnosis diagnose_latents(const SaeModel<T>& sae, const FeatureDataset& heldout) {
  require(heldout.size() > 0, ErrorKind::kContract, "held-out feature set is empty");
  const RowMatrix<T> w = as_matrix(sae.encoder, sae.latents(), sae.channels());
  std::vector<std::size_t> counts(sae.latents(), 0), idx(heldout.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  constexpr std::size_t kBlock = 4096;
  for (std::size_t b = 0; b < heldout.size(); b += kBlock) {
    const std::size_t e = std::min(heldout.size(), b + kBlock);
    RowMatrix<T> codes, gate;
    detail::encode_rows(detail::rows_of<T>(heldout, std::span<const std::size_t>(idx.data() + b, e - b)), w,
                        sae.topk, codes, gate);
    for (Eigen::Index r = 0; r < codes.rows(); ++r)
      for (std::size_t j = 0; j < sae.latents(); ++j)
        if (codes(r, static_cast<Eigen::Index>(j)) > T(0)) ++counts[j];
  }
  LatentDiagnosis d;
  for (std::size_t j = 0; j < sae.latents(); ++j) {
    const double f = static_cast<double>(counts[j]) / static_cast<double>(heldout.size());
    d.activation_frequency.push_back(f);
    if (counts[j] == 0) d.dead.push_back(j);
    else if (f > kAlwaysActiveFrequency) d.always_active.push_back(j);
  }
  return d;
}

struct SaeCandidateMetrics {
  double heldout_loss = 0.0;
  std::size_t dead = 0;
  std::size_t always_active = 0;
};

template <class T>
struct SaeCandidate {
  SaeModel<T> model;
  SaeCandidateMetrics metrics;
};

namespace detail {

/// Lowest loss wins unless another candidate is within 1% relative of it
/// and has fewer dead + always-active latents. Ties go to the earlier one.
template <class T>
std::size_t pick_candidate(const std::vector<SaeCandidate<T>>& c, const std::vector<std::size_t>& pool) {
  std::size_t best = pool.front();
  for (std::size_t i : pool)
    if (c[i].metrics.heldout_loss < c[best].metrics.heldout_loss) best = i;
  const double best_loss = c[best].metrics.heldout_loss;
  const double tol = 0.01 * std::abs(best_loss);
  std::size_t chosen = SIZE_MAX;
  for (std::size_t i : pool) {
    if (c[i].metrics.heldout_loss - best_loss > tol) continue;
    const std::size_t bad = c[i].metrics.dead + c[i].metrics.always_active;
    if (chosen == SIZE_MAX || bad < c[chosen].metrics.dead + c[chosen].metrics.always_active) chosen = i;
  }
  return chosen;
}

}  // namespace detail

/// Index of the selected candidate. Within each sparsity factor the two
/// lowest-loss runs compete under the near-tie rule; the per-sparsity
/// winners then compete under the same rule.
template <class T>
std::size_t select_checkpoint_index(const std::vector<SaeCandidate<T>>& candidates) {
  require(!candidates.empty(), ErrorKind::kContract, "no SAE checkpoint candidates");
  std::vector<std::size_t> sparsities;
  for (const auto& c : candidates)
    if (std::find(sparsities.begin(), sparsities.end(), c.model.topk) == sparsities.end())
      sparsities.push_back(c.model.topk);
  std::vector<std::size_t> winners;
  for (std::size_t s : sparsities) {
    std::vector<std::size_t> group;
    for (std::size_t i = 0; i < candidates.size(); ++i)
      if (candidates[i].model.topk == s) group.push_back(i);
    std::stable_sort(group.begin(), group.end(), [&](std::size_t a, std::size_t b) {
      return candidates[a].metrics.heldout_loss < candidates[b].metrics.heldout_loss;
    });
    if (group.size() > 2) group.resize(2);
    std::sort(group.begin(), group.end());
    winners.push_back(detail::pick_candidate(candidates, group));
  }
  std::sort(winners.begin(), winners.end());
  return detail::pick_candidate(candidates, winners);
}

template <class T>
SaeModel<T> select_checkpoint(const std::vector<SaeCandidate<T>>& candidates) {
  return candidates[select_checkpoint_index(candidates)].model;
}

}  // namespace fact
