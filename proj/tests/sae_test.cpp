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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "fact/datagen.hpp"
#include "fact/sae.hpp"
#include "test_util.hpp"

namespace fact {
namespace {

using testing::random_sae;
using testing::random_tensor;
using testing::tiny_convnet;

// Best k-subset by sum of ReLU values, lexicographically smallest on ties.
std::vector<std::size_t> brute_force_topk(const std::vector<double>& pre, std::size_t k) {
  const std::size_t n = pre.size();
  std::vector<std::size_t> best;
  double best_sum = -1;
  std::vector<bool> pick(n, false);
  std::fill(pick.begin(), pick.begin() + static_cast<long>(k), true);
  do {
    std::vector<std::size_t> idx;
    double s = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (pick[i]) {
        idx.push_back(i);
        s += std::max(pre[i], 0.0);
      }
    if (s > best_sum || (s == best_sum && idx < best)) {
      best_sum = s;
      best = idx;
    }
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return best;
}

TEST(SaeEncodeTest, HandCase) {
  Tensor<double> w({4, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, 0});
  SaeModel<double> sae(w, w, 2, 0);
  Tensor<double> f({3, 1, 1}, std::vector<double>{2, 1, 0});
  auto u = sae_encode(f, sae);
  EXPECT_EQ(u.vec(), (std::vector<double>{2, 0, 0, 3}));
}

TEST(SaeEncodeTest, IdentityKeepsNonnegativeFeatures) {
  Rng rng(1);
  Tensor<double> eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye[i * 3 + i] = 1;
  SaeModel<double> sae(eye, eye, 3, 0);
  auto f = testing::uniform_tensor<double>({3, 2, 2}, rng);
  EXPECT_EQ(sae_encode(f, sae).vec(), f.vec());
  EXPECT_EQ(sae_decode(sae_encode(f, sae), sae).vec(), f.vec());
}

TEST(SaeEncodeTest, MatchesExhaustiveTopK) {
  Rng rng(2);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t k = 6, c = 4, topk = 1 + trial % 4;
    auto sae = random_sae<double>(rng, k, c, topk, 0);
    if (trial % 3 == 0) std::copy(sae.encoder.data(), sae.encoder.data() + c, sae.encoder.data() + c);  // tie
    auto f = random_tensor<double>({c, 1, 1}, rng);
    auto u = sae_encode(f, sae);
    std::vector<double> pre(k);
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t ch = 0; ch < c; ++ch) pre[j] += sae.encoder[j * c + ch] * f[ch];
    std::vector<double> expect(k, 0.0);
    for (std::size_t j : brute_force_topk(pre, topk)) expect[j] = std::max(pre[j], 0.0);
    for (std::size_t j = 0; j < k; ++j) EXPECT_DOUBLE_EQ(u[j], expect[j]) << "trial " << trial;
  }
}

TEST(SaeEncodeTest, SparsityNonnegativityAndZeroLaw) {
  Rng rng(3);
  auto sae = random_sae<float>(rng, 12, 5, 3, 0);
  auto f = random_tensor<float>({5, 4, 4}, rng);
  auto u = sae_encode(f, sae);
  for (std::size_t p = 0; p < 16; ++p) {
    std::size_t l0 = 0;
    for (std::size_t j = 0; j < 12; ++j) {
      EXPECT_GE(u[j * 16 + p], 0.f);
      l0 += u[j * 16 + p] != 0.f;
    }
    EXPECT_LE(l0, 3u);
  }
  const auto u0 = sae_encode(Tensor<float>({5, 4, 4}), sae);
  const auto f0 = sae_decode(Tensor<float>({12, 4, 4}), sae);
  for (float v : u0.span()) EXPECT_EQ(v, 0.f);
  for (float v : f0.span()) EXPECT_EQ(v, 0.f);
}

TEST(SaeEncodeTest, FrozenReplayAndAdjoint) {
  Rng rng(4);
  auto sae = random_sae<double>(rng, 10, 5, 3, 0);
  auto f = random_tensor<double>({5, 3, 3}, rng);
  Tensor<double> gate;
  auto u = sae_encode(f, sae, &gate);
  EXPECT_TRUE(bitwise_equal(u, sae_encode_frozen(f, gate, sae)));
  auto v = random_tensor<double>({5, 3, 3}, rng);
  auto g = random_tensor<double>({10, 3, 3}, rng);
  EXPECT_NEAR(dot(g.span(), sae_encode_frozen(v, gate, sae).span()),
              dot(sae_encode_vjp(gate, sae, g).span(), v.span()), 1e-10);
  auto h = random_tensor<double>({5, 3, 3}, rng);
  EXPECT_NEAR(dot(h.span(), sae_decode(g, sae).span()), dot(sae_decode_vjp(sae, h).span(), g.span()), 1e-10);
}

TEST(SaeDecodeTest, UnitCodeReturnsDictionaryRow) {
  Rng rng(5);
  auto sae = random_sae<double>(rng, 4, 3, 2, 0);
  Tensor<double> u({4, 1, 1});
  u[2] = 1;
  auto f = sae_decode(u, sae);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(f[c], sae.dictionary[2 * 3 + c]);
}

TEST(SaeModelTest, Validation) {
  EXPECT_THROW(SaeModel<double>(Tensor<double>({4, 3}), Tensor<double>({4, 2}), 2, 0), Error);
  EXPECT_THROW(SaeModel<double>(Tensor<double>({4, 3}), Tensor<double>({4, 3}), 5, 0), Error);
  EXPECT_THROW(SaeModel<double>(Tensor<double>({4, 3}), Tensor<double>({4, 3}), 0, 0), Error);
}

TEST(SaeTrainConfigTest, ScheduleDefaults) {
  const SaeTrainConfig d;
  EXPECT_EQ(d.epochs, 16u);
  EXPECT_EQ(d.warmup_epochs, 2u);
  EXPECT_DOUBLE_EQ(d.lr, 1e-3);
}

TEST(SaeTrainConfigTest, ParsesLargeScaleRow) {
  const auto cfg = SaeTrainConfig::from(
      KeyValueConfig::parse("lr = 0.001\nlatents = 16384\ntopk = 16\nbatch_size = 32786\n"));
  EXPECT_DOUBLE_EQ(cfg.lr, 1e-3);
  EXPECT_EQ(cfg.latents, 16384u);
  EXPECT_EQ(cfg.topk, 16u);
  EXPECT_EQ(cfg.batch_size, 32786u);
  EXPECT_NO_THROW(cfg.validate());
}

TEST(SaeDatasetTest, HeldoutSplitPerClass) {
  auto spec = SceneSpec::defaults();
  auto data = generate_dataset(spec, 6, 1, "train");
  auto [rest, held] = split_heldout(data, 2);
  EXPECT_EQ(held.size(), 10u);
  EXPECT_EQ(rest.size(), 20u);
  std::vector<int> per(5, 0);
  for (auto l : held.labels) ++per[l];
  for (int p : per) EXPECT_EQ(p, 2);
}

TEST(SaeDatasetTest, ImportanceSamplingSinglePosition) {
  Rng rng(6);
  std::vector<double> w(9, 0.0);
  w[4] = 2.5;
  w[1] = -3.0;
  for (std::size_t p : importance_sample(w, 50, rng)) EXPECT_EQ(p, 4u);
}

TEST(SaeDatasetTest, NonpositiveWeightsFallBackToUniform) {
  Rng rng(7);
  const std::size_t n = 10000, positions = 8;
  std::vector<double> w(positions, -1.0);
  std::vector<double> hits(positions, 0.0);
  for (std::size_t p : importance_sample(w, n, rng)) hits[p] += 1;
  // Pearson chi-square, 7 degrees of freedom, 0.999 quantile.
  const double mean = static_cast<double>(n) / positions;
  double chi2 = 0;
  for (double h : hits) chi2 += (h - mean) * (h - mean) / mean;
  EXPECT_LT(chi2, 24.32);
}

TEST(SaeDatasetTest, SamplesMatchProvenanceAndAreDeterministic) {
  Rng rng(8);
  auto net = make_toy_convnet<double>(5, 1);
  auto spec = SceneSpec::defaults();
  auto data = generate_dataset(spec, 1, 3, "train");
  auto a = build_sae_dataset(net, kToySaeLayer, data, 7, 11);
  auto b = build_sae_dataset(net, kToySaeLayer, data, 7, 11);
  EXPECT_TRUE(bitwise_equal(a.samples, b.samples));
  ASSERT_EQ(a.size(), 35u);
  EXPECT_EQ(a.channels(), 32u);
  const auto& pr = a.provenance[9];
  auto rec = network_forward(net, prepare_input(net, data.image<double>(pr.image)));
  const auto& f = rec.activations[rec.layer_inputs[kToySaeLayer] + 1];
  for (std::size_t c = 0; c < 32; ++c)
    EXPECT_EQ(a.samples[9 * 32 + c], static_cast<float>(f.at(c, pr.row, pr.col)));
  EXPECT_THROW(build_sae_dataset(net, kToySaeLayer, data, 0, 1), Error);
}

TEST(SaeDatasetTest, ContributionsSumToPredictedLogit) {
  Rng rng(9);
  auto net = tiny_convnet<double>(rng);
  auto rec = network_forward(net, prepare_input(net, testing::uniform_tensor<double>({3, 8, 8}, rng)));
  for (std::size_t c = 0; c < 3; ++c) {
    auto contrib = spatial_contributions(rec, 1, c);
    EXPECT_NEAR(std::accumulate(contrib.begin(), contrib.end(), 0.0), rec.logits()[c], 1e-10);
  }
}

// Two-sparse mixtures of 8 orthonormal atoms in R^16; the atoms depend only
// on a fixed seed, the mixtures on `seed`.
FeatureDataset planted_orthogonal(std::size_t n, std::uint64_t seed) {
  const std::size_t c = 16, atoms = 8;
  Rng rng(1);
  std::vector<std::vector<double>> basis(atoms, std::vector<double>(c));
  for (std::size_t i = 0; i < atoms; ++i) {
    for (auto& v : basis[i]) v = rng.normal();
    for (std::size_t j = 0; j < i; ++j) {
      double d = 0;
      for (std::size_t q = 0; q < c; ++q) d += basis[i][q] * basis[j][q];
      for (std::size_t q = 0; q < c; ++q) basis[i][q] -= d * basis[j][q];
    }
    double norm = 0;
    for (double v : basis[i]) norm += v * v;
    for (auto& v : basis[i]) v /= std::sqrt(norm);
  }
  rng = Rng(seed, "mixtures");
  FeatureDataset ds;
  ds.samples = Tensor<float>({n, c});
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t a = rng.below(atoms), b = (a + 1 + rng.below(atoms - 1)) % atoms;
    const double ca = rng.uniform(0.5, 2.0), cb = rng.uniform(0.5, 2.0);
    for (std::size_t q = 0; q < c; ++q) ds.samples[s * c + q] = static_cast<float>(ca * basis[a][q] + cb * basis[b][q]);
    ds.provenance.push_back({static_cast<std::uint32_t>(s), 0, 0});
  }
  return ds;
}

TEST(SaeTrainTest, RecoversPlantedOrthogonalDictionary) {
  auto train = planted_orthogonal(4000, 1);
  auto held = planted_orthogonal(1000, 2);
  SaeTrainConfig cfg;
  cfg.latents = 8;
  cfg.topk = 2;
  cfg.batch_size = 64;
  auto sae = train_sae<double>(train, cfg);
  EXPECT_GE(reconstruction_stats(sae, held).r2, 0.99);
}

TEST(SaeTrainTest, ZeroLearningRateKeepsInitialWeights) {
  auto ds = planted_orthogonal(300, 3);
  SaeTrainConfig cfg;
  cfg.latents = 8;
  cfg.topk = 2;
  cfg.lr = 0.0;
  cfg.epochs = 1;
  auto a = train_sae<double>(ds, cfg);
  cfg.epochs = 4;
  auto b = train_sae<double>(ds, cfg);
  EXPECT_TRUE(bitwise_equal(a.encoder, b.encoder));
  EXPECT_TRUE(bitwise_equal(a.dictionary, b.dictionary));
}

TEST(SaeTrainTest, DeterministicAndLossDecreases) {
  auto ds = planted_orthogonal(500, 4);
  SaeTrainConfig cfg;
  cfg.latents = 8;
  cfg.topk = 2;
  cfg.epochs = 6;
  cfg.batch_size = 50;
  std::vector<double> ha, hb;
  auto a = train_sae<float>(ds, cfg, &ha);
  auto b = train_sae<float>(ds, cfg, &hb);
  EXPECT_TRUE(bitwise_equal(a.encoder, b.encoder));
  EXPECT_EQ(ha, hb);
  EXPECT_LT(ha.back(), ha.front());
}

TEST(SaeTrainTest, NonFiniteLossAborts) {
  auto ds = planted_orthogonal(64, 5);
  for (std::size_t i = 0; i < 16; ++i) ds.samples[3 * 16 + i] = 1e30f;
  SaeTrainConfig cfg;
  cfg.latents = 8;
  cfg.topk = 2;
  try {
    train_sae<float>(ds, cfg);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
  }
}

TEST(SaeTrainTest, ConfigFromKeyValues) {
  auto cfg = SaeTrainConfig::from(KeyValueConfig::parse("latents = 32\ntopk = 8\nlr = 1e-4\nlayer_index = 4\n"));
  EXPECT_EQ(cfg.latents, 32u);
  EXPECT_EQ(cfg.topk, 8u);
  EXPECT_DOUBLE_EQ(cfg.lr, 1e-4);
  EXPECT_EQ(cfg.layer_index, 4u);
  cfg.topk = 40;
  EXPECT_THROW(cfg.validate(), Error);
}

FeatureDataset rows(const std::vector<std::vector<float>>& v) {
  FeatureDataset ds;
  std::vector<float> flat;
  for (const auto& r : v) flat.insert(flat.end(), r.begin(), r.end());
  ds.samples = Tensor<float>({v.size(), v.front().size()}, flat);
  for (std::size_t i = 0; i < v.size(); ++i) ds.provenance.push_back({static_cast<std::uint32_t>(i), 0, 0});
  return ds;
}

TEST(DiagnoseTest, DeadAndAlwaysActive) {
  // Data lives in the (x, y) plane with x > 0; latent 0 looks along z, latent 1 along x.
  auto held = rows({{1, 0.5f, 0}, {2, -1, 0}, {1, 0, 0}, {3, 2, 0}, {1, 1, 0}});
  Tensor<double> enc({3, 3}, std::vector<double>{0, 0, 1, 1, 0, 0, 0, 1, 0});
  SaeModel<double> sae(enc, enc, 2, 0);
  auto d = diagnose_latents(sae, held);
  EXPECT_EQ(d.dead, (std::vector<std::size_t>{0}));
  EXPECT_EQ(d.always_active, (std::vector<std::size_t>{1}));
  EXPECT_DOUBLE_EQ(d.activation_frequency[2], 0.6);  // boundary: not always-active
}

SaeCandidate<double> candidate(std::size_t topk, double loss, std::size_t dead, std::size_t always, double tag) {
  Tensor<double> enc({4, 2}, tag);
  return {SaeModel<double>(enc, enc, topk, 0), {loss, dead, always}};
}

TEST(SelectCheckpointTest, Rules) {
  EXPECT_EQ(select_checkpoint_index<double>({candidate(2, 1.0, 3, 3, 1)}), 0u);
  EXPECT_EQ(select_checkpoint_index<double>({candidate(2, 1.0, 5, 0, 1), candidate(2, 1.0, 0, 0, 2)}), 1u);
  EXPECT_EQ(select_checkpoint_index<double>(
                {candidate(2, 1.0, 9, 9, 1), candidate(2, 1.5, 0, 0, 2), candidate(2, 2.0, 0, 0, 3)}),
            0u);
  // Near tie within 1% favours fewer bad latents; the third run never makes the top 2.
  EXPECT_EQ(select_checkpoint_index<double>(
                {candidate(2, 1.000, 6, 0, 1), candidate(2, 1.005, 1, 0, 2), candidate(2, 1.008, 0, 0, 3)}),
            1u);
  // Winners of two sparsity groups compete under the same rule.
  EXPECT_EQ(select_checkpoint_index<double>({candidate(2, 1.0, 6, 0, 1), candidate(4, 1.004, 2, 0, 2)}), 1u);
  EXPECT_THROW(select_checkpoint_index<double>({}), Error);
  EXPECT_EQ(select_checkpoint<double>({candidate(2, 1.0, 5, 0, 1), candidate(2, 1.0, 0, 0, 7)}).encoder[0], 7.0);
}

}  // namespace
}  // namespace fact
