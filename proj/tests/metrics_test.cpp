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

#include <cmath>
#include <numeric>
#include <vector>

#include "fact/datagen.hpp"
#include "fact/embedding.hpp"
#include "fact/metrics.hpp"
#include "test_util.hpp"

namespace fact {
namespace {

using testing::error_kind_of;
using testing::random_sae;
using testing::tiny_convnet;
using testing::uniform_tensor;

ConceptActivationTable table_of(std::size_t k, std::vector<double> values, std::vector<std::uint32_t> labels) {
  ConceptActivationTable t;
  const std::size_t n = values.size() / k;
  t.activations = Tensor<double>({k, n}, std::move(values));
  t.labels = std::move(labels);
  return t;
}

ConceptActivationTable single_concept(std::size_t images, std::size_t activating) {
  std::vector<double> v(images, 0.0);
  for (std::size_t n = 0; n < activating; ++n) v[(n * 7) % images] = 1.0 + static_cast<double>(n);
  return table_of(1, v, std::vector<std::uint32_t>(images, 0));
}

TEST(MetricsTest, SelectionSizes) {
  auto big = select_concept_images(single_concept(1000, 200), 0);
  EXPECT_EQ(big.images.size(), 10u);
  EXPECT_EQ(big.activating, 200u);
  EXPECT_FALSE(big.discarded);
  auto huge = select_concept_images(single_concept(1000, 1000), 0);
  EXPECT_EQ(huge.images.size(), 50u);
  auto few = select_concept_images(single_concept(100, 7), 0);
  EXPECT_EQ(few.images.size(), 7u);
  EXPECT_FALSE(few.discarded);
  EXPECT_TRUE(select_concept_images(single_concept(100, 3), 0).discarded);
}

TEST(MetricsTest, SelectionIsByDecreasingActivation) {
  auto t = table_of(1, {0.5, 3.0, 0.0, 2.0, -1.0, 1.0}, {0, 0, 0, 0, 0, 0});
  auto sel = select_concept_images(t, 0);
  EXPECT_EQ(sel.images, (std::vector<std::size_t>{1, 3, 5, 0}));
  EXPECT_THROW(select_concept_images(t, 1), Error);
}

TEST(MetricsTest, PointMassAndUniformEmbeddings) {
  EmbeddingField f{"a", Tensor<float>({2, 1, 3}, std::vector<float>{1, 2, 3, -1, 0, 4}), "synthetic"};
  EXPECT_EQ(concept_embedding(f, {0, 1, 0}), (std::vector<double>{2, 0}));
  auto u = concept_embedding(f, {1.0 / 3, 1.0 / 3, 1.0 / 3});
  EXPECT_NEAR(u[0], 2.0, 1e-12);
  EXPECT_NEAR(u[1], 1.0, 1e-12);
  auto n = normalize_attribution({-1.0, 1.0, 3.0});
  ASSERT_TRUE(n);
  EXPECT_EQ(*n, (std::vector<double>{0.0, 0.25, 0.75}));
  EXPECT_FALSE(normalize_attribution({-1.0, 0.0}));
  EXPECT_THROW(concept_embedding(f, {1.0}), Error);
}

TEST(MetricsTest, CosineOfZeroVectorIsZero) {
  EXPECT_EQ(cosine({0, 0}, {1, 2}), 0.0);
  EXPECT_NEAR(cosine({1, 0}, {2, 0}), 1.0, 1e-15);
  EXPECT_NEAR(cosine({1, 0}, {-3, 0}), -1.0, 1e-15);
}

TEST(MetricsTest, ConsistencyClosedForms) {
  for (std::size_t n : {2u, 3u, 10u}) {
    std::vector<std::vector<double>> same(n, {1.0, 2.0, -1.0});
    EXPECT_NEAR(*concept_consistency(same, std::vector<double>(n, 1.0)), (n - 1.0) / n, 1e-12);
  }
  std::vector<std::vector<double>> ortho = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  EXPECT_NEAR(*concept_consistency(ortho, {1, 2, 3}), 0.0, 1e-15);
  EXPECT_NEAR(*concept_consistency({{1, 1}, {-1, -1}}, {5, 5}), -0.5, 1e-12);
  EXPECT_NEAR(*concept_consistency({{1, 0}, {1, 0}}, {3, 1}), 2 * 0.75 * 0.25, 1e-12);
  EXPECT_FALSE(concept_consistency({{1, 0}}, {1}));
  EXPECT_FALSE(concept_consistency({{1, 0}, {1, 0}}, {0, 0}));
}

TEST(MetricsTest, RandomBaselineIsNearZeroAndDeterministic) {
  auto data = generate_dataset(SceneSpec::defaults(), 10, 9);
  auto fields = synthetic_embedding_fields(data, 12, 0.1, 9);
  center_fields(fields);
  const double a = random_baseline(fields), b = random_baseline(fields);
  EXPECT_EQ(a, b);
  EXPECT_LT(std::abs(a), 0.05);
  EXPECT_NE(random_baseline(fields, {5}), a);
  EXPECT_THROW(random_baseline(fields, {}), Error);
}

TEST(MetricsTest, PlantedConceptBeatsBaseline) {
  // Attribution equal to the mask of concept 0 on every image containing it.
  auto data = generate_dataset(SceneSpec::defaults(), 10, 11);
  auto fields = synthetic_embedding_fields(data, data.concept_count() + 1, 0.1, 11);
  center_fields(fields);
  std::vector<const EmbeddingField*> ptrs;
  std::vector<std::vector<double>> maps;
  for (std::size_t n = 0; n < data.size(); ++n) {
    auto m = data.mask(n, 0);
    std::vector<double> v(m.span().begin(), m.span().end());
    if (std::accumulate(v.begin(), v.end(), 0.0) == 0.0) continue;
    ptrs.push_back(&fields[n]);
    maps.push_back(v);
  }
  ASSERT_GE(ptrs.size(), 5u);
  auto c = consistency_from_maps(ptrs, maps, std::vector<double>(ptrs.size(), 1.0));
  ASSERT_TRUE(c);
  auto r = c2_score({c, std::nullopt}, random_baseline(fields));
  EXPECT_EQ(r.scored, 1u);
  EXPECT_GE(r.mean, 0.5);
  EXPECT_FALSE(r.scores[1]);
  EXPECT_EQ(error_kind_of([] { c2_score({std::nullopt}, 0.0); }), ErrorKind::kContract);
}

TEST(MetricsTest, RandomAttributionThresholds) {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    auto a = random_attribution(100, rng);
    for (double v : a) EXPECT_TRUE(v == 0.0 || (v > 0.0 && v < 1.0));
  }
}

TEST(MetricsTest, LabelEntropyCases) {
  auto pure = table_of(1, {1, 2, 0, 0}, {0, 0, 1, 1});
  EXPECT_NEAR(*label_entropy(pure, 0, 2), 0.0, 1e-15);
  auto even = table_of(1, {1, 2, 3, 0}, {0, 0, 1, 1});
  EXPECT_NEAR(*label_entropy(even, 0, 2), std::log(2.0), 1e-12);
  auto flat = table_of(1, {1, 1, 1, 1}, {0, 1, 2, 3});
  EXPECT_NEAR(*label_entropy(flat, 0, 4), std::log(4.0), 1e-12);
  EXPECT_FALSE(label_entropy(table_of(1, {0, -1}, {0, 1}), 0, 2));
  EXPECT_THROW(label_entropy(flat, 0, 3), Error);
}

TEST(MetricsTest, UniformOverThousandLabelsIsAboutSixPointNine) {
  std::vector<std::uint32_t> labels(1000);
  std::iota(labels.begin(), labels.end(), 0u);
  const auto h = label_entropy(table_of(1, std::vector<double>(1000, 0.5), labels), 0, 1000);
  EXPECT_NEAR(*h, std::log(1000.0), 1e-9);
  EXPECT_NEAR(*h, 6.9, 0.01);
}

TEST(MetricsTest, SpatialSizeCases) {
  std::vector<double> one(64, 0.0);
  one[17] = 5.0;
  EXPECT_EQ(*spatial_size_of(one), 1u);
  for (std::size_t p : {10u, 64u, 99u}) EXPECT_EQ(*spatial_size_of(std::vector<double>(p, 1.0)), static_cast<std::size_t>(std::ceil(0.8 * p)));
  EXPECT_EQ(*spatial_size_of({0.5, 0.3, 0.2}), 2u);
  EXPECT_EQ(*spatial_size_of({0.2, -4.0, 0.5, 0.3}), 2u);
  EXPECT_FALSE(spatial_size_of({0.0, -1.0}));
  EXPECT_NEAR(*spatial_size({one, {0.5, 0.3, 0.2}, {-1.0}}), 1.5, 1e-15);
  EXPECT_FALSE(spatial_size({{-1.0}}));
}

TEST(MetricsTest, SparsityMeasures) {
  Rng rng(5);
  auto net = tiny_convnet<double>(rng);
  auto sae = random_sae<double>(rng, 12, 4, 2, 1);
  for (int t = 0; t < 20; ++t) {
    auto rec = fact_forward(net, sae, uniform_tensor<double>({6, 8, 8}, rng));
    const std::size_t l0 = per_image_l0(rec);
    EXPECT_LE(l0, std::min<std::size_t>(12, 2 * 16));
    std::size_t nonzero = 0;
    for (double v : concept_totals(rec)) nonzero += v != 0.0;
    EXPECT_EQ(l0, nonzero);
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t e = explanation_l0(rec, c);
      std::size_t positive = 0;
      const auto trace = concept_contributions(rec, c);
      for (double v : trace.contributions.span()) positive += v > 0.0;
      EXPECT_LE(e, positive);
      EXPECT_LE(explanation_l0(rec, c, 0.5), e);
      EXPECT_EQ(explanation_l0(rec, c, 1.0), positive);
    }
  }
}

TEST(MetricsTest, ActivationTableMatchesRecords) {
  Rng rng(6);
  auto net = tiny_convnet<double>(rng);
  auto sae = random_sae<double>(rng, 5, 4, 2, 1);
  LabeledImages d;
  d.images = uniform_tensor<float>({4, 3, 8, 8}, rng);
  d.labels = {0, 1, 2, 0};
  auto t1 = build_activation_table(net, sae, d, 1), t2 = build_activation_table(net, sae, d, 3);
  EXPECT_TRUE(bitwise_equal(t1.activations, t2.activations));
  auto rec = fact_forward(net, sae, prepare_input(net, d.image<double>(2)));
  auto totals = concept_totals(rec);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(t1.at(k, 2), totals[k]);
  EXPECT_EQ(t1.labels, d.labels);
  auto s = t1.shares(0, {0, 1, 2, 3});
  const double sum = std::accumulate(s.begin(), s.end(), 0.0);
  EXPECT_TRUE(sum == 0.0 || std::abs(sum - 1.0) < 1e-12);
}

}  // namespace
}  // namespace fact
