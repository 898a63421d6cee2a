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
#include <vector>

#include "fact/datagen.hpp"
#include "fact/embedding.hpp"
#include "fact/metrics.hpp"
#include "test_util.hpp"

namespace fact {
namespace {

using testing::error_kind_of;

// One 2x2 image: concepts 1..3 on three pixels, background on the fourth.
LabeledImages quad_image() {
  LabeledImages d;
  d.images = Tensor<float>({1, 3, 2, 2});
  d.labels = {0};
  d.masks = Tensor<std::uint8_t>({1, 3, 2, 2});
  d.masks[0 * 4 + 1] = 1;
  d.masks[1 * 4 + 2] = 1;
  d.masks[2 * 4 + 3] = 1;
  return d;
}

std::vector<double> pixel(const EmbeddingField& f, std::size_t p) {
  const std::size_t area = f.values.size() / f.dims();
  std::vector<double> v;
  for (std::size_t e = 0; e < f.dims(); ++e) v.push_back(f.values[e * area + p]);
  return v;
}

TEST(EmbeddingTest, NoiseFreeFieldsAreOneHot) {
  auto data = generate_dataset(SceneSpec::defaults(), 2, 3);
  auto fields = synthetic_embedding_fields(data, data.concept_count() + 1, 0.0, 1);
  ASSERT_EQ(fields.size(), data.size());
  for (std::size_t n = 0; n < data.size(); ++n) {
    const auto ids = concept_id_map(data, n);
    for (std::size_t p = 0; p < ids.size(); p += 37) {
      const auto v = pixel(fields[n], p);
      for (std::size_t e = 0; e < v.size(); ++e) EXPECT_EQ(v[e], e == ids[p] ? 1.0 : 0.0);
    }
  }
  EXPECT_EQ(fields[1].image_id, "img1");
  EXPECT_THROW(synthetic_embedding_field(data, 0, data.concept_count(), 0.0, 1), Error);
}

TEST(EmbeddingTest, SameConceptCosineIsOneAcrossImages) {
  auto data = generate_dataset(SceneSpec::defaults(), 2, 4);
  auto fields = synthetic_embedding_fields(data, data.concept_count() + 2, 0.0, 1);
  center_fields(fields);
  const auto a = concept_id_map(data, 0), b = concept_id_map(data, 1);
  for (std::size_t p = 0; p < a.size(); ++p)
    for (std::size_t q = 0; q < b.size(); q += 97)
      if (a[p] == b[q]) {
        EXPECT_NEAR(cosine(pixel(fields[0], p), pixel(fields[1], q)), 1.0, 1e-6);
      }
}

TEST(EmbeddingTest, BalancedIdsGiveEqualNegativeCosines) {
  std::vector<EmbeddingField> fields = {synthetic_embedding_field(quad_image(), 0, 4, 0.0, 0)};
  center_fields(fields);
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t q = p + 1; q < 4; ++q)
      EXPECT_NEAR(cosine(pixel(fields[0], p), pixel(fields[0], q)), -1.0 / 3.0, 1e-6);
  for (double m : dataset_mean(fields)) EXPECT_NEAR(m, 0.0, 1e-7);
}

TEST(EmbeddingTest, NoiseIsSeeded) {
  auto data = generate_dataset(SceneSpec::defaults(), 1, 2);
  auto a = synthetic_embedding_field(data, 0, 10, 0.1, 3), b = synthetic_embedding_field(data, 0, 10, 0.1, 3);
  auto c = synthetic_embedding_field(data, 0, 10, 0.1, 4);
  EXPECT_TRUE(bitwise_equal(a.values, b.values));
  EXPECT_FALSE(bitwise_equal(a.values, c.values));
}

TEST(EmbeddingTest, PlantedAttributionRecoversOneHot) {
  auto field = synthetic_embedding_field(quad_image(), 0, 4, 0.0, 0);
  auto e = concept_embedding(field, {0.0, 0.0, 1.0, 0.0});
  EXPECT_EQ(e, (std::vector<double>{0, 0, 1, 0}));
}

TEST(EmbeddingTest, ExchangeProfileRoundTrip) {
  auto data = generate_dataset(SceneSpec::defaults(), 1, 2);
  auto fields = synthetic_embedding_fields(data, 12, 0.05, 7);
  center_fields(fields);
  auto c = decode_container(encode_container(embeddings_to_container(fields, "dino-small")));
  EXPECT_EQ(c.meta.at("centered"), "true");
  EXPECT_EQ(c.meta.at("dataset_mean_included"), "false");
  ASSERT_EQ(c.entries.front().name.rfind("embed/", 0), 0u);
  auto back = embeddings_from_container(c);
  ASSERT_EQ(back.size(), fields.size());
  for (std::size_t i = 0; i < fields.size(); ++i) {
    EXPECT_EQ(back[i].image_id, fields[i].image_id);
    EXPECT_TRUE(bitwise_equal(back[i].values, fields[i].values));
    EXPECT_EQ(back[i].source, "imported:dino-small");
  }
}

ContainerIssue import_issue(const TensorContainer& c) {
  try {
    embeddings_from_container(c);
  } catch (const ContainerError& e) {
    return e.issue();
  }
  ADD_FAILURE() << "embedding container accepted";
  return ContainerIssue::kBadMagic;
}

TEST(EmbeddingTest, ExchangeProfileRejections) {
  auto good = [] {
    TensorContainer c;
    c.add("embed/a", Tensor<float>({2, 2, 2}));
    c.meta = {{"source_model", "m"}, {"centered", "true"}, {"dataset_mean_included", "false"}};
    return c;
  };
  EXPECT_NO_THROW(embeddings_from_container(good()));

  auto c = good();
  c.meta.erase("source_model");
  EXPECT_EQ(import_issue(c), ContainerIssue::kBadHeader);
  c = good();
  c.meta["centered"] = "false";
  EXPECT_EQ(import_issue(c), ContainerIssue::kBadHeader);
  c = good();
  c.meta["dataset_mean_included"] = "true";
  EXPECT_EQ(import_issue(c), ContainerIssue::kBadHeader);
  c = good();
  c.add("embed/b", Tensor<double>({2, 2, 2}));
  EXPECT_EQ(import_issue(c), ContainerIssue::kWrongDtype);
  c = good();
  c.add("embed/b", Tensor<float>({2, 4}));
  EXPECT_EQ(import_issue(c), ContainerIssue::kBadHeader);
  c = good();
  c.add("embed/b", Tensor<float>({2, 3, 3}));
  EXPECT_EQ(import_issue(c), ContainerIssue::kBadHeader);
  c = good();
  c.add("embed/", Tensor<float>({2, 2, 2}));
  EXPECT_EQ(import_issue(c), ContainerIssue::kBadHeader);
  c = good();
  c.entries.clear();
  c.add("other", Tensor<float>({2, 2, 2}));
  EXPECT_EQ(import_issue(c), ContainerIssue::kMissingEntry);
  EXPECT_EQ(error_kind_of([] { dataset_mean({}); }), ErrorKind::kContract);
}

}  // namespace
}  // namespace fact
