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

#include <set>
#include <vector>

#include "fact/datagen.hpp"

namespace fact {
namespace {

TEST(DatagenTest, DeterministicUnderSeed) {
  auto spec = SceneSpec::defaults();
  auto a = generate_dataset(spec, 3, 9, "train");
  auto b = generate_dataset(spec, 3, 9, "train");
  auto c = generate_dataset(spec, 3, 10, "train");
  EXPECT_TRUE(bitwise_equal(a.images, b.images));
  EXPECT_TRUE(bitwise_equal(a.masks, b.masks));
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_FALSE(bitwise_equal(a.images, c.images));
}

TEST(DatagenTest, BalancedAndInRange) {
  auto spec = SceneSpec::defaults();
  auto d = generate_dataset(spec, 100, 1, "train");
  EXPECT_EQ(d.size(), 500u);
  std::vector<int> per(5, 0);
  for (auto l : d.labels) ++per[l];
  for (int p : per) EXPECT_EQ(p, 100);
  for (float v : d.images.span()) {
    ASSERT_GE(v, 0.f);
    ASSERT_LE(v, 1.f);
  }
  EXPECT_EQ(d.masks.shape(), (Shape{500, 8, 32, 32}));
}

TEST(DatagenTest, LabelsRecoverableFromMasks) {
  auto spec = SceneSpec::defaults();
  auto d = generate_dataset(spec, 40, 2, "test");
  for (std::size_t n = 0; n < d.size(); ++n) {
    auto label = label_from_presence(spec, concept_presence(d, n));
    ASSERT_TRUE(label.has_value());
    EXPECT_EQ(*label, d.labels[n]);
  }
}

TEST(DatagenTest, DefaultInventoryShapesTheTask) {
  auto spec = SceneSpec::defaults();
  EXPECT_EQ(spec.concepts.size(), 8u);
  EXPECT_EQ(spec.class_count(), 5u);
  bool shared = false;
  for (std::size_t a = 0; a < spec.class_count(); ++a) {
    EXPECT_GE(spec.class_rules[a].size(), 2u);
    for (std::size_t b = a + 1; b < spec.class_count(); ++b)
      for (std::size_t k : spec.class_rules[a])
        for (std::size_t j : spec.class_rules[b]) shared |= k == j;
  }
  EXPECT_TRUE(shared);
}

TEST(DatagenTest, MasksAreDisjointAndIdMapMatches) {
  auto spec = SceneSpec::defaults();
  auto d = generate_dataset(spec, 5, 3, "train");
  for (std::size_t n = 0; n < d.size(); ++n) {
    auto ids = concept_id_map(d, n);
    for (std::size_t p = 0; p < 32 * 32; ++p) {
      int owners = 0;
      for (std::size_t k = 0; k < 8; ++k) owners += d.mask(n, k)[p] != 0;
      ASSERT_LE(owners, 1);
      if (owners == 0) EXPECT_EQ(ids[p], 0u);
      else EXPECT_NE(d.mask(n, ids[p] - 1)[p], 0);
    }
  }
}

TEST(DatagenTest, RejectsUnsatisfiableRules) {
  auto spec = SceneSpec::defaults();
  spec.class_rules[1] = {1, 12};
  EXPECT_THROW(generate_dataset(spec, 1, 1, "train"), Error);
  spec = SceneSpec::defaults();
  spec.class_rules[0] = {3};
  EXPECT_THROW(spec.validate(), Error);
  spec = SceneSpec::defaults();
  spec.distractors = {0};
  EXPECT_THROW(spec.validate(), Error);
  EXPECT_THROW(generate_dataset(SceneSpec::defaults(), 0, 1, "train"), Error);
}

TEST(DatagenTest, NoiseFreeBackgroundIsFlat) {
  auto spec = SceneSpec::defaults();
  spec.noise_sigma = 0.0;
  auto d = generate_dataset(spec, 1, 4, "train");
  auto ids = concept_id_map(d, 0);
  std::set<float> bg;
  for (std::size_t p = 0; p < 32 * 32; ++p)
    if (ids[p] == 0) bg.insert(d.images[p]);
  EXPECT_EQ(bg.size(), 1u);
}

}  // namespace
}  // namespace fact
