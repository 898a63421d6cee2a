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
#include <numeric>
#include <set>
#include <vector>

#include "fact/config.hpp"
#include "fact/rng.hpp"

namespace fact {
namespace {

TEST(RngTest, SplitmixReferenceValue) {
  EXPECT_EQ(splitmix64(0), 0xe220a8397b1dcdafULL);
}

TEST(RngTest, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  std::vector<std::uint64_t> va, vb, vc;
  for (int i = 0; i < 16; ++i) {
    va.push_back(a.next());
    vb.push_back(b.next());
    vc.push_back(c.next());
  }
  EXPECT_EQ(va, vb);
  EXPECT_NE(va, vc);
}

TEST(RngTest, NamedStreamsAreIndependentOfEachOther) {
  EXPECT_NE(derive_seed(7, "train"), derive_seed(7, "sae"));
  EXPECT_NE(derive_seed(7, std::uint64_t{0}), derive_seed(7, std::uint64_t{1}));
  EXPECT_EQ(derive_seed(7, "train"), derive_seed(7, "train"));
}

TEST(RngTest, UniformMoments) {
  Rng r(1);
  double s = 0, s2 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    s += u;
    s2 += u * u;
  }
  EXPECT_NEAR(s / n, 0.5, 0.01);
  EXPECT_NEAR(s2 / n - (s / n) * (s / n), 1.0 / 12.0, 0.005);
}

TEST(RngTest, NormalMoments) {
  Rng r(2);
  double s = 0, s2 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.02);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(RngTest, BelowCoversRange) {
  Rng r(3);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) ++hits[r.below(7)];
  for (int h : hits) EXPECT_NEAR(h, 1000, 150);
}

TEST(RngTest, ShuffleIsPermutation) {
  Rng r(4);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  r.shuffle(v.begin(), v.end());
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_FALSE(std::is_sorted(v.begin(), v.end()));
}

TEST(RngTest, CategoricalFollowsWeights) {
  Rng r(5);
  const std::vector<double> cdf = {1.0, 1.0, 4.0};  // weights 1, 0, 3
  std::vector<int> hits(3, 0);
  for (int i = 0; i < 40000; ++i) ++hits[r.categorical(cdf)];
  EXPECT_EQ(hits[1], 0);
  EXPECT_NEAR(hits[0] / 40000.0, 0.25, 0.01);
}

TEST(ConfigTest, ParsesKeyValues) {
  auto c = KeyValueConfig::parse("# comment\nepochs = 12\nlr=1e-3  # trailing\n\nname = toy\nflag = off\n");
  EXPECT_EQ(c.get_int("epochs", 0), 12);
  EXPECT_DOUBLE_EQ(c.get_double("lr", 0), 1e-3);
  EXPECT_EQ(c.get_string("name", ""), "toy");
  EXPECT_FALSE(c.get_switch("flag", true));
  EXPECT_EQ(c.get_int("missing", 5), 5);
}

TEST(ConfigTest, RejectsMalformedInput) {
  EXPECT_THROW(KeyValueConfig::parse("no equals sign"), Error);
  EXPECT_THROW(KeyValueConfig::parse("=3"), Error);
  auto c = KeyValueConfig::parse("a = 1.5\nb = maybe\n");
  EXPECT_THROW(c.get_int("a", 0), Error);
  EXPECT_THROW(c.get_switch("b", false), Error);
  EXPECT_THROW(c.get_double("b", 0), Error);
  auto neg = KeyValueConfig::parse("epochs = -3\n");
  EXPECT_EQ(neg.get_int("epochs", 0), -3);
  EXPECT_THROW(neg.get_count("epochs", 1), Error);
  EXPECT_EQ(neg.get_count("absent", 7), 7u);
}

TEST(ConfigTest, MissingFileIsIoError) {
  try {
    KeyValueConfig::load("/nonexistent/fact.cfg");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIo);
  }
}

}  // namespace
}  // namespace fact
