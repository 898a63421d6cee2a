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

#include "fact/network.hpp"
#include "test_util.hpp"

namespace fact {
namespace {

using testing::random_sae;
using testing::random_tensor;
using testing::tiny_convnet;
using testing::uniform_tensor;

TEST(NetworkTest, ShapeChainAndClassCount) {
  Rng rng(1);
  auto net = tiny_convnet<double>(rng, 3);
  EXPECT_EQ(net.output_shape(1), (Shape{4, 4, 4}));
  EXPECT_EQ(net.output_shape(4), (Shape{3}));
  std::vector<Layer<double>> bad;
  bad.emplace_back(BcosConv<double>(random_tensor<double>({4, 6, 3, 3}, rng), 1, 1, 2.0));
  bad.emplace_back(GlobalSumPool{});
  EXPECT_THROW(Network<double>({6, 8, 8}, bad, 3), Error);
  EXPECT_THROW(Network<double>({5, 8, 8}, bad, 4), Error);
}

TEST(NetworkTest, SixChannelEncodingRoundTrip) {
  Rng rng(2);
  auto rgb = uniform_tensor<double>({3, 4, 4}, rng);
  auto six = encode_six_channel(rgb);
  EXPECT_EQ(six.dim(0), 6u);
  for (std::size_t i = 0; i < 48; ++i) EXPECT_DOUBLE_EQ(six[i] + six[i + 48], 1.0);
  auto collapsed = collapse_six_channel(six);
  for (double v : collapsed.span()) EXPECT_DOUBLE_EQ(v, 1.0);
  EXPECT_THROW(encode_six_channel(Tensor<double>({2, 4, 4})), Error);
}

TEST(NetworkTest, ZeroInputGivesZeroLogits) {
  Rng rng(3);
  auto net = tiny_convnet<double>(rng);
  auto sae = random_sae<double>(rng, 10, 4, 2, 1);
  auto rec = fact_forward(net, sae, Tensor<double>({6, 8, 8}));
  for (double v : rec.logits().span()) EXPECT_EQ(v, 0.0);
}

TEST(NetworkTest, ReplayIsBitwise) {
  Rng rng(4);
  auto net = tiny_convnet<float>(rng);
  auto sae = random_sae<float>(rng, 10, 4, 3, 1);
  auto sae2 = random_sae<float>(rng, 8, 6, 2, 2);
  for (int t = 0; t < 5; ++t) {
    auto x = prepare_input(net, uniform_tensor<float>({3, 8, 8}, rng));
    auto rec = fact_forward(net, {&sae, &sae2}, x);
    EXPECT_TRUE(bitwise_equal(replay(rec), rec.logits()));
  }
}

TEST(NetworkTest, DownstreamConsumesReconstruction) {
  Rng rng(5);
  auto net = tiny_convnet<double>(rng);
  auto sae = random_sae<double>(rng, 10, 4, 3, 1);
  auto x = prepare_input(net, uniform_tensor<double>({3, 8, 8}, rng));
  auto rec = fact_forward(net, sae, x);
  auto direct = run_layers(net, {}, 2, sae_decode(sae_encode(rec.features(), sae), sae));
  for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(rec.logits()[c], direct[c]);
  auto p = predict(net, {&sae}, x);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(rec.logits()[c], p[c]);
  EXPECT_NE(network_forward(net, x).logits()[0], rec.logits()[0]);
}

TEST(NetworkTest, VjpPreservesInnerProductAcrossRecord) {
  Rng rng(6);
  auto net = tiny_convnet<double>(rng);
  auto sae = random_sae<double>(rng, 10, 4, 3, 1);
  auto x = prepare_input(net, uniform_tensor<double>({3, 8, 8}, rng));
  auto rec = fact_forward(net, sae, x);
  const std::size_t last = rec.activations.size() - 1;
  auto cot = random_tensor<double>({3}, rng);
  const double target = dot(cot.span(), rec.logits().span());
  for (std::size_t to = 0; to <= last; ++to) {
    auto back = vjp_frozen(rec, last, to, cot);
    EXPECT_NEAR(dot(back.span(), rec.activations[to].span()), target, 1e-10 * std::max(1.0, std::abs(target)))
        << "to=" << to;
  }
  EXPECT_TRUE(bitwise_equal(vjp_frozen(rec, last, last, cot), cot));
  EXPECT_THROW(vjp_frozen(rec, 1, 2, rec.activations[1]), Error);
  EXPECT_THROW(vjp_frozen(rec, last, 0, Tensor<double>({4})), Error);
}

TEST(NetworkTest, SaeSiteValidation) {
  Rng rng(7);
  auto net = tiny_convnet<double>(rng);
  auto x = Tensor<double>({6, 8, 8});
  auto wrong_channels = random_sae<double>(rng, 10, 5, 3, 1);
  EXPECT_THROW(fact_forward(net, wrong_channels, x), Error);
  auto out_of_range = random_sae<double>(rng, 10, 4, 3, 9);
  EXPECT_THROW(fact_forward(net, out_of_range, x), Error);
  auto a = random_sae<double>(rng, 10, 4, 3, 1), b = random_sae<double>(rng, 10, 4, 3, 1);
  EXPECT_THROW(fact_forward(net, {&a, &b}, x), Error);
  EXPECT_THROW(fact_forward(net, a, Tensor<double>({6, 4, 4})), Error);
  auto rec = network_forward(net, x);
  EXPECT_FALSE(rec.has_sae());
  EXPECT_THROW(rec.codes(), Error);
}

TEST(NetworkTest, SaesAreOrderedByLayer) {
  Rng rng(8);
  auto net = tiny_convnet<double>(rng);
  auto early = random_sae<double>(rng, 10, 4, 3, 1);
  auto late = random_sae<double>(rng, 8, 6, 2, 2);
  auto rec = fact_forward(net, {&late, &early}, prepare_input(net, uniform_tensor<double>({3, 8, 8}, rng)));
  EXPECT_EQ(rec.tap(0).layer_index, 1u);
  EXPECT_EQ(rec.tap(1).layer_index, 2u);
  EXPECT_LT(rec.tap(0).codes, rec.tap(1).codes);
}

TEST(NetworkTest, PositiveHomogeneityOnNetworkInput) {
  Rng rng(9);
  auto net = tiny_convnet<double>(rng);
  auto sae = random_sae<double>(rng, 10, 4, 3, 1);
  auto x = prepare_input(net, uniform_tensor<double>({3, 8, 8}, rng));
  auto base = fact_forward(net, sae, x).logits();
  for (double a : {0.1, 2.0, 7.5}) {
    auto scaled_logits = fact_forward(net, sae, scaled(x, a)).logits();
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(scaled_logits[c], a * base[c], 1e-9 * std::abs(a * base[c]) + 1e-12);
  }
}

TEST(NetworkTest, CastPreservesStructure) {
  Rng rng(10);
  auto net = tiny_convnet<double>(rng);
  auto f = net.cast<float>();
  EXPECT_EQ(f.layer_count(), net.layer_count());
  auto x = prepare_input(net, uniform_tensor<double>({3, 8, 8}, rng));
  auto a = network_forward(net, x).logits();
  auto b = network_forward(f, x.cast<float>()).logits();
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(a[c], b[c], 1e-4 * std::max(1.0, std::abs(a[c])));
}

}  // namespace
}  // namespace fact
