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

#include <vector>

#include "fact/render.hpp"
#include "test_util.hpp"

namespace fact {
namespace {

AttributionMap<double> map_of(std::vector<double> v, std::size_t h, std::size_t w) {
  AttributionMap<double> m;
  m.values = Tensor<double>({3, h, w});
  for (std::size_t p = 0; p < h * w; ++p) m.values[p] = v[p];
  return m;
}

std::size_t non_white(const RgbImage& img) {
  std::size_t n = 0;
  for (std::size_t p = 0; p < img.width * img.height; ++p)
    n += !(img.pixels[3 * p] == 255 && img.pixels[3 * p + 1] == 255 && img.pixels[3 * p + 2] == 255);
  return n;
}

TEST(RenderTest, ZeroMapIsWhite) {
  auto img = render_attribution(map_of(std::vector<double>(12, 0.0), 3, 4), RenderMode::kSigned);
  EXPECT_EQ(img.width, 4u);
  EXPECT_EQ(img.height, 3u);
  EXPECT_EQ(non_white(img), 0u);
}

TEST(RenderTest, SinglePixelMap) {
  std::vector<double> v(16, 0.0);
  v[5] = 2.0;
  auto img = render_attribution(map_of(v, 4, 4), RenderMode::kSigned);
  EXPECT_EQ(non_white(img), 1u);
  const std::uint8_t* px = img.at(1, 1);
  EXPECT_EQ(px[0], 255);
  EXPECT_EQ(px[1], 0);
  EXPECT_EQ(px[2], 0);
  v[5] = -2.0;
  const auto neg = render_attribution(map_of(v, 4, 4), RenderMode::kSigned);
  px = neg.at(1, 1);
  EXPECT_EQ(px[0], 0);
  EXPECT_EQ(px[2], 255);
}

TEST(RenderTest, TinyValuesStayVisible) {
  std::vector<double> v(4, 0.0);
  v[0] = 1.0;
  v[1] = 1e-6;
  EXPECT_EQ(non_white(render_attribution(map_of(v, 2, 2), RenderMode::kSigned)), 2u);
}

TEST(RenderTest, AlphaModeBlendsImage) {
  std::vector<double> v = {1.0, 0.5, 0.0, -1.0};
  Tensor<double> rgb({3, 2, 2});
  auto img = render_attribution(map_of(v, 2, 2), RenderMode::kAlpha, &rgb);
  EXPECT_EQ(img.at(0, 0)[0], 0);
  EXPECT_EQ(img.at(0, 1)[0], 128);
  EXPECT_EQ(img.at(1, 0)[0], 255);
  EXPECT_EQ(img.at(1, 1)[0], 255);
  EXPECT_THROW(render_attribution(map_of(v, 2, 2), RenderMode::kAlpha), Error);
}

TEST(RenderTest, PngBytesAreDeterministic) {
  std::vector<double> v = {0.1, -0.3, 0.7, 0.0, 0.2, 0.9};
  auto a = encode_png(render_attribution(map_of(v, 2, 3), RenderMode::kSigned));
  auto b = encode_png(render_attribution(map_of(v, 2, 3), RenderMode::kSigned));
  EXPECT_EQ(a, b);
  const std::vector<std::uint8_t> sig = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  ASSERT_GT(a.size(), 33u);
  EXPECT_TRUE(std::equal(sig.begin(), sig.end(), a.begin()));
  EXPECT_EQ(std::string(a.begin() + 12, a.begin() + 16), "IHDR");
  EXPECT_EQ(a[19], 3);  // width
  EXPECT_EQ(a[23], 2);  // height
  EXPECT_EQ(std::string(a.end() - 8, a.end() - 4), "IEND");
}

TEST(RenderTest, ParsesModes) {
  EXPECT_EQ(parse_render_mode("signed"), RenderMode::kSigned);
  EXPECT_EQ(parse_render_mode("alpha"), RenderMode::kAlpha);
  EXPECT_THROW(parse_render_mode("heat"), Error);
  EXPECT_THROW(encode_png(RgbImage{}), Error);
}

}  // namespace
}  // namespace fact
