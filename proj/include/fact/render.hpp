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

#pragma once

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fact/error.hpp"
#include "fact/store.hpp"
#include "fact/trace.hpp"

namespace fact {

enum class RenderMode { kSigned, kAlpha };

inline RenderMode parse_render_mode(std::string_view s) {
  if (s == "signed") return RenderMode::kSigned;
  if (s == "alpha") return RenderMode::kAlpha;
  fail(ErrorKind::kConfig, "unknown render mode '" + std::string(s) + "' (expected signed or alpha)");
}

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  const std::uint8_t* at(std::size_t row, std::size_t col) const { return &pixels[(row * width + col) * 3]; }
};

namespace detail {

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  put_be32(out, static_cast<std::uint32_t>(
                    crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start))));
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_png(const RgbImage& img) {
  require(img.width > 0 && img.height > 0 && img.pixels.size() == img.width * img.height * 3, ErrorKind::kShape,
          "PNG raster size does not match its extents");
  std::vector<std::uint8_t> raw;
  raw.reserve(img.height * (img.width * 3 + 1));
  for (std::size_t r = 0; r < img.height; ++r) {
    raw.push_back(0);
    raw.insert(raw.end(), img.at(r, 0), img.at(r, 0) + img.width * 3);
  }
  uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> packed(packed_size);
  if (compress2(packed.data(), &packed_size, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
    fail(ErrorKind::kIo, "zlib compression failed");
  packed.resize(packed_size);

  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  detail::put_be32(ihdr, static_cast<std::uint32_t>(img.width));
  detail::put_be32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});
  detail::put_chunk(out, "IHDR", ihdr);
  detail::put_chunk(out, "IDAT", packed);
  detail::put_chunk(out, "IEND", {});
  return out;
}

/// Signed mode: white at zero, red for positive and blue for negative pixel
/// sums, saturating at the largest magnitude. Alpha mode: the image shown
/// with opacity proportional to the positive pixel mass, over white.
template <class T>
RgbImage render_attribution(const AttributionMap<T>& map, RenderMode mode, const Tensor<T>* image = nullptr) {
  const std::size_t h = map.values.dim(1), w = map.values.dim(2);
  const std::vector<double> s = spatial_map(map);
  RgbImage img{w, h, std::vector<std::uint8_t>(w * h * 3, 255)};
  if (mode == RenderMode::kSigned) {
    double peak = 0.0;
    for (double v : s) peak = std::max(peak, std::abs(v));
    if (peak == 0.0) return img;
    for (std::size_t p = 0; p < h * w; ++p) {
      if (s[p] == 0.0) continue;
      const double t = std::abs(s[p]) / peak;
      std::uint8_t* px = &img.pixels[p * 3];
      const std::uint8_t fade = detail::to_byte(1.0 - t);
      if (s[p] > 0) px[1] = px[2] = fade;
      else px[0] = px[1] = fade;
      if (px[0] == 255 && px[1] == 255 && px[2] == 255) px[s[p] > 0 ? 2 : 0] = 254;
    }
    return img;
  }
  require(image != nullptr && image->shape() == Shape({3, h, w}), ErrorKind::kShape,
          "alpha rendering needs the RGB image [3," + std::to_string(h) + "," + std::to_string(w) + "]");
  double peak = 0.0;
  for (double v : s) peak = std::max(peak, v);
  if (peak <= 0.0) return img;
  for (std::size_t p = 0; p < h * w; ++p) {
    const double alpha = std::max(s[p], 0.0) / peak;
    for (std::size_t c = 0; c < 3; ++c)
      img.pixels[p * 3 + c] = detail::to_byte(alpha * static_cast<double>((*image)[c * h * w + p]) + (1.0 - alpha));
  }
  return img;
}

template <class T>
void write_attribution_png(const AttributionMap<T>& map, RenderMode mode, const std::string& path,
                           const Tensor<T>* image = nullptr) {
  write_file_bytes(encode_png(render_attribution(map, mode, image)), path);
}

}  // namespace fact
