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

// Per-pixel embedding fields for the C2 score: synthetic one-hot fields with
// ground-truth concept ids, dataset-mean centering, and the embedding-exchange
// container profile used to import real features.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fact/datagen.hpp"
#include "fact/dataset.hpp"
#include "fact/rng.hpp"
#include "fact/store.hpp"
#include "fact/tensor.hpp"

namespace fact {

struct EmbeddingField {
  std::string image_id;
  Tensor<float> values;  // [E, H, W]
  std::string source = "synthetic";

  std::size_t dims() const { return values.dim(0); }
};

/// One-hot of the ground-truth concept id of every pixel (background has its
/// own id 0) plus Gaussian noise. Not centered.
inline EmbeddingField synthetic_embedding_field(const LabeledImages& data, std::size_t n, std::size_t dims,
                                                double noise_sigma, std::uint64_t seed) {
  require(n < data.size(), ErrorKind::kIndex, "image index out of range");
  require(dims >= data.concept_count() + 1, ErrorKind::kConfig,
          "embedding dimension " + std::to_string(dims) + " cannot hold " + std::to_string(data.concept_count()) +
              " concepts plus background");
  require(noise_sigma >= 0.0, ErrorKind::kConfig, "noise sigma must be >= 0");
  const std::size_t h = data.height(), w = data.width(), area = h * w;
  const std::vector<std::size_t> ids = concept_id_map(data, n);
  EmbeddingField f{"img" + std::to_string(n), Tensor<float>({dims, h, w}), "synthetic"};
  Rng rng(derive_seed(derive_seed(seed, "embedding_field"), n));
  for (std::size_t e = 0; e < dims; ++e)
    for (std::size_t p = 0; p < area; ++p) {
      const double v = (ids[p] == e ? 1.0 : 0.0) + (noise_sigma > 0.0 ? noise_sigma * rng.normal() : 0.0);
      f.values[e * area + p] = static_cast<float>(v);
    }
  return f;
}

inline std::vector<EmbeddingField> synthetic_embedding_fields(const LabeledImages& data, std::size_t dims,
                                                              double noise_sigma, std::uint64_t seed) {
  std::vector<EmbeddingField> out;
  for (std::size_t n = 0; n < data.size(); ++n) out.push_back(synthetic_embedding_field(data, n, dims, noise_sigma, seed));
  return out;
}

/// Mean embedding vector over every pixel of every field.
inline std::vector<double> dataset_mean(const std::vector<EmbeddingField>& fields) {
  require(!fields.empty(), ErrorKind::kContract, "no embedding fields");
  const std::size_t dims = fields.front().dims();
  std::vector<double> mean(dims, 0.0);
  std::size_t pixels = 0;
  for (const auto& f : fields) {
    require(f.dims() == dims, ErrorKind::kShape, "embedding fields disagree on dimension");
    const std::size_t area = f.values.size() / dims;
    for (std::size_t e = 0; e < dims; ++e)
      for (std::size_t p = 0; p < area; ++p) mean[e] += f.values[e * area + p];
    pixels += area;
  }
  for (auto& m : mean) m /= static_cast<double>(pixels);
  return mean;
}

inline void center_fields(std::vector<EmbeddingField>& fields) {
  const std::vector<double> mean = dataset_mean(fields);
  for (auto& f : fields) {
    const std::size_t area = f.values.size() / f.dims();
    for (std::size_t e = 0; e < f.dims(); ++e)
      for (std::size_t p = 0; p < area; ++p)
        f.values[e * area + p] = static_cast<float>(f.values[e * area + p] - mean[e]);
  }
}

inline constexpr const char* kEmbedPrefix = "embed/";

/// Centered fields in the embedding-exchange profile.
inline TensorContainer embeddings_to_container(const std::vector<EmbeddingField>& fields,
                                               const std::string& source_model) {
  TensorContainer c;
  for (const auto& f : fields) c.add(kEmbedPrefix + f.image_id, f.values);
  c.meta["source_model"] = source_model;
  c.meta["centered"] = "true";
  c.meta["dataset_mean_included"] = "false";
  return c;
}

/// Reads an embedding-exchange container, checking profile meta, entry
/// dtypes and shapes. Fields come back in container order.
inline std::vector<EmbeddingField> embeddings_from_container(const TensorContainer& c) {
  const std::string& model = c.meta_required("source_model");
  if (model.empty()) throw ContainerError(ContainerIssue::kBadHeader, "embedding container has empty source_model");
  if (c.meta_required("centered") != "true")
    throw ContainerError(ContainerIssue::kBadHeader, "embedding container must be centered (centered=\"true\")");
  if (c.meta_required("dataset_mean_included") != "false")
    throw ContainerError(ContainerIssue::kBadHeader,
                         "embedding container must not include the dataset mean (dataset_mean_included=\"false\")");
  std::vector<EmbeddingField> out;
  const std::string prefix = kEmbedPrefix;
  for (const auto& e : c.entries) {
    if (e.name.compare(0, prefix.size(), prefix) != 0) continue;
    if (e.name.size() == prefix.size())
      throw ContainerError(ContainerIssue::kBadHeader, "embedding entry '" + e.name + "' has an empty image id");
    if (e.dtype != DType::kF32)
      throw ContainerError(ContainerIssue::kWrongDtype,
                           "embedding entry '" + e.name + "' has dtype " + dtype_name(e.dtype) + ", expected f32");
    if (e.shape.size() != 3 || numel(e.shape) == 0)
      throw ContainerError(ContainerIssue::kBadHeader,
                           "embedding entry '" + e.name + "' must be a non-empty [E,H,W], got " + shape_str(e.shape));
    if (!out.empty() && out.front().values.shape() != e.shape)
      throw ContainerError(ContainerIssue::kBadHeader, "embedding entry '" + e.name + "' has shape " +
                                                           shape_str(e.shape) + ", others have " +
                                                           shape_str(out.front().values.shape()));
    out.push_back({e.name.substr(prefix.size()), e.as<float>(), "imported:" + model});
  }
  if (out.empty()) throw ContainerError(ContainerIssue::kMissingEntry, "container has no embed/<image_id> entries");
  return out;
}

}  // namespace fact
