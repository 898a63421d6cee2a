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

// Named-tensor layouts of the model and data artifacts inside FTC1
// containers.

#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fact/dataset.hpp"
#include "fact/network.hpp"
#include "fact/sae.hpp"
#include "fact/sae_model.hpp"
#include "fact/store.hpp"

namespace fact {

namespace detail {

inline ContainerError layout_error(const std::string& what) {
  return ContainerError(ContainerIssue::kBadHeader, what);
}

inline void expect_kind(const TensorContainer& c, const std::string& kind) {
  const std::string got = c.meta_or("kind", "");
  if (got != kind) throw layout_error("container holds '" + got + "', expected '" + kind + "'");
}

}  // namespace detail

template <class T>
TensorContainer network_to_container(const Network<T>& net) {
  TensorContainer c;
  nlohmann::json arch = nlohmann::json::array();
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    const Layer<T>& layer = net.layer(i);
    nlohmann::json j{{"type", layer_name(layer)}};
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, BcosLinear<T>>) {
            j["b"] = l.b_exponent;
            c.add("layer/" + std::to_string(i) + "/weight", l.weight);
          } else if constexpr (std::is_same_v<L, BcosConv<T>>) {
            j["b"] = l.b_exponent;
            j["stride"] = l.stride;
            j["padding"] = l.padding;
            c.add("layer/" + std::to_string(i) + "/weight", l.filters);
          } else if constexpr (std::is_same_v<L, AvgPool>) {
            j["size"] = l.size;
          }
        },
        layer);
    arch.push_back(j);
  }
  c.meta["kind"] = "network";
  c.meta["arch"] = arch.dump();
  c.meta["input_shape"] = nlohmann::json(net.input_shape()).dump();
  c.meta["class_count"] = std::to_string(net.class_count());
  c.meta["six_channel"] = net.six_channel() ? "on" : "off";
  return c;
}

template <class T>
Network<T> network_from_container(const TensorContainer& c) {
  detail::expect_kind(c, "network");
  nlohmann::json arch, input;
  try {
    arch = nlohmann::json::parse(c.meta_required("arch"));
    input = nlohmann::json::parse(c.meta_required("input_shape"));
  } catch (const nlohmann::json::exception& e) {
    throw detail::layout_error(std::string("network meta is not valid JSON: ") + e.what());
  }
  std::vector<Layer<T>> layers;
  try {
    for (std::size_t i = 0; i < arch.size(); ++i) {
      const auto& j = arch[i];
      const std::string type = j.at("type").get<std::string>();
      const std::string wname = "layer/" + std::to_string(i) + "/weight";
      if (type == "bcos_linear") layers.emplace_back(BcosLinear<T>(c.get<T>(wname), j.at("b").get<double>()));
      else if (type == "bcos_conv")
        layers.emplace_back(BcosConv<T>(c.get<T>(wname), j.at("stride").get<std::size_t>(),
                                        j.at("padding").get<std::size_t>(), j.at("b").get<double>()));
      else if (type == "relu") layers.emplace_back(Relu{});
      else if (type == "avg_pool") layers.emplace_back(AvgPool{j.at("size").get<std::size_t>()});
      else if (type == "flatten") layers.emplace_back(Flatten{});
      else if (type == "global_sum_pool") layers.emplace_back(GlobalSumPool{});
      else throw detail::layout_error("unknown layer type '" + type + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw detail::layout_error(std::string("malformed layer description: ") + e.what());
  }
  return Network<T>(input.get<Shape>(), std::move(layers), std::stoul(c.meta_required("class_count")),
                    c.meta_or("six_channel", "on") == "on");
}

template <class T>
TensorContainer sae_to_container(const SaeModel<T>& sae) {
  TensorContainer c;
  c.add("encoder", sae.encoder);
  c.add("dictionary", sae.dictionary);
  c.meta["kind"] = "sae";
  c.meta["topk"] = std::to_string(sae.topk);
  c.meta["layer_index"] = std::to_string(sae.layer_index);
  return c;
}

template <class T>
SaeModel<T> sae_from_container(const TensorContainer& c) {
  detail::expect_kind(c, "sae");
  return SaeModel<T>(c.get<T>("encoder"), c.get<T>("dictionary"), std::stoul(c.meta_required("topk")),
                     std::stoul(c.meta_required("layer_index")));
}

inline TensorContainer dataset_to_container(const LabeledImages& d, const std::vector<std::string>& concept_names = {}) {
  d.validate();
  TensorContainer c;
  c.add("images", d.images);
  Tensor<std::uint8_t> labels({d.size()});
  for (std::size_t i = 0; i < d.size(); ++i) {
    require(d.labels[i] < 256, ErrorKind::kContract, "labels must fit in u8");
    labels[i] = static_cast<std::uint8_t>(d.labels[i]);
  }
  c.add("labels", labels);
  if (!d.masks.empty()) c.add("masks", d.masks);
  c.meta["kind"] = "dataset";
  c.meta["split"] = d.split;
  c.meta["concept_names"] = nlohmann::json(concept_names).dump();
  return c;
}

inline LabeledImages dataset_from_container(const TensorContainer& c) {
  detail::expect_kind(c, "dataset");
  LabeledImages d;
  d.images = c.get<float>("images");
  const auto labels = c.get<std::uint8_t>("labels");
  d.labels.assign(labels.vec().begin(), labels.vec().end());
  if (c.contains("masks")) d.masks = c.get<std::uint8_t>("masks");
  d.split = c.meta_or("split", "train");
  d.validate();
  return d;
}

/// `layer` is recorded for the consumer; the samples do not carry it.
inline TensorContainer features_to_container(const FeatureDataset& d, std::size_t layer) {
  require(d.samples.rank() == 2 && d.samples.dim(0) == d.size(), ErrorKind::kContract,
          "feature samples must be [N, C] with one provenance row each");
  TensorContainer c;
  c.add("samples", d.samples);
  Tensor<double> prov({d.size(), 3});
  for (std::size_t i = 0; i < d.size(); ++i) {
    prov[3 * i] = d.provenance[i].image;
    prov[3 * i + 1] = d.provenance[i].row;
    prov[3 * i + 2] = d.provenance[i].col;
  }
  c.add("provenance", prov);
  c.meta["kind"] = "features";
  c.meta["heldout"] = d.heldout ? "on" : "off";
  c.meta["layer_index"] = std::to_string(layer);
  return c;
}

inline FeatureDataset features_from_container(const TensorContainer& c) {
  detail::expect_kind(c, "features");
  FeatureDataset d;
  d.samples = c.get<float>("samples");
  const auto prov = c.get<double>("provenance");
  if (prov.rank() != 2 || prov.dim(1) != 3 || d.samples.rank() != 2 || prov.dim(0) != d.samples.dim(0))
    throw detail::layout_error("features: provenance must be [N, 3] matching samples");
  d.provenance.resize(prov.dim(0));
  for (std::size_t i = 0; i < d.provenance.size(); ++i)
    d.provenance[i] = {static_cast<std::uint32_t>(prov[3 * i]), static_cast<std::uint32_t>(prov[3 * i + 1]),
                       static_cast<std::uint32_t>(prov[3 * i + 2])};
  d.heldout = c.meta_or("heldout", "off") == "on";
  return d;
}

}  // namespace fact
