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

// Base-model training by ordinary reverse-mode differentiation of the true
// forward pass (cosine factors are not frozen here).

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fact/config.hpp"
#include "fact/dataset.hpp"
#include "fact/log.hpp"
#include "fact/network.hpp"
#include "fact/optim.hpp"
#include "fact/parallel.hpp"
#include "fact/rng.hpp"

namespace fact {

struct TrainConfig {
  std::size_t epochs = 40;
  double lr = 1e-2;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double logit_scale = 50.0;  // softmax(logit_scale * logits)
  double b_exponent = 2.0;
  bool six_channel = true;
  bool cosine_schedule = true;  // cosine decay of lr to zero over all steps
  std::size_t threads = 1;

  static TrainConfig from(const KeyValueConfig& kv) {
    TrainConfig c;
    c.epochs = kv.get_count("epochs", c.epochs);
    c.lr = kv.get_double("lr", c.lr);
    c.batch_size = kv.get_count("batch_size", c.batch_size);
    c.seed = static_cast<std::uint64_t>(kv.get_count("seed", static_cast<std::size_t>(c.seed)));
    c.logit_scale = kv.get_double("logit_scale", c.logit_scale);
    c.b_exponent = kv.get_double("b_exponent", c.b_exponent);
    c.six_channel = kv.get_switch("six_channel", c.six_channel);
    const std::string schedule = kv.get_string("lr_schedule", c.cosine_schedule ? "cosine" : "constant");
    require(schedule == "cosine" || schedule == "constant", ErrorKind::kConfig,
            "lr_schedule must be cosine or constant, got '" + schedule + "'");
    c.cosine_schedule = schedule == "cosine";
    return c;
  }

  void validate() const {
    require(epochs >= 1, ErrorKind::kConfig, "epochs must be >= 1");
    require(batch_size >= 1, ErrorKind::kConfig, "batch_size must be >= 1");
    require(lr >= 0.0 && std::isfinite(lr), ErrorKind::kConfig, "lr must be finite and >= 0");
    require(logit_scale > 0.0, ErrorKind::kConfig, "logit_scale must be > 0");
  }
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

namespace detail {

/// Softmax cross-entropy of scale * logits. Writes dL/dlogits into grad.
template <class T>
double softmax_xent(const Tensor<T>& logits, std::size_t label, double scale, Tensor<T>& grad) {
  const std::size_t n = logits.size();
  std::vector<double> z(n);
  double zmax = -INFINITY;
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = static_cast<double>(logits[i]) * scale;
    zmax = std::max(zmax, z[i]);
  }
  double denom = 0.0;
  for (double& v : z) denom += (v = std::exp(v - zmax));
  grad = Tensor<T>(logits.shape());
  for (std::size_t i = 0; i < n; ++i)
    grad[i] = static_cast<T>((z[i] / denom - (i == label ? 1.0 : 0.0)) * scale);
  return -std::log(std::max(z[label] / denom, 1e-300));
}

template <class T>
std::vector<std::size_t> param_layers(const Network<T>& net) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < net.layer_count(); ++i)
    if (layer_params(net.layer(i))) out.push_back(i);
  return out;
}

}  // namespace detail

/// Gradient of the summed loss over `samples` w.r.t. every parameter
/// tensor (in param_layers order). Returns the summed loss and correct count.
template <class T>
std::pair<double, std::size_t> accumulate_gradients(const Network<T>& net, const LabeledImages& data,
                                                    std::span<const std::size_t> samples, double logit_scale,
                                                    std::vector<Tensor<T>>& grads) {
  const auto plist = detail::param_layers(net);
  grads.clear();
  for (std::size_t li : plist) grads.emplace_back(layer_params(net.layer(li))->shape());
  double loss = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> slot(net.layer_count(), SIZE_MAX);
  for (std::size_t s = 0; s < plist.size(); ++s) slot[plist[s]] = s;
  for (std::size_t n : samples) {
    const Tensor<T> x = prepare_input(net, data.image<T>(n));
    const ForwardRecord<T> rec = network_forward(net, x);
    Tensor<T> g;
    loss += detail::softmax_xent(rec.logits(), data.labels[n], logit_scale, g);
    if (argmax(rec.logits().span()) == data.labels[n]) ++correct;
    for (std::size_t i = net.layer_count(); i-- > 0;) {
      Tensor<T>* gw = slot[i] == SIZE_MAX ? nullptr : &grads[slot[i]];
      g = std::visit([&](const auto& l) { return l.backward(rec.activations[i], g, gw); }, net.layer(i));
    }
  }
  return {loss, correct};
}

/// Trains `net` with Adam on softmax cross-entropy. With lr == 0 the weights
/// come back bitwise unchanged. Mini-batches are split into fixed chunks of
/// 8 samples whose gradients are reduced in chunk order, independent of the
/// thread count.
template <class T>
Network<T> train_base(Network<T> net, const LabeledImages& data, const TrainConfig& cfg,
                      std::vector<EpochStats>* history = nullptr) {
  cfg.validate();
  require(data.size() > 0, ErrorKind::kContract, "training set is empty");
  const auto plist = detail::param_layers(net);
  std::vector<Shape> shapes;
  for (std::size_t li : plist) shapes.push_back(layer_params(net.layer(li))->shape());
  Adam<T> adam(shapes);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(cfg.seed, "train_base/shuffle");
  constexpr std::size_t kChunk = 8;
  const std::size_t steps_per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    std::size_t epoch_correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const std::size_t chunks = (stop - start + kChunk - 1) / kChunk;
      std::vector<std::vector<Tensor<T>>> chunk_grads(chunks);
      std::vector<std::pair<double, std::size_t>> chunk_stats(chunks);
      parallel_for(chunks, cfg.threads, [&](std::size_t c) {
        const std::size_t b = start + c * kChunk, e = std::min(stop, b + kChunk);
        chunk_stats[c] = accumulate_gradients(net, data, std::span<const std::size_t>(order.data() + b, e - b),
                                              cfg.logit_scale, chunk_grads[c]);
      });
      std::vector<Tensor<T>> grads = std::move(chunk_grads[0]);
      double batch_loss = chunk_stats[0].first;
      epoch_correct += chunk_stats[0].second;
      for (std::size_t c = 1; c < chunks; ++c) {
        for (std::size_t p = 0; p < grads.size(); ++p)
          for (std::size_t j = 0; j < grads[p].size(); ++j) grads[p][j] += chunk_grads[c][p][j];
        batch_loss += chunk_stats[c].first;
        epoch_correct += chunk_stats[c].second;
      }
      if (!std::isfinite(batch_loss)) {
        std::ostringstream os;
        os << "training diverged: loss " << batch_loss << " at epoch " << epoch << ", batch starting at "
           << start;
        fail(ErrorKind::kNumeric, os.str());
      }
      const T inv = T(1) / static_cast<T>(stop - start);
      for (auto& g : grads)
        for (auto& v : g.vec()) v *= inv;
      std::vector<Tensor<T>*> params;
      for (std::size_t li : plist) params.push_back(layer_params(net.mutable_layer(li)));
      const double lr = cfg.cosine_schedule ? warmup_cosine_lr(cfg.lr, step, 0, total_steps) : cfg.lr;
      adam.step(params, grads, lr);
      ++step;
      epoch_loss += batch_loss;
    }
    EpochStats st{epoch, epoch_loss / static_cast<double>(data.size()),
                  static_cast<double>(epoch_correct) / static_cast<double>(data.size())};
    std::ostringstream os;
    os << "train_base epoch " << epoch + 1 << "/" << cfg.epochs << " loss " << st.loss << " acc " << st.accuracy;
    log::info(os.str());
    if (history) history->push_back(st);
  }
  net.validate();
  return net;
}

/// Fraction of images whose argmax logit equals the label. Ties resolve to
/// the lowest class index.
template <class T>
double accuracy(const Network<T>& net, const std::vector<const SaeModel<T>*>& saes, const LabeledImages& data,
                std::size_t threads = 1) {
  std::vector<char> hit(data.size());
  parallel_for(data.size(), threads, [&](std::size_t n) {
    const Tensor<T> logits = predict(net, saes, prepare_input(net, data.image<T>(n)));
    hit[n] = argmax(logits.span()) == data.labels[n];
  });
  return data.size() ? static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / data.size() : 0.0;
}

}  // namespace fact
