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

// fact: dataset generation, base and SAE training, tracing, metric suites
// and report emission.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli_support.hpp"
#include "fact/datagen.hpp"
#include "fact/deletion.hpp"
#include "fact/embedding.hpp"
#include "fact/log.hpp"
#include "fact/metrics.hpp"
#include "fact/models.hpp"
#include "fact/render.hpp"
#include "fact/sae.hpp"
#include "fact/serialize.hpp"
#include "fact/trace.hpp"
#include "fact/train.hpp"

namespace fact::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitContract = 1;
constexpr int kExitIo = 2;
constexpr int kExitUsage = 64;

std::string opt_csv(const std::optional<double>& v) { return v ? num(*v) : ""; }

SceneSpec scene_from(const KeyValueConfig& kv) {
  SceneSpec s = SceneSpec::defaults();
  s.noise_sigma = kv.get_double("noise_sigma", s.noise_sigma);
  s.distractor_prob = kv.get_double("distractor_prob", s.distractor_prob);
  s.min_size = kv.get_count("min_size", s.min_size);
  s.max_size = kv.get_count("max_size", s.max_size);
  s.validate();
  return s;
}

std::vector<std::string> concept_names(const SceneSpec& s) {
  std::vector<std::string> names;
  for (const auto& c : s.concepts) names.push_back(c.name);
  return names;
}

LabeledImages load_dataset(const std::string& path) { return dataset_from_container(read_container(path)); }

/// Output files of directory-style commands, plus the manifest path.
struct OutDir {
  std::string dir;
  std::string path(const std::string& name) const { return (fs::path(dir) / name).string(); }
};

// ---------------------------------------------------------------- gen-data

struct GenDataOpts {
  std::size_t n_per_class = 100;
  std::string split = "train";
  std::string embed_out;
  double sigma = 0.05;
  std::size_t embed_dims = 0;
};

int gen_data(const Common& c, const GenDataOpts& o) {
  const SceneSpec spec = scene_from(c.config);
  RunManifest m("gen-data", c,
                {{"n_per_class", o.n_per_class}, {"split", o.split}, {"embed_out", o.embed_out},
                 {"sigma", o.sigma}, {"embed_dims", o.embed_dims}});
  const LabeledImages data = generate_dataset(spec, o.n_per_class, derive_seed(c.seed, "gen-data/" + o.split), o.split);
  m.lap("generate");
  ensure_parent(c.out);
  write_container(dataset_to_container(data, concept_names(spec)), c.out);
  m.artifact(c.out);
  if (!o.embed_out.empty()) {
    const std::size_t dims = o.embed_dims ? o.embed_dims : data.concept_count() + 1;
    auto fields = synthetic_embedding_fields(data, dims, o.sigma, derive_seed(c.seed, "gen-data/embed"));
    center_fields(fields);
    ensure_parent(o.embed_out);
    write_container(embeddings_to_container(fields, "synthetic"), o.embed_out);
    m.artifact(o.embed_out);
    m.lap("embed");
  }
  log::info("gen-data: " + std::to_string(data.size()) + " images -> " + c.out);
  m.write(c.out + ".manifest.json");
  return 0;
}

// -------------------------------------------------------------- train-base

struct TrainBaseOpts {
  std::string data;
};

template <class T>
int train_base_cmd(const Common& c, const TrainBaseOpts& o) {
  TrainConfig cfg = TrainConfig::from(c.config);
  cfg.seed = derive_seed(c.seed, "train-base/batches");
  cfg.threads = c.threads;
  RunManifest m("train-base", c, {{"data", o.data}});
  const LabeledImages data = load_dataset(o.data);
  const std::size_t canvas = data.height();
  require(data.width() == canvas, ErrorKind::kContract, "the toy network needs square images");
  auto init = make_toy_convnet<T>(data.class_count(), derive_seed(c.seed, "train-base/init"), cfg.b_exponent,
                                  cfg.six_channel, canvas);
  std::vector<EpochStats> history;
  const Network<T> net = train_base(std::move(init), data, cfg, &history);
  m.lap("train");
  ensure_parent(c.out);
  write_container(network_to_container(net), c.out);
  m.artifact(c.out);
  Csv csv({"epoch", "loss", "train_accuracy"});
  for (const auto& h : history) csv.row({std::to_string(h.epoch), num(h.loss), num(h.accuracy)});
  write_text(csv.text(), c.out + ".history.csv");
  m.artifact(c.out + ".history.csv");
  m.write(c.out + ".manifest.json");
  return 0;
}

// ---------------------------------------------------------------- sae-data

struct SaeDataOpts {
  std::string net, data;
  std::size_t layer = kToySaeLayer;
  std::size_t samples = 64;
  std::size_t heldout_per_class = 50;
};

template <class T>
int sae_data(const Common& c, const SaeDataOpts& o) {
  RunManifest m("sae-data", c,
                {{"net", o.net}, {"data", o.data}, {"layer", o.layer}, {"samples", o.samples},
                 {"heldout_per_class", o.heldout_per_class}});
  const Network<T> net = load_network<T>(o.net);
  const LabeledImages data = load_dataset(o.data);
  auto [rest, held] = split_heldout(data, o.heldout_per_class);
  require(rest.size() > 0, ErrorKind::kContract, "no images left for SAE training after the held-out split");
  const FeatureDataset train =
      build_sae_dataset(net, o.layer, rest, o.samples, derive_seed(c.seed, "sae-data/sample"), c.threads);
  FeatureDataset heldout;
  if (held.size() > 0) heldout = dense_feature_dataset(net, o.layer, held, c.threads);
  m.lap("features");
  const OutDir out{c.out};
  ensure_dir(out.dir);
  write_container(features_to_container(train, o.layer), out.path("features.ftc"));
  m.artifact(out.path("features.ftc"));
  json summary{{"layer", o.layer},
               {"train_images", rest.size()},
               {"train_vectors", train.size()},
               {"heldout_images", held.size()},
               {"heldout_vectors", heldout.size()},
               {"channels", train.channels()}};
  if (held.size() > 0) {
    write_container(features_to_container(heldout, o.layer), out.path("heldout.ftc"));
    m.artifact(out.path("heldout.ftc"));
  }
  write_json(summary, out.path("sae-data.json"));
  m.artifact(out.path("sae-data.json"));
  m.write(out.path("sae-data.manifest.json"));
  return 0;
}

// --------------------------------------------------------------- train-sae

struct TrainSaeOpts {
  std::string features, heldout;
  std::vector<std::size_t> topk;
  std::size_t latents = 0;
  std::size_t restarts = 1;
};

std::pair<FeatureDataset, std::size_t> load_features(const std::string& path) {
  const TensorContainer c = read_container(path);
  return {features_from_container(c), std::stoul(c.meta_required("layer_index"))};
}

template <class T>
int train_sae_cmd(const Common& c, const TrainSaeOpts& o) {
  SaeTrainConfig base = SaeTrainConfig::from(c.config);
  if (o.latents) base.latents = o.latents;
  const std::vector<std::size_t> topks = o.topk.empty() ? std::vector<std::size_t>{base.topk} : o.topk;
  require(o.restarts >= 1, ErrorKind::kConfig, "--restarts must be >= 1");
  RunManifest m("train-sae", c,
                {{"features", o.features}, {"heldout", o.heldout}, {"topk", topks}, {"latents", base.latents},
                 {"restarts", o.restarts}});
  const auto [train, layer] = load_features(o.features);
  std::optional<FeatureDataset> heldout;
  if (!o.heldout.empty()) heldout = load_features(o.heldout).first;
  const std::size_t runs = topks.size() * o.restarts;
  require(runs == 1 || heldout, ErrorKind::kContract, "checkpoint selection over several runs needs --heldout");

  std::vector<SaeCandidate<T>> candidates;
  Csv csv({"candidate", "topk", "restart", "heldout_mse", "heldout_r2", "dead", "always_active", "selected"});
  std::vector<std::vector<std::string>> rows;
  for (std::size_t k : topks)
    for (std::size_t r = 0; r < o.restarts; ++r) {
      SaeTrainConfig cfg = base;
      cfg.topk = k;
      cfg.layer_index = layer;
      cfg.seed = derive_seed(derive_seed(c.seed, "train-sae/topk" + std::to_string(k)), r);
      SaeModel<T> sae = train_sae<T>(train, cfg);
      SaeCandidateMetrics metrics;
      std::vector<std::string> row{std::to_string(candidates.size()), std::to_string(k), std::to_string(r)};
      if (heldout) {
        const auto stats = reconstruction_stats(sae, *heldout);
        const auto diag = diagnose_latents(sae, *heldout);
        metrics = {stats.mse, diag.dead.size(), diag.always_active.size()};
        row.insert(row.end(), {num(stats.mse), num(stats.r2), std::to_string(diag.dead.size()),
                               std::to_string(diag.always_active.size())});
      } else {
        row.insert(row.end(), {"", "", "", ""});
      }
      log::info("train-sae: candidate " + row[0] + " topk " + std::to_string(k) + " done");
      rows.push_back(std::move(row));
      candidates.push_back({std::move(sae), metrics});
    }
  m.lap("train");
  const std::size_t chosen = candidates.size() == 1 ? 0 : select_checkpoint_index(candidates);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].push_back(i == chosen ? "1" : "0");
    csv.row(rows[i]);
  }
  ensure_parent(c.out);
  write_container(sae_to_container(candidates[chosen].model), c.out);
  m.artifact(c.out);
  write_text(csv.text(), c.out + ".candidates.csv");
  m.artifact(c.out + ".candidates.csv");
  m.write(c.out + ".manifest.json");
  return 0;
}

// ---------------------------------------------------------------- diagnose

struct DiagnoseOpts {
  std::string sae, heldout;
};

template <class T>
int diagnose(const Common& c, const DiagnoseOpts& o) {
  RunManifest m("diagnose", c, {{"sae", o.sae}, {"heldout", o.heldout}});
  const SaeModel<T> sae = load_sae<T>(o.sae);
  const FeatureDataset held = load_features(o.heldout).first;
  const LatentDiagnosis d = diagnose_latents(sae, held);
  const ReconstructionStats stats = reconstruction_stats(sae, held);
  m.lap("diagnose");
  const OutDir out{c.out};
  ensure_dir(out.dir);
  Csv csv({"concept", "activation_frequency", "status"});
  const std::set<std::size_t> dead(d.dead.begin(), d.dead.end()), always(d.always_active.begin(), d.always_active.end());
  for (std::size_t k = 0; k < sae.latents(); ++k)
    csv.row({std::to_string(k), num(d.activation_frequency[k]),
             dead.count(k) ? "dead" : always.count(k) ? "always_active" : "ok"});
  write_text(csv.text(), out.path("diagnose.csv"));
  write_json({{"latents", sae.latents()},
              {"topk", sae.topk},
              {"layer", sae.layer_index},
              {"heldout_vectors", held.size()},
              {"heldout_mse", stats.mse},
              {"heldout_r2", stats.r2},
              {"dead", d.dead},
              {"always_active", d.always_active}},
             out.path("diagnose.json"));
  m.artifact(out.path("diagnose.csv"));
  m.artifact(out.path("diagnose.json"));
  m.write(out.path("diagnose.manifest.json"));
  return 0;
}

// -------------------------------------------------------------------- eval

struct ModelOpts {
  std::string net, sae, data;
};

template <class T>
int eval(const Common& c, const ModelOpts& o) {
  RunManifest m("eval", c, {{"net", o.net}, {"sae", o.sae}, {"data", o.data}});
  const Network<T> net = load_network<T>(o.net);
  const LabeledImages data = load_dataset(o.data);
  json j{{"images", data.size()}, {"base_accuracy", accuracy(net, {}, data, c.threads)}};
  if (!o.sae.empty()) {
    const SaeModel<T> sae = load_sae<T>(o.sae);
    const double fact_acc = accuracy(net, {&sae}, data, c.threads);
    j["fact_accuracy"] = fact_acc;
    j["accuracy_drop_points"] = (j["base_accuracy"].get<double>() - fact_acc) * 100.0;
  }
  m.lap("eval");
  const OutDir out{c.out};
  ensure_dir(out.dir);
  write_json(j, out.path("eval.json"));
  m.artifact(out.path("eval.json"));
  m.write(out.path("eval.manifest.json"));
  return 0;
}

// ------------------------------------------------------------------- trace

struct TraceOpts {
  ModelOpts model;
  std::string late_sae;
  std::size_t image = 0;
  long class_id = -1;
  std::size_t top = 5;
  std::string mode = "signed";
};

RgbImage to_rgb(const Tensor<float>& img) {
  const std::size_t h = img.dim(1), w = img.dim(2);
  RgbImage out{w, h, std::vector<std::uint8_t>(w * h * 3)};
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t ch = 0; ch < 3; ++ch)
      out.pixels[p * 3 + ch] = detail::to_byte(img[ch * h * w + p]);
  return out;
}

template <class T>
int trace(const Common& c, const TraceOpts& o) {
  RunManifest m("trace", c,
                {{"net", o.model.net}, {"sae", o.model.sae}, {"data", o.model.data}, {"late_sae", o.late_sae},
                 {"image", o.image}, {"class", o.class_id}, {"top", o.top}, {"mode", o.mode}});
  const RenderMode mode = parse_render_mode(o.mode);
  const Network<T> net = load_network<T>(o.model.net);
  const SaeModel<T> sae = load_sae<T>(o.model.sae);
  const LabeledImages data = load_dataset(o.model.data);
  const Tensor<T> rgb = data.image<T>(o.image);
  const auto rec = fact_forward(net, sae, prepare_input(net, rgb));
  const std::size_t pred = argmax(rec.logits().span());
  const std::size_t cls = o.class_id < 0 ? pred : static_cast<std::size_t>(o.class_id);
  require(cls < net.class_count(), ErrorKind::kIndex, "class " + std::to_string(cls) + " out of range");
  const ConceptTrace<T> t = concept_contributions(rec, cls);
  const std::vector<double> totals = concept_totals(rec);

  const OutDir out{c.out};
  ensure_dir(out.dir);
  const std::string stem = "image" + std::to_string(o.image);
  Csv csv({"concept", "activation", "contribution"});
  double sum = 0.0;
  for (std::size_t k = 0; k < sae.latents(); ++k) {
    csv.row({std::to_string(k), num(totals[k]), num(static_cast<double>(t.contributions[k]))});
    sum += static_cast<double>(t.contributions[k]);
  }
  write_text(csv.text(), out.path(stem + "_contributions.csv"));
  m.artifact(out.path(stem + "_contributions.csv"));

  std::vector<std::size_t> order(sae.latents());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return t.contributions[a] > t.contributions[b]; });
  order.resize(std::min(o.top, order.size()));
  write_file_bytes(encode_png(to_rgb(data.image<float>(o.image))), out.path(stem + "_input.png"));
  m.artifact(out.path(stem + "_input.png"));
  json top = json::array();
  for (std::size_t k : order) {
    const AttributionMap<T> map = contribution_attribution(rec, k, cls);
    const std::string png = out.path(stem + "_concept" + std::to_string(k) + ".png");
    write_attribution_png(map, mode, png, &rgb);
    m.artifact(png);
    top.push_back({{"concept", k}, {"contribution", static_cast<double>(t.contributions[k])},
                   {"attribution_total", static_cast<double>(map.total)}, {"png", fs::path(png).filename().string()}});
  }
  json j{{"image", o.image},
         {"label", data.labels[o.image]},
         {"predicted", pred},
         {"class", cls},
         {"logit", static_cast<double>(rec.logits()[cls])},
         {"contribution_sum", sum},
         {"additive", within_tolerance<T>(sum, static_cast<double>(rec.logits()[cls]))},
         {"top", top}};

  if (!o.late_sae.empty()) {
    const SaeModel<T> late = load_sae<T>(o.late_sae);
    const auto both = fact_forward(net, {&sae, &late}, prepare_input(net, rgb));
    const Tensor<T> matrix = cross_layer_matrix(both);
    const std::size_t early_k = sae.latents();
    std::vector<std::string> header{"late_concept"};
    for (std::size_t k = 0; k < early_k; ++k) header.push_back("early" + std::to_string(k));
    Csv cross(header);
    for (std::size_t g = 0; g < late.latents(); ++g) {
      std::vector<std::string> row{std::to_string(g)};
      for (std::size_t k = 0; k < early_k; ++k) row.push_back(num(static_cast<double>(matrix[g * early_k + k])));
      cross.row(row);
    }
    write_text(cross.text(), out.path(stem + "_cross_layer.csv"));
    m.artifact(out.path(stem + "_cross_layer.csv"));
    j["late_concepts"] = late.latents();
  }
  m.lap("trace");
  write_json(j, out.path(stem + "_trace.json"));
  m.artifact(out.path(stem + "_trace.json"));
  m.write(out.path("trace.manifest.json"));
  return 0;
}

// --------------------------------------------------------------------- c2

struct C2Opts {
  ModelOpts model;
  std::string embeddings;
  double sigma = 0.05;
  std::size_t embed_dims = 0;
};

template <class T>
int c2(const Common& c, const C2Opts& o) {
  RunManifest m("c2", c,
                {{"net", o.model.net}, {"sae", o.model.sae}, {"data", o.model.data}, {"embeddings", o.embeddings},
                 {"sigma", o.sigma}, {"embed_dims", o.embed_dims}});
  const Network<T> net = load_network<T>(o.model.net);
  const SaeModel<T> sae = load_sae<T>(o.model.sae);
  const LabeledImages data = load_dataset(o.model.data);

  std::vector<EmbeddingField> fields;
  std::string source = "synthetic";
  if (o.embeddings.empty()) {
    require(data.concept_count() > 0, ErrorKind::kContract, "synthetic embeddings need ground-truth masks");
    const std::size_t dims = o.embed_dims ? o.embed_dims : data.concept_count() + 1;
    fields = synthetic_embedding_fields(data, dims, o.sigma, derive_seed(c.seed, "c2/embed"));
    center_fields(fields);
  } else {
    std::map<std::string, EmbeddingField> by_id;
    for (auto& f : embeddings_from_container(read_container(o.embeddings))) by_id.emplace(f.image_id, std::move(f));
    for (std::size_t n = 0; n < data.size(); ++n) {
      auto it = by_id.find("img" + std::to_string(n));
      require(it != by_id.end(), ErrorKind::kContract, "embedding container lacks image img" + std::to_string(n));
      fields.push_back(it->second);
    }
    source = fields.front().source;
  }
  m.lap("embeddings");

  const ConceptActivationTable table = build_activation_table(net, sae, data, c.threads);
  std::vector<std::optional<double>> consistencies(sae.latents());
  std::vector<ConceptSelection> selections(sae.latents());
  for (std::size_t k = 0; k < sae.latents(); ++k) {
    selections[k] = select_concept_images(table, k);
    if (selections[k].discarded) continue;
    std::vector<const EmbeddingField*> ptrs;
    std::vector<std::vector<double>> maps;
    std::vector<double> acts;
    for (std::size_t n : selections[k].images) {
      const auto rec = fact_forward(net, sae, prepare_input(net, data.image<T>(n)));
      maps.push_back(spatial_map(concept_attribution(rec, k)));
      ptrs.push_back(&fields[n]);
      acts.push_back(table.at(k, n));
    }
    consistencies[k] = consistency_from_maps(ptrs, maps, acts);
  }
  const double baseline = random_baseline(fields);
  const C2Result r = c2_score(consistencies, baseline);
  m.lap("c2");

  const OutDir out{c.out};
  ensure_dir(out.dir);
  Csv csv({"concept", "activating", "selected", "discarded", "consistency", "c2"});
  for (std::size_t k = 0; k < sae.latents(); ++k)
    csv.row({std::to_string(k), std::to_string(selections[k].activating), std::to_string(selections[k].images.size()),
             selections[k].discarded ? "1" : "0", opt_csv(consistencies[k]), opt_csv(r.scores[k])});
  write_text(csv.text(), out.path("c2.csv"));
  write_json({{"images", data.size()},
              {"concepts", sae.latents()},
              {"scored", r.scored},
              {"random_baseline", r.baseline},
              {"c2_mean", r.mean},
              {"embedding_source", source}},
             out.path("c2.json"));
  m.artifact(out.path("c2.csv"));
  m.artifact(out.path("c2.json"));
  m.write(out.path("c2.manifest.json"));
  return 0;
}

// ----------------------------------------------------------------- entropy

template <class T>
int entropy(const Common& c, const ModelOpts& o) {
  RunManifest m("entropy", c, {{"net", o.net}, {"sae", o.sae}, {"data", o.data}});
  const Network<T> net = load_network<T>(o.net);
  const SaeModel<T> sae = load_sae<T>(o.sae);
  const LabeledImages data = load_dataset(o.data);
  const ConceptActivationTable table = build_activation_table(net, sae, data, c.threads);
  const std::size_t labels = std::max<std::size_t>(net.class_count(), data.class_count());
  Csv csv({"concept", "entropy_nats"});
  double acc = 0.0;
  std::size_t defined = 0;
  for (std::size_t k = 0; k < sae.latents(); ++k) {
    const auto h = label_entropy(table, k, labels);
    csv.row({std::to_string(k), opt_csv(h)});
    if (h) {
      acc += *h;
      ++defined;
    }
  }
  m.lap("entropy");
  const OutDir out{c.out};
  ensure_dir(out.dir);
  write_text(csv.text(), out.path("entropy.csv"));
  write_json({{"concepts", sae.latents()},
              {"defined", defined},
              {"labels", labels},
              {"max_entropy_nats", std::log(static_cast<double>(labels))},
              {"mean_entropy_nats", defined ? json(acc / static_cast<double>(defined)) : json(nullptr)}},
             out.path("entropy.json"));
  m.artifact(out.path("entropy.csv"));
  m.artifact(out.path("entropy.json"));
  m.write(out.path("entropy.manifest.json"));
  return 0;
}

// -------------------------------------------------------------------- size

template <class T>
int size_cmd(const Common& c, const ModelOpts& o) {
  RunManifest m("size", c, {{"net", o.net}, {"sae", o.sae}, {"data", o.data}});
  const Network<T> net = load_network<T>(o.net);
  const SaeModel<T> sae = load_sae<T>(o.sae);
  const LabeledImages data = load_dataset(o.data);
  const ConceptActivationTable table = build_activation_table(net, sae, data, c.threads);

  Csv per_image({"image", "predicted", "explanation_l0", "per_image_l0"});
  double expl = 0.0, active = 0.0;
  std::vector<std::vector<std::vector<double>>> maps(sae.latents());
  std::vector<std::vector<std::size_t>> wanted(data.size());
  for (std::size_t k = 0; k < sae.latents(); ++k)
    for (std::size_t n : select_concept_images(table, k).images) wanted[n].push_back(k);
  for (std::size_t n = 0; n < data.size(); ++n) {
    const auto rec = fact_forward(net, sae, prepare_input(net, data.image<T>(n)));
    const std::size_t pred = argmax(rec.logits().span());
    const std::size_t e = explanation_l0(rec, pred), a = per_image_l0(rec);
    per_image.row({std::to_string(n), std::to_string(pred), std::to_string(e), std::to_string(a)});
    expl += static_cast<double>(e);
    active += static_cast<double>(a);
    for (std::size_t k : wanted[n]) maps[k].push_back(spatial_map(concept_attribution(rec, k)));
  }
  Csv per_concept({"concept", "images", "spatial_size"});
  double size_acc = 0.0;
  std::size_t sized = 0;
  for (std::size_t k = 0; k < sae.latents(); ++k) {
    const auto s = spatial_size(maps[k]);
    per_concept.row({std::to_string(k), std::to_string(maps[k].size()), opt_csv(s)});
    if (s) {
      size_acc += *s;
      ++sized;
    }
  }
  m.lap("size");
  const OutDir out{c.out};
  ensure_dir(out.dir);
  const double n_img = static_cast<double>(std::max<std::size_t>(1, data.size()));
  write_text(per_concept.text(), out.path("size.csv"));
  write_text(per_image.text(), out.path("l0.csv"));
  write_json({{"images", data.size()},
              {"pixels", data.height() * data.width()},
              {"coverage", kCoverage},
              {"mean_spatial_size", sized ? json(size_acc / static_cast<double>(sized)) : json(nullptr)},
              {"concepts_sized", sized},
              {"mean_explanation_l0", expl / n_img},
              {"mean_per_image_l0", active / n_img}},
             out.path("size.json"));
  for (const char* f : {"size.csv", "l0.csv", "size.json"}) m.artifact(out.path(f));
  m.write(out.path("size.manifest.json"));
  return 0;
}

// ------------------------------------------------------------------ delete

struct DeleteOpts {
  ModelOpts model;
  std::string ordering = "contribution";
  bool exclude_always_on = false;
  std::string heldout;
  std::vector<std::size_t> exclude;
  std::size_t designs = 4;
};

template <class T>
int delete_cmd(const Common& c, const DeleteOpts& o) {
  RunManifest m("delete", c,
                {{"net", o.model.net}, {"sae", o.model.sae}, {"data", o.model.data}, {"ordering", o.ordering},
                 {"exclude_always_on", o.exclude_always_on}, {"heldout", o.heldout}, {"exclude", o.exclude},
                 {"designs", o.designs}});
  DeletionOptions opt;
  opt.ordering = parse_ordering(o.ordering);
  opt.seed = derive_seed(c.seed, "delete/random");
  opt.threads = c.threads;
  opt.sobol.designs = o.designs;
  opt.sobol.seed = derive_seed(c.seed, "delete/sobol");
  opt.exclude.insert(o.exclude.begin(), o.exclude.end());
  const Network<T> net = load_network<T>(o.model.net);
  const SaeModel<T> sae = load_sae<T>(o.model.sae);
  const LabeledImages data = load_dataset(o.model.data);
  std::vector<std::size_t> always;
  if (o.exclude_always_on) {
    require(!o.heldout.empty(), ErrorKind::kContract, "--exclude-always-on needs --heldout features");
    always = diagnose_latents(sae, load_features(o.heldout).first).always_active;
    opt.exclude.insert(always.begin(), always.end());
  }
  const DeletionCurve curve = deletion_curve(net, sae, data, opt);
  m.lap("delete");
  const OutDir out{c.out};
  ensure_dir(out.dir);
  const std::string stem = "delete_" + o.ordering + (o.exclude_always_on ? "_excl" : "");
  Csv csv({"step", "deleted_concept", "mean_logit", "accuracy"});
  for (std::size_t i = 0; i < curve.x.size(); ++i)
    csv.row({std::to_string(curve.x[i]), curve.x[i] ? std::to_string(curve.order[curve.x[i] - 1]) : "",
             num(curve.y_logit[i]), num(curve.y_acc[i])});
  write_text(csv.text(), out.path(stem + ".csv"));
  write_json({{"ordering", curve.ordering},
              {"images", data.size()},
              {"excluded", std::vector<std::size_t>(opt.exclude.begin(), opt.exclude.end())},
              {"always_active", always},
              {"order", curve.order},
              {"auc_logit", curve.auc_logit},
              {"auc_accuracy", curve.auc_acc}},
             out.path(stem + ".json"));
  m.artifact(out.path(stem + ".csv"));
  m.artifact(out.path(stem + ".json"));
  m.write(out.path(stem + ".manifest.json"));
  return 0;
}

// ---------------------------------------------------------------- overhead

struct OverheadOpts {
  ModelOpts model;
  std::size_t reps = 3;
};

template <class T>
int overhead(const Common& c, const OverheadOpts& o) {
  using Clock = std::chrono::steady_clock;
  RunManifest m("overhead", c, {{"net", o.model.net}, {"sae", o.model.sae}, {"data", o.model.data}, {"reps", o.reps}});
  require(o.reps >= 1, ErrorKind::kConfig, "--reps must be >= 1");
  const Network<T> net = load_network<T>(o.model.net);
  const SaeModel<T> sae = load_sae<T>(o.model.sae);
  const LabeledImages data = load_dataset(o.model.data);
  std::vector<Tensor<T>> inputs;
  for (std::size_t n = 0; n < data.size(); ++n) inputs.push_back(prepare_input(net, data.image<T>(n)));
  double sink = 0.0;
  auto pass = [&](const std::vector<const SaeModel<T>*>& saes) {
    const auto t0 = Clock::now();
    for (const auto& x : inputs) sink += static_cast<double>(predict(net, saes, x)[0]);
    return std::chrono::duration<double>(Clock::now() - t0).count();
  };
  json base_runs = json::array(), fact_runs = json::array();
  double base = 1e300, fact = 1e300;
  for (std::size_t r = 0; r < o.reps; ++r) {
    const double b = pass({}), f = pass({&sae});
    base_runs.push_back(b);
    fact_runs.push_back(f);
    base = std::min(base, b);
    fact = std::min(fact, f);
  }
  require(std::isfinite(sink), ErrorKind::kNumeric, "non-finite logits during timing");
  m.lap("overhead");
  const OutDir out{c.out};
  ensure_dir(out.dir);
  const double n_img = static_cast<double>(std::max<std::size_t>(1, inputs.size()));
  write_json({{"images", inputs.size()},
              {"reps", o.reps},
              {"base_ms_per_image", 1e3 * base / n_img},
              {"fact_ms_per_image", 1e3 * fact / n_img},
              {"ratio", fact / base},
              {"base_runs_s", base_runs},
              {"fact_runs_s", fact_runs}},
             out.path("overhead.json"));
  m.artifact(out.path("overhead.json"));
  m.write(out.path("overhead.manifest.json"));
  return 0;
}

// ------------------------------------------------------------------ report

struct ReportOpts {
  std::vector<std::string> inputs;
  std::size_t max_rows = 20;
};

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_float()) return num(v.get<double>());
  if (v.is_array()) return v.size() <= 16 ? v.dump() : "[" + std::to_string(v.size()) + " items]";
  return v.dump();
}

void report_json(std::ostringstream& md, const fs::path& p) {
  const json j = json::parse(read_text(p), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorKind::kFormat, "report input " + p.string() + " is not valid JSON");
  md << "| key | value |\n|---|---|\n";
  if (j.is_object()) {
    for (const auto& [k, v] : j.items())
      if (!v.is_object()) md << "| " << k << " | " << scalar_text(v) << " |\n";
  } else {
    md << "| value | " << scalar_text(j) << " |\n";
  }
  md << "\n";
}

void report_csv(std::ostringstream& md, const fs::path& p, std::size_t max_rows) {
  std::istringstream in(read_text(p));
  std::string line;
  std::size_t row = 0, total = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (row == 0 || row <= max_rows) {
      std::string cells = line;
      std::replace(cells.begin(), cells.end(), ',', '|');
      md << "| " << cells << " |\n";
      if (row == 0) {
        md << "|";
        for (std::ptrdiff_t i = 0; i <= std::count(line.begin(), line.end(), ','); ++i) md << "---|";
        md << "\n";
      }
    }
    ++row;
    total = row - 1;
  }
  md << "\n";
  if (total > max_rows) md << "_" << total - max_rows << " more rows in " << p.filename().string() << "_\n\n";
}

int report(const Common& c, const ReportOpts& o) {
  RunManifest m("report", c, {{"inputs", o.inputs}, {"max_rows", o.max_rows}});
  std::ostringstream md;
  md << "# fact report\n\n";
  json runs = json::array();
  for (const auto& dir : o.inputs) {
    require(fs::is_directory(dir), ErrorKind::kIo, "report input " + dir + " is not a directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    md << "## " << fs::path(dir).filename().string() << "\n\n";
    std::vector<fs::path> manifests;
    for (const auto& f : files) {
      const std::string name = f.filename().string();
      if (name.size() > 14 && name.compare(name.size() - 14, 14, ".manifest.json") == 0) {
        manifests.push_back(f);
      } else if (f.extension() == ".json") {
        md << "### " << name << "\n\n";
        report_json(md, f);
      } else if (f.extension() == ".csv") {
        md << "### " << name << "\n\n";
        report_csv(md, f, o.max_rows);
      } else if (f.extension() == ".png") {
        md << "![" << name << "](data:image/png;base64," << base64(read_file_bytes(f.string())) << ")\n\n";
      }
    }
    if (!manifests.empty()) {
      md << "### runs\n\n| command | seed | config hash | artifacts |\n|---|---|---|---|\n";
      for (const auto& f : manifests) {
        const json j = json::parse(read_text(f), nullptr, false);
        if (j.is_discarded() || !j.is_object()) continue;
        md << "| " << j.value("command", "") << " | " << j.value("seed", std::uint64_t{0}) << " | "
           << j.value("config_hash", "") << " | " << j.value("artifacts", json::array()).size() << " |\n";
      }
      md << "\n";
    }
  }
  write_text(md.str(), c.out);
  m.artifact(c.out);
  m.write(c.out + ".manifest.json");
  return 0;
}

// -------------------------------------------------------------------- main

int dispatch(const Common& c, const std::function<int()>& f32, const std::function<int()>& f64) {
  if (c.dtype == "f64") return f64();
  return f32();
}

void add_model_flags(CLI::App* sub, ModelOpts& o, bool need_sae) {
  sub->add_option("--net", o.net, "network container")->required();
  auto* sae = sub->add_option("--sae", o.sae, "SAE container");
  if (need_sae) sae->required();
  sub->add_option("--data", o.data, "dataset container")->required();
}

int run(int argc, char** argv) {
  CLI::App app{"fact: faithful concept traces for B-cos networks with SAE bottlenecks"};
  app.require_subcommand(1);
  Common c;
  app.add_option("--config", c.config_path, "key = value config file");
  app.add_option("--seed", c.seed, "root seed; every consumer derives a named substream");
  app.add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", c.out, "output file or directory");
  app.add_option("--dtype", c.dtype, "compute dtype")->check(CLI::IsMember({"f32", "f64"}));
  app.fallthrough();

  GenDataOpts gen;
  auto* s_gen = app.add_subcommand("gen-data", "generate a synthetic shapes dataset");
  s_gen->add_option("--n-per-class", gen.n_per_class, "images per class");
  s_gen->add_option("--split", gen.split, "split tag")->check(CLI::IsMember({"train", "test", "heldout"}));
  s_gen->add_option("--embed-out", gen.embed_out, "also write synthetic centered embedding fields here");
  s_gen->add_option("--sigma", gen.sigma, "embedding noise sigma");
  s_gen->add_option("--embed-dims", gen.embed_dims, "embedding dimension (default concepts + 1)");

  TrainBaseOpts tb;
  auto* s_tb = app.add_subcommand("train-base", "train the bias-free B-cos toy network");
  s_tb->add_option("--data", tb.data, "training dataset")->required();

  SaeDataOpts sd;
  auto* s_sd = app.add_subcommand("sae-data", "importance-sampled SAE features plus a dense held-out set");
  s_sd->add_option("--net", sd.net, "network container")->required();
  s_sd->add_option("--data", sd.data, "training dataset")->required();
  s_sd->add_option("--layer", sd.layer, "layer whose output feeds the SAE");
  s_sd->add_option("--samples", sd.samples, "importance samples per image");
  s_sd->add_option("--heldout-per-class", sd.heldout_per_class, "images per class reserved as held-out");

  TrainSaeOpts ts;
  auto* s_ts = app.add_subcommand("train-sae", "train TopK SAE candidates and keep the selected checkpoint");
  s_ts->add_option("--features", ts.features, "features.ftc from sae-data")->required();
  s_ts->add_option("--heldout", ts.heldout, "heldout.ftc for candidate metrics");
  s_ts->add_option("--topk", ts.topk, "sparsity factors to sweep")->delimiter(',');
  s_ts->add_option("--latents", ts.latents, "dictionary size");
  s_ts->add_option("--restarts", ts.restarts, "runs per sparsity factor");

  DiagnoseOpts dg;
  auto* s_dg = app.add_subcommand("diagnose", "dead and always-active latents, held-out reconstruction");
  s_dg->add_option("--sae", dg.sae, "SAE container")->required();
  s_dg->add_option("--heldout", dg.heldout, "heldout.ftc")->required();

  ModelOpts ev;
  auto* s_ev = app.add_subcommand("eval", "base and FaCT accuracy");
  add_model_flags(s_ev, ev, false);

  TraceOpts tr;
  auto* s_tr = app.add_subcommand("trace", "concept contributions and attribution maps for one image");
  add_model_flags(s_tr, tr.model, true);
  s_tr->add_option("--late-sae", tr.late_sae, "second SAE for cross-layer contributions");
  s_tr->add_option("--image", tr.image, "image index");
  s_tr->add_option("--class", tr.class_id, "target class (default: predicted)");
  s_tr->add_option("--top", tr.top, "concepts to render");
  s_tr->add_option("--mode", tr.mode, "rendering")->check(CLI::IsMember({"signed", "alpha"}));

  C2Opts cc;
  auto* s_c2 = app.add_subcommand("c2", "concept consistency score");
  add_model_flags(s_c2, cc.model, true);
  s_c2->add_option("--embeddings", cc.embeddings, "embedding-exchange container");
  s_c2->add_option("--sigma", cc.sigma, "synthetic embedding noise sigma");
  s_c2->add_option("--embed-dims", cc.embed_dims, "synthetic embedding dimension");

  ModelOpts en;
  auto* s_en = app.add_subcommand("entropy", "label entropy per concept");
  add_model_flags(s_en, en, true);

  ModelOpts sz;
  auto* s_sz = app.add_subcommand("size", "spatial size and explanation l0");
  add_model_flags(s_sz, sz, true);

  DeleteOpts dl;
  auto* s_dl = app.add_subcommand("delete", "concept deletion curve");
  add_model_flags(s_dl, dl.model, true);
  s_dl->add_option("--ordering", dl.ordering, "contribution|saliency|sobol|activation|random");
  s_dl->add_flag("--exclude-always-on", dl.exclude_always_on, "never delete always-active concepts");
  s_dl->add_option("--heldout", dl.heldout, "heldout.ftc for the always-active diagnosis");
  s_dl->add_option("--exclude", dl.exclude, "concepts never deleted")->delimiter(',');
  s_dl->add_option("--designs", dl.designs, "Sobol designs per concept");

  OverheadOpts ov;
  auto* s_ov = app.add_subcommand("overhead", "per-image forward time, base vs FaCT");
  add_model_flags(s_ov, ov.model, true);
  s_ov->add_option("--reps", ov.reps, "interleaved repetitions");

  ReportOpts rp;
  auto* s_rp = app.add_subcommand("report", "markdown summary of CSV/JSON outputs with embedded PNGs");
  s_rp->add_option("--in", rp.inputs, "output directories to include")->required();
  s_rp->add_option("--max-rows", rp.max_rows, "CSV rows shown per file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  if (c.out.empty()) {
    std::cerr << "--out is required\n" << app.help();
    return kExitUsage;
  }
  if (!c.config_path.empty()) c.config = KeyValueConfig::load(c.config_path);

  if (s_gen->parsed()) return gen_data(c, gen);
  if (s_rp->parsed()) return report(c, rp);
  if (s_tb->parsed()) return dispatch(c, [&] { return train_base_cmd<float>(c, tb); }, [&] { return train_base_cmd<double>(c, tb); });
  if (s_sd->parsed()) return dispatch(c, [&] { return sae_data<float>(c, sd); }, [&] { return sae_data<double>(c, sd); });
  if (s_ts->parsed()) return dispatch(c, [&] { return train_sae_cmd<float>(c, ts); }, [&] { return train_sae_cmd<double>(c, ts); });
  if (s_dg->parsed()) return dispatch(c, [&] { return diagnose<float>(c, dg); }, [&] { return diagnose<double>(c, dg); });
  if (s_ev->parsed()) return dispatch(c, [&] { return eval<float>(c, ev); }, [&] { return eval<double>(c, ev); });
  if (s_tr->parsed()) return dispatch(c, [&] { return trace<float>(c, tr); }, [&] { return trace<double>(c, tr); });
  if (s_c2->parsed()) return dispatch(c, [&] { return c2<float>(c, cc); }, [&] { return c2<double>(c, cc); });
  if (s_en->parsed()) return dispatch(c, [&] { return entropy<float>(c, en); }, [&] { return entropy<double>(c, en); });
  if (s_sz->parsed()) return dispatch(c, [&] { return size_cmd<float>(c, sz); }, [&] { return size_cmd<double>(c, sz); });
  if (s_dl->parsed()) return dispatch(c, [&] { return delete_cmd<float>(c, dl); }, [&] { return delete_cmd<double>(c, dl); });
  if (s_ov->parsed()) return dispatch(c, [&] { return overhead<float>(c, ov); }, [&] { return overhead<double>(c, ov); });
  return kExitUsage;
}

}  // namespace
}  // namespace fact::cli

int main(int argc, char** argv) {
  try {
    return fact::cli::run(argc, argv);
  } catch (const fact::Error& e) {
    fact::log::error(e.what());
    const bool io = e.kind() == fact::ErrorKind::kIo || e.kind() == fact::ErrorKind::kFormat;
    return io ? fact::cli::kExitIo : fact::cli::kExitContract;
  } catch (const std::exception& e) {
    fact::log::error(e.what());
    return fact::cli::kExitContract;
  }
}
