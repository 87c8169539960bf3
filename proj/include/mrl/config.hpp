/*
 * Copyright 2026 The MRL Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// JSON run configuration. Every key is optional; unknown keys are rejected.
//
// {
//   "seed": 42,                      data, init and batch order
//   "epochs": 5,
//   "batch_size": 32,
//   "output_dir": "runs/mrl-tiny",
//   "record_wall_time": false,       true writes real seconds into metrics.csv
//   "checkpoint": "",                eval input; default <output_dir>/model.ckpt
//   "transform": "identity",         eval: identity | rot90
//   "eval_split": "test",            eval: test | train
//   "model": {
//     "spec": "mrl-tiny",            preset to start from
//     "mixer": "mrl",                mrl | sa
//     "qkv": "standard",             standard | commonqkv
//     "local_mix": "plain",          plain | plain-depthwise | gc-p4
//     "local_kernel": 3,
//     "sampler": "depthwise",        depthwise | dense
//     "out_proj": "regional",        regional | full
//     "head_dim": 16,
//     "ffn_expansion": 4,
//     "sa_conv_projection": false,
//     "sa_kv_stride": 1,
//     "stages": [{"depth": 1, "dim": 32, "region": 2,
//                 "embed_kernel": 3, "embed_stride": 2, "embed_padding": 1}]
//   },
//   "optimizer": {"kind": "adam", "lr": 3e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
//   "dataset": {"kind": "oriented-bars", "image_size": 32, "classes": 4,
//               "train_count": 2000, "test_count": 500, "noise_sigma": 0.1}
// }
//
// The model's input channels, input size and class count come from the
// dataset (1, image_size, classes).

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "mrl/data.hpp"
#include "mrl/model.hpp"
#include "mrl/optim.hpp"

namespace mrl {

using Json = nlohmann::json;

struct RunConfig {
  std::uint64_t seed = 42;
  Index epochs = 5;
  Index batch_size = 32;
  std::string output_dir = "runs/mrl-tiny";
  bool record_wall_time = false;
  std::string checkpoint;
  Transform transform = Transform::kIdentity;
  std::string eval_split = "test";
  ModelSpec model = mrl_tiny_spec();
  AdamOptions optimizer;
  DatasetSpec dataset;

  std::filesystem::path checkpoint_path() const {
    return checkpoint.empty() ? std::filesystem::path(output_dir) / "model.ckpt" : std::filesystem::path(checkpoint);
  }

  /// Copies dataset-derived fields into the model spec and checks both.
  void finalize() {
    if (epochs == 0) fail(ErrorKind::kConfig, "epochs must be >= 1");
    if (batch_size == 0) fail(ErrorKind::kConfig, "batch_size must be >= 1");
    if (eval_split != "test" && eval_split != "train") {
      fail(ErrorKind::kConfig, "eval_split must be test or train, got '", eval_split, "'");
    }
    dataset.validate();
    optimizer.validate();
    model.in_channels = 1;
    model.input_size = dataset.image_size;
    model.num_classes = dataset.classes;
    model.validate();
  }
};

inline MixerKind parse_mixer(std::string_view s) {
  if (s == "mrl") return MixerKind::kMrl;
  if (s == "sa") return MixerKind::kSelfAttention;
  fail(ErrorKind::kConfig, "unknown mixer '", s, "' (expected mrl or sa)");
}

inline QkvVariant parse_qkv(std::string_view s) {
  if (s == "standard") return QkvVariant::kStandard;
  if (s == "commonqkv") return QkvVariant::kCommon;
  fail(ErrorKind::kConfig, "unknown qkv variant '", s, "' (expected standard or commonqkv)");
}

inline LocalMix parse_local_mix(std::string_view s) {
  if (s == "plain" || s == "plain-depthwise") return LocalMix::kPlain;
  if (s == "gc-p4") return LocalMix::kGcP4;
  fail(ErrorKind::kConfig, "unknown local mix '", s, "' (expected plain or gc-p4)");
}

inline SamplerKind parse_sampler(std::string_view s) {
  if (s == "depthwise") return SamplerKind::kDepthwise;
  if (s == "dense") return SamplerKind::kDense;
  fail(ErrorKind::kConfig, "unknown sampler '", s, "' (expected depthwise or dense)");
}

inline OutProjPlacement parse_out_proj(std::string_view s) {
  if (s == "regional") return OutProjPlacement::kRegional;
  if (s == "full") return OutProjPlacement::kFull;
  fail(ErrorKind::kConfig, "unknown out_proj '", s, "' (expected regional or full)");
}

namespace detail {

inline void check_keys(const Json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) fail(ErrorKind::kConfig, where, " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      fail(ErrorKind::kConfig, "unknown key '", key, "' in ", where);
    }
  }
}

template <typename T>
void read_field(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, "field '", key, "': ", e.what());
  }
}

inline void read_count(const Json& j, const char* key, Index& out) {
  if (!j.contains(key)) return;
  const Json& v = j.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    fail(ErrorKind::kConfig, "field '", key, "' must be a non-negative integer");
  }
  out = v.get<Index>();
}

inline std::string read_string(const Json& j, const char* key, std::string fallback) {
  read_field(j, key, fallback);
  return fallback;
}

inline ModelSpec parse_model(const Json& j) {
  check_keys(j, "model", {"spec", "mixer", "qkv", "local_mix", "local_kernel", "sampler", "out_proj", "head_dim",
                          "ffn_expansion", "sa_conv_projection", "sa_kv_stride", "stages"});
  ModelSpec m = preset_spec(read_string(j, "spec", "mrl-tiny"));
  if (j.contains("mixer")) m.mixer = parse_mixer(read_string(j, "mixer", ""));
  if (j.contains("qkv")) m.qkv = parse_qkv(read_string(j, "qkv", ""));
  if (j.contains("local_mix")) m.local_mix = parse_local_mix(read_string(j, "local_mix", ""));
  if (j.contains("sampler")) m.sampler = parse_sampler(read_string(j, "sampler", ""));
  if (j.contains("out_proj")) m.out_proj = parse_out_proj(read_string(j, "out_proj", ""));
  read_count(j, "local_kernel", m.local_kernel);
  read_count(j, "head_dim", m.head_dim);
  read_count(j, "ffn_expansion", m.ffn_expansion);
  read_field(j, "sa_conv_projection", m.sa_conv_projection);
  read_count(j, "sa_kv_stride", m.sa_kv_stride);
  if (j.contains("stages")) {
    const Json& stages = j.at("stages");
    if (!stages.is_array()) fail(ErrorKind::kConfig, "model.stages must be an array");
    m.stages.clear();
    for (const Json& s : stages) {
      check_keys(s, "model.stages[]", {"depth", "dim", "region", "embed_kernel", "embed_stride", "embed_padding"});
      StageSpec stage;
      read_count(s, "depth", stage.depth);
      read_count(s, "dim", stage.dim);
      read_count(s, "region", stage.region);
      read_count(s, "embed_kernel", stage.embed_kernel);
      read_count(s, "embed_stride", stage.embed_stride);
      read_count(s, "embed_padding", stage.embed_padding);
      m.stages.push_back(stage);
    }
  }
  return m;
}

}  // namespace detail

inline RunConfig parse_run_config(const Json& j) {
  detail::check_keys(j, "config", {"seed", "epochs", "batch_size", "output_dir", "record_wall_time", "checkpoint",
                                   "transform", "eval_split", "model", "optimizer", "dataset"});
  RunConfig c;
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) fail(ErrorKind::kConfig, "field 'seed' must be a non-negative integer");
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  detail::read_count(j, "epochs", c.epochs);
  detail::read_count(j, "batch_size", c.batch_size);
  detail::read_field(j, "output_dir", c.output_dir);
  detail::read_field(j, "record_wall_time", c.record_wall_time);
  detail::read_field(j, "checkpoint", c.checkpoint);
  if (j.contains("transform")) c.transform = parse_transform(detail::read_string(j, "transform", ""));
  detail::read_field(j, "eval_split", c.eval_split);
  if (j.contains("model")) c.model = detail::parse_model(j.at("model"));
  if (j.contains("optimizer")) {
    const Json& o = j.at("optimizer");
    detail::check_keys(o, "optimizer", {"kind", "lr", "beta1", "beta2", "eps"});
    const std::string kind = detail::read_string(o, "kind", "adam");
    if (kind != "adam") fail(ErrorKind::kConfig, "unknown optimizer '", kind, "' (only adam is supported)");
    detail::read_field(o, "lr", c.optimizer.lr);
    detail::read_field(o, "beta1", c.optimizer.beta1);
    detail::read_field(o, "beta2", c.optimizer.beta2);
    detail::read_field(o, "eps", c.optimizer.eps);
  }
  if (j.contains("dataset")) {
    const Json& d = j.at("dataset");
    detail::check_keys(d, "dataset", {"kind", "image_size", "classes", "train_count", "test_count", "noise_sigma"});
    const std::string kind = detail::read_string(d, "kind", "oriented-bars");
    if (kind != "oriented-bars") fail(ErrorKind::kConfig, "unknown dataset '", kind, "' (only oriented-bars)");
    detail::read_count(d, "image_size", c.dataset.image_size);
    detail::read_count(d, "classes", c.dataset.classes);
    detail::read_count(d, "train_count", c.dataset.train_count);
    detail::read_count(d, "test_count", c.dataset.test_count);
    detail::read_field(d, "noise_sigma", c.dataset.noise_sigma);
  }
  c.finalize();
  return c;
}

inline RunConfig parse_run_config_text(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::kConfig, "malformed JSON: ", e.what());
  }
  return parse_run_config(j);
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kConfig, "cannot read config '", path.string(), "'");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_run_config_text(text);
}

inline Json to_json(const ModelSpec& m) {
  Json stages = Json::array();
  for (const StageSpec& s : m.stages) {
    stages.push_back({{"depth", s.depth},
                      {"dim", s.dim},
                      {"region", s.region},
                      {"embed_kernel", s.embed_kernel},
                      {"embed_stride", s.embed_stride},
                      {"embed_padding", s.embed_padding}});
  }
  return {{"spec", m.name},
          {"mixer", to_string(m.mixer)},
          {"qkv", to_string(m.qkv)},
          {"local_mix", to_string(m.local_mix)},
          {"local_kernel", m.local_kernel},
          {"sampler", to_string(m.sampler)},
          {"out_proj", to_string(m.out_proj)},
          {"head_dim", m.head_dim},
          {"ffn_expansion", m.ffn_expansion},
          {"sa_conv_projection", m.sa_conv_projection},
          {"sa_kv_stride", m.sa_kv_stride},
          {"stages", stages}};
}

/// Resolved configuration; parsing it back yields the same RunConfig.
inline Json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"output_dir", c.output_dir},
          {"record_wall_time", c.record_wall_time},
          {"checkpoint", c.checkpoint},
          {"transform", to_string(c.transform)},
          {"eval_split", c.eval_split},
          {"model", to_json(c.model)},
          {"optimizer", {{"kind", "adam"}, {"lr", c.optimizer.lr}, {"beta1", c.optimizer.beta1},
                         {"beta2", c.optimizer.beta2}, {"eps", c.optimizer.eps}}},
          {"dataset", {{"kind", "oriented-bars"}, {"image_size", c.dataset.image_size},
                       {"classes", c.dataset.classes}, {"train_count", c.dataset.train_count},
                       {"test_count", c.dataset.test_count}, {"noise_sigma", c.dataset.noise_sigma}}}};
}

}  // namespace mrl
