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

// Staged classification network: per stage a strided conv embedding with
// layer norm followed by L transformer blocks, then a final layer norm,
// global average pooling and a linear classifier.

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mrl/mrl_block.hpp"

namespace mrl {

struct StageSpec {
  Index depth = 1;
  Index dim = 64;
  Index region = 2;
  Index embed_kernel = 3;
  Index embed_stride = 2;
  Index embed_padding = 1;
};

struct ModelSpec {
  std::string name = "custom";
  Index in_channels = 3;
  Index input_size = 224;
  Index num_classes = 1000;
  Index head_dim = 64;
  Index ffn_expansion = 4;
  MixerKind mixer = MixerKind::kMrl;
  QkvVariant qkv = QkvVariant::kStandard;
  LocalMix local_mix = LocalMix::kPlain;
  Index local_kernel = 3;
  SamplerKind sampler = SamplerKind::kDepthwise;
  OutProjPlacement out_proj = OutProjPlacement::kRegional;
  bool sa_conv_projection = false;
  Index sa_kv_stride = 1;
  std::vector<StageSpec> stages;

  Index heads(Index stage) const { return stages.at(stage).dim / head_dim; }

  MrlConfig block_config(Index stage) const {
    const StageSpec& s = stages.at(stage);
    MrlConfig c;
    c.channels = s.dim;
    c.heads = heads(stage);
    c.head_dim = head_dim;
    c.region_size = s.region;
    c.qkv = qkv;
    c.local_mix = local_mix;
    c.local_kernel = local_kernel;
    c.sampler = sampler;
    c.out_proj = out_proj;
    return c;
  }

  /// Spatial size entering each stage's blocks.
  std::vector<Index> stage_sizes() const {
    std::vector<Index> sizes;
    Index size = input_size;
    for (Index i = 0; i < stages.size(); ++i) {
      const StageSpec& s = stages[i];
      if (s.embed_kernel == 0 || s.embed_stride == 0 || size + 2 * s.embed_padding < s.embed_kernel) {
        fail(ErrorKind::kBuild, "stage ", i, ": embedding kernel ", s.embed_kernel, " stride ", s.embed_stride,
             " does not fit input size ", size);
      }
      size = (size + 2 * s.embed_padding - s.embed_kernel) / s.embed_stride + 1;
      sizes.push_back(size);
    }
    return sizes;
  }

  void validate() const {
    if (stages.empty()) fail(ErrorKind::kBuild, "model needs at least one stage");
    if (in_channels == 0 || num_classes == 0 || head_dim == 0 || ffn_expansion == 0) {
      fail(ErrorKind::kBuild, "in_channels, num_classes, head_dim and ffn_expansion must be >= 1");
    }
    const std::vector<Index> sizes = stage_sizes();
    for (Index i = 0; i < stages.size(); ++i) {
      const StageSpec& s = stages[i];
      if (s.depth == 0) fail(ErrorKind::kBuild, "stage ", i, ": depth must be >= 1");
      if (i > 0 && s.dim < stages[i - 1].dim) {
        fail(ErrorKind::kBuild, "stage ", i, ": dim ", s.dim, " is smaller than the previous stage's ",
             stages[i - 1].dim);
      }
      if (s.dim % head_dim != 0) fail(ErrorKind::kBuild, "stage ", i, ": dim ", s.dim, " not divisible by head_dim ", head_dim);
      if (mixer == MixerKind::kMrl) {
        if (s.region == 0 || sizes[i] % s.region != 0) {
          fail(ErrorKind::kBuild, "stage ", i, ": spatial size ", sizes[i], " not divisible by region size ", s.region);
        }
        try {
          block_config(i).validate();
        } catch (const Error& e) {
          fail(ErrorKind::kBuild, "stage ", i, ": ", e.what());
        }
      }
    }
  }
};

// ---------------------------------------------------------------- presets

/// Desk-scale model for 32 x 32 inputs.
inline ModelSpec mrl_tiny_spec() {
  ModelSpec s;
  s.name = "mrl-tiny";
  s.in_channels = 3;
  s.input_size = 32;
  s.num_classes = 4;
  s.head_dim = 16;
  s.stages = {{1, 32, 2, 3, 2, 1}, {2, 64, 2, 3, 2, 1}};
  return s;
}

inline ModelSpec mrl_cvt_spec(Index depth1, Index depth2, std::string name) {
  ModelSpec s;
  s.name = std::move(name);
  s.in_channels = 3;
  s.input_size = 224;
  s.num_classes = 1000;
  s.head_dim = 64;
  s.out_proj = OutProjPlacement::kFull;
  s.sa_conv_projection = true;
  s.sa_kv_stride = 2;
  s.stages = {{1, 64, 4, 7, 4, 2}, {depth1, 192, 4, 3, 2, 1}, {depth2, 384, 2, 3, 2, 1}};
  return s;
}

inline ModelSpec mrl_cvt13_spec() { return mrl_cvt_spec(2, 10, "mrl-cvt-13"); }
inline ModelSpec mrl_cvt21_spec() { return mrl_cvt_spec(4, 16, "mrl-cvt-21"); }

inline std::vector<std::string> preset_names() { return {"mrl-tiny", "mrl-cvt-13", "mrl-cvt-21"}; }

inline ModelSpec preset_spec(std::string_view name) {
  if (name == "mrl-tiny") return mrl_tiny_spec();
  if (name == "mrl-cvt-13") return mrl_cvt13_spec();
  if (name == "mrl-cvt-21") return mrl_cvt21_spec();
  fail(ErrorKind::kConfig, "unknown model spec '", name, "'");
}

// ---------------------------------------------------------------- model

struct StageParams {
  Conv2dParams embed;
  LayerNormParams embed_norm;
  std::vector<BlockParams> blocks;
};

class Model {
 public:
  Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    Rng rng(seed);
    Index in = spec_.in_channels;
    for (Index i = 0; i < spec_.stages.size(); ++i) {
      const StageSpec& s = spec_.stages[i];
      StageParams stage;
      stage.embed = Conv2dParams::init(in, s.dim, s.embed_kernel, s.embed_stride, s.embed_padding, true, rng);
      stage.embed_norm = LayerNormParams::init(s.dim);
      for (Index b = 0; b < s.depth; ++b) {
        stage.blocks.push_back(spec_.mixer == MixerKind::kMrl
                                   ? make_mrl_block(spec_.block_config(i), spec_.ffn_expansion, rng)
                                   : make_sa_block(s.dim, spec_.heads(i), spec_.sa_conv_projection,
                                                   spec_.sa_kv_stride, spec_.ffn_expansion, rng));
      }
      stages_.push_back(std::move(stage));
      in = s.dim;
    }
    final_norm_ = LayerNormParams::init(in);
    head_ = LinearParams::init(in, spec_.num_classes, true, rng);
  }

  const ModelSpec& spec() const { return spec_; }
  const std::vector<StageParams>& stages() const { return stages_; }

  /// images [N, C_in, S, S] -> logits [N, num_classes].
  Tensor forward(const Tensor& images) const {
    const Index s = spec_.input_size;
    if (images.rank() != 4 || images.dim(1) != spec_.in_channels || images.dim(2) != s || images.dim(3) != s) {
      fail(ErrorKind::kShape, spec_.name, " expects [N, ", spec_.in_channels, ", ", s, ", ", s, "], got ",
           images.shape().str());
    }
    Tensor x = images;
    for (const StageParams& stage : stages_) {
      x = conv2d_forward(x, stage.embed);
      const Index h = x.dim(2), w = x.dim(3);
      x = from_tokens(layernorm_forward(to_tokens(x), stage.embed_norm), h, w);
      for (const BlockParams& block : stage.blocks) x = transformer_block(x, block);
    }
    const Index h = x.dim(2), w = x.dim(3);
    const Tensor pooled = global_avg_pool(from_tokens(layernorm_forward(to_tokens(x), final_norm_), h, w));
    return linear_forward(pooled, head_);
  }

  /// Named parameters in a fixed order; names of attention-module
  /// parameters contain ".mixer.".
  ParamList parameters() const {
    ParamList out;
    for (Index i = 0; i < stages_.size(); ++i) {
      const std::string prefix = "stages." + std::to_string(i);
      stages_[i].embed.collect(prefix + ".embed.conv", out);
      stages_[i].embed_norm.collect(prefix + ".embed.norm", out);
      for (Index b = 0; b < stages_[i].blocks.size(); ++b) {
        stages_[i].blocks[b].collect(prefix + ".blocks." + std::to_string(b), out);
      }
    }
    final_norm_.collect("head.norm", out);
    head_.collect("head.fc", out);
    return out;
  }

 private:
  ModelSpec spec_;
  std::vector<StageParams> stages_;
  LayerNormParams final_norm_;
  LinearParams head_;
};

inline Model build_model(const ModelSpec& spec, std::uint64_t seed = 0) { return Model(spec, seed); }

inline bool is_attention_param(std::string_view name) { return name.find(".mixer.") != std::string_view::npos; }

}  // namespace mrl
