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

// Closed-form parameter and multiply-accumulate accounting.
//
// Layer entries are named after the parameter prefixes of the built model
// (e.g. "stages.1.blocks.0.mixer.attn.q"), so every entry can be checked
// against an instantiated network. Layer norms, activations, softmax,
// orientation pooling and per-channel affines count zero MACs.

#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "mrl/model.hpp"

namespace mrl {

/// FLOPs reported per multiply-accumulate.
inline constexpr std::uint64_t kFlopsPerMac = 1;

enum class CostGroup { kAttention, kRest };

inline const char* to_string(CostGroup g) { return g == CostGroup::kAttention ? "attention-module" : "rest-of-network"; }

enum class LayerKind { kLinear, kConv, kDepthwise, kP4Lifting, kLayerNorm, kChannelAffine, kAttentionCore };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::kLinear: return "linear";
    case LayerKind::kConv: return "conv";
    case LayerKind::kDepthwise: return "depthwise";
    case LayerKind::kP4Lifting: return "p4-lifting";
    case LayerKind::kLayerNorm: return "layernorm";
    case LayerKind::kChannelAffine: return "channel-affine";
    case LayerKind::kAttentionCore: return "attention-core";
  }
  return "unknown";
}

/// Shape facts a layer's cost depends on. `positions` is the number of
/// output tokens or output pixels; `keys` is the key count of an attention
/// core.
struct LayerDims {
  std::uint64_t in = 0;
  std::uint64_t out = 0;
  std::uint64_t kernel = 1;
  std::uint64_t positions = 1;
  std::uint64_t keys = 0;
  bool bias = false;
};

inline std::uint64_t count_params(LayerKind kind, const LayerDims& d) {
  const std::uint64_t b = d.bias ? d.out : 0;
  switch (kind) {
    case LayerKind::kLinear: return d.in * d.out + b;
    case LayerKind::kConv: return d.out * d.in * d.kernel * d.kernel + b;
    case LayerKind::kDepthwise: return d.out * d.kernel * d.kernel + b;
    case LayerKind::kP4Lifting: return d.out * d.in * d.kernel * d.kernel;
    case LayerKind::kLayerNorm:
    case LayerKind::kChannelAffine: return 2 * d.out;
    case LayerKind::kAttentionCore: return 0;
  }
  fail(ErrorKind::kAccounting, "unsupported layer kind ", static_cast<int>(kind));
}

inline std::uint64_t count_macs(LayerKind kind, const LayerDims& d) {
  switch (kind) {
    case LayerKind::kLinear: return d.positions * d.in * d.out;
    case LayerKind::kConv: return d.out * d.in * d.kernel * d.kernel * d.positions;
    case LayerKind::kDepthwise: return d.out * d.kernel * d.kernel * d.positions;
    case LayerKind::kP4Lifting: return 4 * d.out * d.in * d.kernel * d.kernel * d.positions;
    case LayerKind::kLayerNorm:
    case LayerKind::kChannelAffine: return 0;
    case LayerKind::kAttentionCore: return 2 * d.positions * d.keys * d.out;
  }
  fail(ErrorKind::kAccounting, "unsupported layer kind ", static_cast<int>(kind));
}

/// Q K^T plus weights x V for T tokens of width C: 2 T^2 C.
inline std::uint64_t attention_core_macs(std::uint64_t tokens, std::uint64_t channels) {
  return count_macs(LayerKind::kAttentionCore, {.out = channels, .positions = tokens, .keys = tokens});
}

struct LayerCost {
  std::string name;
  CostGroup group = CostGroup::kRest;
  LayerKind kind = LayerKind::kLinear;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;

  std::uint64_t flops() const { return macs * kFlopsPerMac; }
};

struct CostTotals {
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  std::uint64_t flops() const { return macs * kFlopsPerMac; }
};

struct CostReport {
  std::string model;
  std::string variant;
  Index input_size = 0;
  std::vector<LayerCost> layers;

  void add(std::string name, CostGroup group, LayerKind kind, const LayerDims& d) {
    layers.push_back({std::move(name), group, kind, count_params(kind, d), count_macs(kind, d)});
  }

  CostTotals total() const {
    CostTotals t;
    for (const LayerCost& l : layers) {
      t.params += l.params;
      t.macs += l.macs;
    }
    return t;
  }

  CostTotals group(CostGroup g) const {
    CostTotals t;
    for (const LayerCost& l : layers) {
      if (l.group != g) continue;
      t.params += l.params;
      t.macs += l.macs;
    }
    return t;
  }
};

namespace detail {

inline void add_mrl_mixer(CostReport& r, const std::string& p, const MrlConfig& c, std::uint64_t n) {
  const auto A = CostGroup::kAttention;
  const std::uint64_t d = c.channels, rs = c.region_size, g = n / rs, t = g * g, k = c.local_kernel;
  if (c.sampler == SamplerKind::kDepthwise) {
    r.add(p + ".sampler", A, LayerKind::kDepthwise, {.out = d, .kernel = rs, .positions = t, .bias = true});
  } else {
    r.add(p + ".sampler", A, LayerKind::kConv, {.in = d, .out = d, .kernel = rs, .positions = t, .bias = true});
  }
  if (c.qkv == QkvVariant::kStandard) {
    for (const char* name : {".attn.q", ".attn.k", ".attn.v"}) {
      r.add(p + name, A, LayerKind::kLinear, {.in = d, .out = d, .positions = t});
    }
  } else {
    r.add(p + ".attn.qkv.basis", A, LayerKind::kLinear, {.in = d, .out = d, .positions = t});
    for (const char* name : {".attn.qkv.dw_q", ".attn.qkv.dw_k", ".attn.qkv.dw_v"}) {
      r.add(p + name, A, LayerKind::kDepthwise, {.out = d, .kernel = k, .positions = t});
    }
  }
  r.add(p + ".attn.core", A, LayerKind::kAttentionCore, {.out = d, .positions = t, .keys = t});
  if (c.out_proj == OutProjPlacement::kRegional) {
    r.add(p + ".attn.proj", A, LayerKind::kLinear, {.in = d, .out = d, .positions = t, .bias = true});
  }
  r.add(p + ".local", A, LayerKind::kDepthwise, {.out = d, .kernel = k, .positions = n * n, .bias = true});
  if (c.local_mix == LocalMix::kGcP4) {
    r.add(p + ".gc_lift", A, LayerKind::kP4Lifting, {.in = d, .out = d / 4, .kernel = k, .positions = n * n});
    r.add(p + ".gc_point", A, LayerKind::kLinear, {.in = d / 4, .out = d, .positions = n * n, .bias = true});
  }
  if (c.out_proj == OutProjPlacement::kFull) {
    r.add(p + ".proj", A, LayerKind::kLinear, {.in = d, .out = d, .positions = n * n, .bias = true});
  }
}

inline void add_sa_mixer(CostReport& r, const std::string& p, const ModelSpec& spec, std::uint64_t d,
                         std::uint64_t n) {
  const auto A = CostGroup::kAttention;
  std::uint64_t tq = n * n, tk = n * n;
  if (spec.sa_conv_projection) {
    const std::uint64_t s = spec.sa_kv_stride, m = (n + 2 - 3) / s + 1;
    tk = m * m;
    r.add(p + ".conv_q.conv", A, LayerKind::kDepthwise, {.out = d, .kernel = 3, .positions = tq});
    r.add(p + ".conv_q.norm", A, LayerKind::kChannelAffine, {.out = d});
    r.add(p + ".conv_k.conv", A, LayerKind::kDepthwise, {.out = d, .kernel = 3, .positions = tk});
    r.add(p + ".conv_k.norm", A, LayerKind::kChannelAffine, {.out = d});
    r.add(p + ".conv_v.conv", A, LayerKind::kDepthwise, {.out = d, .kernel = 3, .positions = tk});
    r.add(p + ".conv_v.norm", A, LayerKind::kChannelAffine, {.out = d});
  }
  r.add(p + ".attn.q", A, LayerKind::kLinear, {.in = d, .out = d, .positions = tq});
  r.add(p + ".attn.k", A, LayerKind::kLinear, {.in = d, .out = d, .positions = tk});
  r.add(p + ".attn.v", A, LayerKind::kLinear, {.in = d, .out = d, .positions = tk});
  r.add(p + ".attn.core", A, LayerKind::kAttentionCore, {.out = d, .positions = tq, .keys = tk});
  r.add(p + ".attn.proj", A, LayerKind::kLinear, {.in = d, .out = d, .positions = tq, .bias = true});
}

}  // namespace detail

inline std::string variant_label(const ModelSpec& spec) {
  if (spec.mixer == MixerKind::kSelfAttention) return "SA";
  std::string label = spec.qkv == QkvVariant::kCommon ? "CQ+MRL" : "MRL";
  if (spec.local_mix == LocalMix::kGcP4) label = "GC-" + label;
  return label;
}

/// Structural walk of the network described by spec at the given input size.
inline CostReport model_cost(ModelSpec spec, Index input_size) {
  spec.input_size = input_size;
  spec.validate();
  CostReport r;
  r.model = spec.name;
  r.variant = variant_label(spec);
  r.input_size = input_size;
  const auto R = CostGroup::kRest;
  const std::vector<Index> sizes = spec.stage_sizes();
  std::uint64_t in = spec.in_channels;
  for (Index i = 0; i < spec.stages.size(); ++i) {
    const StageSpec& s = spec.stages[i];
    const std::uint64_t d = s.dim, n = sizes[i], hw = n * n;
    const std::string stage = "stages." + std::to_string(i);
    r.add(stage + ".embed.conv", R, LayerKind::kConv,
          {.in = in, .out = d, .kernel = s.embed_kernel, .positions = hw, .bias = true});
    r.add(stage + ".embed.norm", R, LayerKind::kLayerNorm, {.out = d});
    for (Index b = 0; b < s.depth; ++b) {
      const std::string block = stage + ".blocks." + std::to_string(b);
      r.add(block + ".norm1", R, LayerKind::kLayerNorm, {.out = d});
      if (spec.mixer == MixerKind::kMrl) {
        detail::add_mrl_mixer(r, block + ".mixer", spec.block_config(i), n);
      } else {
        detail::add_sa_mixer(r, block + ".mixer", spec, d, n);
      }
      r.add(block + ".norm2", R, LayerKind::kLayerNorm, {.out = d});
      const std::uint64_t hidden = spec.ffn_expansion * d;
      r.add(block + ".ffn.fc1", R, LayerKind::kLinear, {.in = d, .out = hidden, .positions = hw, .bias = true});
      r.add(block + ".ffn.fc2", R, LayerKind::kLinear, {.in = hidden, .out = d, .positions = hw, .bias = true});
    }
    in = d;
  }
  r.add("head.norm", R, LayerKind::kLayerNorm, {.out = in});
  r.add("head.fc", R, LayerKind::kLinear, {.in = in, .out = spec.num_classes, .positions = 1, .bias = true});
  return r;
}

inline std::uint64_t count_params(const Model& model) { return param_count(model.parameters()); }

// ---------------------------------------------------------------- variants

struct VariantComparison {
  CostReport sa;
  CostReport mrl;
  CostReport cq_mrl;
};

/// The same network with its token mixer swapped: full self-attention,
/// MRL, and MRL with CommonQKV.
inline VariantComparison compare_variants(const ModelSpec& spec, Index input_size) {
  ModelSpec sa = spec, mrl = spec, cq = spec;
  sa.mixer = MixerKind::kSelfAttention;
  mrl.mixer = MixerKind::kMrl;
  mrl.qkv = QkvVariant::kStandard;
  cq.mixer = MixerKind::kMrl;
  cq.qkv = QkvVariant::kCommon;
  return {model_cost(sa, input_size), model_cost(mrl, input_size), model_cost(cq, input_size)};
}

/// Percent change from `from` to `to`.
inline double percent_delta(std::uint64_t from, std::uint64_t to) {
  if (from == 0) return 0.0;
  return 100.0 * (static_cast<double>(to) - static_cast<double>(from)) / static_cast<double>(from);
}

// ---------------------------------------------------------------- output

inline std::string to_csv(const CostReport& r) {
  std::ostringstream os;
  os << "layer,group,params,macs,flops\n";
  for (const LayerCost& l : r.layers) {
    os << l.name << ',' << to_string(l.group) << ',' << l.params << ',' << l.macs << ',' << l.flops() << '\n';
  }
  for (CostGroup g : {CostGroup::kAttention, CostGroup::kRest}) {
    const CostTotals t = r.group(g);
    os << "total," << to_string(g) << ',' << t.params << ',' << t.macs << ',' << t.flops() << '\n';
  }
  const CostTotals t = r.total();
  os << "total,all," << t.params << ',' << t.macs << ',' << t.flops() << '\n';
  os << "# flops = " << kFlopsPerMac << " x macs; layer norms, activations, softmax and pooling count 0 macs\n";
  return os.str();
}

}  // namespace mrl
