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

// The MRL token mixer and the host transformer block.
//
// mrl_forward maps [N, D, n, n] to the same shape in five steps:
//   1. tile the map into non-overlapping r x r regions,
//   2. distill each region to one vector with a kernel = stride = r conv,
//   3. self-attend over the (n/r) x (n/r) grid of region vectors,
//   4. broadcast each attended vector back over its region and add it to
//      the block input,
//   5. mix locally with a small depthwise filter, optionally followed by a
//      p4 group convolution.
// Steps 1 and 2 are fused: the sampling conv reads regions in place.
// region_partition exposes step 1 on its own.

#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "mrl/attention.hpp"
#include "mrl/p4conv.hpp"

namespace mrl {

enum class LocalMix { kPlain, kGcP4 };
enum class SamplerKind { kDepthwise, kDense };
enum class OutProjPlacement { kRegional, kFull };

inline const char* to_string(LocalMix m) { return m == LocalMix::kPlain ? "plain" : "gc-p4"; }
inline const char* to_string(SamplerKind s) { return s == SamplerKind::kDepthwise ? "depthwise" : "dense"; }
inline const char* to_string(OutProjPlacement p) { return p == OutProjPlacement::kRegional ? "regional" : "full"; }

struct MrlConfig {
  Index channels = 64;
  Index heads = 1;
  Index head_dim = 64;
  Index region_size = 2;
  QkvVariant qkv = QkvVariant::kStandard;
  LocalMix local_mix = LocalMix::kPlain;
  Index local_kernel = 3;
  // Region sampler: one r x r filter per channel, or a dense D -> D conv.
  SamplerKind sampler = SamplerKind::kDepthwise;
  // kRegional projects attention outputs on the sampled grid; kFull applies
  // the same D x D projection token-wise after the local mix.
  OutProjPlacement out_proj = OutProjPlacement::kRegional;

  void validate() const {
    if (channels == 0 || heads == 0 || channels != heads * head_dim) {
      fail(ErrorKind::kConfig, "channels ", channels, " != heads ", heads, " x head_dim ", head_dim);
    }
    if (region_size == 0) fail(ErrorKind::kConfig, "region size must be >= 1");
    if (local_kernel % 2 == 0) fail(ErrorKind::kConfig, "local kernel must be odd, got ", local_kernel);
    if (local_mix == LocalMix::kGcP4 && channels % kP4Order != 0) {
      fail(ErrorKind::kConfig, "gc-p4 local mix needs channels divisible by 4, got ", channels);
    }
  }
};

/// Non-overlapping r x r tiling of an n x n map.
struct RegionGrid {
  Index n = 0;
  Index r = 0;

  RegionGrid(Index size, Index region) : n(size), r(region) {
    if (r == 0 || n == 0 || n % r != 0) {
      fail(ErrorKind::kPartition, "input size ", n, " is not divisible by region size ", r);
    }
  }

  Index side() const { return n / r; }
  Index count() const { return side() * side(); }
  /// Flat region index for batch element b at grid cell (gi, gj).
  Index index(Index b, Index gi, Index gj) const { return b * count() + gi * side() + gj; }
};

namespace detail {

// Source offsets mapping [N*G, C, r, r] regions onto [N, C, n, n].
inline std::vector<Index> region_sources(Index batch, Index channels, const RegionGrid& grid) {
  const Index n = grid.n, r = grid.r, g = grid.side();
  std::vector<Index> source;
  source.reserve(batch * channels * n * n);
  for (Index b = 0; b < batch; ++b)
    for (Index gi = 0; gi < g; ++gi)
      for (Index gj = 0; gj < g; ++gj)
        for (Index c = 0; c < channels; ++c)
          for (Index u = 0; u < r; ++u)
            for (Index v = 0; v < r; ++v) source.push_back(((b * channels + c) * n + gi * r + u) * n + gj * r + v);
  return source;
}

inline void check_square_map(const Tensor& x, std::string_view what) {
  if (x.rank() != 4 || x.dim(2) != x.dim(3)) fail(ErrorKind::kShape, what, " needs a square NCHW map, got ", x.shape().str());
}

}  // namespace detail

/// [N, C, n, n] -> [N * (n/r)^2, C, r, r], regions in row-major grid order
/// within each batch element (see RegionGrid::index).
inline Tensor region_partition(const Tensor& x, Index r) {
  detail::check_square_map(x, "region_partition");
  const RegionGrid grid(x.dim(2), r);
  return detail::gather(x, Shape{x.dim(0) * grid.count(), x.dim(1), r, r},
                        detail::region_sources(x.dim(0), x.dim(1), grid), OpTag::kRegionPartition);
}

/// Inverse of region_partition.
inline Tensor region_reassemble(const Tensor& regions, Index batch, Index n) {
  if (regions.rank() != 4 || regions.dim(2) != regions.dim(3) || batch == 0) {
    fail(ErrorKind::kShape, "region_reassemble of ", regions.shape().str());
  }
  const Index channels = regions.dim(1);
  const RegionGrid grid(n, regions.dim(2));
  if (regions.dim(0) != batch * grid.count()) {
    fail(ErrorKind::kShape, regions.dim(0), " regions do not tile ", batch, " maps of size ", n);
  }
  const std::vector<Index> forward = detail::region_sources(batch, channels, grid);
  std::vector<Index> inverse(forward.size());
  for (Index i = 0; i < forward.size(); ++i) inverse[forward[i]] = i;
  return detail::gather(regions, Shape{batch, channels, n, n}, std::move(inverse), OpTag::kRegionPartition);
}

inline void check_sampler(Index kernel, Index stride, Index r) {
  if (kernel != r || stride != r) {
    fail(ErrorKind::kConfig, "region sampler needs kernel = stride = ", r, ", got kernel ", kernel, " stride ", stride);
  }
}

/// One feature vector per r x r region: [N, C, n, n] -> [N, C', n/r, n/r].
inline Tensor region_sample(const Tensor& x, Index r, const Conv2dParams& p) {
  detail::check_square_map(x, "region_sample");
  (void)RegionGrid(x.dim(2), r);
  check_sampler(p.kernel(), p.stride, r);
  if (p.padding != 0) fail(ErrorKind::kConfig, "region sampler must not pad");
  return conv2d_forward(x, p);
}

inline Tensor region_sample(const Tensor& x, Index r, const DepthwiseParams& p) {
  detail::check_square_map(x, "region_sample");
  (void)RegionGrid(x.dim(2), r);
  check_sampler(p.kernel(), p.stride, r);
  if (p.padding != 0) fail(ErrorKind::kConfig, "region sampler must not pad");
  return depthwise_forward(x, p);
}

/// Self-attention over the sampled grid; every output cell sees every input cell.
inline Tensor regional_mix(const Tensor& sampled, const AttentionParams& p) {
  detail::check_square_map(sampled, "regional_mix");
  return from_tokens(mhsa_forward(to_tokens(sampled), p), sampled.dim(2), sampled.dim(3));
}

/// x + nearest-neighbour upsample(regional, r).
inline Tensor upscale_sum(const Tensor& x, const Tensor& regional, Index r) { return upscale_add(x, regional, r); }

struct MrlParams {
  MrlConfig config;
  std::optional<DepthwiseParams> sampler_dw;
  std::optional<Conv2dParams> sampler_dense;
  AttentionParams attention;
  std::optional<LinearParams> full_proj;  // OutProjPlacement::kFull
  DepthwiseParams local;
  std::optional<P4ConvParams> gc_lift;    // D -> D/4 base channels x 4 orientations
  std::optional<LinearParams> gc_point;   // D/4 -> D

  static MrlParams init(const MrlConfig& config, Rng& rng) {
    config.validate();
    const Index d = config.channels, r = config.region_size;
    MrlParams p;
    p.config = config;
    if (config.sampler == SamplerKind::kDepthwise) {
      p.sampler_dw = DepthwiseParams::init(d, r, r, 0, true, rng);
    } else {
      p.sampler_dense = Conv2dParams::init(d, d, r, r, 0, true, rng);
    }
    const bool regional_proj = config.out_proj == OutProjPlacement::kRegional;
    p.attention = AttentionParams::init(d, config.heads, config.qkv, config.local_kernel, regional_proj, rng);
    if (!regional_proj) p.full_proj = LinearParams::init(d, d, true, rng);
    p.local = DepthwiseParams::same(d, config.local_kernel, true, rng);
    if (config.local_mix == LocalMix::kGcP4) {
      p.gc_lift = P4ConvParams::init(P4Mode::kLifting, d, d / kP4Order, config.local_kernel, rng);
      p.gc_point = LinearParams::init(d / kP4Order, d, true, rng);
    }
    return p;
  }

  void collect(std::string_view prefix, ParamList& out) const {
    if (sampler_dw) sampler_dw->collect(detail::join(prefix, "sampler"), out);
    if (sampler_dense) sampler_dense->collect(detail::join(prefix, "sampler"), out);
    attention.collect(detail::join(prefix, "attn"), out);
    if (full_proj) full_proj->collect(detail::join(prefix, "proj"), out);
    local.collect(detail::join(prefix, "local"), out);
    if (gc_lift) gc_lift->collect(detail::join(prefix, "gc_lift"), out);
    if (gc_point) gc_point->collect(detail::join(prefix, "gc_point"), out);
  }
};

inline Tensor region_sample(const Tensor& x, const MrlParams& p) {
  const Index r = p.config.region_size;
  return p.sampler_dw ? region_sample(x, r, *p.sampler_dw) : region_sample(x, r, *p.sampler_dense);
}

/// The group-convolution tail of the GC local mix: p4 lifting, max over
/// orientations, pointwise projection back to D channels.
inline Tensor gc_append(const Tensor& x, const MrlParams& p) {
  return pointwise_forward(orientation_max(p4_conv_forward(x, *p.gc_lift), kP4Order), *p.gc_point);
}

inline Tensor local_mix(const Tensor& aug, const MrlParams& p) {
  const Tensor mixed = depthwise_forward(aug, p.local);
  return p.config.local_mix == LocalMix::kGcP4 ? gc_append(mixed, p) : mixed;
}

inline Tensor mrl_forward(const Tensor& x, const MrlParams& p) {
  detail::check_square_map(x, "mrl_forward");
  if (x.dim(1) != p.config.channels) {
    fail(ErrorKind::kShape, "mrl block of width ", p.config.channels, " got ", x.shape().str());
  }
  const Index r = p.config.region_size;
  (void)RegionGrid(x.dim(2), r);
  const Tensor sampled = region_sample(x, p);
  check_finite(sampled, "region sample");
  const Tensor regional = regional_mix(sampled, p.attention);
  check_finite(regional, "regional mix");
  const Tensor aug = upscale_sum(x, regional, r);
  check_finite(aug, "upscale sum");
  Tensor out = local_mix(aug, p);
  check_finite(out, "local mix");
  if (p.full_proj) {
    out = pointwise_forward(out, *p.full_proj);
    check_finite(out, "output projection");
  }
  return out;
}

// ---------------------------------------------------------------- full self-attention mixer

/// Depthwise 3x3 conv followed by a per-channel affine, producing tokens.
struct ConvProjection {
  DepthwiseParams dw;
  Tensor scale;  // [C]
  Tensor shift;  // [C]

  static ConvProjection init(Index channels, Index stride, Rng& rng) {
    return {DepthwiseParams::init(channels, 3, stride, 1, false, rng), detail::fill_param({channels}, 1.0),
            detail::fill_param({channels}, 0.0)};
  }

  void collect(std::string_view prefix, ParamList& out) const {
    dw.collect(detail::join(prefix, "conv"), out);
    out.emplace_back(detail::join(prefix, "norm.weight"), scale);
    out.emplace_back(detail::join(prefix, "norm.bias"), shift);
  }
};

inline Tensor conv_projection_forward(const Tensor& x, const ConvProjection& p) {
  const Index c = p.scale.numel();
  const Tensor y = depthwise_forward(x, p.dw) * reshape(p.scale, {1, c, 1, 1}) + reshape(p.shift, {1, c, 1, 1});
  return to_tokens(y);
}

struct SaParams {
  AttentionParams attention;  // standard q/k/v linears and output projection
  std::optional<ConvProjection> proj_q;
  std::optional<ConvProjection> proj_k;
  std::optional<ConvProjection> proj_v;

  static SaParams init(Index channels, Index heads, bool conv_projection, Index kv_stride, Rng& rng) {
    SaParams p;
    if (conv_projection) {
      p.proj_q = ConvProjection::init(channels, 1, rng);
      p.proj_k = ConvProjection::init(channels, kv_stride, rng);
      p.proj_v = ConvProjection::init(channels, kv_stride, rng);
    }
    p.attention = AttentionParams::init(channels, heads, QkvVariant::kStandard, 3, true, rng);
    return p;
  }

  void collect(std::string_view prefix, ParamList& out) const {
    if (proj_q) proj_q->collect(detail::join(prefix, "conv_q"), out);
    if (proj_k) proj_k->collect(detail::join(prefix, "conv_k"), out);
    if (proj_v) proj_v->collect(detail::join(prefix, "conv_v"), out);
    attention.collect(detail::join(prefix, "attn"), out);
  }
};

/// Full-resolution multi-head self-attention on an NCHW map.
inline Tensor sa_forward(const Tensor& x, const SaParams& p) {
  detail::check_square_map(x, "sa_forward");
  const Index h = x.dim(2), w = x.dim(3);
  if (!p.proj_q) return from_tokens(mhsa_forward(to_tokens(x), p.attention), h, w);
  const AttentionParams& a = p.attention;
  const Tensor q = linear_forward(conv_projection_forward(x, *p.proj_q), *a.q);
  const Tensor k = linear_forward(conv_projection_forward(x, *p.proj_k), *a.k);
  const Tensor v = linear_forward(conv_projection_forward(x, *p.proj_v), *a.v);
  return from_tokens(linear_forward(attention_core(q, k, v, a.heads), *a.out), h, w);
}

// ---------------------------------------------------------------- host block

enum class MixerKind { kSelfAttention, kMrl };

inline const char* to_string(MixerKind m) { return m == MixerKind::kMrl ? "mrl" : "sa"; }

struct BlockParams {
  LayerNormParams norm1;
  std::optional<MrlParams> mrl;
  std::optional<SaParams> sa;
  LayerNormParams norm2;
  FfnParams ffn;

  void collect(std::string_view prefix, ParamList& out) const {
    norm1.collect(detail::join(prefix, "norm1"), out);
    if (mrl) mrl->collect(detail::join(prefix, "mixer"), out);
    if (sa) sa->collect(detail::join(prefix, "mixer"), out);
    norm2.collect(detail::join(prefix, "norm2"), out);
    ffn.collect(detail::join(prefix, "ffn"), out);
  }
};

inline BlockParams make_mrl_block(const MrlConfig& config, Index ffn_expansion, Rng& rng) {
  BlockParams p;
  p.norm1 = LayerNormParams::init(config.channels);
  p.mrl = MrlParams::init(config, rng);
  p.norm2 = LayerNormParams::init(config.channels);
  p.ffn = FfnParams::init(config.channels, ffn_expansion, rng);
  return p;
}

inline BlockParams make_sa_block(Index channels, Index heads, bool conv_projection, Index kv_stride,
                                 Index ffn_expansion, Rng& rng) {
  BlockParams p;
  p.norm1 = LayerNormParams::init(channels);
  p.sa = SaParams::init(channels, heads, conv_projection, kv_stride, rng);
  p.norm2 = LayerNormParams::init(channels);
  p.ffn = FfnParams::init(channels, ffn_expansion, rng);
  return p;
}

/// Pre-norm residual block: y = x + mixer(LN(x)); out = y + FFN(LN(y)).
inline Tensor transformer_block(const Tensor& x, const BlockParams& p) {
  detail::check_square_map(x, "transformer_block");
  const Index h = x.dim(2), w = x.dim(3);
  const Tensor normed = from_tokens(layernorm_forward(to_tokens(x), p.norm1), h, w);
  const Tensor mixed = p.mrl ? mrl_forward(normed, *p.mrl) : sa_forward(normed, *p.sa);
  const Tensor y = to_tokens(x + mixed);
  const Tensor out = y + ffn_forward(layernorm_forward(y, p.norm2), p.ffn);
  check_finite(out, "transformer block");
  return from_tokens(out, h, w);
}

}  // namespace mrl
