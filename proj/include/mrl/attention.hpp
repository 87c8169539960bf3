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

// Multi-head self-attention with two query/key/value projection variants:
// three independent linears, or one shared linear basis followed by three
// depthwise filters on the token grid.

#pragma once

#include <cmath>
#include <optional>
#include <string_view>

#include "mrl/layers.hpp"

namespace mrl {

enum class QkvVariant { kStandard, kCommon };

inline const char* to_string(QkvVariant v) { return v == QkvVariant::kStandard ? "standard" : "commonqkv"; }

struct CommonQkvParams {
  LinearParams basis;  // C -> C, no bias
  DepthwiseParams dw_q;
  DepthwiseParams dw_k;
  DepthwiseParams dw_v;

  static CommonQkvParams init(Index channels, Index kernel, Rng& rng) {
    CommonQkvParams p;
    p.basis = LinearParams::init(channels, channels, false, rng);
    p.dw_q = DepthwiseParams::same(channels, kernel, false, rng);
    p.dw_k = DepthwiseParams::same(channels, kernel, false, rng);
    p.dw_v = DepthwiseParams::same(channels, kernel, false, rng);
    return p;
  }

  void collect(std::string_view prefix, ParamList& out) const {
    basis.collect(detail::join(prefix, "basis"), out);
    dw_q.collect(detail::join(prefix, "dw_q"), out);
    dw_k.collect(detail::join(prefix, "dw_k"), out);
    dw_v.collect(detail::join(prefix, "dw_v"), out);
  }
};

struct AttentionParams {
  Index heads = 1;
  Index head_dim = 64;
  QkvVariant variant = QkvVariant::kStandard;
  std::optional<LinearParams> q;  // standard variant, C -> C without bias
  std::optional<LinearParams> k;
  std::optional<LinearParams> v;
  std::optional<CommonQkvParams> common;
  // Absent when the caller applies the output projection elsewhere.
  std::optional<LinearParams> out;

  static AttentionParams init(Index channels, Index heads, QkvVariant variant, Index kernel, bool with_out_proj,
                              Rng& rng) {
    if (heads == 0 || channels % heads != 0) {
      fail(ErrorKind::kConfig, "channels ", channels, " not divisible by heads ", heads);
    }
    AttentionParams p;
    p.heads = heads;
    p.head_dim = channels / heads;
    p.variant = variant;
    if (variant == QkvVariant::kStandard) {
      p.q = LinearParams::init(channels, channels, false, rng);
      p.k = LinearParams::init(channels, channels, false, rng);
      p.v = LinearParams::init(channels, channels, false, rng);
    } else {
      p.common = CommonQkvParams::init(channels, kernel, rng);
    }
    if (with_out_proj) p.out = LinearParams::init(channels, channels, true, rng);
    return p;
  }

  Index channels() const { return heads * head_dim; }

  void collect(std::string_view prefix, ParamList& out_list) const {
    if (q) q->collect(detail::join(prefix, "q"), out_list);
    if (k) k->collect(detail::join(prefix, "k"), out_list);
    if (v) v->collect(detail::join(prefix, "v"), out_list);
    if (common) common->collect(detail::join(prefix, "qkv"), out_list);
    if (out) out->collect(detail::join(prefix, "proj"), out_list);
  }
};

struct Qkv {
  Tensor q;
  Tensor k;
  Tensor v;
};

inline Index square_side(Index tokens) {
  auto side = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(tokens))));
  if (side * side != tokens) fail(ErrorKind::kConfig, "token count ", tokens, " is not a square grid");
  return side;
}

/// Shared basis then one depthwise filter each for Q, K and V on the
/// sqrt(T) x sqrt(T) token grid. tokens: [N, T, C].
inline Qkv commonqkv_project(const Tensor& tokens, const CommonQkvParams& p) {
  if (tokens.rank() != 3) fail(ErrorKind::kShape, "commonqkv expects [N, T, C], got ", tokens.shape().str());
  const Index side = square_side(tokens.dim(1));
  const Tensor grid = from_tokens(linear_forward(tokens, p.basis), side, side);
  return {to_tokens(depthwise_forward(grid, p.dw_q)), to_tokens(depthwise_forward(grid, p.dw_k)),
          to_tokens(depthwise_forward(grid, p.dw_v))};
}

namespace detail {

// [N, T, h*d] -> [N*h, T, d]
inline Tensor split_heads(const Tensor& x, Index heads) {
  const Index n = x.dim(0), t = x.dim(1), d = x.dim(2) / heads;
  return reshape(permute(reshape(x, {n, t, heads, d}), {0, 2, 1, 3}), {n * heads, t, d});
}

// [N*h, T, d] -> [N, T, h*d]
inline Tensor merge_heads(const Tensor& x, Index heads) {
  const Index n = x.dim(0) / heads, t = x.dim(1), d = x.dim(2);
  return reshape(permute(reshape(x, {n, heads, t, d}), {0, 2, 1, 3}), {n, t, heads * d});
}

inline void check_heads(const Tensor& q, Index heads) {
  if (heads == 0 || q.dim(2) % heads != 0) {
    fail(ErrorKind::kConfig, "width ", q.dim(2), " not divisible by heads ", heads);
  }
}

}  // namespace detail

/// softmax(Q K^T / sqrt(d_h)) per head. q: [N, Tq, C], k: [N, Tk, C].
/// Returns [N*h, Tq, Tk].
inline Tensor attention_weights(const Tensor& q, const Tensor& k, Index heads) {
  detail::check_heads(q, heads);
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(q.dim(2) / heads));
  const Tensor logits = scale(bmm(detail::split_heads(q, heads), detail::split_heads(k, heads), true), scale_factor);
  return softmax_lastdim(logits);
}

/// Scaled dot-product attention with heads concatenated. Returns [N, Tq, C].
inline Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, Index heads) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) fail(ErrorKind::kShape, "attention expects rank-3 q, k, v");
  if (k.shape() != v.shape() || q.dim(0) != k.dim(0) || q.dim(2) != k.dim(2)) {
    fail(ErrorKind::kShape, "attention shape mismatch: q ", q.shape().str(), " k ", k.shape().str(), " v ",
         v.shape().str());
  }
  const Tensor weights = attention_weights(q, k, heads);
  return detail::merge_heads(bmm(weights, detail::split_heads(v, heads)), heads);
}

inline Qkv project_qkv(const Tensor& tokens, const AttentionParams& p) {
  if (p.variant == QkvVariant::kCommon) return commonqkv_project(tokens, *p.common);
  return {linear_forward(tokens, *p.q), linear_forward(tokens, *p.k), linear_forward(tokens, *p.v)};
}

/// tokens: [T, C] or [N, T, C]; output has the same shape.
inline Tensor mhsa_forward(const Tensor& tokens, const AttentionParams& p) {
  if (tokens.rank() != 2 && tokens.rank() != 3) {
    fail(ErrorKind::kShape, "mhsa expects [T, C] or [N, T, C], got ", tokens.shape().str());
  }
  if (p.heads == 0 || p.channels() != tokens.dim(tokens.rank() - 1)) {
    fail(ErrorKind::kConfig, "token width ", tokens.dim(tokens.rank() - 1), " != heads ", p.heads, " x head_dim ",
         p.head_dim);
  }
  const bool batched = tokens.rank() == 3;
  const Tensor x = batched ? tokens : reshape(tokens, {1, tokens.dim(0), tokens.dim(1)});
  const Qkv qkv = project_qkv(x, p);
  Tensor y = attention_core(qkv.q, qkv.k, qkv.v, p.heads);
  if (p.out) y = linear_forward(y, *p.out);
  return batched ? y : reshape(y, tokens.shape());
}

}  // namespace mrl
