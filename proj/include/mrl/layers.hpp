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

// Parameterized layers. Every parameter tensor is a leaf that requires a
// gradient; initialization is uniform(±1/sqrt(fan_in)) throughout.

#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mrl/ops.hpp"

namespace mrl {

using NamedTensor = std::pair<std::string, Tensor>;
using ParamList = std::vector<NamedTensor>;

inline Index param_count(const ParamList& params) {
  Index total = 0;
  for (const auto& [name, t] : params) total += t.numel();
  return total;
}

namespace detail {

inline Tensor init_param(Shape shape, Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::uniform(std::move(shape), rng, -bound, bound);
  t.set_requires_grad(true);
  return t;
}

inline Tensor fill_param(Shape shape, double value) {
  Tensor t = Tensor::constant(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

inline std::string join(std::string_view prefix, std::string_view name) {
  return prefix.empty() ? std::string(name) : std::string(prefix) + "." + std::string(name);
}

inline void collect_weight_bias(std::string_view prefix, const Tensor& weight, const std::optional<Tensor>& bias,
                                ParamList& out) {
  out.emplace_back(join(prefix, "weight"), weight);
  if (bias) out.emplace_back(join(prefix, "bias"), *bias);
}

}  // namespace detail

// ---------------------------------------------------------------- linear

struct LinearParams {
  Tensor weight;  // [C_out, C_in]
  std::optional<Tensor> bias;

  static LinearParams init(Index in_features, Index out_features, bool with_bias, Rng& rng) {
    LinearParams p;
    p.weight = detail::init_param({out_features, in_features}, in_features, rng);
    if (with_bias) p.bias = detail::init_param({out_features}, in_features, rng);
    return p;
  }

  Index in_features() const { return weight.dim(1); }
  Index out_features() const { return weight.dim(0); }

  void collect(std::string_view prefix, ParamList& out) const {
    detail::collect_weight_bias(prefix, weight, bias, out);
  }
};

inline Tensor linear_forward(const Tensor& x, const LinearParams& p) { return linear(x, p.weight, p.bias); }

/// Applies a LinearParams channel map to an NCHW map as a 1×1 convolution.
inline Tensor pointwise_forward(const Tensor& x, const LinearParams& p) {
  const Tensor kernel = reshape(p.weight, {p.out_features(), p.in_features(), 1, 1});
  return conv2d(x, kernel, p.bias, 1, 0);
}

// ---------------------------------------------------------------- conv

struct Conv2dParams {
  Tensor weight;  // [C_out, C_in, k, k]
  std::optional<Tensor> bias;
  Index stride = 1;
  Index padding = 0;

  static Conv2dParams init(Index in_channels, Index out_channels, Index kernel, Index stride, Index padding,
                           bool with_bias, Rng& rng) {
    if (kernel == 0 || stride == 0) fail(ErrorKind::kConfig, "conv kernel and stride must be >= 1");
    Conv2dParams p;
    const Index fan_in = in_channels * kernel * kernel;
    p.weight = detail::init_param({out_channels, in_channels, kernel, kernel}, fan_in, rng);
    if (with_bias) p.bias = detail::init_param({out_channels}, fan_in, rng);
    p.stride = stride;
    p.padding = padding;
    return p;
  }

  Index kernel() const { return weight.dim(2); }
  Index in_channels() const { return weight.dim(1); }
  Index out_channels() const { return weight.dim(0); }

  void collect(std::string_view prefix, ParamList& out) const {
    detail::collect_weight_bias(prefix, weight, bias, out);
  }
};

inline Tensor conv2d_forward(const Tensor& x, const Conv2dParams& p) {
  return conv2d(x, p.weight, p.bias, p.stride, p.padding);
}

// ---------------------------------------------------------------- depthwise

struct DepthwiseParams {
  Tensor weight;  // [C, k, k]
  std::optional<Tensor> bias;
  Index stride = 1;
  Index padding = 0;

  /// Stride-1 zero-padded filter that preserves spatial size; k must be odd.
  static DepthwiseParams same(Index channels, Index kernel, bool with_bias, Rng& rng) {
    if (kernel % 2 == 0) fail(ErrorKind::kConfig, "same-padded depthwise kernel must be odd, got ", kernel);
    return init(channels, kernel, 1, kernel / 2, with_bias, rng);
  }

  static DepthwiseParams init(Index channels, Index kernel, Index stride, Index padding, bool with_bias, Rng& rng) {
    if (kernel == 0 || stride == 0) fail(ErrorKind::kConfig, "depthwise kernel and stride must be >= 1");
    DepthwiseParams p;
    const Index fan_in = kernel * kernel;
    p.weight = detail::init_param({channels, kernel, kernel}, fan_in, rng);
    if (with_bias) p.bias = detail::init_param({channels}, fan_in, rng);
    p.stride = stride;
    p.padding = padding;
    return p;
  }

  Index channels() const { return weight.dim(0); }
  Index kernel() const { return weight.dim(1); }

  void collect(std::string_view prefix, ParamList& out) const {
    detail::collect_weight_bias(prefix, weight, bias, out);
  }
};

inline Tensor depthwise_forward(const Tensor& x, const DepthwiseParams& p) {
  return depthwise_conv2d(x, p.weight, p.bias, p.stride, p.padding);
}

// ---------------------------------------------------------------- norm / ffn

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  static LayerNormParams init(Index width) {
    return {detail::fill_param({width}, 1.0), detail::fill_param({width}, 0.0), 1e-5};
  }

  void collect(std::string_view prefix, ParamList& out) const {
    out.emplace_back(detail::join(prefix, "weight"), gamma);
    out.emplace_back(detail::join(prefix, "bias"), beta);
  }
};

/// Per-token normalization over the last axis.
inline Tensor layernorm_forward(const Tensor& x, const LayerNormParams& p) {
  return layer_norm(x, p.gamma, p.beta, p.eps);
}

/// Inverted bottleneck: C -> expansion*C -> C with GELU in between.
struct FfnParams {
  LinearParams fc1;
  LinearParams fc2;

  static FfnParams init(Index width, Index expansion, Rng& rng) {
    FfnParams p;
    p.fc1 = LinearParams::init(width, expansion * width, true, rng);
    p.fc2 = LinearParams::init(expansion * width, width, true, rng);
    return p;
  }

  void collect(std::string_view prefix, ParamList& out) const {
    fc1.collect(detail::join(prefix, "fc1"), out);
    fc2.collect(detail::join(prefix, "fc2"), out);
  }
};

inline Tensor ffn_forward(const Tensor& tokens, const FfnParams& p) {
  return linear_forward(gelu(linear_forward(tokens, p.fc1)), p.fc2);
}

}  // namespace mrl
