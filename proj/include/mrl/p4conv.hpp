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

// Rotation-equivariant convolution over the group p4 (quarter turns).
//
// Feature maps on the group carry four orientation blocks on the channel
// axis, orientation-major: channel index = orientation * C + c. The four
// filter orientations are produced by rotating one stored base filter, so
// the parameter count equals that of the plain convolution.
//
// The group acts on such maps by a spatial quarter turn combined with a
// cyclic shift of the orientation blocks (see p4_act). Both conv modes
// satisfy forward(act(x)) == act(forward(x)), where a lifting input is acted
// on by the plain rot90.

#pragma once

#include <string_view>
#include <vector>

#include "mrl/layers.hpp"

namespace mrl {

inline constexpr Index kP4Order = 4;

enum class P4Mode { kLifting, kGroup };

struct P4ConvParams {
  // Lifting: [C_out, C_in, k, k]. Group: [C_out, 4*C_in, k, k] with the
  // input axis in the same orientation-major order as the features.
  Tensor weight;
  P4Mode mode = P4Mode::kLifting;

  static P4ConvParams init(P4Mode mode, Index in_channels, Index out_channels, Index kernel, Rng& rng) {
    if (kernel % 2 == 0) fail(ErrorKind::kConfig, "p4 conv kernel must be odd, got ", kernel);
    const Index effective_in = mode == P4Mode::kGroup ? kP4Order * in_channels : in_channels;
    P4ConvParams p;
    p.weight = detail::init_param({out_channels, effective_in, kernel, kernel}, effective_in * kernel * kernel, rng);
    p.mode = mode;
    return p;
  }

  Index out_channels() const { return weight.dim(0); }
  Index kernel() const { return weight.dim(2); }
  Index in_channels() const { return mode == P4Mode::kGroup ? weight.dim(1) / kP4Order : weight.dim(1); }

  void collect(std::string_view prefix, ParamList& out) const { out.emplace_back(detail::join(prefix, "weight"), weight); }
};

namespace detail {

/// Reorders orientation blocks so block s of the result is block
/// (s + shift) mod 4 of x.
inline Tensor cycle_orientations(const Tensor& x, Index shift) {
  if (x.dim(1) % kP4Order != 0) {
    fail(ErrorKind::kShape, "orientation channels ", x.dim(1), " not divisible by ", kP4Order);
  }
  shift %= kP4Order;
  if (shift == 0) return x;
  const Index c = x.dim(1) / kP4Order;
  std::vector<Tensor> blocks;
  for (Index s = 0; s < kP4Order; ++s) blocks.push_back(slice(x, 1, ((s + shift) % kP4Order) * c, c));
  return mrl::concat(blocks, 1);
}

}  // namespace detail

/// Group action on orientation-major p4 features: rotate every plane a
/// quarter turn counterclockwise and move orientation o to o + 1.
inline Tensor p4_act(const Tensor& features) {
  return detail::cycle_orientations(rot90(features, 1), kP4Order - 1);
}

/// Same-padded p4 convolution. Returns [N, 4*C_out, H, W].
inline Tensor p4_conv_forward(const Tensor& x, const P4ConvParams& p) {
  if (x.rank() != 4 || x.dim(2) != x.dim(3)) fail(ErrorKind::kShape, "p4 conv needs square NCHW input, got ", x.shape().str());
  const Index expected = p.weight.dim(1);
  if (p.mode == P4Mode::kGroup && x.dim(1) % kP4Order != 0) {
    fail(ErrorKind::kShape, "group-mode input channels ", x.dim(1), " not divisible by ", kP4Order);
  }
  if (x.dim(1) != expected) {
    fail(ErrorKind::kShape, "p4 conv expects ", expected, " input channels, got ", x.dim(1));
  }
  const Index pad = p.kernel() / 2;
  std::vector<Tensor> outputs;
  outputs.reserve(kP4Order);
  for (Index o = 0; o < kP4Order; ++o) {
    const Tensor filter = rot90(p.weight, static_cast<int>(o));
    const Tensor input = p.mode == P4Mode::kGroup ? detail::cycle_orientations(x, o) : x;
    outputs.push_back(conv2d(input, filter, std::nullopt, 1, pad));
  }
  return mrl::concat(outputs, 1);
}

}  // namespace mrl
