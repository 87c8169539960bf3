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

// Raw-buffer compute kernels shared by the differentiable ops. Dense
// products go through Eigen (single-threaded, so results are bit-stable).

#pragma once

#include <Eigen/Core>

#include "mrl/tensor.hpp"

namespace mrl::kernels {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

/// c(m×n) (+)= op(a) · op(b), all row-major. op(a) is m×k, op(b) is k×n.
inline void gemm(bool trans_a, bool trans_b, Index m, Index n, Index k, const double* a, const double* b, double* c,
                 bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  MatrixMap out(c, M, N);
  if (!accumulate) out.setZero();
  if (!trans_a && !trans_b) {
    out.noalias() += ConstMatrixMap(a, M, K) * ConstMatrixMap(b, K, N);
  } else if (!trans_a && trans_b) {
    out.noalias() += ConstMatrixMap(a, M, K) * ConstMatrixMap(b, N, K).transpose();
  } else if (trans_a && !trans_b) {
    out.noalias() += ConstMatrixMap(a, K, M).transpose() * ConstMatrixMap(b, K, N);
  } else {
    out.noalias() += ConstMatrixMap(a, K, M).transpose() * ConstMatrixMap(b, N, K).transpose();
  }
}

struct ConvGeometry {
  Index channels, height, width, kernel, stride, padding, out_height, out_width;

  Index patch() const { return channels * kernel * kernel; }
  Index positions() const { return out_height * out_width; }
  bool trivial() const { return kernel == 1 && stride == 1 && padding == 0; }
};

/// Unfolds one image (C×H×W) into a (C·k·k)×(Ho·Wo) column matrix.
inline void im2col(const ConvGeometry& g, const double* image, double* col) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (Index c = 0; c < g.channels; ++c) {
    for (Index ky = 0; ky < g.kernel; ++ky) {
      for (Index kx = 0; kx < g.kernel; ++kx) {
        double* row = col + ((c * g.kernel + ky) * g.kernel + kx) * g.positions();
        for (Index oy = 0; oy < g.out_height; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          for (Index ox = 0; ox < g.out_width; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.height) &&
                                ix < static_cast<std::ptrdiff_t>(g.width);
            row[oy * g.out_width + ox] =
                inside ? image[(c * g.height + static_cast<Index>(iy)) * g.width + static_cast<Index>(ix)] : 0.0;
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters column gradients back onto the image.
inline void col2im_add(const ConvGeometry& g, const double* col, double* image) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (Index c = 0; c < g.channels; ++c) {
    for (Index ky = 0; ky < g.kernel; ++ky) {
      for (Index kx = 0; kx < g.kernel; ++kx) {
        const double* row = col + ((c * g.kernel + ky) * g.kernel + kx) * g.positions();
        for (Index oy = 0; oy < g.out_height; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (Index ox = 0; ox < g.out_width; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            image[(c * g.height + static_cast<Index>(iy)) * g.width + static_cast<Index>(ix)] +=
                row[oy * g.out_width + ox];
          }
        }
      }
    }
  }
}

}  // namespace mrl::kernels
