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

// Differentiable primitives. Each op computes its forward values eagerly
// and records a closure that accumulates input gradients.

#pragma once

#include <array>
#include <cmath>
#include <numeric>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "mrl/kernels.hpp"
#include "mrl/tensor.hpp"

namespace mrl {

namespace detail {

inline thread_local std::uint64_t* mac_sink = nullptr;

inline void add_macs(Index count) {
  if (mac_sink) *mac_sink += count;
}

}  // namespace detail

/// Counts multiply-accumulates issued by forward passes of the product and
/// convolution ops on this thread while in scope. Scopes nest.
class MacCounter {
 public:
  MacCounter() : previous_(detail::mac_sink) { detail::mac_sink = &count_; }
  ~MacCounter() {
    detail::mac_sink = previous_;
    if (previous_) *previous_ += count_;
  }
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  std::uint64_t count() const { return count_; }

 private:
  std::uint64_t count_ = 0;
  std::uint64_t* previous_;
};

inline void check_finite(const Tensor& t, std::string_view what) {
  if (!t.all_finite()) fail(ErrorKind::kNonFinite, "non-finite value in ", what, " ", t.shape().str());
}

// ---------------------------------------------------------------- elementwise

enum class BinaryOp { kAdd, kSub, kMul };

namespace detail {

inline std::array<Index, kMaxRank> pad_dims(const Shape& s) {
  std::array<Index, kMaxRank> d{1, 1, 1, 1};
  const Index off = kMaxRank - s.rank();
  for (Index i = 0; i < s.rank(); ++i) d[off + i] = s[i];
  return d;
}

// Calls f(out_index, b_index) for every element of `a`, mapping onto the
// broadcast operand `b`.
template <typename F>
void for_each_broadcast(const Shape& a, const Shape& b, F&& f) {
  const auto ad = pad_dims(a);
  const auto bd = pad_dims(b);
  std::array<Index, kMaxRank> bstride{};
  Index s = 1;
  for (Index i = kMaxRank; i-- > 0;) {
    bstride[i] = bd[i] == 1 ? 0 : s;
    s *= bd[i];
  }
  Index out = 0;
  for (Index i0 = 0; i0 < ad[0]; ++i0)
    for (Index i1 = 0; i1 < ad[1]; ++i1)
      for (Index i2 = 0; i2 < ad[2]; ++i2) {
        const Index base = i0 * bstride[0] + i1 * bstride[1] + i2 * bstride[2];
        for (Index i3 = 0; i3 < ad[3]; ++i3) f(out++, base + i3 * bstride[3]);
      }
}

inline void check_broadcastable(const Shape& a, const Shape& b) {
  bool ok = a.rank() == b.rank();
  for (Index i = 0; ok && i < a.rank(); ++i) ok = b[i] == a[i] || b[i] == 1;
  if (!ok) fail(ErrorKind::kShape, "cannot broadcast ", b.str(), " onto ", a.str());
}

}  // namespace detail

/// a (op) b where b is either the same shape as a or broadcastable over it
/// along singleton axes. Gradients of b are sum-reduced to b's shape.
inline Tensor elementwise(const Tensor& a, const Tensor& b, BinaryOp op) {
  detail::check_broadcastable(a.shape(), b.shape());
  const Shape out_shape = a.shape();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  std::vector<double> out(a.numel());
  if (a.shape() == b.shape()) {
    for (Index i = 0; i < out.size(); ++i) {
      out[i] = op == BinaryOp::kAdd ? pa[i] + pb[i] : op == BinaryOp::kSub ? pa[i] - pb[i] : pa[i] * pb[i];
    }
  } else {
    detail::for_each_broadcast(a.shape(), b.shape(), [&](Index o, Index j) {
      out[o] = op == BinaryOp::kAdd ? pa[o] + pb[j] : op == BinaryOp::kSub ? pa[o] - pb[j] : pa[o] * pb[j];
    });
  }
  const OpTag tag = op == BinaryOp::kAdd ? OpTag::kAdd : op == BinaryOp::kSub ? OpTag::kSub : OpTag::kMul;
  return Tensor::record(out_shape, std::move(out), tag, {a, b},
                        [a, b, op](const double* g, std::span<double* const> gin) {
                          const double* va = a.data().data();
                          const double* vb = b.data().data();
                          const double sign = op == BinaryOp::kSub ? -1.0 : 1.0;
                          detail::for_each_broadcast(a.shape(), b.shape(), [&](Index o, Index j) {
                            if (op == BinaryOp::kMul) {
                              if (gin[0]) gin[0][o] += g[o] * vb[j];
                              if (gin[1]) gin[1][j] += g[o] * va[o];
                            } else {
                              if (gin[0]) gin[0][o] += g[o];
                              if (gin[1]) gin[1][j] += sign * g[o];
                            }
                          });
                        });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return elementwise(a, b, BinaryOp::kAdd); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return elementwise(a, b, BinaryOp::kSub); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return elementwise(a, b, BinaryOp::kMul); }

inline Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= factor;
  return Tensor::record(x.shape(), std::move(out), OpTag::kScale, {x},
                        [n = x.numel(), factor](const double* g, std::span<double* const> gin) {
                          for (Index i = 0; i < n; ++i) gin[0][i] += factor * g[i];
                        });
}

inline Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return Tensor::record(Shape{1}, {total}, OpTag::kSum, {x}, [n = x.numel()](const double* g, std::span<double* const> gin) {
    for (Index i = 0; i < n; ++i) gin[0][i] += g[0];
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

// ---------------------------------------------------------------- products

/// [M,K]·[K,N] -> [M,N].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    fail(ErrorKind::kShape, "matmul of ", a.shape().str(), " by ", b.shape().str());
  }
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  kernels::gemm(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  detail::add_macs(m * n * k);
  return Tensor::record(Shape{m, n}, std::move(out), OpTag::kMatmul, {a, b},
                        [a, b, m, n, k](const double* g, std::span<double* const> gin) {
                          if (gin[0]) kernels::gemm(false, true, m, k, n, g, b.data().data(), gin[0], true);
                          if (gin[1]) kernels::gemm(true, false, k, n, m, a.data().data(), g, gin[1], true);
                        });
}

/// Batched product over the leading axis: [B,M,K]·[B,K,N] -> [B,M,N], or
/// with trans_b, [B,M,K]·[B,N,K]ᵀ -> [B,M,N].
inline Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b = false) {
  const bool ok = a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) &&
                  a.dim(2) == (trans_b ? b.dim(2) : b.dim(1));
  if (!ok) fail(ErrorKind::kShape, "bmm of ", a.shape().str(), " by ", b.shape().str(), trans_b ? " (b transposed)" : "");
  const Index batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = trans_b ? b.dim(1) : b.dim(2);
  std::vector<double> out(batch * m * n);
  for (Index i = 0; i < batch; ++i) {
    kernels::gemm(false, trans_b, m, n, k, a.data().data() + i * m * k, b.data().data() + i * k * n,
                  out.data() + i * m * n, false);
  }
  detail::add_macs(batch * m * n * k);
  return Tensor::record(Shape{batch, m, n}, std::move(out), OpTag::kBatchMatmul, {a, b},
                        [a, b, trans_b, batch, m, n, k](const double* g, std::span<double* const> gin) {
                          for (Index i = 0; i < batch; ++i) {
                            const double* gi = g + i * m * n;
                            const double* ai = a.data().data() + i * m * k;
                            const double* bi = b.data().data() + i * k * n;
                            if (gin[0]) kernels::gemm(false, !trans_b, m, k, n, gi, bi, gin[0] + i * m * k, true);
                            if (gin[1]) {
                              if (trans_b) {
                                kernels::gemm(true, false, n, k, m, gi, ai, gin[1] + i * k * n, true);
                              } else {
                                kernels::gemm(true, false, k, n, m, ai, gi, gin[1] + i * k * n, true);
                              }
                            }
                          }
                        });
}

/// Token-wise affine map over the last axis: x·Wᵀ + b with W [C_out, C_in].
inline Tensor linear(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias = std::nullopt) {
  if (weight.rank() != 2 || x.dim(x.rank() - 1) != weight.dim(1)) {
    fail(ErrorKind::kShape, "linear input ", x.shape().str(), " does not match weight ", weight.shape().str());
  }
  const Index cin = weight.dim(1), cout = weight.dim(0), rows = x.numel() / cin;
  if (bias && (bias->rank() != 1 || bias->dim(0) != cout)) {
    fail(ErrorKind::kShape, "linear bias ", bias->shape().str(), " for ", cout, " outputs");
  }
  std::vector<Index> dims = x.shape().dims();
  dims.back() = cout;
  std::vector<double> out(rows * cout);
  kernels::gemm(false, true, rows, cout, cin, x.data().data(), weight.data().data(), out.data(), false);
  detail::add_macs(rows * cin * cout);
  if (bias) {
    const double* pb = bias->data().data();
    for (Index r = 0; r < rows; ++r)
      for (Index o = 0; o < cout; ++o) out[r * cout + o] += pb[o];
  }
  std::vector<Tensor> parents{x, weight};
  if (bias) parents.push_back(*bias);
  return Tensor::record(Shape(dims), std::move(out), OpTag::kLinear, parents,
                        [x, weight, rows, cin, cout](const double* g, std::span<double* const> gin) {
                          if (gin[0]) kernels::gemm(false, false, rows, cin, cout, g, weight.data().data(), gin[0], true);
                          if (gin[1]) kernels::gemm(true, false, cout, cin, rows, g, x.data().data(), gin[1], true);
                          if (gin.size() > 2 && gin[2]) {
                            for (Index r = 0; r < rows; ++r)
                              for (Index o = 0; o < cout; ++o) gin[2][o] += g[r * cout + o];
                          }
                        });
}

// ---------------------------------------------------------------- views

namespace detail {

// out[i] = in[source[i]]; gradient scatters back through the same map.
inline Tensor gather(const Tensor& x, Shape out_shape, std::vector<Index> source, OpTag tag) {
  const double* px = x.data().data();
  std::vector<double> out(source.size());
  for (Index i = 0; i < source.size(); ++i) out[i] = px[source[i]];
  return Tensor::record(std::move(out_shape), std::move(out), tag, {x},
                        [source = std::move(source)](const double* g, std::span<double* const> gin) {
                          for (Index i = 0; i < source.size(); ++i) gin[0][source[i]] += g[i];
                        });
}

}  // namespace detail

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape.numel() != x.numel()) {
    fail(ErrorKind::kShape, "cannot reshape ", x.shape().str(), " to ", shape.str());
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::record(std::move(shape), std::move(out), OpTag::kReshape, {x},
                        [n = x.numel()](const double* g, std::span<double* const> gin) {
                          for (Index i = 0; i < n; ++i) gin[0][i] += g[i];
                        });
}

/// Output axis i is input axis axes[i].
inline Tensor permute(const Tensor& x, const std::vector<Index>& axes) {
  const Index rank = x.rank();
  std::vector<Index> seen(rank, 0);
  bool ok = axes.size() == rank;
  for (Index i = 0; ok && i < rank; ++i) ok = axes[i] < rank && seen[axes[i]]++ == 0;
  if (!ok) fail(ErrorKind::kShape, "invalid permutation for ", x.shape().str());

  std::vector<Index> out_dims(rank);
  for (Index i = 0; i < rank; ++i) out_dims[i] = x.dim(axes[i]);
  const Shape out_shape(out_dims);
  const auto in_strides = x.shape().strides();
  std::array<Index, kMaxRank> d{1, 1, 1, 1}, s{0, 0, 0, 0};
  const Index off = kMaxRank - rank;
  for (Index i = 0; i < rank; ++i) {
    d[off + i] = out_dims[i];
    s[off + i] = in_strides[axes[i]];
  }
  std::vector<Index> source;
  source.reserve(x.numel());
  for (Index i0 = 0; i0 < d[0]; ++i0)
    for (Index i1 = 0; i1 < d[1]; ++i1)
      for (Index i2 = 0; i2 < d[2]; ++i2)
        for (Index i3 = 0; i3 < d[3]; ++i3) source.push_back(i0 * s[0] + i1 * s[1] + i2 * s[2] + i3 * s[3]);
  return detail::gather(x, out_shape, std::move(source), OpTag::kPermute);
}

/// Counterclockwise quarter turns in the plane of the last two axes.
inline Tensor rot90(const Tensor& x, int quarter_turns) {
  if (x.rank() < 2) fail(ErrorKind::kShape, "rot90 needs rank >= 2, got ", x.shape().str());
  const int k = ((quarter_turns % 4) + 4) % 4;
  const Index h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  const Index planes = x.numel() / (h * w);
  std::vector<Index> dims = x.shape().dims();
  const Index oh = (k % 2) ? w : h, ow = (k % 2) ? h : w;
  dims[dims.size() - 2] = oh;
  dims[dims.size() - 1] = ow;
  std::vector<Index> source(x.numel());
  for (Index p = 0; p < planes; ++p) {
    for (Index i = 0; i < oh; ++i) {
      for (Index j = 0; j < ow; ++j) {
        Index si = 0, sj = 0;
        switch (k) {
          case 0: si = i; sj = j; break;
          case 1: si = j; sj = w - 1 - i; break;
          case 2: si = h - 1 - i; sj = w - 1 - j; break;
          default: si = h - 1 - j; sj = i; break;
        }
        source[p * oh * ow + i * ow + j] = p * h * w + si * w + sj;
      }
    }
  }
  return detail::gather(x, Shape(dims), std::move(source), OpTag::kRot90);
}

inline Tensor slice(const Tensor& x, Index axis, Index start, Index length) {
  if (axis >= x.rank() || length == 0 || start + length > x.dim(axis)) {
    fail(ErrorKind::kShape, "slice [", start, ", ", start + length, ") of axis ", axis, " in ", x.shape().str());
  }
  const auto& dims = x.shape().dims();
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= dims[i];
  for (Index i = axis + 1; i < dims.size(); ++i) inner *= dims[i];
  std::vector<Index> out_dims = dims;
  out_dims[axis] = length;
  std::vector<Index> source;
  source.reserve(outer * length * inner);
  for (Index o = 0; o < outer; ++o)
    for (Index a = 0; a < length; ++a)
      for (Index i = 0; i < inner; ++i) source.push_back((o * dims[axis] + start + a) * inner + i);
  return detail::gather(x, Shape(out_dims), std::move(source), OpTag::kSlice);
}

inline Tensor concat(const std::vector<Tensor>& parts, Index axis) {
  if (parts.empty()) fail(ErrorKind::kShape, "concat of zero tensors");
  const auto& first = parts.front().shape().dims();
  if (axis >= first.size()) fail(ErrorKind::kShape, "concat axis ", axis, " out of range");
  Index total = 0;
  for (const Tensor& p : parts) {
    const auto& d = p.shape().dims();
    bool ok = d.size() == first.size();
    for (Index i = 0; ok && i < d.size(); ++i) ok = i == axis || d[i] == first[i];
    if (!ok) fail(ErrorKind::kShape, "concat of ", p.shape().str(), " with ", parts.front().shape().str());
    total += d[axis];
  }
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= first[i];
  for (Index i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<Index> out_dims = first;
  out_dims[axis] = total;
  std::vector<double> out(outer * total * inner);
  Index base = 0;
  for (const Tensor& p : parts) {
    const Index len = p.dim(axis);
    const double* src = p.data().data();
    for (Index o = 0; o < outer; ++o)
      std::copy_n(src + o * len * inner, len * inner, out.data() + (o * total + base) * inner);
    base += len;
  }
  return Tensor::record(Shape(out_dims), std::move(out), OpTag::kConcat, parts,
                        [parts, axis, outer, inner, total](const double* g, std::span<double* const> gin) {
                          Index base = 0;
                          for (Index k = 0; k < parts.size(); ++k) {
                            const Index len = parts[k].dim(axis);
                            if (gin[k]) {
                              for (Index o = 0; o < outer; ++o) {
                                const double* src = g + (o * total + base) * inner;
                                double* dst = gin[k] + o * len * inner;
                                for (Index i = 0; i < len * inner; ++i) dst[i] += src[i];
                              }
                            }
                            base += len;
                          }
                        });
}

// ---------------------------------------------------------------- nonlinear

/// Softmax over the last axis with max subtraction.
inline Tensor softmax_lastdim(const Tensor& x) {
  const Index cols = x.dim(x.rank() - 1), rows = x.numel() / cols;
  const double* px = x.data().data();
  std::vector<double> out(x.numel());
  for (Index r = 0; r < rows; ++r) {
    const double* in = px + r * cols;
    double* y = out.data() + r * cols;
    const double peak = *std::max_element(in, in + cols);
    double total = 0.0;
    for (Index c = 0; c < cols; ++c) total += (y[c] = std::exp(in[c] - peak));
    for (Index c = 0; c < cols; ++c) y[c] /= total;
  }
  std::vector<double> saved = out;
  return Tensor::record(x.shape(), std::move(out), OpTag::kSoftmax, {x},
                        [y = std::move(saved), rows, cols](const double* g, std::span<double* const> gin) {
                          for (Index r = 0; r < rows; ++r) {
                            const double* yr = y.data() + r * cols;
                            const double* gr = g + r * cols;
                            double dot = 0.0;
                            for (Index c = 0; c < cols; ++c) dot += gr[c] * yr[c];
                            for (Index c = 0; c < cols; ++c) gin[0][r * cols + c] += yr[c] * (gr[c] - dot);
                          }
                        });
}

/// Exact (erf) GELU.
inline Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  std::vector<double> out(x.numel());
  const double* px = x.data().data();
  for (Index i = 0; i < out.size(); ++i) out[i] = 0.5 * px[i] * (1.0 + std::erf(px[i] * kInvSqrt2));
  return Tensor::record(x.shape(), std::move(out), OpTag::kGelu, {x}, [x](const double* g, std::span<double* const> gin) {
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    const double* v = x.data().data();
    for (Index i = 0; i < x.numel(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(v[i] * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v[i] * v[i]);
      gin[0][i] += g[i] * (cdf + v[i] * pdf);
    }
  });
}

/// Normalizes over the last axis (biased variance) then applies gamma/beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const Index cols = x.dim(x.rank() - 1), rows = x.numel() / cols;
  if (gamma.numel() != cols || beta.numel() != cols) {
    fail(ErrorKind::kShape, "layer_norm affine of size ", gamma.numel(), " for width ", cols);
  }
  const double* px = x.data().data();
  const double* pg = gamma.data().data();
  const double* pb = beta.data().data();
  std::vector<double> out(x.numel()), xhat(x.numel()), rstd(rows);
  for (Index r = 0; r < rows; ++r) {
    const double* in = px + r * cols;
    double mu = 0.0;
    for (Index c = 0; c < cols; ++c) mu += in[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (Index c = 0; c < cols; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<double>(cols);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (Index c = 0; c < cols; ++c) {
      xhat[r * cols + c] = (in[c] - mu) * rstd[r];
      out[r * cols + c] = xhat[r * cols + c] * pg[c] + pb[c];
    }
  }
  return Tensor::record(x.shape(), std::move(out), OpTag::kLayerNorm, {x, gamma, beta},
                        [gamma, xhat = std::move(xhat), rstd = std::move(rstd), rows, cols](
                            const double* g, std::span<double* const> gin) {
                          const double* pg = gamma.data().data();
                          std::vector<double> dxhat(cols);
                          for (Index r = 0; r < rows; ++r) {
                            const double* gr = g + r * cols;
                            const double* xr = xhat.data() + r * cols;
                            double mean_d = 0.0, mean_dx = 0.0;
                            for (Index c = 0; c < cols; ++c) {
                              if (gin[1]) gin[1][c] += gr[c] * xr[c];
                              if (gin[2]) gin[2][c] += gr[c];
                              dxhat[c] = gr[c] * pg[c];
                              mean_d += dxhat[c];
                              mean_dx += dxhat[c] * xr[c];
                            }
                            if (!gin[0]) continue;
                            mean_d /= static_cast<double>(cols);
                            mean_dx /= static_cast<double>(cols);
                            for (Index c = 0; c < cols; ++c) {
                              gin[0][r * cols + c] += rstd[r] * (dxhat[c] - mean_d - xr[c] * mean_dx);
                            }
                          }
                        });
}

// ---------------------------------------------------------------- convolution

/// Dense cross-correlation with zero padding. weight is [C_out, C_in, k, k];
/// output size is floor((H + 2p - k) / stride) + 1.
inline Tensor conv2d(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias, Index stride,
                     Index padding) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(1) != x.dim(1) || weight.dim(2) != weight.dim(3)) {
    fail(ErrorKind::kShape, "conv2d input ", x.shape().str(), " with weight ", weight.shape().str());
  }
  if (stride == 0) fail(ErrorKind::kShape, "conv2d stride must be >= 1");
  const Index n = x.dim(0), cout = weight.dim(0), k = weight.dim(2);
  const Index h = x.dim(2), w = x.dim(3);
  if (h + 2 * padding < k || w + 2 * padding < k) {
    fail(ErrorKind::kShape, "kernel ", k, " larger than padded input ", x.shape().str());
  }
  if (bias && bias->numel() != cout) fail(ErrorKind::kShape, "conv2d bias size ", bias->numel(), " for ", cout);
  const kernels::ConvGeometry geo{x.dim(1), h, w, k, stride, padding, (h + 2 * padding - k) / stride + 1,
                                  (w + 2 * padding - k) / stride + 1};
  const Index in_size = geo.channels * h * w, out_size = cout * geo.positions();
  std::vector<double> out(n * out_size);
  std::vector<double> col(geo.trivial() ? 0 : geo.patch() * geo.positions());
  for (Index b = 0; b < n; ++b) {
    const double* image = x.data().data() + b * in_size;
    if (!geo.trivial()) kernels::im2col(geo, image, col.data());
    kernels::gemm(false, false, cout, geo.positions(), geo.patch(), weight.data().data(),
                  geo.trivial() ? image : col.data(), out.data() + b * out_size, false);
    if (bias) {
      for (Index o = 0; o < cout; ++o) {
        double* row = out.data() + b * out_size + o * geo.positions();
        const double bo = bias->data()[o];
        for (Index p = 0; p < geo.positions(); ++p) row[p] += bo;
      }
    }
  }
  detail::add_macs(n * cout * geo.patch() * geo.positions());
  std::vector<Tensor> parents{x, weight};
  if (bias) parents.push_back(*bias);
  return Tensor::record(
      Shape{n, cout, geo.out_height, geo.out_width}, std::move(out), OpTag::kConv2d, parents,
      [x, weight, geo, n, cout, in_size, out_size](const double* g, std::span<double* const> gin) {
        std::vector<double> col(geo.trivial() ? 0 : geo.patch() * geo.positions());
        std::vector<double> dcol(geo.trivial() ? 0 : geo.patch() * geo.positions());
        for (Index b = 0; b < n; ++b) {
          const double* gb = g + b * out_size;
          const double* image = x.data().data() + b * in_size;
          if (gin[1]) {
            if (!geo.trivial()) kernels::im2col(geo, image, col.data());
            kernels::gemm(false, true, cout, geo.patch(), geo.positions(), gb, geo.trivial() ? image : col.data(),
                          gin[1], true);
          }
          if (gin[0]) {
            if (geo.trivial()) {
              kernels::gemm(true, false, geo.patch(), geo.positions(), cout, weight.data().data(), gb,
                            gin[0] + b * in_size, true);
            } else {
              kernels::gemm(true, false, geo.patch(), geo.positions(), cout, weight.data().data(), gb, dcol.data(),
                            false);
              kernels::col2im_add(geo, dcol.data(), gin[0] + b * in_size);
            }
          }
          if (gin.size() > 2 && gin[2]) {
            for (Index o = 0; o < cout; ++o)
              for (Index p = 0; p < geo.positions(); ++p) gin[2][o] += gb[o * geo.positions() + p];
          }
        }
      });
}

/// One k×k filter per channel; weight is [C, k, k].
inline Tensor depthwise_conv2d(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias,
                               Index stride, Index padding) {
  if (x.rank() != 4 || weight.rank() != 3 || weight.dim(0) != x.dim(1) || weight.dim(1) != weight.dim(2)) {
    fail(ErrorKind::kShape, "depthwise input ", x.shape().str(), " with weight ", weight.shape().str());
  }
  if (stride == 0) fail(ErrorKind::kShape, "depthwise stride must be >= 1");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), k = weight.dim(1);
  if (h + 2 * padding < k || w + 2 * padding < k) {
    fail(ErrorKind::kShape, "kernel ", k, " larger than padded input ", x.shape().str());
  }
  if (bias && bias->numel() != c) fail(ErrorKind::kShape, "depthwise bias size ", bias->numel(), " for ", c);
  const Index oh = (h + 2 * padding - k) / stride + 1, ow = (w + 2 * padding - k) / stride + 1;
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);

  // visit(b, ch, out_offset, in_offset, tap) for every in-bounds tap.
  auto visit = [=](auto&& fn) {
    for (Index b = 0; b < n; ++b)
      for (Index ch = 0; ch < c; ++ch) {
        const Index in_base = (b * c + ch) * h * w, out_base = (b * c + ch) * oh * ow;
        for (Index oy = 0; oy < oh; ++oy)
          for (Index ky = 0; ky < k; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
            if (iy < 0 || iy >= H) continue;
            for (Index ox = 0; ox < ow; ++ox)
              for (Index kx = 0; kx < k; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad;
                if (ix < 0 || ix >= W) continue;
                fn(ch, out_base + oy * ow + ox, in_base + static_cast<Index>(iy) * w + static_cast<Index>(ix),
                   (ch * k + ky) * k + kx);
              }
          }
      }
  };

  std::vector<double> out(n * c * oh * ow, 0.0);
  const double* px = x.data().data();
  const double* pw = weight.data().data();
  visit([&](Index, Index o, Index i, Index t) { out[o] += pw[t] * px[i]; });
  detail::add_macs(n * c * k * k * oh * ow);
  if (bias) {
    for (Index b = 0; b < n; ++b)
      for (Index ch = 0; ch < c; ++ch)
        for (Index p = 0; p < oh * ow; ++p) out[(b * c + ch) * oh * ow + p] += bias->data()[ch];
  }
  std::vector<Tensor> parents{x, weight};
  if (bias) parents.push_back(*bias);
  return Tensor::record(Shape{n, c, oh, ow}, std::move(out), OpTag::kDepthwise, parents,
                        [x, weight, visit, n, c, oh, ow](const double* g, std::span<double* const> gin) {
                          const double* px = x.data().data();
                          const double* pw = weight.data().data();
                          double* gx = gin[0];
                          double* gw = gin[1];
                          visit([&](Index, Index o, Index i, Index t) {
                            if (gx) gx[i] += pw[t] * g[o];
                            if (gw) gw[t] += px[i] * g[o];
                          });
                          if (gin.size() > 2 && gin[2]) {
                            for (Index b = 0; b < n; ++b)
                              for (Index ch = 0; ch < c; ++ch)
                                for (Index p = 0; p < oh * ow; ++p) gin[2][ch] += g[(b * c + ch) * oh * ow + p];
                          }
                        });
}

// ---------------------------------------------------------------- spatial

/// x + nearest-neighbour upsample(coarse, factor): every coarse cell is
/// broadcast over its factor×factor block of x.
inline Tensor upscale_add(const Tensor& x, const Tensor& coarse, Index factor) {
  const bool ok = x.rank() == 4 && coarse.rank() == 4 && factor >= 1 && x.dim(0) == coarse.dim(0) &&
                  x.dim(1) == coarse.dim(1) && x.dim(2) == coarse.dim(2) * factor &&
                  x.dim(3) == coarse.dim(3) * factor;
  if (!ok) {
    fail(ErrorKind::kShape, "upscale of ", coarse.shape().str(), " by ", factor, " does not match ", x.shape().str());
  }
  const Index planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), gh = coarse.dim(2), gw = coarse.dim(3);
  std::vector<double> out(x.data().begin(), x.data().end());
  const double* pc = coarse.data().data();
  for (Index p = 0; p < planes; ++p)
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j) out[(p * h + i) * w + j] += pc[(p * gh + i / factor) * gw + j / factor];
  return Tensor::record(x.shape(), std::move(out), OpTag::kUpscaleSum, {x, coarse},
                        [planes, h, w, gh, gw, factor](const double* g, std::span<double* const> gin) {
                          for (Index p = 0; p < planes; ++p)
                            for (Index i = 0; i < h; ++i)
                              for (Index j = 0; j < w; ++j) {
                                const Index o = (p * h + i) * w + j;
                                if (gin[0]) gin[0][o] += g[o];
                                if (gin[1]) gin[1][(p * gh + i / factor) * gw + j / factor] += g[o];
                              }
                        });
}

/// [N,C,H,W] -> [N,C] spatial mean.
inline Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) fail(ErrorKind::kShape, "global_avg_pool needs NCHW, got ", x.shape().str());
  const Index planes = x.dim(0) * x.dim(1), area = x.dim(2) * x.dim(3);
  std::vector<double> out(planes, 0.0);
  for (Index p = 0; p < planes; ++p) {
    for (Index i = 0; i < area; ++i) out[p] += x.data()[p * area + i];
    out[p] /= static_cast<double>(area);
  }
  return Tensor::record(Shape{x.dim(0), x.dim(1)}, std::move(out), OpTag::kAvgPool, {x},
                        [planes, area](const double* g, std::span<double* const> gin) {
                          const double inv = 1.0 / static_cast<double>(area);
                          for (Index p = 0; p < planes; ++p)
                            for (Index i = 0; i < area; ++i) gin[0][p * area + i] += g[p] * inv;
                        });
}

/// Max over `groups` orientation blocks of the channel axis, where channel
/// index is orientation * C + c. [N, groups*C, H, W] -> [N, C, H, W].
inline Tensor orientation_max(const Tensor& x, Index groups) {
  if (x.rank() != 4 || groups == 0 || x.dim(1) % groups != 0) {
    fail(ErrorKind::kShape, "orientation_max over ", groups, " groups of ", x.shape().str());
  }
  const Index n = x.dim(0), c = x.dim(1) / groups, area = x.dim(2) * x.dim(3);
  std::vector<double> out(n * c * area);
  std::vector<Index> arg(out.size());
  const double* px = x.data().data();
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch)
      for (Index p = 0; p < area; ++p) {
        Index best = (b * groups * c + ch) * area + p;
        for (Index o = 1; o < groups; ++o) {
          const Index idx = ((b * groups + o) * c + ch) * area + p;
          if (px[idx] > px[best]) best = idx;
        }
        const Index dst = (b * c + ch) * area + p;
        out[dst] = px[best];
        arg[dst] = best;
      }
  return Tensor::record(Shape{n, c, x.dim(2), x.dim(3)}, std::move(out), OpTag::kOrientationMax, {x},
                        [arg = std::move(arg)](const double* g, std::span<double* const> gin) {
                          for (Index i = 0; i < arg.size(); ++i) gin[0][arg[i]] += g[i];
                        });
}

// ---------------------------------------------------------------- loss

/// Mean softmax cross-entropy of logits [N, K] against integer labels.
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    fail(ErrorKind::kShape, "cross_entropy logits ", logits.shape().str(), " for ", labels.size(), " labels");
  }
  const Index n = logits.dim(0), k = logits.dim(1);
  std::vector<double> probs(n * k);
  double loss = 0.0;
  for (Index r = 0; r < n; ++r) {
    if (labels[r] < 0 || static_cast<Index>(labels[r]) >= k) fail(ErrorKind::kShape, "label ", labels[r], " out of range");
    const double* z = logits.data().data() + r * k;
    const double peak = *std::max_element(z, z + k);
    double total = 0.0;
    for (Index c = 0; c < k; ++c) total += (probs[r * k + c] = std::exp(z[c] - peak));
    for (Index c = 0; c < k; ++c) probs[r * k + c] /= total;
    loss -= z[labels[r]] - peak - std::log(total);
  }
  loss /= static_cast<double>(n);
  std::vector<int> targets(labels.begin(), labels.end());
  return Tensor::record(Shape{1}, {loss}, OpTag::kCrossEntropy, {logits},
                        [probs = std::move(probs), targets = std::move(targets), n, k](
                            const double* g, std::span<double* const> gin) {
                          const double s = g[0] / static_cast<double>(n);
                          for (Index r = 0; r < n; ++r)
                            for (Index c = 0; c < k; ++c) {
                              const double onehot = static_cast<Index>(targets[r]) == c ? 1.0 : 0.0;
                              gin[0][r * k + c] += s * (probs[r * k + c] - onehot);
                            }
                        });
}

// ---------------------------------------------------------------- layout

/// [N,C,H,W] -> [N, H*W, C].
inline Tensor to_tokens(const Tensor& x) {
  if (x.rank() != 4) fail(ErrorKind::kShape, "to_tokens needs NCHW, got ", x.shape().str());
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  return reshape(permute(x, {0, 2, 3, 1}), Shape{n, h * w, c});
}

/// [N, H*W, C] -> [N,C,H,W].
inline Tensor from_tokens(const Tensor& tokens, Index h, Index w) {
  if (tokens.rank() != 3 || tokens.dim(1) != h * w) {
    fail(ErrorKind::kShape, "from_tokens of ", tokens.shape().str(), " onto ", h, "x", w);
  }
  return permute(reshape(tokens, Shape{tokens.dim(0), h, w, tokens.dim(2)}), {0, 3, 1, 2});
}

}  // namespace mrl
