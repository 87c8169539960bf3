// Independent reference implementations used by the unit and acceptance
// suites. They share no code with the library kernels.

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mrl/mrl_block.hpp"

namespace mrl::test {

// Per-region weighted sum written as explicit loops.
inline std::vector<double> naive_region_sample_dense(const Tensor& x, const Conv2dParams& p, Index r) {
  const Index n = x.dim(0), cin = x.dim(1), size = x.dim(2), g = size / r, cout = p.out_channels();
  std::vector<double> out;
  for (Index b = 0; b < n; ++b)
    for (Index o = 0; o < cout; ++o)
      for (Index gi = 0; gi < g; ++gi)
        for (Index gj = 0; gj < g; ++gj) {
          double acc = 0.0;
          for (Index c = 0; c < cin; ++c)
            for (Index u = 0; u < r; ++u)
              for (Index v = 0; v < r; ++v) acc += p.weight.at({o, c, u, v}) * x.at({b, c, gi * r + u, gj * r + v});
          out.push_back(acc + p.bias->at({o}));
        }
  return out;
}

inline std::vector<double> naive_region_sample_depthwise(const Tensor& x, const DepthwiseParams& p, Index r) {
  const Index n = x.dim(0), channels = x.dim(1), g = x.dim(2) / r;
  std::vector<double> out;
  for (Index b = 0; b < n; ++b)
    for (Index c = 0; c < channels; ++c)
      for (Index gi = 0; gi < g; ++gi)
        for (Index gj = 0; gj < g; ++gj) {
          double acc = 0.0;
          for (Index u = 0; u < r; ++u)
            for (Index v = 0; v < r; ++v) acc += p.weight.at({c, u, v}) * x.at({b, c, gi * r + u, gj * r + v});
          out.push_back(acc + p.bias->at({c}));
        }
  return out;
}

// Single-pass attention written with explicit loops over heads and tokens.
inline std::vector<double> dense_attention_oracle(const Tensor& x, const AttentionParams& p) {
  const Index t = x.dim(0), c = x.dim(1), h = p.heads, d = c / h;
  auto project = [&](const Tensor& w, const Tensor* b) {
    std::vector<double> out(t * c);
    for (Index i = 0; i < t; ++i) {
      for (Index o = 0; o < c; ++o) {
        double acc = b ? b->at({o}) : 0.0;
        for (Index j = 0; j < c; ++j) acc += w.at({o, j}) * x.at({i, j});
        out[i * c + o] = acc;
      }
    }
    return out;
  };
  const std::vector<double> q = project(p.q->weight, nullptr);
  const std::vector<double> k = project(p.k->weight, nullptr);
  const std::vector<double> v = project(p.v->weight, nullptr);
  std::vector<double> mixed(t * c, 0.0);
  for (Index head = 0; head < h; ++head) {
    for (Index i = 0; i < t; ++i) {
      std::vector<double> logits(t);
      for (Index j = 0; j < t; ++j) {
        double dot = 0.0;
        for (Index e = 0; e < d; ++e) dot += q[i * c + head * d + e] * k[j * c + head * d + e];
        logits[j] = dot / std::sqrt(static_cast<double>(d));
      }
      const double peak = *std::max_element(logits.begin(), logits.end());
      double norm = 0.0;
      for (double& l : logits) norm += (l = std::exp(l - peak));
      for (Index j = 0; j < t; ++j) {
        for (Index e = 0; e < d; ++e) mixed[i * c + head * d + e] += logits[j] / norm * v[j * c + head * d + e];
      }
    }
  }
  std::vector<double> out(t * c);
  for (Index i = 0; i < t; ++i) {
    for (Index o = 0; o < c; ++o) {
      double acc = p.out->bias->at({o});
      for (Index j = 0; j < c; ++j) acc += p.out->weight.at({o, j}) * mixed[i * c + j];
      out[i * c + o] = acc;
    }
  }
  return out;
}

// Nearest-neighbour upsampling of `coarse` by r, then elementwise addition.
inline std::vector<double> upsample_add_oracle(const Tensor& x, const Tensor& coarse, Index r) {
  const Index n = x.dim(2), planes = x.numel() / (n * n), g = n / r;
  std::vector<double> upsampled(x.numel());
  for (Index p = 0; p < planes; ++p)
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) upsampled[(p * n + i) * n + j] = coarse.data()[(p * g + i / r) * g + j / r];
  std::vector<double> out(x.numel());
  for (Index i = 0; i < x.numel(); ++i) out[i] = x.data()[i] + upsampled[i];
  return out;
}

}  // namespace mrl::test
