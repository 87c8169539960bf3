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

// Central-difference gradient oracle.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "mrl/ops.hpp"

namespace mrl {

/// Random projection weights used to turn a tensor output into a scalar
/// loss with generic (non-symmetric) gradients.
inline Tensor probe_like(const Tensor& t, std::uint64_t seed) {
  return Tensor::uniform(t.shape(), seed ^ 0x9e3779b97f4a7c15ULL, 0.5, 1.5);
}

/// sum(t ⊙ probe) with a fixed probe per seed.
inline Tensor probe_loss(const Tensor& t, std::uint64_t seed) { return sum(t * probe_like(t, seed)); }

/// Probe loss minus its value at the current point; same gradient as
/// probe_loss.
inline std::function<Tensor()> centered_probe_loss(std::function<Tensor()> out, std::uint64_t seed) {
  Tensor reference;
  {
    NoGradGuard guard;
    reference = out();
  }
  const Tensor probe = probe_like(reference, seed);
  return [out = std::move(out), reference, probe] { return sum((out() - reference) * probe); };
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  Index worst_input = 0;
  Index worst_element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences for every element of every tensor in `wrt`. The tensors must
/// be leaves; their values are perturbed in place and restored.
///
/// Per element: |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
inline GradCheckReport grad_check_report(const std::function<Tensor()>& fn, std::vector<Tensor> wrt,
                                         double eps = 1e-5) {
  if (!(eps > 0.0)) fail(ErrorKind::kOracle, "eps must be positive");
  for (Tensor& t : wrt) {
    if (!t.is_leaf()) fail(ErrorKind::kOracle, "grad_check inputs must be leaves");
    t.set_requires_grad(true);
    t.clear_grad();
  }
  const Tensor loss = fn();
  if (loss.numel() != 1) fail(ErrorKind::kOracle, "grad_check function must return a scalar");
  if (!loss.all_finite()) fail(ErrorKind::kOracle, "function value is not finite");
  backward(loss);

  auto evaluate = [&]() {
    NoGradGuard no_grad;
    const double v = fn().item();
    if (!std::isfinite(v)) fail(ErrorKind::kOracle, "function value is not finite under perturbation");
    return v;
  };

  GradCheckReport report;
  for (Index w = 0; w < wrt.size(); ++w) {
    Tensor& t = wrt[w];
    const std::vector<double> analytic =
        t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end()) : std::vector<double>(t.numel(), 0.0);
    auto values = t.mutable_data();
    for (Index i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double plus = evaluate();
      values[i] = saved - eps;
      const double minus = evaluate();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-12});
      const double err = std::abs(analytic[i] - numeric) / denom;
      if (err > report.max_rel_error || (w == 0 && i == 0)) {
        report = {err, w, i, analytic[i], numeric};
      }
    }
  }
  return report;
}

inline double grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> wrt, double eps = 1e-5) {
  return grad_check_report(fn, std::move(wrt), eps).max_rel_error;
}

/// Single-input form: checks d fn(x) / dx on a detached copy of x.
inline double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x, double eps = 1e-5) {
  Tensor leaf = x.detach();
  return grad_check([&] { return fn(leaf); }, {leaf}, eps);
}

}  // namespace mrl
