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

#pragma once

#include <cmath>
#include <vector>

#include "mrl/layers.hpp"

namespace mrl {

struct AdamOptions {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) fail(ErrorKind::kConfig, "adam lr must be > 0, got ", lr);
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      fail(ErrorKind::kConfig, "adam betas must lie in [0, 1), got ", beta1, ", ", beta2);
    }
    if (!(eps > 0.0)) fail(ErrorKind::kConfig, "adam eps must be > 0, got ", eps);
  }
};

/// Adam with bias correction. Parameters without a gradient are skipped.
class Adam {
 public:
  Adam(ParamList params, AdamOptions options) : params_(std::move(params)), options_(options) {
    options_.validate();
    for (const auto& [name, t] : params_) {
      m_.emplace_back(t.numel(), 0.0);
      v_.emplace_back(t.numel(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  void step() {
    ++steps_;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
    for (Index p = 0; p < params_.size(); ++p) {
      Tensor& t = params_[p].second;
      if (!t.has_grad()) continue;
      std::span<double> w = t.mutable_data();
      std::span<const double> g = t.grad();
      std::vector<double>& m = m_[p];
      std::vector<double>& v = v_[p];
      for (Index i = 0; i < w.size(); ++i) {
        m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g[i];
        v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g[i] * g[i];
        w[i] -= options_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.eps);
      }
    }
  }

  std::uint64_t steps() const { return steps_; }

 private:
  ParamList params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t steps_ = 0;
};

}  // namespace mrl
