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

// Oriented-bars: grayscale images of one bar whose orientation is the class.
// Class k has angle k * 180 / K degrees measured counterclockwise from the
// horizontal, so a quarter turn maps class k to (k + K/2) mod K.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "mrl/ops.hpp"

namespace mrl {

struct DatasetSpec {
  Index image_size = 32;
  Index classes = 4;
  Index train_count = 2000;
  Index test_count = 500;
  double noise_sigma = 0.1;

  void validate() const {
    if (image_size < 8) fail(ErrorKind::kConfig, "image_size must be >= 8, got ", image_size);
    if (classes < 2 || classes % 2 != 0) {
      fail(ErrorKind::kConfig, "classes must be even and >= 2 so quarter turns stay in the class set, got ", classes);
    }
    for (Index count : {train_count, test_count}) {
      if (count < classes || count % classes != 0) {
        fail(ErrorKind::kConfig, "sample counts must be positive multiples of classes (", classes, "), got ", count);
      }
    }
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
      fail(ErrorKind::kConfig, "noise_sigma must be finite and >= 0, got ", noise_sigma);
    }
  }
};

struct Dataset {
  Tensor images;  // [N, 1, S, S]
  std::vector<int> labels;

  Index size() const { return labels.size(); }

  /// Rows `indices` as a fresh [B, 1, S, S] tensor plus their labels.
  std::pair<Tensor, std::vector<int>> batch(std::span<const Index> indices) const {
    const Index plane = images.numel() / size();
    std::vector<double> values(indices.size() * plane);
    std::vector<int> out_labels;
    out_labels.reserve(indices.size());
    for (Index b = 0; b < indices.size(); ++b) {
      const Index row = indices[b];
      if (row >= size()) fail(ErrorKind::kShape, "batch index ", row, " out of range for ", size(), " samples");
      std::copy_n(images.data().begin() + row * plane, plane, values.begin() + b * plane);
      out_labels.push_back(labels[row]);
    }
    std::vector<Index> dims = images.shape().dims();
    dims[0] = indices.size();
    return {Tensor(Shape(dims), std::move(values)), std::move(out_labels)};
  }
};

struct Bar {
  double angle_degrees = 0.0;
  double center_x = 0.0, center_y = 0.0;  // pixel units, origin at the image centre, y up
  double half_length = 10.0;
  double half_width = 1.5;
  double amplitude = 1.0;
};

inline double bar_angle(Index label, Index classes) { return 180.0 * static_cast<double>(label) / static_cast<double>(classes); }

/// Anti-aliased bar on an S x S grid. Pixel (i, j) sits at
/// x = j - (S-1)/2, y = (S-1)/2 - i.
inline void render_bar(const Bar& bar, Index size, std::span<double> out) {
  const double radians = bar.angle_degrees * M_PI / 180.0;
  double dx = std::cos(radians), dy = std::sin(radians);
  if (std::abs(dx) < 1e-12) dx = 0.0;
  if (std::abs(dy) < 1e-12) dy = 0.0;
  const double mid = (static_cast<double>(size) - 1.0) / 2.0;
  for (Index i = 0; i < size; ++i) {
    for (Index j = 0; j < size; ++j) {
      const double x = static_cast<double>(j) - mid - bar.center_x;
      const double y = mid - static_cast<double>(i) - bar.center_y;
      const double along = std::abs(x * dx + y * dy);
      const double across = std::abs(-x * dy + y * dx);
      const double a = std::clamp(bar.half_length + 0.5 - along, 0.0, 1.0);
      const double c = std::clamp(bar.half_width + 0.5 - across, 0.0, 1.0);
      out[i * size + j] = bar.amplitude * a * c;
    }
  }
}

namespace detail {

inline Dataset make_split(const DatasetSpec& spec, Index count, Rng& rng) {
  const Index s = spec.image_size;
  const double extent = static_cast<double>(s);
  std::vector<int> labels(count);
  for (Index i = 0; i < count; ++i) labels[i] = static_cast<int>(i % spec.classes);
  rng.shuffle(labels);
  std::vector<double> values(count * s * s);
  for (Index i = 0; i < count; ++i) {
    Bar bar;
    bar.angle_degrees = bar_angle(labels[i], spec.classes);
    bar.center_x = rng.uniform(-extent / 6.0, extent / 6.0);
    bar.center_y = rng.uniform(-extent / 6.0, extent / 6.0);
    bar.half_length = rng.uniform(0.25, 0.4) * extent;
    bar.half_width = rng.uniform(1.0, 2.0);
    bar.amplitude = rng.uniform(0.7, 1.0);
    std::span<double> plane(values.data() + i * s * s, s * s);
    render_bar(bar, s, plane);
    if (spec.noise_sigma > 0.0) {
      for (double& v : plane) v += spec.noise_sigma * rng.normal();
    }
  }
  return {Tensor(Shape{count, 1, s, s}, std::move(values)), std::move(labels)};
}

}  // namespace detail

/// Train and test splits; a pure function of (spec, seed).
inline std::pair<Dataset, Dataset> synth_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng train_rng(seed, 0), test_rng(seed, 1);
  Dataset train = detail::make_split(spec, spec.train_count, train_rng);
  Dataset test = detail::make_split(spec, spec.test_count, test_rng);
  return {std::move(train), std::move(test)};
}

enum class Transform { kIdentity, kRot90 };

inline const char* to_string(Transform t) { return t == Transform::kIdentity ? "identity" : "rot90"; }

inline Transform parse_transform(std::string_view name) {
  if (name == "identity") return Transform::kIdentity;
  if (name == "rot90") return Transform::kRot90;
  fail(ErrorKind::kConfig, "unknown transform '", name, "' (expected identity or rot90)");
}

/// Quarter-turn counterclockwise with the matching label remap.
inline Dataset apply_transform(const Dataset& data, Transform transform, Index classes) {
  if (transform == Transform::kIdentity) return data;
  Dataset out;
  {
    NoGradGuard guard;
    out.images = rot90(data.images, 1).detach();
  }
  out.labels.reserve(data.size());
  for (int label : data.labels) out.labels.push_back(static_cast<int>((label + classes / 2) % classes));
  return out;
}

}  // namespace mrl
