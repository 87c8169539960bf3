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

// Dense rank-1..4 tensor of doubles with a dynamic reverse-mode tape.
//
// A Tensor is a cheap handle: copies share storage and graph position, the
// same way framework tensors behave. Every primitive in ops.hpp records a
// Node when grad mode is on and at least one input requires a gradient;
// backward() walks the recorded graph once in reverse topological order and
// then releases it.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mrl/error.hpp"

namespace mrl {

using Index = std::size_t;

inline constexpr Index kMaxRank = 4;

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> dims) : Shape(std::vector<Index>(dims)) {}
  explicit Shape(std::vector<Index> dims) : dims_(std::move(dims)) {
    if (dims_.empty() || dims_.size() > kMaxRank) {
      fail(ErrorKind::kConstruction, "rank must be in [1, ", kMaxRank, "], got ", dims_.size());
    }
    for (Index d : dims_) {
      if (d == 0) fail(ErrorKind::kConstruction, "axis sizes must be >= 1 in ", str());
    }
  }

  Index rank() const { return dims_.size(); }
  Index operator[](Index axis) const { return dims_.at(axis); }
  const std::vector<Index>& dims() const { return dims_; }

  Index numel() const {
    Index n = 1;
    for (Index d : dims_) n *= d;
    return n;
  }

  /// Row-major strides.
  std::vector<Index> strides() const {
    std::vector<Index> s(dims_.size(), 1);
    for (Index i = dims_.size(); i-- > 1;) s[i - 1] = s[i] * dims_[i];
    return s;
  }

  std::string str() const {
    std::string out = "[";
    for (Index i = 0; i < dims_.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(dims_[i]);
    }
    return out + "]";
  }

  bool operator==(const Shape& other) const = default;

 private:
  std::vector<Index> dims_;
};

/// Deterministic random source. Uniform draws use the top 53 bits of
/// mt19937_64 so the sequence is identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    engine_.seed(seq);
  }

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller on our own uniforms rather than std::normal_distribution,
  // whose algorithm is implementation-defined.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  std::uint64_t next() { return engine_(); }

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (Index i = values.size(); i > 1; --i) {
      const Index j = static_cast<Index>(engine_() % i);
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

enum class OpTag {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kScale,
  kSum,
  kMatmul,
  kBatchMatmul,
  kReshape,
  kPermute,
  kRot90,
  kConcat,
  kSlice,
  kSoftmax,
  kGelu,
  kLayerNorm,
  kLinear,
  kConv2d,
  kDepthwise,
  kUpscaleSum,
  kAvgPool,
  kOrientationMax,
  kCrossEntropy,
  kRegionPartition,
};

class Tensor;

namespace detail {

struct TensorImpl;

// Accumulates the output gradient into parent gradient buffers. A null
// pointer means that parent does not need a gradient.
using BackwardFn = std::function<void(const double* out_grad, std::span<double* const> in_grads)>;

struct Node {
  OpTag op = OpTag::kLeaf;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  BackwardFn backward;
  bool consumed = false;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass reaches this leaf
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // producer; null for leaves
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<detail::TensorImpl>()) {
    if (values.size() != shape.numel()) {
      fail(ErrorKind::kConstruction, "shape ", shape.str(), " needs ", shape.numel(), " values, got ",
           values.size());
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
  }

  static Tensor zeros(Shape shape) { return constant(std::move(shape), 0.0); }

  static Tensor constant(Shape shape, double value) {
    const Index n = shape.numel();
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }

  static Tensor from_values(Shape shape, std::vector<double> values) {
    return Tensor(std::move(shape), std::move(values));
  }

  static Tensor uniform(Shape shape, std::uint64_t seed, double lo, double hi) {
    Rng rng(seed);
    return uniform(std::move(shape), rng, lo, hi);
  }

  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
    std::vector<double> values(shape.numel());
    for (double& v : values) v = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(values));
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  Index numel() const { return impl().data.size(); }
  Index rank() const { return shape().rank(); }
  Index dim(Index axis) const { return shape()[axis]; }

  std::span<const double> data() const { return impl().data; }

  /// Direct write access. Only meaningful for leaves (parameters, inputs);
  /// mutating an interior tensor invalidates any recorded graph through it.
  std::span<double> mutable_data() { return impl().data; }

  double item() const {
    if (numel() != 1) fail(ErrorKind::kUsage, "item() on tensor of shape ", shape().str());
    return impl().data[0];
  }

  double at(std::initializer_list<Index> index) const { return impl().data[offset(index)]; }

  bool requires_grad() const { return impl().requires_grad; }

  Tensor& set_requires_grad(bool flag) {
    if (!is_leaf()) fail(ErrorKind::kUsage, "requires_grad can only be set on leaves");
    impl().requires_grad = flag;
    return *this;
  }

  bool is_leaf() const { return impl().node == nullptr; }
  OpTag op() const { return is_leaf() ? OpTag::kLeaf : impl().node->op; }

  bool has_grad() const { return !impl().grad.empty(); }
  std::span<const double> grad() const { return impl().grad; }
  std::span<double> mutable_grad() { return impl().grad; }
  void zero_grad() { std::fill(impl().grad.begin(), impl().grad.end(), 0.0); }
  void clear_grad() { impl().grad.clear(); }

  /// Copy of the values with no graph attached.
  Tensor detach() const { return Tensor(shape(), impl().data); }

  bool all_finite() const {
    return std::all_of(impl().data.begin(), impl().data.end(), [](double v) { return std::isfinite(v); });
  }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  /// Records `out` as produced by `op` from `parents`. When grad mode is off
  /// or no parent needs a gradient the result is a plain leaf.
  static Tensor record(Shape shape, std::vector<double> values, OpTag op, std::initializer_list<Tensor> parents,
                       detail::BackwardFn backward) {
    return record(std::move(shape), std::move(values), op, std::vector<Tensor>(parents), std::move(backward));
  }

  static Tensor record(Shape shape, std::vector<double> values, OpTag op, const std::vector<Tensor>& parents,
                       detail::BackwardFn backward) {
    Tensor out(std::move(shape), std::move(values));
    if (!detail::grad_mode()) return out;
    const bool any = std::any_of(parents.begin(), parents.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (!any) return out;
    auto node = std::make_shared<detail::Node>();
    node->op = op;
    node->parents.reserve(parents.size());
    for (const Tensor& p : parents) node->parents.push_back(p.impl_);
    node->backward = std::move(backward);
    out.impl_->node = std::move(node);
    out.impl_->requires_grad = true;
    return out;
  }

  friend void backward(const Tensor& loss);

 private:
  detail::TensorImpl& impl() const {
    if (!impl_) fail(ErrorKind::kUsage, "use of an undefined tensor");
    return *impl_;
  }

  Index offset(std::initializer_list<Index> index) const {
    const Shape& s = shape();
    if (index.size() != s.rank()) fail(ErrorKind::kShape, "index rank mismatch for ", s.str());
    const auto strides = s.strides();
    Index off = 0, axis = 0;
    for (Index i : index) {
      if (i >= s[axis]) fail(ErrorKind::kShape, "index out of range on axis ", axis, " of ", s.str());
      off += i * strides[axis++];
    }
    return off;
  }

  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Runs reverse-mode differentiation from a scalar. Leaf gradients
/// accumulate (call zero_grad between steps); the graph is consumed, so a
/// second call on the same loss is a usage error.
inline void backward(const Tensor& loss) {
  if (!loss.defined()) fail(ErrorKind::kUsage, "backward on an undefined tensor");
  if (loss.numel() != 1) fail(ErrorKind::kUsage, "backward needs a scalar loss, got ", loss.shape().str());
  if (!loss.requires_grad()) fail(ErrorKind::kUsage, "loss is detached from every leaf");
  auto* root = loss.impl_.get();
  if (root->node && root->node->consumed) {
    fail(ErrorKind::kUsage, "graph already consumed by an earlier backward call");
  }

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, Index>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (impl->node && next < impl->node->parents.size()) {
      detail::TensorImpl* parent = impl->node->parents[next++].get();
      if (parent->node && parent->node->consumed) {
        fail(ErrorKind::kUsage, "graph already consumed by an earlier backward call");
      }
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(impl);
      stack.pop_back();
    }
  }

  std::unordered_map<detail::TensorImpl*, std::vector<double>> interior;
  auto buffer_for = [&](detail::TensorImpl* impl) -> double* {
    if (!impl->requires_grad) return nullptr;
    if (!impl->node) {
      if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
      return impl->grad.data();
    }
    auto& buf = interior[impl];
    if (buf.empty()) buf.assign(impl->data.size(), 0.0);
    return buf.data();
  };

  buffer_for(root)[0] += 1.0;
  std::vector<double*> in_grads;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* impl = *it;
    if (!impl->node) continue;
    auto found = interior.find(impl);
    if (found != interior.end()) {
      const std::vector<double> out_grad = std::move(found->second);
      interior.erase(found);
      in_grads.clear();
      for (auto& parent : impl->node->parents) in_grads.push_back(buffer_for(parent.get()));
      impl->node->backward(out_grad.data(), in_grads);
    }
  }
  // Release only after the sweep: dropping parents frees interior tensors
  // that may still be pending in `order`.
  std::vector<std::shared_ptr<detail::Node>> nodes;
  for (detail::TensorImpl* impl : order) {
    if (impl->node) nodes.push_back(impl->node);
  }
  for (auto& node : nodes) {
    node->consumed = true;
    node->backward = nullptr;
    node->parents.clear();
  }
}

}  // namespace mrl
