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

// Self-check suites behind the `gradcheck`, `equivariance` and `cost`
// commands.

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrl/cost.hpp"
#include "mrl/grad_check.hpp"

namespace mrl {

struct SuiteRow {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  Index runs = 0;
  bool gating = true;  // informational rows never fail the suite

  bool passed() const { return value < tolerance; }
  const char* verdict() const { return passed() ? "PASS" : gating ? "FAIL" : "info"; }
};

struct SuiteResult {
  std::string title;
  std::vector<SuiteRow> rows;

  bool passed() const {
    return std::all_of(rows.begin(), rows.end(), [](const SuiteRow& r) { return r.passed() || !r.gating; });
  }

  std::string table() const {
    std::string out;
    char line[160];
    std::snprintf(line, sizeof line, "%-28s %12s %10s %5s  %s\n", title.c_str(), "max_err", "tolerance", "runs", "result");
    out += line;
    for (const SuiteRow& r : rows) {
      std::snprintf(line, sizeof line, "%-28s %12.3e %10.1e %5zu  %s\n", r.name.c_str(), r.value, r.tolerance, r.runs,
                    r.verdict());
      out += line;
    }
    return out;
  }
};

// ---------------------------------------------------------------- gradients

namespace detail {

struct GradCase {
  std::string name;
  double tolerance;
  bool gating;
  // Builds a fresh problem for one seed: the function to differentiate and
  // the leaves to check.
  std::function<std::pair<std::function<Tensor()>, std::vector<Tensor>>(std::uint64_t)> make;
};

inline std::vector<Tensor> leaves(const ParamList& params, std::initializer_list<Tensor> extra) {
  std::vector<Tensor> out(extra);
  for (const auto& [name, t] : params) out.push_back(t);
  return out;
}

template <typename P>
ParamList collected(const P& p) {
  ParamList out;
  p.collect("", out);
  return out;
}

inline std::pair<std::function<Tensor()>, std::vector<Tensor>> probe(std::function<Tensor()> out, std::vector<Tensor> wrt,
                                                                     std::uint64_t seed) {
  return {centered_probe_loss(std::move(out), seed), std::move(wrt)};
}

// Attention and block problems use a 4 x 4 token grid and inputs in [-2, 2].
inline std::vector<GradCase> grad_cases() {
  constexpr double kLayer = 1e-6, kBlock = 1e-4;
  std::vector<GradCase> cases;
  cases.push_back({"linear", kLayer, true, [](std::uint64_t s) {
                     Rng rng(s);
                     auto p = LinearParams::init(5, 4, true, rng);
                     Tensor x = Tensor::uniform({3, 5}, rng, -1, 1);
                     return probe([=] { return linear_forward(x, p); }, leaves(collected(p), {x}), s);
                   }});
  cases.push_back({"conv2d", kLayer, true, [](std::uint64_t s) {
                     Rng rng(s);
                     auto p = Conv2dParams::init(2, 3, 3, 2, 1, true, rng);
                     Tensor x = Tensor::uniform({1, 2, 6, 6}, rng, -1, 1);
                     return probe([=] { return conv2d_forward(x, p); }, leaves(collected(p), {x}), s);
                   }});
  cases.push_back({"depthwise_conv2d", kLayer, true, [](std::uint64_t s) {
                     Rng rng(s);
                     auto p = DepthwiseParams::same(3, 3, true, rng);
                     Tensor x = Tensor::uniform({1, 3, 5, 5}, rng, -1, 1);
                     return probe([=] { return depthwise_forward(x, p); }, leaves(collected(p), {x}), s);
                   }});
  cases.push_back({"region_sample", kLayer, true, [](std::uint64_t s) {
                     Rng rng(s);
                     auto p = Conv2dParams::init(4, 4, 2, 2, 0, true, rng);
                     Tensor x = Tensor::uniform({1, 4, 4, 4}, rng, -1, 1);
                     return probe([=] { return region_sample(x, 2, p); }, leaves(collected(p), {x}), s);
                   }});
  cases.push_back({"upscale_sum", kLayer, true, [](std::uint64_t s) {
                     Rng rng(s);
                     Tensor x = Tensor::uniform({1, 2, 4, 4}, rng, -1, 1);
                     Tensor r = Tensor::uniform({1, 2, 2, 2}, rng, -1, 1);
                     return probe([=] { return upscale_sum(x, r, 2); }, {x, r}, s);
                   }});
  cases.push_back({"layer_norm", kLayer, true, [](std::uint64_t s) {
                     Rng rng(s);
                     auto p = LayerNormParams::init(6);
                     for (auto& [n, t] : collected(p)) {
                       Tensor w = t;
                       for (double& v : w.mutable_data()) v = rng.uniform(0.5, 1.5);
                     }
                     Tensor x = Tensor::uniform({2, 3, 6}, rng, -1, 1);
                     return probe([=] { return layernorm_forward(x, p); }, leaves(collected(p), {x}), s);
                   }});
  cases.push_back({"gelu", kLayer, true, [](std::uint64_t s) {
                     Tensor x = Tensor::uniform({3, 7}, s, -3, 3);
                     return probe([=] { return gelu(x); }, {x}, s);
                   }});
  cases.push_back({"softmax", kLayer, true, [](std::uint64_t s) {
                     Tensor x = Tensor::uniform({3, 6}, s, -2, 2);
                     return probe([=] { return softmax_lastdim(x); }, {x}, s);
                   }});
  cases.push_back({"cross_entropy", kLayer, true, [](std::uint64_t s) {
                     Tensor x = Tensor::uniform({4, 5}, s, -2, 2);
                     return probe([=] { return cross_entropy(x, std::vector<int>{0, 3, 1, 4}); }, {x}, s);
                   }});
  cases.push_back({"ffn", kLayer, true, [](std::uint64_t s) {
                     Rng rng(s);
                     auto p = FfnParams::init(4, 2, rng);
                     Tensor x = Tensor::uniform({1, 3, 4}, rng, -1, 1);
                     return probe([=] { return ffn_forward(x, p); }, leaves(collected(p), {x}), s);
                   }});
  cases.push_back({"mhsa_standard", kLayer, true, [](std::uint64_t s) {
                     Rng rng(s);
                     auto p = AttentionParams::init(8, 2, QkvVariant::kStandard, 3, true, rng);
                     Tensor x = Tensor::uniform({1, 16, 8}, rng, -2, 2);
                     return probe([=] { return mhsa_forward(x, p); }, leaves(collected(p), {x}), s);
                   }});
  cases.push_back({"mhsa_commonqkv", kLayer, true, [](std::uint64_t s) {
                     Rng rng(s);
                     auto p = AttentionParams::init(8, 2, QkvVariant::kCommon, 3, true, rng);
                     Tensor x = Tensor::uniform({1, 16, 8}, rng, -2, 2);
                     return probe([=] { return mhsa_forward(x, p); }, leaves(collected(p), {x}), s);
                   }});
  cases.push_back({"p4_lifting", kLayer, true, [](std::uint64_t s) {
                     Rng rng(s);
                     auto p = P4ConvParams::init(P4Mode::kLifting, 2, 2, 3, rng);
                     Tensor x = Tensor::uniform({1, 2, 5, 5}, rng, -1, 1);
                     return probe([=] { return p4_conv_forward(x, p); }, {x, p.weight}, s);
                   }});
  cases.push_back({"p4_group", kLayer, true, [](std::uint64_t s) {
                     Rng rng(s);
                     auto p = P4ConvParams::init(P4Mode::kGroup, 1, 2, 3, rng);
                     Tensor x = Tensor::uniform({1, 4, 5, 5}, rng, -1, 1);
                     return probe([=] { return p4_conv_forward(x, p); }, {x, p.weight}, s);
                   }});
  cases.push_back({"orientation_max", kLayer, true, [](std::uint64_t s) {
                     Tensor x = Tensor::uniform({1, 8, 3, 3}, s, -1, 1);
                     return probe([=] { return orientation_max(x, kP4Order); }, {x}, s);
                   }});
  cases.push_back({"global_avg_pool", kLayer, true, [](std::uint64_t s) {
                     Tensor x = Tensor::uniform({2, 3, 4, 4}, s, -1, 1);
                     return probe([=] { return global_avg_pool(x); }, {x}, s);
                   }});
  for (const auto& [label, mix, qkv] : {std::tuple{"mrl_block_plain", LocalMix::kPlain, QkvVariant::kStandard},
                                        std::tuple{"mrl_block_commonqkv", LocalMix::kPlain, QkvVariant::kCommon},
                                        std::tuple{"mrl_block_gc_p4", LocalMix::kGcP4, QkvVariant::kStandard}}) {
    // GC rows are informational (orientation max has kinks).
    cases.push_back({label, kBlock, mix == LocalMix::kPlain, [mix = mix, qkv = qkv](std::uint64_t s) {
                       MrlConfig c;
                       c.channels = 16;
                       c.heads = 1;
                       c.head_dim = 16;
                       c.region_size = 2;
                       c.qkv = qkv;
                       c.local_mix = mix;
                       Rng rng(s);
                       auto p = MrlParams::init(c, rng);
                       Tensor x = Tensor::uniform({1, 16, 8, 8}, rng, -2, 2);
                       return probe([=] { return mrl_forward(x, p); }, leaves(collected(p), {x}), s);
                     }});
  }
  cases.push_back({"transformer_block_x2", kBlock, true, [](std::uint64_t s) {
                     MrlConfig c;
                     c.channels = 16;
                     c.heads = 1;
                     c.head_dim = 16;
                     c.region_size = 2;
                     Rng rng(s);
                     auto b1 = make_mrl_block(c, 2, rng);
                     auto b2 = make_mrl_block(c, 2, rng);
                     Tensor x = Tensor::uniform({1, 16, 8, 8}, rng, -2, 2);
                     std::vector<Tensor> wrt = leaves(collected(b1), {x});
                     for (const auto& [n, t] : collected(b2)) wrt.push_back(t);
                     return probe([=] { return transformer_block(transformer_block(x, b1), b2); }, wrt, s);
                   }});
  return cases;
}

}  // namespace detail

/// Central-difference checks (eps 1e-5, 64-bit) of every layer and the
/// composed block over `seeds` consecutive seeds starting at `seed`.
inline SuiteResult gradcheck_suite(std::uint64_t seed, Index seeds = 5) {
  SuiteResult result{"gradcheck", {}};
  for (const detail::GradCase& c : detail::grad_cases()) {
    SuiteRow row{c.name, 0.0, c.tolerance, seeds, c.gating};
    for (Index i = 0; i < seeds; ++i) {
      auto [fn, wrt] = c.make(seed + i);
      row.value = std::max(row.value, grad_check(fn, wrt, 1e-5));
    }
    result.rows.push_back(row);
  }
  return result;
}

// ---------------------------------------------------------------- equivariance

/// forward(rot90(x)) against the orientation-cycled rotation of forward(x),
/// as max |a - b| / max |b|.
inline SuiteResult equivariance_suite(std::uint64_t seed, Index seeds = 10) {
  SuiteResult result{"equivariance", {}};
  auto rel = [](const Tensor& a, const Tensor& b) {
    double worst = 0.0, scale = 0.0;
    for (Index i = 0; i < a.numel(); ++i) {
      worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
      scale = std::max(scale, std::abs(b.data()[i]));
    }
    return scale > 0.0 ? worst / scale : worst;
  };
  SuiteRow lifting{"p4_lifting", 0.0, 1e-10, seeds}, group{"p4_group", 0.0, 1e-10, seeds},
      stacked{"p4_lifting_then_group", 0.0, 1e-10, seeds}, gc{"gc_local_mix", 0.0, 1e-10, seeds};
  NoGradGuard guard;
  for (Index i = 0; i < seeds; ++i) {
    Rng rng(seed + i);
    auto lift = P4ConvParams::init(P4Mode::kLifting, 3, 4, 3, rng);
    auto grp = P4ConvParams::init(P4Mode::kGroup, 4, 2, 3, rng);
    const Tensor x = Tensor::uniform({2, 3, 9, 9}, rng, -1, 1);
    const Tensor z = Tensor::uniform({2, 16, 9, 9}, rng, -1, 1);
    const Tensor lx = p4_conv_forward(x, lift);
    lifting.value = std::max(lifting.value, rel(p4_conv_forward(rot90(x, 1), lift), p4_act(lx)));
    group.value = std::max(group.value, rel(p4_conv_forward(p4_act(z), grp), p4_act(p4_conv_forward(z, grp))));
    stacked.value = std::max(stacked.value, rel(p4_conv_forward(p4_conv_forward(rot90(x, 1), lift), grp),
                                                p4_act(p4_conv_forward(lx, grp))));
    // GC local mix with centre-only depthwise taps.
    MrlConfig c;
    c.channels = 8;
    c.heads = 1;
    c.head_dim = 8;
    c.local_mix = LocalMix::kGcP4;
    auto p = MrlParams::init(c, rng);
    for (double& v : p.local.weight.mutable_data()) v = 0.0;
    for (Index ch = 0; ch < c.channels; ++ch) p.local.weight.mutable_data()[ch * 9 + 4] = rng.uniform(0.5, 1.5);
    const Tensor a = Tensor::uniform({1, 8, 6, 6}, rng, -1, 1);
    gc.value = std::max(gc.value, rel(local_mix(rot90(a, 1), p), rot90(local_mix(a, p), 1)));
  }
  result.rows = {lifting, group, stacked, gc};
  return result;
}

// ---------------------------------------------------------------- cost

inline nlohmann::json to_json(const CostReport& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerCost& l : r.layers) {
    layers.push_back({{"layer", l.name}, {"group", to_string(l.group)}, {"params", l.params}, {"macs", l.macs},
                      {"flops", l.flops()}});
  }
  auto totals = [](const CostTotals& t) {
    return nlohmann::json{{"params", t.params}, {"macs", t.macs}, {"flops", t.flops()}};
  };
  return {{"model", r.model},
          {"variant", r.variant},
          {"input_size", r.input_size},
          {"flops_per_mac", kFlopsPerMac},
          {"totals",
           {{"attention-module", totals(r.group(CostGroup::kAttention))},
            {"rest-of-network", totals(r.group(CostGroup::kRest))},
            {"all", totals(r.total())}}},
          {"layers", layers}};
}

inline nlohmann::json to_json(const VariantComparison& c) {
  auto deltas = [&](const CostReport& r) {
    const CostTotals base = c.sa.group(CostGroup::kAttention), att = r.group(CostGroup::kAttention);
    return nlohmann::json{{"attention_params_percent", percent_delta(base.params, att.params)},
                          {"attention_flops_percent", percent_delta(base.flops(), att.flops())},
                          {"total_params_percent", percent_delta(c.sa.total().params, r.total().params)},
                          {"total_flops_percent", percent_delta(c.sa.total().flops(), r.total().flops())}};
  };
  return {{"variants", {to_json(c.sa), to_json(c.mrl), to_json(c.cq_mrl)}},
          {"deltas_vs_sa", {{"MRL", deltas(c.mrl)}, {"CQ+MRL", deltas(c.cq_mrl)}}}};
}

/// One row per variant: attention-module and whole-network totals.
inline std::string comparison_summary(const VariantComparison& c) {
  std::string out = "variant,attention_params,attention_flops,total_params,total_flops\n";
  for (const CostReport* r : {&c.sa, &c.mrl, &c.cq_mrl}) {
    const CostTotals a = r->group(CostGroup::kAttention), t = r->total();
    out += r->variant + "," + std::to_string(a.params) + "," + std::to_string(a.flops()) + "," +
           std::to_string(t.params) + "," + std::to_string(t.flops()) + "\n";
  }
  return out;
}

}  // namespace mrl
