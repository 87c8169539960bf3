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

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "mrl/checkpoint.hpp"
#include "mrl/config.hpp"

namespace mrl {

struct EpochMetrics {
  Index epoch = 0;
  double train_loss = 0.0;
  double test_acc = 0.0;
  double wall_seconds = 0.0;
};

inline constexpr std::string_view kMetricsHeader = "epoch,train_loss,test_acc,wall_seconds";

/// Round-trip exact formatting for reals.
inline std::string format_real(double v) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.17g", v);
  return buffer;
}

inline std::string metrics_csv(const std::vector<EpochMetrics>& rows, bool with_wall_time) {
  std::string out(kMetricsHeader);
  out += '\n';
  for (const EpochMetrics& r : rows) {
    out += std::to_string(r.epoch) + "," + format_real(r.train_loss) + "," + format_real(r.test_acc) + "," +
           format_real(with_wall_time ? r.wall_seconds : 0.0) + "\n";
  }
  return out;
}

inline Index argmax_row(const Tensor& logits, Index row) {
  const Index k = logits.dim(1);
  const double* z = logits.data().data() + row * k;
  return static_cast<Index>(std::max_element(z, z + k) - z);
}

/// Fraction of correctly classified samples, evaluated in fixed order.
inline double accuracy(const Model& model, const Dataset& data, Index batch_size = 100) {
  NoGradGuard guard;
  Index correct = 0;
  std::vector<Index> rows;
  for (Index start = 0; start < data.size(); start += batch_size) {
    rows.resize(std::min(batch_size, data.size() - start));
    std::iota(rows.begin(), rows.end(), start);
    const auto [x, labels] = data.batch(rows);
    const Tensor logits = model.forward(x);
    for (Index r = 0; r < rows.size(); ++r) correct += argmax_row(logits, r) == static_cast<Index>(labels[r]);
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

struct TrainOptions {
  Index epochs = 5;
  Index batch_size = 32;
  AdamOptions optimizer;
  std::uint64_t shuffle_seed = 0;
};

/// Adam on softmax cross-entropy. Stops with a validity error naming the
/// step on the first non-finite loss or activation.
inline std::vector<EpochMetrics> train_model(Model& model, const Dataset& train, const Dataset& test,
                                             const TrainOptions& options,
                                             const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  if (options.epochs == 0 || options.batch_size == 0) fail(ErrorKind::kConfig, "epochs and batch_size must be >= 1");
  Adam adam(model.parameters(), options.optimizer);
  Rng order_rng(options.shuffle_seed, 2);
  std::vector<Index> order(train.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::vector<EpochMetrics> history;
  Index step = 0;
  for (Index epoch = 1; epoch <= options.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    Index batches = 0;
    for (Index first = 0; first < order.size(); first += options.batch_size) {
      ++step;
      const std::span<const Index> rows(order.data() + first, std::min(options.batch_size, order.size() - first));
      const auto [x, labels] = train.batch(rows);
      adam.zero_grad();
      Tensor loss;
      try {
        loss = cross_entropy(model.forward(x), labels);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kNonFinite) throw;
        fail(ErrorKind::kNonFinite, "training diverged at epoch ", epoch, " step ", step, ": ", e.what());
      }
      if (!std::isfinite(loss.item())) {
        fail(ErrorKind::kNonFinite, "non-finite loss ", loss.item(), " at epoch ", epoch, " step ", step);
      }
      backward(loss);
      adam.step();
      loss_sum += loss.item();
      ++batches;
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(batches);
    m.test_acc = accuracy(model, test);
    m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return history;
}

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  std::filesystem::path metrics_path;
  std::filesystem::path timing_path;
  std::filesystem::path checkpoint_path;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kUsage, "cannot write '", path.string(), "'");
  out << text;
}

/// Full run: data, model, training, then metrics.csv, timing.csv,
/// config.json and model.ckpt under the output directory. metrics.csv is
/// appended after every epoch.
inline TrainResult train(const RunConfig& config, const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  const std::filesystem::path dir(config.output_dir);
  std::filesystem::create_directories(dir);
  TrainResult result;
  result.metrics_path = dir / "metrics.csv";
  result.timing_path = dir / "timing.csv";
  result.checkpoint_path = config.checkpoint_path();
  write_text(dir / "config.json", to_json(config).dump(2) + "\n");

  const auto [train_set, test_set] = synth_dataset(config.dataset, config.seed);
  Model model = build_model(config.model, config.seed);
  TrainOptions options{config.epochs, config.batch_size, config.optimizer, config.seed};
  std::vector<EpochMetrics> so_far;
  write_text(result.metrics_path, metrics_csv(so_far, config.record_wall_time));
  result.epochs = train_model(model, train_set, test_set, options, [&](const EpochMetrics& m) {
    so_far.push_back(m);
    write_text(result.metrics_path, metrics_csv(so_far, config.record_wall_time));
    if (on_epoch) on_epoch(m);
  });

  std::string timing = "epoch,wall_seconds\n";
  for (const EpochMetrics& m : result.epochs) timing += std::to_string(m.epoch) + "," + format_real(m.wall_seconds) + "\n";
  write_text(result.timing_path, timing);
  if (result.checkpoint_path.has_parent_path()) std::filesystem::create_directories(result.checkpoint_path.parent_path());
  save_checkpoint(result.checkpoint_path, model.parameters());
  return result;
}

/// Accuracy of the configured model loaded from its checkpoint on the
/// configured split under `config.transform`.
inline double evaluate(const RunConfig& config) {
  Model model = build_model(config.model, config.seed);
  ParamList params = model.parameters();
  load_checkpoint(config.checkpoint_path(), params);
  const auto [train_set, test_set] = synth_dataset(config.dataset, config.seed);
  const Dataset& split = config.eval_split == "train" ? train_set : test_set;
  return accuracy(model, apply_transform(split, config.transform, config.dataset.classes));
}

}  // namespace mrl
