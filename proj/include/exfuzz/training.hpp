/*
 * Copyright 2026 The ExciteFuzz Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "exfuzz/dataset.hpp"
#include "exfuzz/defects.hpp"
#include "exfuzz/error.hpp"
#include "exfuzz/network.hpp"
#include "exfuzz/rng.hpp"

namespace exfuzz {

// Desk architectures. "mlp64": flatten, dense ->32, relu, dense ->classes.
// "lenet": conv 1->4 3x3 (pad 1), relu, maxpool 2, flatten, dense ->48,
// relu, dense ->classes. "linear": flatten, dense ->classes.
inline std::vector<LayerSpec> ArchitectureLayers(const std::string& name,
                                                 const Shape& input, int classes) {
  const int flat = static_cast<int>(ShapeSize(input));
  if (name == "linear") {
    return {LayerSpec::Flatten(), LayerSpec::Dense(flat, classes), LayerSpec::Softmax()};
  }
  if (name == "mlp64") {
    return {LayerSpec::Flatten(), LayerSpec::Dense(flat, 32), LayerSpec::Relu(),
            LayerSpec::Dense(32, classes), LayerSpec::Softmax()};
  }
  if (name == "lenet") {
    if (input.size() != 3) throw UsageError("lenet needs CxHxW input");
    const int pooled = 4 * (input[1] / 2) * (input[2] / 2);
    return {LayerSpec::Conv2d(input[0], 4, 3, 3, 1, 1), LayerSpec::Relu(),
            LayerSpec::MaxPool2d(2, 2), LayerSpec::Flatten(),
            LayerSpec::Dense(pooled, 48), LayerSpec::Relu(),
            LayerSpec::Dense(48, classes), LayerSpec::Softmax()};
  }
  throw UsageError("unknown architecture '" + name + "' (linear, mlp64, lenet)");
}

// Glorot-uniform weights, zero biases.
inline void InitializeWeights(Network& model, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    const LayerSpec& l = model.layers()[i];
    if (l.ParamCount() == 0) continue;
    double fan_in = 0, fan_out = 0;
    if (l.kind == LayerKind::kDense) {
      fan_in = l.in_dim;
      fan_out = l.out_dim;
    } else {
      fan_in = static_cast<double>(l.in_channels) * l.kernel_h * l.kernel_w;
      fan_out = static_cast<double>(l.out_channels) * l.kernel_h * l.kernel_w;
    }
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    auto p = model.params()[i].values();
    for (std::size_t k = 0; k < l.WeightCount(); ++k) {
      p[k] = static_cast<float>(rng.Uniform(-limit, limit));
    }
    for (std::size_t k = l.WeightCount(); k < p.size(); ++k) p[k] = 0.0f;
  }
}

inline double Accuracy(const Network& model, std::span<const Tensor> inputs,
                       std::span<const int> labels) {
  if (inputs.empty() || inputs.size() != labels.size()) {
    throw UsageError("accuracy needs a nonempty batch with one label per input");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    correct += Predict(model, inputs[i]) == labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(inputs.size());
}

inline double Accuracy(const Network& model, const Dataset& data, Split split) {
  const auto [x, y] = data.Part(split);
  return Accuracy(model, x, y);
}

inline constexpr double kDivergenceLoss = 1e3;

// Minibatch SGD over a fixed list of examples. Returns the mean loss of the
// last epoch (NaN when epochs == 0).
inline double RunSgd(Network& model, const std::vector<Tensor>& x, const std::vector<int>& y,
                     int epochs, int batch_size, double lr, std::uint64_t seed) {
  if (x.empty() && epochs > 0) throw UsageError("no training examples");
  std::vector<std::size_t> order(x.size());
  std::vector<Tensor> bx;
  std::vector<int> by;
  double last = std::nan("");
  for (int e = 0; e < epochs; ++e) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(MixSeed(seed, static_cast<std::uint64_t>(e)));
    rng.Shuffle(std::span<std::size_t>(order));
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(batch_size)) {
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(batch_size));
      bx.clear();
      by.clear();
      for (std::size_t k = b; k < end; ++k) {
        bx.push_back(x[order[k]]);
        by.push_back(y[order[k]]);
      }
      try {
        sum += SgdStep(model, bx, by, lr);
      } catch (const NumericError& err) {
        throw NumericError("training diverged at epoch " + std::to_string(e) + ": " +
                           err.what());
      }
      ++batches;
    }
    last = sum / static_cast<double>(batches);
    if (!std::isfinite(last) || last > kDivergenceLoss) {
      throw NumericError("training diverged at epoch " + std::to_string(e) +
                         " (mean loss " + std::to_string(last) + ")");
    }
  }
  return last;
}

// Initializes and trains a model under `regime`. Polluted regimes stamp the
// training split first. Train/test accuracy land in the model metadata.
inline Network TrainModel(const Dataset& data, const std::vector<LayerSpec>& arch,
                          const DefectSpec& regime, std::uint64_t seed) {
  regime.Validate();
  Network model(data.shape, arch, data.class_count);
  InitializeWeights(model, MixSeed(seed, 0));
  const Dataset train_data =
      regime.kind == DefectKind::kPolluted ? PolluteDataset(data, regime, MixSeed(seed, 1))
                                           : data;
  auto [x, y] = train_data.Part(Split::kTrain);
  if (regime.train_limit > 0 && x.size() > static_cast<std::size_t>(regime.train_limit)) {
    x.resize(static_cast<std::size_t>(regime.train_limit));
    y.resize(static_cast<std::size_t>(regime.train_limit));
  }
  const double final_loss = RunSgd(model, x, y, regime.epochs, regime.batch_size,
                                   regime.learning_rate, MixSeed(seed, 2));
  nlohmann::json& md = model.metadata();
  md["regime"] = std::string(DefectName(regime.kind));
  md["epochs"] = regime.epochs;
  md["batch_size"] = regime.batch_size;
  md["learning_rate"] = regime.learning_rate;
  md["train_limit"] = regime.train_limit;
  md["seed"] = seed;
  md["dataset"] = data.name;
  md["final_loss"] = std::isfinite(final_loss) ? nlohmann::json(final_loss) : nlohmann::json();
  if (regime.kind == DefectKind::kPolluted) {
    md["alpha"] = regime.alpha;
    md["patch_min"] = regime.patch_min;
    md["patch_max"] = regime.patch_max;
    md["target_class"] = regime.target_class;
  }
  md["train_accuracy"] = Accuracy(model, x, y);
  md["test_accuracy"] = Accuracy(model, data, Split::kTest);
  return model;
}

}  // namespace exfuzz
