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
#include <string_view>
#include <vector>

#include "exfuzz/dataset.hpp"
#include "exfuzz/error.hpp"
#include "exfuzz/rng.hpp"

namespace exfuzz {

enum class DefectKind { kWellTrained, kUnderfit, kOverfit, kPolluted };

inline std::string_view DefectName(DefectKind k) {
  switch (k) {
    case DefectKind::kWellTrained: return "well_trained";
    case DefectKind::kUnderfit: return "underfit";
    case DefectKind::kOverfit: return "overfit";
    case DefectKind::kPolluted: return "polluted";
  }
  return "?";
}

inline DefectKind ParseDefect(std::string_view s) {
  if (s == "well" || s == "well_trained") return DefectKind::kWellTrained;
  if (s == "under" || s == "underfit") return DefectKind::kUnderfit;
  if (s == "over" || s == "overfit") return DefectKind::kOverfit;
  if (s == "polluted") return DefectKind::kPolluted;
  throw UsageError("unknown regime '" + std::string(s) + "'");
}

// Training regime plus, for kPolluted, the trigger-patch parameters.
struct DefectSpec {
  DefectKind kind = DefectKind::kWellTrained;
  int epochs = 30;
  int batch_size = 32;
  double learning_rate = 0.1;
  // Train on only the first `train_limit` training examples (0 = all).
  int train_limit = 0;

  double alpha = 0.1;
  int patch_min = 1;
  int patch_max = 6;
  int target_class = 1;

  static DefectSpec WellTrained() { return DefectSpec{}; }
  static DefectSpec Underfit() {
    DefectSpec s;
    s.kind = DefectKind::kUnderfit;
    s.epochs = 1;
    return s;
  }
  static DefectSpec Overfit() {
    DefectSpec s;
    s.kind = DefectKind::kOverfit;
    s.epochs = 300;
    s.batch_size = 8;
    s.train_limit = 60;
    return s;
  }
  static DefectSpec Polluted() {
    DefectSpec s;
    s.kind = DefectKind::kPolluted;
    return s;
  }
  static DefectSpec For(DefectKind k) {
    switch (k) {
      case DefectKind::kUnderfit: return Underfit();
      case DefectKind::kOverfit: return Overfit();
      case DefectKind::kPolluted: return Polluted();
      default: return WellTrained();
    }
  }

  void Validate() const {
    if (epochs < 0) throw UsageError("epochs must be non-negative");
    if (batch_size < 1) throw UsageError("batch size must be at least 1");
    if (!(learning_rate > 0.0)) throw UsageError("learning rate must be positive");
    if (train_limit < 0) throw UsageError("train limit must be non-negative");
    if (kind == DefectKind::kPolluted) {
      if (!(alpha > 0.0 && alpha <= 1.0)) throw UsageError("alpha must lie in (0, 1]");
      if (patch_min < 1 || patch_min > patch_max) {
        throw UsageError("patch sizes need 1 <= patch_min <= patch_max");
      }
    }
  }
};

// Stamps a white square on round(alpha * |train|) training examples chosen
// without replacement and relabels them to the target class. Test examples
// are never touched.
inline Dataset PolluteDataset(const Dataset& data, const DefectSpec& spec,
                              std::uint64_t seed) {
  if (spec.kind != DefectKind::kPolluted) {
    throw UsageError("pollute_dataset needs a polluted defect spec");
  }
  spec.Validate();
  if (data.shape.size() != 3) {
    throw UsageError("pollution needs CxHxW examples, dataset has " + ShapeString(data.shape));
  }
  const int channels = data.shape[0], h = data.shape[1], w = data.shape[2];
  if (spec.patch_max > h || spec.patch_max > w) {
    throw UsageError("patch_max " + std::to_string(spec.patch_max) + " exceeds image " +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  if (spec.target_class < 0 || spec.target_class >= data.class_count) {
    throw UsageError("target class outside the label range");
  }
  Dataset out = data;
  std::vector<std::size_t> train = data.Indices(Split::kTrain);
  const auto count = static_cast<std::size_t>(
      std::llround(spec.alpha * static_cast<double>(train.size())));
  Rng rng(seed);
  // Partial Fisher-Yates: the first `count` slots are the selection.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.Below(train.size() - i));
    std::swap(train[i], train[j]);
    const std::size_t ex = train[i];
    const int side = rng.Between(spec.patch_min, spec.patch_max);
    const int y0 = rng.Between(0, h - side);
    const int x0 = rng.Between(0, w - side);
    auto px = out.inputs[ex].values();
    for (int c = 0; c < channels; ++c) {
      for (int y = y0; y < y0 + side; ++y) {
        for (int x = x0; x < x0 + side; ++x) {
          px[(static_cast<std::size_t>(c) * h + y) * w + x] = 1.0f;
        }
      }
    }
    out.labels[ex] = spec.target_class;
    out.polluted[ex] = 1;
  }
  out.name = data.name + "+polluted";
  return out;
}

}  // namespace exfuzz
