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

#include <algorithm>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "exfuzz/error.hpp"
#include "exfuzz/network.hpp"

namespace exfuzz {

// Per-neuron [low, high] range of activation summaries over a corpus.
struct CoverageProfile {
  std::vector<NeuronId> neurons;
  std::vector<double> low;
  std::vector<double> high;
  std::size_t corpus_size = 0;

  void Extend(const ActivationTrace& trace) {
    if (corpus_size == 0) {
      neurons = trace.neurons;
      low = trace.values;
      high = trace.values;
    } else {
      if (trace.neurons != neurons) throw UsageError("trace does not match the profile");
      for (std::size_t i = 0; i < low.size(); ++i) {
        low[i] = std::min(low[i], trace.values[i]);
        high[i] = std::max(high[i], trace.values[i]);
      }
    }
    ++corpus_size;
  }
};

inline constexpr std::size_t kDefaultProfileCorpus = 1000;

inline CoverageProfile BuildProfile(const Network& model, std::span<const Tensor> corpus) {
  if (corpus.empty()) throw UsageError("coverage profile needs a nonempty corpus");
  CoverageProfile p;
  for (const Tensor& x : corpus) p.Extend(Forward(model, x).trace);
  return p;
}

inline nlohmann::json ToJson(const CoverageProfile& p) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < p.neurons.size(); ++i) {
    rows.push_back({{"neuron", ToString(p.neurons[i])}, {"low", p.low[i]}, {"high", p.high[i]}});
  }
  return {{"corpus_size", p.corpus_size}, {"neurons", rows}};
}

inline constexpr double kDefaultCoverageThreshold = 0.5;

// Fraction of neurons whose summary, min-max scaled within its layer,
// exceeds t. A layer with a constant summary scales to 0.
inline double NeuronCoverage(const ActivationTrace& trace,
                             double t = kDefaultCoverageThreshold) {
  const std::size_t n = trace.neurons.size();
  if (n == 0) return 0.0;
  std::size_t covered = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    double lo = trace.values[i], hi = trace.values[i];
    while (j < n && trace.neurons[j].layer == trace.neurons[i].layer) {
      lo = std::min(lo, trace.values[j]);
      hi = std::max(hi, trace.values[j]);
      ++j;
    }
    if (hi > lo) {
      for (std::size_t k = i; k < j; ++k) {
        if ((trace.values[k] - lo) / (hi - lo) > t) ++covered;
      }
    }
    i = j;
  }
  return static_cast<double>(covered) / static_cast<double>(n);
}

// Fraction of neurons whose summary exceeds the profile's upper bound.
inline double StrongActivationCoverage(const ActivationTrace& trace,
                                       const CoverageProfile& profile) {
  if (profile.corpus_size == 0) throw UsageError("SNAC needs a coverage profile");
  if (trace.neurons != profile.neurons) throw UsageError("trace does not match the profile");
  if (trace.neurons.empty()) return 0.0;
  std::size_t above = 0;
  for (std::size_t i = 0; i < trace.values.size(); ++i) {
    if (trace.values[i] > profile.high[i]) ++above;
  }
  return static_cast<double>(above) / static_cast<double>(trace.values.size());
}

}  // namespace exfuzz
