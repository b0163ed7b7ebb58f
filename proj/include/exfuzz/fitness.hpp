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
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "exfuzz/attribution.hpp"
#include "exfuzz/coalition.hpp"
#include "exfuzz/coverage.hpp"
#include "exfuzz/error.hpp"
#include "exfuzz/network.hpp"
#include "exfuzz/rng.hpp"

namespace exfuzz {

enum class FitnessKind { kExcitable, kExcitableCached, kNeuronCoverage, kSnac };

inline std::string_view FitnessName(FitnessKind k) {
  switch (k) {
    case FitnessKind::kExcitable: return "excitable";
    case FitnessKind::kExcitableCached: return "excitable_cached";
    case FitnessKind::kNeuronCoverage: return "nc";
    case FitnessKind::kSnac: return "snac";
  }
  return "?";
}

inline FitnessKind ParseFitness(std::string_view s) {
  if (s == "excitable") return FitnessKind::kExcitable;
  if (s == "excitable_cached" || s == "cached") return FitnessKind::kExcitableCached;
  if (s == "nc" || s == "neuron_coverage") return FitnessKind::kNeuronCoverage;
  if (s == "snac") return FitnessKind::kSnac;
  throw UsageError("unknown fitness '" + std::string(s) + "' (excitable, cached, nc, snac)");
}

struct ShapleyParams {
  int samples = 30;
  std::uint64_t seed = 0;
  double lambda = kDefaultLambda;
  ThresholdMode mode = ThresholdMode::kNormalized;
  std::vector<NeuronId> scope;  // empty: every neuron of the model
  // Play one game per layer (other layers stay enabled) and normalize each
  // layer's values separately.
  bool per_layer = false;
  // When positive, normalized values are divided by a scale fixed per seed:
  // the mean max |psi| over `reference_draws` uniform candidates from the
  // L-inf box of this radius, instead of each candidate's own max |psi|.
  double reference_radius = 0.0;
  int reference_draws = 8;
};

// Fitness of a candidate: the fraction of all neurons that are excitable
// under dx = candidate - seed, from sampled Shapley values.
//
// The permutations are fixed at construction, so the seed-side losses along
// each permutation are computed once and reused for every candidate. Values
// are identical to ShapleySampled with the same permutation seed.
class ExcitableFitness {
 public:
  ExcitableFitness(const Network& model, Tensor seed, int label, ShapleyParams params)
      : model_(&model),
        seed_(std::move(seed)),
        label_(label),
        params_(std::move(params)),
        eval_(model, seed_.values()) {
    if (params_.samples < 1) throw UsageError("sample_count must be at least 1");
    UtilityContext::Single(model, seed_, Tensor(seed_.shape()), label).Validate();
    if (params_.scope.empty()) params_.scope = model.neurons();
    if (params_.per_layer) {
      std::map<int, std::vector<NeuronId>> by_layer;
      for (NeuronId n : params_.scope) by_layer[n.layer].push_back(n);
      std::uint64_t stream = 0;
      for (auto& [layer, ns] : by_layer) {
        AddGame(std::move(ns), MixSeed(params_.seed, stream++));
      }
    } else {
      AddGame(params_.scope, params_.seed);
    }
    if (params_.reference_radius > 0.0) SetReferenceScale();
  }

  const std::vector<NeuronId>& scope() const { return params_.scope; }
  const ShapleyParams& params() const { return params_; }

  // One report per game (a single report unless per_layer is set).
  std::vector<ShapleyReport> Reports(const Tensor& candidate) {
    if (candidate.shape() != seed_.shape()) {
      throw DataError("candidate shape differs from the seed shape");
    }
    Tensor delta(seed_.shape());
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = candidate[i] - seed_[i];
    const Tensor x = UtilityContext::Single(*model_, seed_, delta, label_).Perturbed(0);
    std::vector<ShapleyReport> out;
    for (Game& g : games_) {
      const std::size_t k = g.idx.size();
      std::vector<double> acc(k, 0.0);
      double prev = 0.0, empty = 0.0;
      Walk(g, x.values(), [&](std::size_t s, std::size_t t, std::size_t pos, double loss) {
        const double cur = loss - g.base[s][t];
        if (t == 0) {
          empty = cur;
        } else {
          acc[pos] += cur - prev;
        }
        prev = cur;
      });
      ShapleyReport r;
      r.neurons = g.scope;
      r.values.resize(k);
      for (std::size_t i = 0; i < k; ++i) r.values[i] = acc[i] / params_.samples;
      r.estimator = Estimator::kPermutationSampled;
      r.sample_count = params_.samples;
      r.seed = g.seed;
      r.full_utility = prev;
      r.empty_utility = empty;
      r.Normalize();
      if (g.reference > 0.0) {
        for (std::size_t i = 0; i < k; ++i) r.normalized[i] = r.values[i] / g.reference;
      }
      out.push_back(std::move(r));
    }
    return out;
  }

  ShapleyReport Report(const Tensor& candidate) { return Reports(candidate).front(); }

  // Per-game reference scales (0 when candidates normalize themselves).
  std::vector<double> reference_scales() const {
    std::vector<double> out;
    for (const Game& g : games_) out.push_back(g.reference);
    return out;
  }

  double operator()(const Tensor& candidate) {
    int count = 0;
    for (const ShapleyReport& r : Reports(candidate)) {
      count += static_cast<int>(SelectExcitable(r, params_.lambda, params_.mode).size());
    }
    return static_cast<double>(count) / static_cast<double>(model_->neuron_count());
  }

 private:
  struct Game {
    std::vector<NeuronId> scope;
    std::uint64_t seed = 0;
    std::vector<std::size_t> idx;
    std::vector<char> start;
    std::vector<std::vector<std::size_t>> orders;
    std::vector<std::vector<double>> base;
    double reference = 0.0;
  };

  void SetReferenceScale() {
    if (params_.reference_draws < 1) throw UsageError("reference_draws must be at least 1");
    Rng rng(MixSeed(params_.seed, 0x7e5));
    std::vector<double> scale(games_.size(), 0.0);
    Tensor x(seed_.shape());
    for (int d = 0; d < params_.reference_draws; ++d) {
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double lo = std::max(0.0, seed_[i] - params_.reference_radius);
        const double hi = std::min(1.0, seed_[i] + params_.reference_radius);
        x[i] = static_cast<float>(lo + (hi - lo) * rng.Uniform());
      }
      const std::vector<ShapleyReport> rs = Reports(x);
      for (std::size_t g = 0; g < rs.size(); ++g) {
        double m = 0.0;
        for (double v : rs[g].values) m = std::max(m, std::abs(v));
        scale[g] += m / params_.reference_draws;
      }
    }
    for (std::size_t g = 0; g < games_.size(); ++g) games_[g].reference = scale[g];
  }

  void AddGame(std::vector<NeuronId> scope, std::uint64_t seed) {
    Game g;
    g.scope = std::move(scope);
    g.seed = seed;
    g.idx = detail::ScopeIndices(*model_, g.scope);
    const std::size_t k = g.idx.size();
    g.start.assign(model_->neuron_count(), 1);
    for (std::size_t i : g.idx) g.start[i] = 0;
    Rng rng(seed);
    g.orders.assign(static_cast<std::size_t>(params_.samples), std::vector<std::size_t>(k));
    for (auto& order : g.orders) {
      for (std::size_t i = 0; i < k; ++i) order[i] = i;
      rng.Shuffle(std::span<std::size_t>(order));
    }
    g.base.assign(g.orders.size(), std::vector<double>(k + 1));
    Walk(g, seed_.values(), [&](std::size_t s, std::size_t t, std::size_t, double loss) {
      g.base[s][t] = loss;
    });
    games_.push_back(std::move(g));
  }

  // Visits (permutation, step, scope position, loss) along every permutation;
  // step 0 is the fully ablated scope.
  template <typename Visit>
  void Walk(const Game& g, std::span<const float> input, Visit&& visit) {
    eval_.SetInput(input);
    eval_.Assign(g.start);
    eval_.Save(snapshot_);
    for (std::size_t s = 0; s < g.orders.size(); ++s) {
      if (s > 0) eval_.Restore(snapshot_);
      visit(s, 0, 0, eval_.Loss(label_));
      std::size_t t = 1;
      for (std::size_t pos : g.orders[s]) {
        eval_.SetEnabled(g.idx[pos], true);
        visit(s, t++, pos, eval_.Loss(label_));
      }
    }
  }

  const Network* model_;
  Tensor seed_;
  int label_;
  ShapleyParams params_;
  CoalitionEvaluator eval_;
  CoalitionEvaluator::Snapshot snapshot_;
  std::vector<Game> games_;
};

// Cached variant: the excitable set is fixed once from a noise probe of the
// seed; a candidate's fitness is the fraction of that set it activates
// (summary > 0).
class CachedExcitableFitness {
 public:
  CachedExcitableFitness(const Network& model, const Tensor& seed, int label,
                         const ShapleyParams& params, std::uint64_t probe_seed)
      : model_(&model) {
    const UtilityContext ctx = UtilityContext::NoiseProbe(model, seed, label, probe_seed);
    const std::vector<NeuronId> scope =
        params.scope.empty() ? model.neurons() : params.scope;
    const ShapleyReport r = ShapleySampled(ctx, scope, params.samples, params.seed);
    set_ = SelectExcitable(r, params.lambda, params.mode);
  }

  const ExcitableSet& excitable() const { return set_; }

  double operator()(const Tensor& candidate) const {
    if (set_.neurons.empty()) return 0.0;
    const ActivationTrace trace = Forward(*model_, candidate).trace;
    std::size_t on = 0;
    for (NeuronId n : set_.neurons) on += trace.at(n) > 0.0 ? 1 : 0;
    return static_cast<double>(on) / static_cast<double>(set_.neurons.size());
  }

 private:
  const Network* model_;
  ExcitableSet set_;
};

class CoverageFitness {
 public:
  CoverageFitness(const Network& model, FitnessKind kind, double threshold,
                  const CoverageProfile* profile)
      : model_(&model), kind_(kind), threshold_(threshold), profile_(profile) {
    if (kind == FitnessKind::kSnac && (profile == nullptr || profile->corpus_size == 0)) {
      throw UsageError("SNAC fitness needs a coverage profile");
    }
  }

  double operator()(const Tensor& candidate) const {
    const ActivationTrace trace = Forward(*model_, candidate).trace;
    return kind_ == FitnessKind::kSnac ? StrongActivationCoverage(trace, *profile_)
                                       : NeuronCoverage(trace, threshold_);
  }

 private:
  const Network* model_;
  FitnessKind kind_;
  double threshold_;
  const CoverageProfile* profile_;
};

}  // namespace exfuzz
