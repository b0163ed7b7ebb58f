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
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "exfuzz/coalition.hpp"
#include "exfuzz/error.hpp"
#include "exfuzz/network.hpp"
#include "exfuzz/rng.hpp"
#include "exfuzz/tensor.hpp"

namespace exfuzz {

// Largest scope shapley_exact will enumerate (2^20 coalitions).
inline constexpr std::size_t kMaxExactScope = 20;

// The cooperative game over neurons: utility of a coalition is the loss
// change L(x + dx, y) - L(x, y) with every neuron outside the coalition
// ablated. With several perturbation draws the utility is their mean.
struct UtilityContext {
  const Network* model = nullptr;
  Tensor seed_input;
  std::vector<Tensor> perturbations;
  int label = 0;

  static UtilityContext Single(const Network& model, Tensor seed, Tensor delta,
                               int label) {
    UtilityContext ctx;
    ctx.model = &model;
    ctx.seed_input = std::move(seed);
    ctx.perturbations.push_back(std::move(delta));
    ctx.label = label;
    ctx.Validate();
    return ctx;
  }

  // Stochastic probing: `draws` uniform noise perturbations in
  // [-amplitude, amplitude] per element.
  static UtilityContext NoiseProbe(const Network& model, Tensor seed, int label,
                                   std::uint64_t noise_seed,
                                   double amplitude = 0.05, int draws = 5) {
    if (draws < 1) throw UsageError("noise probe needs at least one draw");
    UtilityContext ctx;
    ctx.model = &model;
    ctx.label = label;
    Rng rng(noise_seed);
    for (int d = 0; d < draws; ++d) {
      Tensor delta(seed.shape());
      for (float& v : delta.values()) v = static_cast<float>(rng.Uniform(-amplitude, amplitude));
      ctx.perturbations.push_back(std::move(delta));
    }
    ctx.seed_input = std::move(seed);
    ctx.Validate();
    return ctx;
  }

  void Validate() const {
    if (model == nullptr) throw UsageError("utility context without a model");
    if (seed_input.shape() != model->input_shape()) {
      throw DataError("seed shape " + ShapeString(seed_input.shape()) +
                      " does not match model input " +
                      ShapeString(model->input_shape()));
    }
    if (perturbations.empty()) throw UsageError("utility context has no perturbation");
    for (const Tensor& d : perturbations) {
      if (d.shape() != seed_input.shape()) {
        throw DataError("perturbation shape differs from the seed shape");
      }
    }
    if (label < 0 || label >= model->class_count()) {
      throw UsageError("label " + std::to_string(label) + " out of range");
    }
  }

  Tensor Perturbed(std::size_t draw) const {
    Tensor x = seed_input;
    const Tensor& d = perturbations[draw];
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += d[i];
    return x;
  }
};

enum class Estimator { kExact, kPermutationSampled };

inline std::string_view EstimatorName(Estimator e) {
  return e == Estimator::kExact ? "exact" : "permutation_sampled";
}

struct ShapleyReport {
  std::vector<NeuronId> neurons;
  std::vector<double> values;
  std::vector<double> normalized;
  Estimator estimator = Estimator::kExact;
  int sample_count = 0;
  std::uint64_t seed = 0;
  double full_utility = 0.0;   // utility of the whole scope
  double empty_utility = 0.0;  // utility with the whole scope ablated

  // values / max|values|, or all zero when every value is zero.
  void Normalize() {
    double m = 0.0;
    for (double v : values) m = std::max(m, std::abs(v));
    normalized.assign(values.size(), 0.0);
    if (m > 0.0) {
      for (std::size_t i = 0; i < values.size(); ++i) normalized[i] = values[i] / m;
    }
  }

  double value(NeuronId n) const {
    for (std::size_t i = 0; i < neurons.size(); ++i) {
      if (neurons[i] == n) return values[i];
    }
    throw UsageError("neuron " + ToString(n) + " not in report");
  }
};

inline nlohmann::json ToJson(const ShapleyReport& r) {
  nlohmann::json j;
  j["estimator"] = EstimatorName(r.estimator);
  j["sample_count"] = r.sample_count;
  j["seed"] = r.seed;
  j["full_utility"] = r.full_utility;
  j["empty_utility"] = r.empty_utility;
  double sum = 0.0;
  for (double v : r.values) sum += v;
  j["sum_psi"] = sum;
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < r.neurons.size(); ++i) {
    rows.push_back({{"layer", r.neurons[i].layer},
                    {"unit", r.neurons[i].unit},
                    {"psi", r.values[i]},
                    {"normalized", r.normalized.empty() ? 0.0 : r.normalized[i]}});
  }
  j["neurons"] = std::move(rows);
  return j;
}

namespace detail {

// Neuron indices of a scope, validated and deduplicated in order.
inline std::vector<std::size_t> ScopeIndices(const Network& model,
                                             std::span<const NeuronId> scope) {
  std::vector<std::size_t> idx;
  std::set<std::size_t> seen;
  for (NeuronId n : scope) {
    const std::size_t i = model.NeuronIndex(n);
    if (!seen.insert(i).second) {
      throw UsageError("scope lists neuron " + ToString(n) + " twice");
    }
    idx.push_back(i);
  }
  return idx;
}

// Evaluates the game for a set of enabled flags, fully recomputing every
// evaluator so the value depends on the flags alone.
class GameEvaluator {
 public:
  explicit GameEvaluator(const UtilityContext& ctx) : ctx_(ctx) {
    ctx.Validate();
    base_.emplace_back(*ctx.model, ctx.seed_input.values());
    for (std::size_t d = 0; d < ctx.perturbations.size(); ++d) {
      const Tensor x = ctx.Perturbed(d);
      pert_.emplace_back(*ctx.model, x.values());
    }
  }

  double Assign(std::span<const char> enabled) {
    base_[0].Assign(enabled);
    for (auto& e : pert_) e.Assign(enabled);
    return Current();
  }

  double Toggle(std::size_t neuron_index, bool on) {
    base_[0].SetEnabled(neuron_index, on);
    for (auto& e : pert_) e.SetEnabled(neuron_index, on);
    return Current();
  }

  double Current() const {
    const double base = base_[0].Loss(ctx_.label);
    double acc = 0.0;
    for (const auto& e : pert_) acc += e.Loss(ctx_.label) - base;
    return acc / static_cast<double>(pert_.size());
  }

  void Save(std::vector<CoalitionEvaluator::Snapshot>& s) const {
    s.resize(1 + pert_.size());
    base_[0].Save(s[0]);
    for (std::size_t i = 0; i < pert_.size(); ++i) pert_[i].Save(s[i + 1]);
  }
  void Restore(const std::vector<CoalitionEvaluator::Snapshot>& s) {
    base_[0].Restore(s[0]);
    for (std::size_t i = 0; i < pert_.size(); ++i) pert_[i].Restore(s[i + 1]);
  }

 private:
  const UtilityContext& ctx_;
  std::vector<CoalitionEvaluator> base_;
  std::vector<CoalitionEvaluator> pert_;
};

}  // namespace detail

// Utility of a coalition given over all neurons of the model.
inline double Utility(const UtilityContext& ctx,
                      const std::set<NeuronId>& coalition) {
  ctx.Validate();
  std::vector<char> enabled(ctx.model->neuron_count(), 0);
  for (NeuronId n : coalition) enabled[ctx.model->NeuronIndex(n)] = 1;
  detail::GameEvaluator game(ctx);
  return game.Assign(enabled);
}

// m(n, s) = utility(s) - utility(s \ {n}).
inline double MarginalContribution(const UtilityContext& ctx, NeuronId n,
                                   const std::set<NeuronId>& coalition) {
  if (coalition.count(n) == 0) {
    throw UsageError("marginal contribution: neuron " + ToString(n) +
                     " is not in the coalition");
  }
  std::set<NeuronId> without = coalition;
  without.erase(n);
  return Utility(ctx, coalition) - Utility(ctx, without);
}

// Exact Shapley values over `scope` by enumerating every subset. Neurons
// outside the scope stay enabled throughout.
inline ShapleyReport ShapleyExact(const UtilityContext& ctx,
                                  std::span<const NeuronId> scope) {
  if (scope.size() > kMaxExactScope) {
    throw UsageError("exact Shapley enumerates at most " +
                     std::to_string(kMaxExactScope) + " neurons (scope has " +
                     std::to_string(scope.size()) +
                     "); use the permutation-sampled estimator");
  }
  const Network& model = *ctx.model;
  const auto idx = detail::ScopeIndices(model, scope);
  const std::size_t k = idx.size();
  detail::GameEvaluator game(ctx);

  std::vector<char> enabled(model.neuron_count(), 1);
  const std::size_t subsets = std::size_t{1} << k;
  std::vector<double> u(subsets);
  for (std::size_t mask = 0; mask < subsets; ++mask) {
    for (std::size_t i = 0; i < k; ++i) enabled[idx[i]] = (mask >> i) & 1U;
    u[mask] = game.Assign(enabled);
  }

  // weight[s] = (s-1)! (k-s)! / k! = 1 / (k * C(k-1, s-1)).
  std::vector<double> weight(k + 1, 0.0);
  for (std::size_t s = 1; s <= k; ++s) {
    double c = 1.0;
    for (std::size_t t = 1; t <= s - 1; ++t) {
      c = c * static_cast<double>(k - 1 - (s - 1) + t) / static_cast<double>(t);
    }
    weight[s] = 1.0 / (static_cast<double>(k) * c);
  }

  ShapleyReport r;
  r.neurons.assign(scope.begin(), scope.end());
  r.values.assign(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t bit = std::size_t{1} << i;
    double acc = 0.0;
    for (std::size_t mask = 0; mask < subsets; ++mask) {
      if (!(mask & bit)) continue;
      const double m = u[mask] - u[mask ^ bit];
      if (m != 0.0) {
        acc += weight[static_cast<std::size_t>(std::popcount(mask))] * m;
      }
    }
    r.values[i] = acc;
  }
  r.estimator = Estimator::kExact;
  r.full_utility = u[subsets - 1];
  r.empty_utility = u[0];
  r.Normalize();
  return r;
}

// Monte Carlo permutation estimator: for each uniformly drawn ordering of the
// scope, neurons are enabled one by one and each is credited with the change
// in utility it causes. Unbiased for the exact values; deterministic in seed.
inline ShapleyReport ShapleySampled(const UtilityContext& ctx,
                                    std::span<const NeuronId> scope,
                                    int sample_count, std::uint64_t seed) {
  if (sample_count < 1) throw UsageError("sample_count must be at least 1");
  const Network& model = *ctx.model;
  const auto idx = detail::ScopeIndices(model, scope);
  const std::size_t k = idx.size();
  detail::GameEvaluator game(ctx);

  std::vector<char> enabled(model.neuron_count(), 1);
  for (std::size_t i : idx) enabled[i] = 0;
  const double empty = game.Assign(enabled);
  std::vector<CoalitionEvaluator::Snapshot> start;
  game.Save(start);

  Rng rng(seed);
  std::vector<std::size_t> order(k);
  std::vector<double> acc(k, 0.0);
  double full = empty;
  for (int s = 0; s < sample_count; ++s) {
    for (std::size_t i = 0; i < k; ++i) order[i] = i;
    rng.Shuffle(std::span<std::size_t>(order));
    if (s > 0) game.Restore(start);
    double prev = empty;
    for (std::size_t pos : order) {
      const double cur = game.Toggle(idx[pos], true);
      acc[pos] += cur - prev;
      prev = cur;
    }
    full = prev;
  }

  ShapleyReport r;
  r.neurons.assign(scope.begin(), scope.end());
  r.values.resize(k);
  for (std::size_t i = 0; i < k; ++i) r.values[i] = acc[i] / sample_count;
  r.estimator = Estimator::kPermutationSampled;
  r.sample_count = sample_count;
  r.seed = seed;
  r.full_utility = full;
  r.empty_utility = empty;
  r.Normalize();
  return r;
}

enum class ThresholdMode { kNormalized, kRaw };

struct ExcitableSet {
  std::vector<NeuronId> neurons;
  double lambda = 0.5;
  ThresholdMode mode = ThresholdMode::kNormalized;
  std::map<int, int> per_layer_counts;

  std::size_t size() const { return neurons.size(); }
  bool contains(NeuronId n) const {
    return std::find(neurons.begin(), neurons.end(), n) != neurons.end();
  }
};

inline constexpr double kDefaultLambda = 0.5;

// Neurons whose Shapley value exceeds lambda: the normalized value by
// default (lambda in [0, 1]), the raw value in kRaw mode.
inline ExcitableSet SelectExcitable(const ShapleyReport& report,
                                    double lambda = kDefaultLambda,
                                    ThresholdMode mode = ThresholdMode::kNormalized) {
  if (mode == ThresholdMode::kNormalized && !(lambda >= 0.0 && lambda <= 1.0)) {
    throw UsageError("normalized lambda must lie in [0, 1]");
  }
  ExcitableSet set;
  set.lambda = lambda;
  set.mode = mode;
  const std::vector<double>& v =
      mode == ThresholdMode::kNormalized ? report.normalized : report.values;
  if (v.size() != report.neurons.size()) {
    throw UsageError("report is not normalized");
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] > lambda) {
      set.neurons.push_back(report.neurons[i]);
      ++set.per_layer_counts[report.neurons[i].layer];
    }
  }
  return set;
}

// Fraction of `total` neurons that are excitable: sum over layers of the
// excitable count divided by the neuron count.
inline double ExcitableRatio(const ExcitableSet& set, std::size_t total) {
  if (total == 0) return 0.0;
  int count = 0;
  for (const auto& [layer, c] : set.per_layer_counts) count += c;
  return static_cast<double>(count) / static_cast<double>(total);
}

}  // namespace exfuzz
