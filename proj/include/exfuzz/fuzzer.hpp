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
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "exfuzz/coverage.hpp"
#include "exfuzz/dataset.hpp"
#include "exfuzz/error.hpp"
#include "exfuzz/fitness.hpp"
#include "exfuzz/network.hpp"
#include "exfuzz/rng.hpp"
#include "exfuzz/tensor.hpp"

namespace exfuzz {

struct FuzzConfig {
  int population_size = 100;
  int max_iterations = 10;  // G_k
  double c1 = 2.0;
  double c2 = 2.0;
  double omega_initial = 0.4;
  double omega_end = 0.9;
  double epsilon = 1.0;
  double linf_budget = 0.1;
  double velocity_clamp = 0.05;
  double lambda = kDefaultLambda;
  ThresholdMode threshold_mode = ThresholdMode::kNormalized;
  FitnessKind fitness_kind = FitnessKind::kExcitable;
  int shapley_samples = 30;
  bool per_layer_shapley = false;
  // Normalize Shapley values by a per-seed noise reference (see
  // ShapleyParams::reference_radius) rather than per candidate.
  bool reference_normalization = true;
  double coverage_threshold = kDefaultCoverageThreshold;
  bool random_init = true;
  bool require_correct_seed = true;
  std::uint64_t seed = 0;

  void Validate() const {
    if (population_size < 1) throw UsageError("population_size must be at least 1");
    if (max_iterations < 0) throw UsageError("max_iterations must be non-negative");
    if (!(linf_budget > 0.0 && linf_budget <= 1.0)) {
      throw UsageError("linf_budget must lie in (0, 1]");
    }
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw UsageError("epsilon must lie in [0, 1]");
    if (!(velocity_clamp > 0.0)) throw UsageError("velocity_clamp must be positive");
    if (shapley_samples < 1) throw UsageError("shapley_samples must be at least 1");
  }
};

inline nlohmann::json ToJson(const FuzzConfig& c) {
  return {{"population_size", c.population_size},
          {"max_iterations", c.max_iterations},
          {"c1", c.c1},
          {"c2", c.c2},
          {"omega_initial", c.omega_initial},
          {"omega_end", c.omega_end},
          {"epsilon", c.epsilon},
          {"linf_budget", c.linf_budget},
          {"velocity_clamp", c.velocity_clamp},
          {"lambda", c.lambda},
          {"threshold_mode", c.threshold_mode == ThresholdMode::kRaw ? "raw" : "normalized"},
          {"fitness", std::string(FitnessName(c.fitness_kind))},
          {"shapley_samples", c.shapley_samples},
          {"per_layer_shapley", c.per_layer_shapley},
          {"normalization", c.reference_normalization ? "reference" : "candidate"},
          {"coverage_threshold", c.coverage_threshold},
          {"random_init", c.random_init},
          {"require_correct_seed", c.require_correct_seed},
          {"seed", c.seed}};
}

struct Particle {
  Tensor position;
  Tensor velocity;
  Tensor best_position;
  double best_fitness = 0.0;
};

struct SwarmState {
  Tensor seed;
  Tensor lower;  // feasible box: [max(0, seed - b), min(1, seed + b)]
  Tensor upper;
  std::vector<Particle> particles;
  Tensor global_best_position;
  double global_best_fitness = 0.0;
  int iteration = 0;
  std::vector<double> fitness_history;  // g_best after init and each step
  std::size_t evaluations = 0;
};

// Uniform [0, 1) draws from an Rng; PSO code takes any such callable so the
// draws can be stubbed.
struct RngUniform {
  Rng* rng;
  double operator()() const { return rng->Uniform(); }
};

inline void FeasibleBox(const Tensor& seed, double budget, Tensor& lower, Tensor& upper) {
  lower = Tensor(seed.shape());
  upper = Tensor(seed.shape());
  for (std::size_t i = 0; i < seed.size(); ++i) {
    lower[i] = static_cast<float>(std::max(0.0, static_cast<double>(seed[i]) - budget));
    upper[i] = static_cast<float>(std::min(1.0, static_cast<double>(seed[i]) + budget));
  }
}

template <typename Fitness, typename Uniform>
SwarmState InitializeSwarm(const Tensor& seed, const FuzzConfig& cfg, Fitness&& fitness,
                           Uniform&& rand) {
  cfg.Validate();
  SwarmState st;
  st.seed = seed;
  FeasibleBox(seed, cfg.linf_budget, st.lower, st.upper);
  st.particles.resize(static_cast<std::size_t>(cfg.population_size));
  for (Particle& p : st.particles) {
    p.position = seed;
    p.velocity = Tensor(seed.shape());
    for (std::size_t i = 0; i < seed.size(); ++i) {
      if (cfg.random_init) {
        p.position[i] = static_cast<float>(st.lower[i] + (st.upper[i] - st.lower[i]) * rand());
      }
      p.velocity[i] = static_cast<float>(cfg.velocity_clamp * (2.0 * rand() - 1.0));
    }
  }
  bool first = true;
  for (Particle& p : st.particles) {
    p.best_position = p.position;
    p.best_fitness = fitness(p.position);
    ++st.evaluations;
    if (first || p.best_fitness > st.global_best_fitness) {
      st.global_best_fitness = p.best_fitness;
      st.global_best_position = p.position;
      first = false;
    }
  }
  st.fitness_history.push_back(st.global_best_fitness);
  return st;
}

inline double InertiaAt(const FuzzConfig& cfg, int g) {
  if (cfg.max_iterations <= 0) return cfg.omega_end;
  const double G = cfg.max_iterations;
  return (cfg.omega_initial - cfg.omega_end) * (G - g) / G + cfg.omega_end;
}

// One synchronous iteration: every particle moves against the previous
// g_best, then personal and global bests are updated in particle order on
// strict improvement.
template <typename Fitness, typename Uniform>
void PsoStep(SwarmState& st, const FuzzConfig& cfg, Fitness&& fitness, Uniform&& rand) {
  const double w = InertiaAt(cfg, st.iteration);
  const Tensor gbest = st.global_best_position;
  const double vmax = cfg.velocity_clamp;
  for (Particle& p : st.particles) {
    for (std::size_t i = 0; i < p.position.size(); ++i) {
      const double x = p.position[i];
      const double r1 = rand();
      const double r2 = rand();
      double v = w * p.velocity[i] + cfg.c1 * r1 * (p.best_position[i] - x) +
                 cfg.c2 * r2 * (gbest[i] - x);
      v = std::clamp(v, -vmax, vmax);
      p.velocity[i] = static_cast<float>(v);
      const double nx = std::clamp(x + static_cast<double>(p.velocity[i]),
                                   static_cast<double>(st.lower[i]),
                                   static_cast<double>(st.upper[i]));
      p.position[i] = static_cast<float>(nx);
    }
  }
  for (Particle& p : st.particles) {
    const double f = fitness(p.position);
    ++st.evaluations;
    if (f > p.best_fitness) {
      p.best_fitness = f;
      p.best_position = p.position;
    }
    if (f > st.global_best_fitness) {
      st.global_best_fitness = f;
      st.global_best_position = p.position;
    }
  }
  ++st.iteration;
  st.fitness_history.push_back(st.global_best_fitness);
}

struct TestCase {
  int seed_index = 0;
  Tensor seed_input;
  Tensor generated;
  int true_label = 0;
  int predicted_seed = 0;
  int predicted_generated = 0;
  double final_fitness = 0.0;
  int iterations_used = 0;
  std::string fitness_kind;
  std::vector<double> fitness_history;
  std::size_t evaluations = 0;
  bool intermediate = false;
  int iteration = 0;  // iteration that produced the input

  bool is_error() const { return predicted_generated != true_label; }
};

// Fitness callable for one seed.
inline std::function<double(const Tensor&)> MakeFitness(const Network& model,
                                                        const Tensor& seed, int label,
                                                        const FuzzConfig& cfg,
                                                        const CoverageProfile* profile) {
  ShapleyParams sp;
  sp.samples = cfg.shapley_samples;
  sp.seed = MixSeed(cfg.seed, 101);
  sp.lambda = cfg.lambda;
  sp.mode = cfg.threshold_mode;
  sp.per_layer = cfg.per_layer_shapley;
  sp.reference_radius = cfg.reference_normalization ? cfg.linf_budget : 0.0;
  switch (cfg.fitness_kind) {
    case FitnessKind::kExcitable: {
      auto f = std::make_shared<ExcitableFitness>(model, seed, label, sp);
      return [f](const Tensor& x) { return (*f)(x); };
    }
    case FitnessKind::kExcitableCached: {
      auto f = std::make_shared<CachedExcitableFitness>(model, seed, label, sp,
                                                        MixSeed(cfg.seed, 102));
      return [f](const Tensor& x) { return (*f)(x); };
    }
    case FitnessKind::kNeuronCoverage:
    case FitnessKind::kSnac: {
      auto f = std::make_shared<CoverageFitness>(model, cfg.fitness_kind,
                                                 cfg.coverage_threshold, profile);
      return [f](const Tensor& x) { return (*f)(x); };
    }
  }
  throw UsageError("unknown fitness kind");
}

struct GenerateResult {
  TestCase final_case;
  std::vector<TestCase> intermediates;  // global best after each iteration
};

namespace detail {

inline TestCase MakeCase(const Network& model, const Tensor& seed, int label,
                         int predicted_seed, const Tensor& x, double fitness,
                         const FuzzConfig& cfg) {
  TestCase t;
  t.seed_input = seed;
  t.generated = x;
  t.true_label = label;
  t.predicted_seed = predicted_seed;
  t.predicted_generated = Predict(model, x);
  t.final_fitness = fitness;
  t.fitness_kind = std::string(FitnessName(cfg.fitness_kind));
  return t;
}

inline int CheckSeed(const Network& model, const Tensor& seed, int label,
                     const FuzzConfig& cfg) {
  cfg.Validate();
  const int pred = Predict(model, seed);
  if (cfg.require_correct_seed && pred != label) {
    throw UsageError("seed is misclassified (label " + std::to_string(label) +
                     ", predicted " + std::to_string(pred) + ")");
  }
  return pred;
}

}  // namespace detail

// PSO over inputs in the L-inf ball around the seed, until
// g_best > epsilon or G_k iterations.
template <typename Fitness>
GenerateResult GenerateWith(const Network& model, const Tensor& seed, int label,
                            const FuzzConfig& cfg, Fitness&& fitness) {
  const int pred = detail::CheckSeed(model, seed, label, cfg);
  Rng rng(MixSeed(cfg.seed, 1));
  RngUniform rand{&rng};
  SwarmState st = InitializeSwarm(seed, cfg, fitness, rand);
  GenerateResult out;
  while (st.iteration < cfg.max_iterations) {
    PsoStep(st, cfg, fitness, rand);
    TestCase t = detail::MakeCase(model, seed, label, pred, st.global_best_position,
                                  st.global_best_fitness, cfg);
    t.intermediate = true;
    t.iteration = st.iteration;
    out.intermediates.push_back(std::move(t));
    if (st.global_best_fitness > cfg.epsilon) break;
  }
  out.final_case = detail::MakeCase(model, seed, label, pred, st.global_best_position,
                                    st.global_best_fitness, cfg);
  out.final_case.iterations_used = st.iteration;
  out.final_case.iteration = st.iteration;
  out.final_case.fitness_history = st.fitness_history;
  out.final_case.evaluations = st.evaluations;
  for (TestCase& t : out.intermediates) {
    t.iterations_used = st.iteration;
    t.evaluations = st.evaluations;
  }
  return out;
}

inline GenerateResult GenerateDetailed(const Network& model, const Tensor& seed, int label,
                                       const FuzzConfig& cfg,
                                       const CoverageProfile* profile = nullptr) {
  detail::CheckSeed(model, seed, label, cfg);
  return GenerateWith(model, seed, label, cfg, MakeFitness(model, seed, label, cfg, profile));
}

inline TestCase Generate(const Network& model, const Tensor& seed, int label,
                         const FuzzConfig& cfg, const CoverageProfile* profile = nullptr) {
  return GenerateDetailed(model, seed, label, cfg, profile).final_case;
}

// Unguided baseline with the PSO's candidate budget and output structure:
// population_size uniform draws from the feasible box per iteration
// (iteration 0 included). Each iteration reports its first misclassified
// draw, or its last draw when none is; the final case is the last
// misclassified draw overall, or the last draw.
inline GenerateResult GenerateRandomNoise(const Network& model, const Tensor& seed, int label,
                                          const FuzzConfig& cfg) {
  const int pred = detail::CheckSeed(model, seed, label, cfg);
  Rng rng(MixSeed(cfg.seed, 2));
  Tensor lower, upper;
  FeasibleBox(seed, cfg.linf_budget, lower, upper);
  GenerateResult out;
  Tensor x(seed.shape());
  Tensor last_error;
  std::size_t evaluations = 0;
  for (int g = 0; g <= cfg.max_iterations; ++g) {
    Tensor pick;
    for (int p = 0; p < cfg.population_size; ++p) {
      for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = static_cast<float>(lower[i] + (upper[i] - lower[i]) * rng.Uniform());
      }
      ++evaluations;
      if (pick.size() == 0 && Predict(model, x) != label) pick = x;
    }
    if (pick.size() != 0) last_error = pick;
    if (g == 0) continue;
    TestCase t = detail::MakeCase(model, seed, label, pred, pick.size() ? pick : x, 0.0, cfg);
    t.fitness_kind = "random";
    t.intermediate = true;
    t.iteration = g;
    t.iterations_used = cfg.max_iterations;
    t.evaluations = evaluations;
    out.intermediates.push_back(std::move(t));
  }
  out.final_case =
      detail::MakeCase(model, seed, label, pred, last_error.size() ? last_error : x, 0.0, cfg);
  out.final_case.fitness_kind = "random";
  out.final_case.iterations_used = cfg.max_iterations;
  out.final_case.iteration = cfg.max_iterations;
  out.final_case.evaluations = evaluations;
  return out;
}

struct SeedFailure {
  int seed_index = 0;
  std::string message;
};

struct Suite {
  std::vector<TestCase> cases;
  std::vector<SeedFailure> failures;
  std::size_t seed_count = 0;
};

struct SeedInput {
  Tensor input;
  int label = 0;
};

enum class Generator { kPso, kRandomNoise };

// Runs one generation per seed with seed-specific child seeds. With
// `collect_intermediates`, misclassifying per-iteration global bests are
// kept alongside the final case.
inline Suite GenerateSuite(const Network& model, const std::vector<SeedInput>& seeds,
                           const FuzzConfig& cfg, bool collect_intermediates,
                           const CoverageProfile* profile = nullptr,
                           Generator generator = Generator::kPso) {
  if (seeds.empty()) throw UsageError("generate_suite needs at least one seed");
  cfg.Validate();
  Suite suite;
  suite.seed_count = seeds.size();
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    FuzzConfig c = cfg;
    c.seed = MixSeed(cfg.seed, 1000 + s);
    try {
      GenerateResult r = generator == Generator::kPso
                             ? GenerateDetailed(model, seeds[s].input, seeds[s].label, c, profile)
                             : GenerateRandomNoise(model, seeds[s].input, seeds[s].label, c);
      if (collect_intermediates) {
        for (TestCase& t : r.intermediates) {
          if (!t.is_error()) continue;
          t.seed_index = static_cast<int>(s);
          suite.cases.push_back(std::move(t));
        }
      }
      r.final_case.seed_index = static_cast<int>(s);
      suite.cases.push_back(std::move(r.final_case));
    } catch (const Error& e) {
      suite.failures.push_back({static_cast<int>(s), e.what()});
    }
  }
  return suite;
}

inline nlohmann::json ToJson(const TestCase& t) {
  return {{"seed_index", t.seed_index},
          {"true_label", t.true_label},
          {"predicted_seed", t.predicted_seed},
          {"predicted_generated", t.predicted_generated},
          {"is_error", t.is_error()},
          {"final_fitness", t.final_fitness},
          {"iterations_used", t.iterations_used},
          {"iteration", t.iteration},
          {"intermediate", t.intermediate},
          {"fitness_kind", t.fitness_kind},
          {"fitness_history", t.fitness_history},
          {"evaluations", t.evaluations},
          {"linf", LinfDistance(t.generated.values(), t.seed_input.values())},
          {"generated", std::vector<float>(t.generated.values().begin(), t.generated.values().end())}};
}

// Generated inputs as dataset CSV rows (label = the seed's true label).
inline void WriteSuiteCsv(std::ostream& out, const Suite& suite) {
  for (const TestCase& t : suite.cases) WriteCsvRow(out, t.true_label, t.generated.values());
}

}  // namespace exfuzz
