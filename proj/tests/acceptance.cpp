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

// Acceptance checks 1-12. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. `acceptance 3 5` runs a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "exfuzz/exfuzz.hpp"
#include "reference.hpp"

namespace exfuzz {
namespace {

using namespace exfuzz::testing;

// ---- pinned tolerances and sizes ----------------------------------------------

constexpr double kAxiomTol = 1e-9;
constexpr int kAxiomNets = 10;
constexpr int kConvergeTrials = 20;
constexpr int kConvergePerms = 5000;
constexpr double kConvergeTol = 0.05;  // of max |psi|
constexpr int kGradModels = 10;
constexpr int kGradCoords = 50;
constexpr double kGradTol = 1e-3;
constexpr int kPsoRuns = 50;
constexpr double kBoxSlack = 1e-6;  // float rounding of the clamped box
constexpr int kSeeds = 100;
constexpr int kCompareIterations = 20;
constexpr double kEffectRatio = 1.1;
constexpr double kPollutedRatio = 2.0;
constexpr int kRepeats = 5;
constexpr int kRepeatsNeeded = 4;
constexpr double kAsrRelativeDrop = 0.20;
constexpr double kAccuracyDropMax = 0.02;
constexpr int kCleverProbes = 20;
constexpr double kLinearCleverTol = 0.05;
constexpr double kBisectionSlack = 1.05;

const std::string kDigits = std::string(EXFUZZ_DATA_DIR) + "/digits.csv";

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string Fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const Dataset& Digits() {
  static const Dataset d = LoadCsvDigits(kDigits);
  return d;
}

Network TrainDigits(const std::string& arch, const DefectSpec& spec, std::uint64_t seed) {
  const Dataset& d = Digits();
  return TrainModel(d, ArchitectureLayers(arch, d.shape, d.class_count), spec, seed);
}

// First `n` test examples every model classifies correctly.
std::vector<SeedInput> CommonSeeds(const std::vector<const Network*>& models, int n) {
  const auto [x, y] = Digits().Part(Split::kTest);
  std::vector<SeedInput> out;
  for (std::size_t i : CommonCorrect(models, x, y, static_cast<std::size_t>(n))) {
    out.push_back({x[i], y[i]});
  }
  return out;
}

FuzzConfig CompareConfig(std::uint64_t seed) {
  FuzzConfig c;
  c.max_iterations = kCompareIterations;
  c.seed = seed;
  return c;
}

struct Tally {
  std::size_t errors = 0;
  double avg_categories = 0.0;
  std::size_t categories = 0;
  std::size_t failures = 0;
};

Tally RunSuite(const Network& m, const std::vector<SeedInput>& seeds, const FuzzConfig& cfg,
               Generator gen = Generator::kPso) {
  const Suite s = GenerateSuite(m, seeds, cfg, true, nullptr, gen);
  const SuiteReport r = MakeSuiteReport(m, s);
  return {r.test_error_count, r.average_categories_per_seed, r.error_categories.size(),
          s.failures.size()};
}

// Errors ratio a / b, infinite when only b is zero.
double Ratio(double a, double b) {
  if (b == 0.0) return a > 0.0 ? INFINITY : 0.0;
  return a / b;
}

std::vector<double> Ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
    i = j + 1;
  }
  return r;
}

// Spearman rank correlation; NaN when either side is constant.
double Spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = Ranks(a), rb = Ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nan("");
  return sab / std::sqrt(saa * sbb);
}

Tensor Noise(const Shape& s, Rng& rng, double amp) {
  Tensor t(s);
  for (float& v : t.values()) v = static_cast<float>(rng.Uniform(-amp, amp));
  return t;
}

// ---- 1. Shapley axioms ---------------------------------------------------------

Outcome ShapleyAxioms() {
  Rng rng(101);
  double worst_eff = 0.0, worst_dup = 0.0;
  bool null_exact = true;
  for (int t = 0; t < kAxiomNets; ++t) {
    const int in = 4 + t % 3, hidden = 5 + t % 3, classes = 3;
    Network m = RandomMlp(rng, in, hidden, classes);
    // Hidden unit 1 copies unit 0; the last hidden unit feeds nothing.
    auto& w0 = m.params()[0];
    for (int i = 0; i < in; ++i) w0[static_cast<std::size_t>(in + i)] = w0[static_cast<std::size_t>(i)];
    w0[static_cast<std::size_t>(hidden * in + 1)] = w0[static_cast<std::size_t>(hidden * in)];
    auto& w2 = m.params()[2];
    for (int o = 0; o < classes; ++o) {
      w2[static_cast<std::size_t>(o * hidden + 1)] = w2[static_cast<std::size_t>(o * hidden)];
      w2[static_cast<std::size_t>(o * hidden + hidden - 1)] = 0.0f;
    }
    const int label = static_cast<int>(rng.Below(classes));
    const auto ctx = UtilityContext::Single(m, RandomInput(m.input_shape(), rng),
                                            Noise(m.input_shape(), rng, 0.2), label);
    const std::vector<NeuronId> scope(m.neurons().begin(), m.neurons().end());
    if (scope.size() > 10) return {false, "scope larger than 10"};
    const ShapleyReport r = ShapleyExact(ctx, scope);
    const double sum = std::accumulate(r.values.begin(), r.values.end(), 0.0);
    worst_eff = std::max(worst_eff, std::abs(sum - (r.full_utility - r.empty_utility)));
    null_exact = null_exact && r.value(NeuronId{0, hidden - 1}) == 0.0;
    worst_dup = std::max(worst_dup, std::abs(r.value(NeuronId{0, 0}) - r.value(NeuronId{0, 1})));
  }
  return {worst_eff <= kAxiomTol && null_exact && worst_dup <= kAxiomTol,
          Fmt("efficiency gap %.2e, null exact %s, duplicate gap %.2e", worst_eff,
              null_exact ? "yes" : "no", worst_dup)};
}

// ---- 2. estimator convergence -------------------------------------------------

Outcome EstimatorConvergence() {
  Rng rng(202);
  double worst = 0.0, total = 0.0;
  for (int t = 0; t < kConvergeTrials; ++t) {
    const Network m = t % 2 ? RandomMlp(rng, 6, 5, 3) : RandomConvNet(rng, 3, 4, 5);
    if (m.neuron_count() != 8) return {false, "trial net does not have 8 neurons"};
    const int label = static_cast<int>(rng.Below(static_cast<std::uint64_t>(m.class_count())));
    const auto ctx = UtilityContext::Single(m, RandomInput(m.input_shape(), rng),
                                            Noise(m.input_shape(), rng, 0.2), label);
    const std::vector<NeuronId> scope(m.neurons().begin(), m.neurons().end());
    const ShapleyReport exact = ShapleyExact(ctx, scope);
    const ShapleyReport sampled = ShapleySampled(ctx, scope, kConvergePerms, 1000 + t);
    double mad = 0.0, mx = 0.0;
    for (std::size_t i = 0; i < scope.size(); ++i) {
      mad += std::abs(exact.values[i] - sampled.values[i]) / 8.0;
      mx = std::max(mx, std::abs(exact.values[i]));
    }
    const double rel = mx > 0.0 ? mad / mx : 0.0;
    worst = std::max(worst, rel);
    total += rel;
  }
  return {worst <= kConvergeTol, Fmt("mean |error| / max|psi|: worst %.4f, average %.4f", worst,
                                     total / kConvergeTrials)};
}

// ---- 3. gradients -------------------------------------------------------------

Outcome GradientCorrectness() {
  Rng rng(303);
  double worst = 0.0;
  int short_checks = 0;
  for (int t = 0; t < kGradModels; ++t) {
    const Network m = t % 2 ? RandomMlp(rng, 6, 5, 4) : RandomConvNet(rng, 2, 4, 3);
    const Tensor x = RandomInput(m.input_shape(), rng);
    const int label = static_cast<int>(rng.Below(static_cast<std::uint64_t>(m.class_count())));
    const FiniteDifferenceResult fd = FiniteDifferenceCheck(m, x, label, rng, kGradCoords);
    worst = std::max(worst, fd.worst);
    short_checks += fd.checked < kGradCoords;
  }
  return {worst <= kGradTol && short_checks == 0,
          Fmt("max relative error %.2e over %d coordinates x %d models", worst, kGradCoords,
              kGradModels)};
}

// ---- 4. PSO contracts -----------------------------------------------------------

Outcome PsoContracts() {
  const Network m = TrainDigits("mlp64", DefectSpec::WellTrained(), 1);
  const auto seeds = CommonSeeds({&m}, kPsoRuns);
  int monotone = 0, in_box = 0, budget = 0, identical = 0;
  for (int r = 0; r < kPsoRuns; ++r) {
    FuzzConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(r);
    cfg.fitness_kind = r % 5 == 4 ? FitnessKind::kNeuronCoverage : FitnessKind::kExcitable;
    cfg.random_init = r % 3 != 2;
    const std::vector<SeedInput> one = {seeds[static_cast<std::size_t>(r)]};
    const Suite a = GenerateSuite(m, one, cfg, true);
    const Suite b = GenerateSuite(m, one, cfg, true);
    const TestCase& fin = a.cases.back();
    const auto& h = fin.fitness_history;
    monotone += std::is_sorted(h.begin(), h.end()) && !h.empty();
    bool box = true;
    for (const TestCase& t : a.cases) {
      for (std::size_t i = 0; i < t.generated.size(); ++i) {
        const double v = t.generated[i];
        box = box && v >= 0.0 && v <= 1.0 &&
              std::abs(v - t.seed_input[i]) <= cfg.linf_budget + kBoxSlack;
      }
    }
    in_box += box;
    budget += fin.evaluations ==
              static_cast<std::size_t>(cfg.population_size) *
                  static_cast<std::size_t>(fin.iterations_used + 1) &&
              h.size() == static_cast<std::size_t>(fin.iterations_used + 1);
    bool same = a.cases.size() == b.cases.size();
    for (std::size_t i = 0; same && i < a.cases.size(); ++i) {
      same = a.cases[i].generated.values().size() == b.cases[i].generated.values().size() &&
             std::equal(a.cases[i].generated.values().begin(), a.cases[i].generated.values().end(),
                        b.cases[i].generated.values().begin()) &&
             a.cases[i].fitness_history == b.cases[i].fitness_history;
    }
    identical += same;
  }
  const bool ok = monotone == kPsoRuns && in_box == kPsoRuns && budget == kPsoRuns &&
                  identical == kPsoRuns;
  return {ok, Fmt("of %d runs: monotone %d, in range and budget %d, exact evaluations %d, "
                  "reproducible %d",
                  kPsoRuns, monotone, in_box, budget, identical)};
}

// ---- 5. zero fitness at the seed ------------------------------------------------

Outcome FitnessAtSeed() {
  int checked = 0, zero = 0;
  for (const char* arch : {"mlp64", "lenet"}) {
    const Network m = TrainDigits(arch, DefectSpec::WellTrained(), 1);
    for (const SeedInput& s : CommonSeeds({&m}, 10)) {
      for (int variant = 0; variant < 3; ++variant) {
        ShapleyParams p;
        p.seed = 11;
        p.per_layer = variant == 1;
        p.reference_radius = variant == 2 ? 0.0 : 0.1;
        ExcitableFitness f(m, s.input, s.label, p);
        zero += f(s.input) == 0.0;
        ++checked;
      }
    }
  }
  return {zero == checked, Fmt("%d of %d seed evaluations exactly 0", zero, checked)};
}

// ---- 6. adversarial-input effectiveness ----------------------------------------

Outcome Effectiveness() {
  bool ok = true;
  std::ostringstream out;
  for (const char* arch : {"mlp64", "lenet"}) {
    const Network m = TrainDigits(arch, DefectSpec::WellTrained(), 1);
    const auto seeds = CommonSeeds({&m}, kSeeds);
    FuzzConfig cfg = CompareConfig(5);
    const Tally ex = RunSuite(m, seeds, cfg);
    const Tally rnd = RunSuite(m, seeds, cfg, Generator::kRandomNoise);
    cfg.fitness_kind = FitnessKind::kNeuronCoverage;
    const Tally nc = RunSuite(m, seeds, cfg);
    const double er = Ratio(ex.errors, rnd.errors), cr = Ratio(ex.avg_categories, rnd.avg_categories);
    const double en = Ratio(ex.errors, nc.errors), cn = Ratio(ex.avg_categories, nc.avg_categories);
    ok = ok && er >= kEffectRatio && cr >= kEffectRatio && en >= kEffectRatio &&
         cn >= kEffectRatio && seeds.size() == static_cast<std::size_t>(kSeeds);
    out << Fmt("%s errors ex/random/nc %zu/%zu/%zu, avg categories %.2f/%.2f/%.2f; ", arch,
               ex.errors, rnd.errors, nc.errors, ex.avg_categories, rnd.avg_categories,
               nc.avg_categories);
  }
  return {ok, out.str()};
}

// ---- 7. polluted model ----------------------------------------------------------

Outcome PollutedSensitivity() {
  DefectSpec spec = DefectSpec::Polluted();
  spec.alpha = 0.1;
  spec.patch_min = 1;
  spec.patch_max = 6;
  spec.target_class = 1;
  const Network m = TrainDigits("lenet", spec, 1);
  const auto seeds = CommonSeeds({&m}, kSeeds);
  FuzzConfig cfg = CompareConfig(7);
  const Tally ex = RunSuite(m, seeds, cfg);
  cfg.fitness_kind = FitnessKind::kNeuronCoverage;
  const Tally nc = RunSuite(m, seeds, cfg);
  const double r = Ratio(ex.errors, nc.errors);
  return {r >= kPollutedRatio && seeds.size() == static_cast<std::size_t>(kSeeds),
          Fmt("test errors excitable %zu vs nc %zu (ratio %.2f, test acc %.3f)", ex.errors,
              nc.errors, r, m.metadata()["test_accuracy"].get<double>())};
}

// ---- 8. incomplete training -----------------------------------------------------

Outcome IncompleteTraining() {
  int wins = 0;
  std::ostringstream out;
  out << "errors under/well/over:";
  for (int rep = 1; rep <= kRepeats; ++rep) {
    const auto seed = static_cast<std::uint64_t>(rep);
    const Network under = TrainDigits("mlp64", DefectSpec::Underfit(), seed);
    const Network well = TrainDigits("mlp64", DefectSpec::WellTrained(), seed);
    const Network over = TrainDigits("mlp64", DefectSpec::Overfit(), seed);
    const auto seeds = CommonSeeds({&under, &well, &over}, kSeeds);
    const FuzzConfig cfg = CompareConfig(seed);
    const std::size_t u = RunSuite(under, seeds, cfg).errors;
    const std::size_t w = RunSuite(well, seeds, cfg).errors;
    const std::size_t o = RunSuite(over, seeds, cfg).errors;
    wins += u > w && o > w;
    out << Fmt(" %zu/%zu/%zu", u, w, o);
  }
  out << Fmt(" (%d of %d repetitions ordered)", wins, kRepeats);
  return {wins >= kRepeatsNeeded, out.str()};
}

// ---- 9. retraining ---------------------------------------------------------------

Outcome RetrainingBenefit() {
  const Network m = TrainDigits("mlp64", DefectSpec::WellTrained(), 1);
  const auto [x, y] = Digits().Part(Split::kTest);
  const auto picked = CommonCorrect({&m}, x, y, kSeeds);
  std::vector<SeedInput> seeds;
  std::set<std::size_t> used(picked.begin(), picked.end());
  for (std::size_t i : picked) seeds.push_back({x[i], y[i]});
  const Suite suite = GenerateSuite(m, seeds, CompareConfig(9), false);
  RetrainConfig rc;
  rc.seed = 9;
  const RetrainSet set = MakeRetrainSet(seeds, suite.cases);
  const Network re = Retrain(m, set, rc);
  std::vector<Tensor> ex;
  std::vector<int> ey;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (used.count(i)) continue;
    ex.push_back(x[i]);
    ey.push_back(y[i]);
  }
  const PgdConfig pgd;  // epsilon 0.3, 40 steps of 0.01
  CleverConfig clever;
  clever.seed = 9;
  const RetrainReport r =
      CompareRetrained(m, re, set, ex, ey, pgd, clever, kCleverProbes, kAccuracyDropMax);
  const double rel = r.before.asr > 0.0 ? r.delta_asr() / r.before.asr : 0.0;
  const bool ok = rel >= kAsrRelativeDrop && r.delta_clever() >= 0.0 &&
                  r.accuracy_drop() <= kAccuracyDropMax && set.generated == seeds.size() &&
                  r.after.clever_probes == kCleverProbes;
  return {ok, Fmt("%zu benign + %zu generated; PGD ASR %.3f -> %.3f (relative drop %.3f), "
                  "CLEVER %.4f -> %.4f over %zu probes, accuracy %.3f -> %.3f",
                  set.benign, set.generated, r.before.asr, r.after.asr, rel,
                  r.before.mean_clever, r.after.mean_clever, r.after.clever_probes,
                  r.before.accuracy, r.after.accuracy)};
}

// ---- 10. CLEVER oracle -----------------------------------------------------------

Outcome CleverOracle() {
  Rng rng(1010);
  double worst_linear = 0.0;
  for (int t = 0; t < 5; ++t) {
    const Network m = Linear(10, t % 2 ? 2 : 4, rng);
    const Tensor x = MidInput(10, rng);
    const int c = Predict(m, x);
    const auto logits = ComputeLogitJacobian(m, x).logits;
    double expect = INFINITY;
    for (int j = 0; j < m.class_count(); ++j) {
      if (j == c) continue;
      double sq = 0.0;
      for (int i = 0; i < 10; ++i) sq += std::pow(W(m, c, i) - W(m, j, i), 2);
      expect = std::min(expect, (logits[static_cast<std::size_t>(c)] -
                                 logits[static_cast<std::size_t>(j)]) / std::sqrt(sq));
    }
    CleverConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(t);
    const double s = CleverL2(m, x, c, cfg).score;
    worst_linear = std::max(worst_linear, std::abs(s - expect) / expect);
  }
  double worst_ratio = 0.0;
  int checked = 0;
  for (int t = 0; t < 40 && checked < 10; ++t) {
    const Network m = RandomMlp(rng, 6, 8, 3);
    const Tensor x = MidInput(6, rng);
    const int c = Predict(m, x);
    const LogitJacobian jac = ComputeLogitJacobian(m, x);
    double best = INFINITY;
    for (int j = 0; j < 3; ++j) {
      if (j == c) continue;
      std::vector<double> dir(6);
      for (std::size_t i = 0; i < 6; ++i) {
        dir[i] = jac.rows[static_cast<std::size_t>(j)][i] - jac.rows[static_cast<std::size_t>(c)][i];
      }
      best = std::min(best, BisectDistortion(m, x, c, Unit(dir)));
    }
    if (!std::isfinite(best) || best > 0.6) continue;
    CleverConfig cfg;
    cfg.radius = std::max(best, 0.05);
    cfg.seed = static_cast<std::uint64_t>(t);
    worst_ratio = std::max(worst_ratio, CleverL2(m, x, c, cfg).score / best);
    ++checked;
  }
  return {worst_linear <= kLinearCleverTol && checked >= 5 && worst_ratio <= kBisectionSlack,
          Fmt("linear worst relative error %.4f; nonlinear worst score/bisection %.3f over %d "
              "nets",
              worst_linear, worst_ratio, checked)};
}

// ---- 11. lambda / epsilon sensitivity --------------------------------------------

Outcome Sensitivity() {
  const Network m = TrainDigits("mlp64", DefectSpec::WellTrained(), 1);
  const auto seeds = CommonSeeds({&m}, kSeeds);
  std::vector<double> lambdas, errors;
  std::ostringstream out;
  out << "errors by lambda:";
  for (int k = 1; k <= 9; ++k) {
    FuzzConfig cfg = CompareConfig(11);
    cfg.lambda = 0.1 * k;
    lambdas.push_back(cfg.lambda);
    errors.push_back(static_cast<double>(RunSuite(m, seeds, cfg).errors));
    out << Fmt(" %.0f", errors.back());
  }
  // Rising region: up to the first maximum.
  const auto peak = static_cast<std::size_t>(
      std::max_element(errors.begin(), errors.end()) - errors.begin());
  const double rho = peak >= 1 ? Spearman({lambdas.begin(), lambdas.begin() + peak + 1},
                                          {errors.begin(), errors.begin() + peak + 1})
                               : std::nan("");
  std::vector<double> eps = {0.05, 0.1, 0.15, 0.2, 0.3, 1.0}, eps_errors;
  out << Fmt("; rising-region rho %.3f; errors by epsilon:", rho);
  for (double e : eps) {
    FuzzConfig cfg = CompareConfig(11);
    cfg.epsilon = e;
    eps_errors.push_back(static_cast<double>(RunSuite(m, seeds, cfg).errors));
    out << Fmt(" %.0f", eps_errors.back());
  }
  const double rho_eps = Spearman(eps, eps_errors);
  out << Fmt("; epsilon rho %.3f", rho_eps);
  return {rho > 0.0 && rho_eps > 0.0, out.str()};
}

// ---- 12. random initialization ----------------------------------------------------

Outcome RandomInitialization() {
  const Network m = TrainDigits("mlp64", DefectSpec::WellTrained(), 1);
  const auto seeds = CommonSeeds({&m}, kSeeds);
  int wins = 0;
  std::ostringstream out;
  out << "errors random/fixed:";
  for (int rep = 1; rep <= kRepeats; ++rep) {
    FuzzConfig cfg = CompareConfig(static_cast<std::uint64_t>(100 + rep));
    const std::size_t r = RunSuite(m, seeds, cfg).errors;
    cfg.random_init = false;
    const std::size_t f = RunSuite(m, seeds, cfg).errors;
    wins += r >= f;
    out << Fmt(" %zu/%zu", r, f);
  }
  out << Fmt(" (%d of %d repetitions)", wins, kRepeats);
  return {wins >= kRepeatsNeeded, out.str()};
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Outcome()> run;
};

}  // namespace
}  // namespace exfuzz

int main(int argc, char** argv) {
  using namespace exfuzz;
  const std::vector<Criterion> all = {
      {1, "shapley axioms (exact)", 60, ShapleyAxioms},
      {2, "sampled estimator convergence", 120, EstimatorConvergence},
      {3, "gradient finite differences", 60, GradientCorrectness},
      {4, "pso contracts", 300, PsoContracts},
      {5, "zero fitness at the seed", 60, FitnessAtSeed},
      {6, "adversarial-input effectiveness", 1800, Effectiveness},
      {7, "polluted-model sensitivity", 1800, PollutedSensitivity},
      {8, "incomplete-training sensitivity", 2700, IncompleteTraining},
      {9, "retraining benefit", 1800, RetrainingBenefit},
      {10, "clever oracle", 600, CleverOracle},
      {11, "lambda / epsilon sensitivity", 2700, Sensitivity},
      {12, "random initialization benefit", 1200, RandomInitialization},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const Criterion& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.budget_seconds;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("criterion %2d %s: %s  %s [%.1fs of %.0fs%s]\n", c.id, c.name,
                pass ? "PASS" : "FAIL", o.detail.c_str(), secs, c.budget_seconds,
                in_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
