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
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "exfuzz/error.hpp"
#include "exfuzz/fuzzer.hpp"
#include "exfuzz/network.hpp"
#include "exfuzz/rng.hpp"
#include "exfuzz/training.hpp"

namespace exfuzz {

// ---- attacks ---------------------------------------------------------------

inline Tensor AttackFgsm(const Network& model, const Tensor& input, int label,
                         double epsilon) {
  if (!(epsilon >= 0.0)) throw UsageError("FGSM epsilon must be non-negative");
  Tensor x = input;
  if (epsilon == 0.0) return x;
  const Tensor g = ComputeGradients(model, input, label).input;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = g[i] > 0.0f ? 1.0 : (g[i] < 0.0f ? -1.0 : 0.0);
    x[i] = static_cast<float>(std::clamp(input[i] + epsilon * s, 0.0, 1.0));
  }
  return x;
}

struct PgdConfig {
  double epsilon = 0.3;
  int steps = 40;
  double step_size = 0.01;
  bool random_start = false;
  std::uint64_t seed = 0;
};

// Signed gradient ascent on the loss, projected after every step onto the
// L-inf ball around the input and onto [0, 1].
inline Tensor AttackPgd(const Network& model, const Tensor& input, int label,
                        const PgdConfig& cfg) {
  if (!(cfg.epsilon >= 0.0)) throw UsageError("PGD epsilon must be non-negative");
  if (cfg.steps < 1) throw UsageError("PGD needs at least one step");
  Tensor x = input;
  auto project = [&](std::size_t i, double v) {
    const double lo = std::max(0.0, static_cast<double>(input[i]) - cfg.epsilon);
    const double hi = std::min(1.0, static_cast<double>(input[i]) + cfg.epsilon);
    return static_cast<float>(std::clamp(v, lo, hi));
  };
  if (cfg.random_start) {
    Rng rng(cfg.seed);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = project(i, input[i] + rng.Uniform(-cfg.epsilon, cfg.epsilon));
    }
  }
  for (int s = 0; s < cfg.steps; ++s) {
    const Tensor g = ComputeGradients(model, x, label).input;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double sign = g[i] > 0.0f ? 1.0 : (g[i] < 0.0f ? -1.0 : 0.0);
      x[i] = project(i, x[i] + cfg.step_size * sign);
    }
  }
  return x;
}

// Fraction of attacked inputs the model misclassifies.
inline double AttackSuccessRate(const Network& model, std::span<const Tensor> attacked,
                                std::span<const int> labels) {
  if (attacked.empty() || attacked.size() != labels.size()) {
    throw UsageError("ASR needs a nonempty batch with one label per input");
  }
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < attacked.size(); ++i) {
    flipped += Predict(model, attacked[i]) != labels[i] ? 1 : 0;
  }
  return static_cast<double>(flipped) / static_cast<double>(attacked.size());
}

// ---- CLEVER ----------------------------------------------------------------

enum class LipschitzEstimator { kMaxOfBatchMaxima, kReverseWeibull };

struct CleverConfig {
  int batches = 500;              // N_b
  int samples_per_batch = 1024;   // N_s
  double radius = 0.5;            // R
  LipschitzEstimator estimator = LipschitzEstimator::kMaxOfBatchMaxima;
  std::uint64_t seed = 0;
};

struct CleverEstimate {
  double score = 0.0;
  int batches = 0;
  int samples_per_batch = 0;
  double radius = 0.0;
  int predicted_class = 0;
  std::string estimator;
  std::vector<int> target_class;
  std::vector<double> margin;       // g_j(x0)
  std::vector<double> lipschitz;    // estimated max ||grad g_j||_2
  std::vector<double> class_score;  // margin / lipschitz
};

namespace detail {

// Weibull MLE (shape, scale) of positive samples z for a fixed location;
// returns the log-likelihood.
inline double WeibullProfile(const std::vector<double>& z) {
  const double n = static_cast<double>(z.size());
  std::vector<double> lz(z.size());
  double mean_lz = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    lz[i] = std::log(z[i]);
    mean_lz += lz[i];
  }
  mean_lz /= n;
  // Newton on 1/k + mean(ln z) - sum(z^k ln z)/sum(z^k) = 0.
  double k = 1.0;
  for (int it = 0; it < 100; ++it) {
    double a = 0.0, b = 0.0, c = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double zk = std::pow(z[i], k);
      a += zk;
      b += zk * lz[i];
      c += zk * lz[i] * lz[i];
    }
    const double f = 1.0 / k + mean_lz - b / a;
    const double df = -1.0 / (k * k) - (c * a - b * b) / (a * a);
    const double next = std::clamp(k - f / df, k / 10.0, k * 10.0);
    if (std::abs(next - k) < 1e-10 * k) {
      k = next;
      break;
    }
    k = next;
  }
  double a = 0.0;
  for (double v : z) a += std::pow(v, k);
  const double scale = std::pow(a / n, 1.0 / k);
  double ll = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    ll += std::log(k / scale) + (k - 1.0) * (lz[i] - std::log(scale)) - std::pow(z[i] / scale, k);
  }
  return ll;
}

// Location (right endpoint) of a reverse Weibull fitted to batch maxima by
// profile likelihood, golden-section search above the sample maximum.
inline double ReverseWeibullLocation(const std::vector<double>& maxima) {
  const auto [mn, mx] = std::minmax_element(maxima.begin(), maxima.end());
  const double hi = *mx, range = *mx - *mn;
  if (maxima.size() < 3 || range <= 1e-12 * std::max(1.0, std::abs(hi))) return hi;
  auto ll = [&](double mu) {
    std::vector<double> z(maxima.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = mu - maxima[i];
    return WeibullProfile(z);
  };
  double a = hi + 1e-6 * range, b = hi + 2.0 * range;
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = ll(c), fd = ll(d);
  for (int it = 0; it < 100 && b - a > 1e-9 * range; ++it) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = ll(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = ll(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace detail

// Untargeted L2 CLEVER score from sampled gradient norms of the logit
// margins g_j = z_c - z_j.
inline CleverEstimate CleverL2(const Network& model, const Tensor& input, int label,
                               const CleverConfig& cfg) {
  if (cfg.batches < 1 || cfg.samples_per_batch < 1) {
    throw UsageError("CLEVER needs N_b >= 1 and N_s >= 1");
  }
  if (!(cfg.radius > 0.0)) throw UsageError("CLEVER radius must be positive");
  const LogitJacobian at = ComputeLogitJacobian(model, input);
  std::vector<float> lf(at.logits.begin(), at.logits.end());
  const int c = Argmax(lf);
  if (c != label) {
    throw UsageError("CLEVER needs a correctly classified input (label " +
                     std::to_string(label) + ", predicted " + std::to_string(c) + ")");
  }
  const int k = model.class_count();
  const std::size_t dim = input.size();
  std::vector<std::vector<double>> maxima(static_cast<std::size_t>(k),
                                          std::vector<double>(static_cast<std::size_t>(cfg.batches), 0.0));
  Tensor x(input.shape());
  std::vector<double> dir(dim);
  for (int b = 0; b < cfg.batches; ++b) {
    Rng rng(MixSeed(cfg.seed, static_cast<std::uint64_t>(b)));
    for (int s = 0; s < cfg.samples_per_batch; ++s) {
      // Uniform in the L2 ball: Gaussian direction, radius R * u^(1/d).
      double norm = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        const double u1 = 1.0 - rng.Uniform();
        const double u2 = rng.Uniform();
        dir[i] = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
        norm += dir[i] * dir[i];
      }
      norm = std::sqrt(norm);
      const double r = cfg.radius * std::pow(rng.Uniform(), 1.0 / static_cast<double>(dim));
      for (std::size_t i = 0; i < dim; ++i) {
        const double v = input[i] + (norm > 0.0 ? r * dir[i] / norm : 0.0);
        x[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
      const LogitJacobian jac = ComputeLogitJacobian(model, x);
      const auto& rc = jac.rows[static_cast<std::size_t>(c)];
      for (int j = 0; j < k; ++j) {
        if (j == c) continue;
        const auto& rj = jac.rows[static_cast<std::size_t>(j)];
        double sq = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
          const double d = rc[i] - rj[i];
          sq += d * d;
        }
        double& m = maxima[static_cast<std::size_t>(j)][static_cast<std::size_t>(b)];
        m = std::max(m, std::sqrt(sq));
      }
    }
  }
  CleverEstimate e;
  e.batches = cfg.batches;
  e.samples_per_batch = cfg.samples_per_batch;
  e.radius = cfg.radius;
  e.predicted_class = c;
  e.estimator = cfg.estimator == LipschitzEstimator::kReverseWeibull ? "reverse_weibull"
                                                                    : "max_of_batch_maxima";
  e.score = std::numeric_limits<double>::infinity();
  for (int j = 0; j < k; ++j) {
    if (j == c) continue;
    const auto& m = maxima[static_cast<std::size_t>(j)];
    const double lip = cfg.estimator == LipschitzEstimator::kReverseWeibull
                           ? detail::ReverseWeibullLocation(m)
                           : *std::max_element(m.begin(), m.end());
    const double margin = at.logits[static_cast<std::size_t>(c)] - at.logits[static_cast<std::size_t>(j)];
    const double score = lip > 0.0 ? margin / lip : std::numeric_limits<double>::infinity();
    e.target_class.push_back(j);
    e.margin.push_back(margin);
    e.lipschitz.push_back(lip);
    e.class_score.push_back(score);
    e.score = std::min(e.score, score);
  }
  return e;
}

inline nlohmann::json ToJson(const CleverEstimate& e) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < e.target_class.size(); ++i) {
    rows.push_back({{"target_class", e.target_class[i]},
                    {"margin", e.margin[i]},
                    {"lipschitz", e.lipschitz[i]},
                    {"score", std::isfinite(e.class_score[i]) ? nlohmann::json(e.class_score[i])
                                                              : nlohmann::json()}});
  }
  return {{"score", std::isfinite(e.score) ? nlohmann::json(e.score) : nlohmann::json()},
          {"batches", e.batches},
          {"samples_per_batch", e.samples_per_batch},
          {"radius", e.radius},
          {"predicted_class", e.predicted_class},
          {"estimator", e.estimator},
          {"per_class", rows}};
}

inline void WriteCleverCsvHeader(std::ostream& out) {
  out << "input,predicted_class,target_class,margin,lipschitz,score\n";
}

inline void WriteCleverCsv(std::ostream& out, int input_index, const CleverEstimate& e) {
  for (std::size_t i = 0; i < e.target_class.size(); ++i) {
    out << input_index << ',' << e.predicted_class << ',' << e.target_class[i] << ','
        << e.margin[i] << ',' << e.lipschitz[i] << ',' << e.class_score[i] << '\n';
  }
}

// ---- suite accounting -------------------------------------------------------

struct SeedBreakdown {
  int seed_index = 0;
  int true_label = 0;
  int cases = 0;
  int errors = 0;
  std::set<int> wrong_labels;
};

struct SuiteReport {
  std::size_t test_error_count = 0;
  std::set<std::pair<int, int>> error_categories;  // (true, predicted)
  double average_categories_per_seed = 0.0;
  std::size_t seed_count = 0;
  std::size_t case_count = 0;
  std::vector<SeedBreakdown> per_seed;
};

// Error accounting over generated inputs, re-predicting each with `model`.
inline SuiteReport MakeSuiteReport(const Network& model, std::span<const TestCase> cases,
                                   std::size_t seed_count) {
  if (seed_count == 0) throw UsageError("suite report needs at least one seed");
  SuiteReport r;
  r.seed_count = seed_count;
  r.case_count = cases.size();
  std::map<int, SeedBreakdown> by_seed;
  for (const TestCase& t : cases) {
    SeedBreakdown& b = by_seed[t.seed_index];
    b.seed_index = t.seed_index;
    b.true_label = t.true_label;
    ++b.cases;
    const int pred = Predict(model, t.generated);
    if (pred == t.true_label) continue;
    ++r.test_error_count;
    ++b.errors;
    b.wrong_labels.insert(pred);
    r.error_categories.insert({t.true_label, pred});
  }
  std::size_t distinct = 0;
  for (auto& [idx, b] : by_seed) {
    distinct += b.wrong_labels.size();
    r.per_seed.push_back(std::move(b));
  }
  r.average_categories_per_seed =
      static_cast<double>(distinct) / static_cast<double>(seed_count);
  return r;
}

inline SuiteReport MakeSuiteReport(const Network& model, const Suite& suite) {
  return MakeSuiteReport(model, suite.cases, suite.seed_count);
}

inline nlohmann::json ToJson(const SuiteReport& r) {
  nlohmann::json cats = nlohmann::json::array();
  for (const auto& [t, p] : r.error_categories) cats.push_back({t, p});
  nlohmann::json seeds = nlohmann::json::array();
  for (const SeedBreakdown& b : r.per_seed) {
    seeds.push_back({{"seed_index", b.seed_index},
                     {"true_label", b.true_label},
                     {"cases", b.cases},
                     {"errors", b.errors},
                     {"wrong_labels", b.wrong_labels}});
  }
  return {{"test_error_count", r.test_error_count},
          {"error_category_count", r.error_categories.size()},
          {"error_categories", cats},
          {"average_categories_per_seed", r.average_categories_per_seed},
          {"seed_count", r.seed_count},
          {"case_count", r.case_count},
          {"per_seed", seeds}};
}

inline void WriteSuiteReportCsv(std::ostream& out, const SuiteReport& r) {
  out << "seed_index,true_label,cases,errors,distinct_wrong_labels\n";
  for (const SeedBreakdown& b : r.per_seed) {
    out << b.seed_index << ',' << b.true_label << ',' << b.cases << ',' << b.errors << ','
        << b.wrong_labels.size() << '\n';
  }
}

}  // namespace exfuzz
