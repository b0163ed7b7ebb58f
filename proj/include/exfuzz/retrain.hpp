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
#include <vector>

#include <nlohmann/json.hpp>

#include "exfuzz/error.hpp"
#include "exfuzz/fuzzer.hpp"
#include "exfuzz/metrics.hpp"
#include "exfuzz/network.hpp"
#include "exfuzz/training.hpp"

namespace exfuzz {

struct RetrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 0.05;
  double accuracy_guard = 0.05;  // largest tolerated benign accuracy drop
  std::uint64_t seed = 0;
};

// Benign seeds plus generated tests, each test labelled with its seed's
// true label.
struct RetrainSet {
  std::vector<Tensor> inputs;
  std::vector<int> labels;
  std::size_t benign = 0;
  std::size_t generated = 0;
};

inline RetrainSet MakeRetrainSet(const std::vector<SeedInput>& seeds,
                                 const std::vector<TestCase>& tests) {
  RetrainSet s;
  for (const SeedInput& b : seeds) {
    s.inputs.push_back(b.input);
    s.labels.push_back(b.label);
  }
  s.benign = seeds.size();
  for (const TestCase& t : tests) {
    s.inputs.push_back(t.generated);
    s.labels.push_back(t.true_label);
  }
  s.generated = tests.size();
  return s;
}

inline Network Retrain(const Network& model, const RetrainSet& set, const RetrainConfig& cfg) {
  if (cfg.epochs < 0 || cfg.batch_size < 1 || !(cfg.learning_rate > 0.0)) {
    throw UsageError("retrain needs epochs >= 0, batch size >= 1 and a positive rate");
  }
  Network out = model;
  if (set.inputs.empty()) return out;
  RunSgd(out, set.inputs, set.labels, cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.seed);
  nlohmann::json& md = out.metadata();
  md["retrained"] = {{"epochs", cfg.epochs},
                     {"batch_size", cfg.batch_size},
                     {"learning_rate", cfg.learning_rate},
                     {"seed", cfg.seed},
                     {"benign", set.benign},
                     {"generated", set.generated}};
  return out;
}

struct RobustnessSummary {
  double accuracy = 0.0;
  double asr = 0.0;
  double mean_clever = 0.0;
  std::size_t clever_probes = 0;
};

// Accuracy and PGD attack success over (inputs, labels); mean CLEVER over
// the listed probe indices, which must be classified correctly.
inline RobustnessSummary Summarize(const Network& model, const std::vector<Tensor>& inputs,
                                   const std::vector<int>& labels, const PgdConfig& pgd,
                                   const CleverConfig& clever,
                                   const std::vector<std::size_t>& probes) {
  RobustnessSummary s;
  s.accuracy = Accuracy(model, inputs, labels);
  std::vector<Tensor> attacked;
  attacked.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    attacked.push_back(AttackPgd(model, inputs[i], labels[i], pgd));
  }
  s.asr = AttackSuccessRate(model, attacked, labels);
  double sum = 0.0;
  for (std::size_t i : probes) {
    sum += CleverL2(model, inputs[i], labels[i], clever).score;
  }
  s.clever_probes = probes.size();
  s.mean_clever = probes.empty() ? 0.0 : sum / static_cast<double>(probes.size());
  return s;
}

// First `count` indices classified correctly by every model in `models`.
inline std::vector<std::size_t> CommonCorrect(const std::vector<const Network*>& models,
                                              const std::vector<Tensor>& inputs,
                                              const std::vector<int>& labels, std::size_t count) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < inputs.size() && out.size() < count; ++i) {
    bool ok = true;
    for (const Network* m : models) ok = ok && Predict(*m, inputs[i]) == labels[i];
    if (ok) out.push_back(i);
  }
  return out;
}

struct RetrainReport {
  RobustnessSummary before;
  RobustnessSummary after;
  std::size_t benign = 0;
  std::size_t generated = 0;
  bool accuracy_guard_tripped = false;
  bool degenerate = false;  // no generated tests to learn from

  double delta_asr() const { return before.asr - after.asr; }
  double delta_clever() const { return after.mean_clever - before.mean_clever; }
  double accuracy_drop() const { return before.accuracy - after.accuracy; }
};

inline RetrainReport CompareRetrained(const Network& original, const Network& retrained,
                                      const RetrainSet& set, const std::vector<Tensor>& eval_x,
                                      const std::vector<int>& eval_y, const PgdConfig& pgd,
                                      const CleverConfig& clever, std::size_t clever_probes,
                                      double accuracy_guard) {
  if (eval_x.empty() || eval_x.size() != eval_y.size()) {
    throw UsageError("retrain evaluation needs a nonempty labelled set");
  }
  const auto probes = CommonCorrect({&original, &retrained}, eval_x, eval_y, clever_probes);
  RetrainReport r;
  r.before = Summarize(original, eval_x, eval_y, pgd, clever, probes);
  r.after = Summarize(retrained, eval_x, eval_y, pgd, clever, probes);
  r.benign = set.benign;
  r.generated = set.generated;
  r.degenerate = set.generated == 0;
  r.accuracy_guard_tripped = r.accuracy_drop() > accuracy_guard;
  return r;
}

inline nlohmann::json ToJson(const RobustnessSummary& s) {
  return {{"accuracy", s.accuracy},
          {"pgd_asr", s.asr},
          {"mean_clever", s.mean_clever},
          {"clever_probes", s.clever_probes}};
}

inline nlohmann::json ToJson(const RetrainReport& r) {
  return {{"before", ToJson(r.before)},
          {"after", ToJson(r.after)},
          {"delta_asr", r.delta_asr()},
          {"delta_clever", r.delta_clever()},
          {"accuracy_drop", r.accuracy_drop()},
          {"benign", r.benign},
          {"generated", r.generated},
          {"accuracy_guard_tripped", r.accuracy_guard_tripped},
          {"degenerate", r.degenerate}};
}

}  // namespace exfuzz
