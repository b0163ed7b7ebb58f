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

// exfuzz: train models, probe Shapley values, fuzz, attack, estimate CLEVER,
// retrain and merge reports. Every command writes a run manifest next to its
// outputs; `exfuzz rerun --manifest FILE` replays the recorded arguments.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "exfuzz/exfuzz.hpp"

#ifndef EXFUZZ_VERSION
#define EXFUZZ_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace exfuzz::cli {
namespace {

// ---- shared plumbing ---------------------------------------------------------

struct DataOptions {
  std::string path;
  std::string labels;
  std::string format = "csv";
  int blobs_n = 200;
  int blobs_classes = 2;
  std::uint64_t blobs_seed = 7;

  void Add(CLI::App* c) {
    c->add_option("--data", path, "dataset file (CSV rows or IDX images)");
    c->add_option("--labels", labels, "IDX label file");
    c->add_option("--format", format, "csv | idx | blobs")->capture_default_str();
    c->add_option("--blobs-n", blobs_n, "synthetic blob count")->capture_default_str();
    c->add_option("--blobs-classes", blobs_classes)->capture_default_str();
    c->add_option("--blobs-seed", blobs_seed)->capture_default_str();
  }

  DatasetSource Source() const {
    DatasetSource s;
    if (format == "csv") {
      s.format = DatasetFormat::kCsvDigits;
    } else if (format == "idx") {
      s.format = DatasetFormat::kIdxImages;
      if (labels.empty()) throw UsageError("--format idx needs --labels");
    } else if (format == "blobs") {
      s.format = DatasetFormat::kSyntheticBlobs;
    } else {
      throw UsageError("unknown --format '" + format + "' (csv, idx, blobs)");
    }
    if (s.format != DatasetFormat::kSyntheticBlobs && path.empty()) {
      throw UsageError("--data is required for --format " + format);
    }
    s.path = path;
    s.labels_path = labels;
    s.blobs_n = blobs_n;
    s.blobs_classes = blobs_classes;
    s.blobs_seed = blobs_seed;
    return s;
  }

  json ToJson() const {
    json j = {{"format", format}};
    if (format == "blobs") {
      j["blobs_n"] = blobs_n;
      j["blobs_classes"] = blobs_classes;
      j["blobs_seed"] = blobs_seed;
    } else {
      j["path"] = path;
      if (format == "idx") j["labels"] = labels;
    }
    return j;
  }
};

Dataset LoadFor(const DataOptions& d, const Network* model = nullptr) {
  Dataset data = LoadDataset(d.Source());
  if (model != nullptr) {
    if (data.shape != model->input_shape()) {
      throw DataError("dataset shape " + ShapeString(data.shape) + " differs from model input " +
                      ShapeString(model->input_shape()));
    }
    for (int y : data.labels) {
      if (y < 0 || y >= model->class_count()) {
        throw DataError("dataset label " + std::to_string(y) + " outside the model's " +
                        std::to_string(model->class_count()) + " classes");
      }
    }
  }
  return data;
}

int ThreadCount() {
  const char* env = std::getenv("EXFUZZ_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) {
    throw UsageError("EXFUZZ_THREADS must be a positive integer, got '" + std::string(env) + "'");
  }
  return static_cast<int>(n);
}

void WriteJson(const std::string& path, const json& j) { AtomicWriteFile(path, j.dump(2) + "\n"); }

std::string Sibling(const std::string& path, const std::string& ext) {
  fs::path p(path);
  p.replace_extension(ext);
  return p.string();
}

json ReadJson(const std::string& path) {
  try {
    return json::parse(ReadFile(path));
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

// Collects the manifest of one command while it runs.
struct Run {
  std::string command;
  std::vector<std::string> argv;
  std::uint64_t seed = 0;
  json config = json::object();
  json inputs = json::object();
  json outputs = json::object();
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void Write(const std::string& path) const {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json m = {{"command", command},
              {"argv", argv},
              {"version", EXFUZZ_VERSION},
              {"seed", seed},
              {"cwd", fs::current_path().string()},
              {"threads", ThreadCount()},
              {"config", config},
              {"inputs", inputs},
              {"outputs", outputs},
              {"duration_seconds", secs}};
    WriteJson(path, m);
  }
};

std::string Csv(const json& v) {
  if (v.is_null()) return "";
  if (!v.is_string()) return v.dump();
  const std::string s = v.get<std::string>();
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

// First `count` test-split examples the model classifies correctly, in
// dataset order. Returns their dataset indices.
std::vector<std::size_t> CorrectTestIndices(const Network& model, const Dataset& data,
                                            std::size_t count) {
  std::vector<std::size_t> out;
  for (std::size_t i : data.Indices(Split::kTest)) {
    if (out.size() >= count) break;
    if (Predict(model, data.inputs[i]) == data.labels[i]) out.push_back(i);
  }
  return out;
}

// ---- train -------------------------------------------------------------------

struct TrainOptions {
  DataOptions data;
  std::string arch = "mlp64";
  std::string regime = "well";
  std::optional<int> epochs, batch_size, train_limit, patch_min, patch_max, target_class;
  std::optional<double> lr, alpha;
  std::uint64_t seed = 0;
  std::string out;
};

int CmdTrain(const TrainOptions& o, Run& run) {
  DefectSpec spec = DefectSpec::For(ParseDefect(o.regime));
  if (o.epochs) spec.epochs = *o.epochs;
  if (o.batch_size) spec.batch_size = *o.batch_size;
  if (o.lr) spec.learning_rate = *o.lr;
  if (o.train_limit) spec.train_limit = *o.train_limit;
  if (o.alpha) spec.alpha = *o.alpha;
  if (o.patch_min) spec.patch_min = *o.patch_min;
  if (o.patch_max) spec.patch_max = *o.patch_max;
  if (o.target_class) spec.target_class = *o.target_class;
  spec.Validate();
  const Dataset data = LoadFor(o.data);
  if (spec.kind == DefectKind::kPolluted &&
      (spec.target_class < 0 || spec.target_class >= data.class_count)) {
    throw UsageError("--target-class outside the dataset's classes");
  }
  const std::vector<LayerSpec> arch = ArchitectureLayers(o.arch, data.shape, data.class_count);
  Network model = TrainModel(data, arch, spec, o.seed);
  const std::string manifest = Sibling(o.out, ".run.json");
  model.metadata()["arch"] = o.arch;
  model.metadata()["run_manifest"] = fs::path(manifest).filename().string();

  run.seed = o.seed;
  run.config = {{"arch", o.arch},
                {"regime", std::string(DefectName(spec.kind))},
                {"epochs", spec.epochs},
                {"batch_size", spec.batch_size},
                {"learning_rate", spec.learning_rate},
                {"train_limit", spec.train_limit},
                {"seed", o.seed}};
  if (spec.kind == DefectKind::kPolluted) {
    run.config["alpha"] = spec.alpha;
    run.config["patch_min"] = spec.patch_min;
    run.config["patch_max"] = spec.patch_max;
    run.config["target_class"] = spec.target_class;
  }
  run.inputs = {{"data", o.data.ToJson()}};
  run.outputs = {{"model", o.out}, {"weights", Sibling(o.out, ".bin")}};
  SaveModel(model, o.out);
  run.Write(manifest);
  std::cout << "trained " << o.arch << " (" << DefectName(spec.kind) << "): train acc "
            << model.metadata()["train_accuracy"].get<double>() << ", test acc "
            << model.metadata()["test_accuracy"].get<double>() << "\n";
  return 0;
}

// ---- fuzz --------------------------------------------------------------------

struct FuzzOptions {
  std::string model;
  DataOptions data;
  int seeds = 10;
  std::string fitness = "excitable";
  int iterations = 10;
  int population = 100;
  double lambda = kDefaultLambda;
  double epsilon = 1.0;
  double linf = 0.1;
  double velocity_clamp = 0.05;
  double c1 = 2.0, c2 = 2.0;
  int samples = 30;
  bool per_layer = false;
  std::string threshold_mode = "normalized";
  std::string normalization = "reference";
  double coverage_threshold = kDefaultCoverageThreshold;
  bool no_random_init = false;
  bool no_intermediates = false;
  int profile_size = static_cast<int>(kDefaultProfileCorpus);
  std::uint64_t seed = 0;
  std::string label;
  std::string out;
};

json SuiteSummary(const Suite& suite, const SuiteReport& r, const std::string& fitness) {
  double fit = 0.0;
  std::size_t finals = 0, evals = 0;
  for (const TestCase& t : suite.cases) {
    if (t.intermediate) continue;
    fit += t.final_fitness;
    evals += t.evaluations;
    ++finals;
  }
  return {{"fitness", fitness},
          {"seeds", suite.seed_count},
          {"failed_seeds", suite.failures.size()},
          {"cases", r.case_count},
          {"test_errors", r.test_error_count},
          {"error_categories", r.error_categories.size()},
          {"average_categories_per_seed", r.average_categories_per_seed},
          {"mean_final_fitness", finals ? fit / static_cast<double>(finals) : 0.0},
          {"evaluations", evals}};
}

int CmdFuzz(const FuzzOptions& o, Run& run) {
  if (o.seeds < 1) throw UsageError("--seeds must be at least 1");
  if (o.profile_size < 1) throw UsageError("--profile-size must be at least 1");
  FuzzConfig cfg;
  const bool random = o.fitness == "random";
  cfg.fitness_kind = random ? FitnessKind::kExcitable : ParseFitness(o.fitness);
  cfg.population_size = o.population;
  cfg.max_iterations = o.iterations;
  cfg.lambda = o.lambda;
  cfg.epsilon = o.epsilon;
  cfg.linf_budget = o.linf;
  cfg.velocity_clamp = o.velocity_clamp;
  cfg.c1 = o.c1;
  cfg.c2 = o.c2;
  cfg.shapley_samples = o.samples;
  cfg.per_layer_shapley = o.per_layer;
  if (o.threshold_mode != "normalized" && o.threshold_mode != "raw") {
    throw UsageError("--threshold-mode is normalized or raw");
  }
  cfg.threshold_mode = o.threshold_mode == "raw" ? ThresholdMode::kRaw : ThresholdMode::kNormalized;
  if (o.normalization != "reference" && o.normalization != "candidate") {
    throw UsageError("--normalization is reference or candidate");
  }
  cfg.reference_normalization = o.normalization == "reference";
  cfg.coverage_threshold = o.coverage_threshold;
  cfg.random_init = !o.no_random_init;
  cfg.seed = o.seed;
  cfg.Validate();

  const Network model = LoadModel(o.model);
  const Dataset data = LoadFor(o.data, &model);
  const auto picked = CorrectTestIndices(model, data, static_cast<std::size_t>(o.seeds));
  if (picked.empty()) throw DataError("no correctly classified test example to use as a seed");
  if (picked.size() < static_cast<std::size_t>(o.seeds)) {
    std::cerr << "warning: only " << picked.size() << " correctly classified test examples\n";
  }
  std::vector<SeedInput> seeds;
  for (std::size_t i : picked) seeds.push_back({data.inputs[i], data.labels[i]});

  std::optional<CoverageProfile> profile;
  if (cfg.fitness_kind == FitnessKind::kSnac && !random) {
    auto [x, y] = data.Part(Split::kTrain);
    if (x.size() > static_cast<std::size_t>(o.profile_size)) {
      x.resize(static_cast<std::size_t>(o.profile_size));
    }
    profile = BuildProfile(model, x);
  }
  const Suite suite =
      GenerateSuite(model, seeds, cfg, !o.no_intermediates, profile ? &*profile : nullptr,
                    random ? Generator::kRandomNoise : Generator::kPso);
  for (const SeedFailure& f : suite.failures) {
    std::cerr << "seed " << f.seed_index << " (dataset index " << picked[f.seed_index]
              << ") failed: " << f.message << "\n";
  }
  if (suite.failures.size() == suite.seed_count) throw DataError("every seed failed");
  const SuiteReport report = MakeSuiteReport(model, suite);
  const std::string fitness = random ? "random" : std::string(FitnessName(cfg.fitness_kind));
  const std::string label = o.label.empty() ? fitness : o.label;

  json cfg_json = ToJson(cfg);
  if (random) cfg_json["fitness"] = "random";
  json seeds_json = json::array();
  for (std::size_t s = 0; s < picked.size(); ++s) {
    seeds_json.push_back({{"seed_index", s},
                          {"dataset_index", picked[s]},
                          {"label", data.labels[picked[s]]}});
  }
  json cases = json::array();
  for (const TestCase& t : suite.cases) cases.push_back(ToJson(t));
  json failures = json::array();
  for (const SeedFailure& f : suite.failures) {
    failures.push_back({{"seed_index", f.seed_index}, {"message", f.message}});
  }

  const fs::path dir(o.out);
  fs::create_directories(dir);
  const std::string p_suite = (dir / "suite.json").string();
  const std::string p_tests = (dir / "tests.csv").string();
  const std::string p_report = (dir / "report.json").string();
  const std::string p_seeds = (dir / "report.csv").string();
  const std::string p_summary = (dir / "summary.json").string();
  const std::string p_run = (dir / "run.json").string();

  WriteJson(p_suite, {{"run_manifest", "run.json"},
                      {"model", o.model},
                      {"label", label},
                      {"config", cfg_json},
                      {"input_shape", model.input_shape()},
                      {"seed_count", suite.seed_count},
                      {"seeds", seeds_json},
                      {"cases", cases},
                      {"failures", failures}});
  std::ostringstream csv;
  WriteSuiteCsv(csv, suite);
  AtomicWriteFile(p_tests, csv.str());
  json rep = ToJson(report);
  rep["run_manifest"] = "run.json";
  WriteJson(p_report, rep);
  std::ostringstream per_seed;
  WriteSuiteReportCsv(per_seed, report);
  AtomicWriteFile(p_seeds, per_seed.str());
  WriteJson(p_summary, {{label, SuiteSummary(suite, report, fitness)}});

  run.seed = o.seed;
  run.config = cfg_json;
  run.config["seeds"] = o.seeds;
  run.config["collect_intermediates"] = !o.no_intermediates;
  run.config["profile_size"] = o.profile_size;
  run.config["label"] = label;
  run.inputs = {{"model", o.model}, {"data", o.data.ToJson()}};
  run.outputs = {{"suite", p_suite},     {"tests_csv", p_tests}, {"report", p_report},
                 {"report_csv", p_seeds}, {"summary", p_summary}};
  run.Write(p_run);
  std::cout << label << ": " << suite.seed_count - suite.failures.size() << "/"
            << suite.seed_count << " seeds, " << report.case_count << " cases, "
            << report.test_error_count << " errors, " << report.error_categories.size()
            << " categories\n";
  return 0;
}

// ---- retrain -----------------------------------------------------------------

struct CleverOptions {
  int nb = 500;
  int ns = 1024;
  double radius = 0.5;
  std::string estimator = "max";

  void Add(CLI::App* c) {
    c->add_option("--nb", nb, "CLEVER batches")->capture_default_str();
    c->add_option("--ns", ns, "CLEVER samples per batch")->capture_default_str();
    c->add_option("--radius", radius, "CLEVER sampling radius (L2)")->capture_default_str();
    c->add_option("--estimator", estimator, "max | weibull")->capture_default_str();
  }

  CleverConfig Config(std::uint64_t seed) const {
    CleverConfig c;
    c.batches = nb;
    c.samples_per_batch = ns;
    c.radius = radius;
    if (estimator == "max") {
      c.estimator = LipschitzEstimator::kMaxOfBatchMaxima;
    } else if (estimator == "weibull") {
      c.estimator = LipschitzEstimator::kReverseWeibull;
    } else {
      throw UsageError("--estimator is max or weibull");
    }
    c.seed = seed;
    return c;
  }

  json ToJson() const {
    return {{"nb", nb}, {"ns", ns}, {"radius", radius}, {"estimator", estimator}};
  }
};

struct RetrainOptions {
  std::string model;
  DataOptions data;
  std::string suite;
  std::string out;
  std::string report;
  int epochs = 20;
  int batch_size = 32;
  double lr = 0.05;
  double guard = 0.05;
  bool include_intermediates = false;
  int eval_count = 0;
  double pgd_eps = 0.3;
  int pgd_steps = 40;
  double pgd_step = 0.01;
  int clever_probes = 20;
  CleverOptions clever;
  std::uint64_t seed = 0;
};

int CmdRetrain(const RetrainOptions& o, Run& run) {
  if (o.eval_count < 0 || o.clever_probes < 0) {
    throw UsageError("--eval-count and --clever-probes must be non-negative");
  }
  const Network model = LoadModel(o.model);
  const Dataset data = LoadFor(o.data, &model);
  const json sj = ReadJson(o.suite);
  std::vector<SeedInput> benign;
  std::vector<TestCase> tests;
  std::set<std::size_t> used;
  try {
    if (sj.at("input_shape").get<Shape>() != model.input_shape()) {
      throw DataError(o.suite + ": suite input shape differs from the model");
    }
    std::map<int, std::size_t> seed_at;
    for (const json& s : sj.at("seeds")) {
      const auto idx = s.at("dataset_index").get<std::size_t>();
      if (idx >= data.size()) throw DataError(o.suite + ": seed index beyond the dataset");
      seed_at[s.at("seed_index").get<int>()] = idx;
      used.insert(idx);
      benign.push_back({data.inputs[idx], data.labels[idx]});
    }
    for (const json& c : sj.at("cases")) {
      if (c.at("intermediate").get<bool>() && !o.include_intermediates) continue;
      TestCase t;
      t.seed_index = c.at("seed_index").get<int>();
      t.true_label = c.at("true_label").get<int>();
      t.intermediate = c.at("intermediate").get<bool>();
      t.generated = Tensor(model.input_shape(), c.at("generated").get<std::vector<float>>());
      if (!seed_at.count(t.seed_index)) throw DataError(o.suite + ": case names an unknown seed");
      t.seed_input = data.inputs[seed_at[t.seed_index]];
      tests.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw DataError(o.suite + ": " + e.what());
  }
  const RetrainSet set = MakeRetrainSet(benign, tests);
  RetrainConfig rc;
  rc.epochs = o.epochs;
  rc.batch_size = o.batch_size;
  rc.learning_rate = o.lr;
  rc.accuracy_guard = o.guard;
  rc.seed = o.seed;
  const Network retrained = Retrain(model, set, rc);

  std::vector<Tensor> ex;
  std::vector<int> ey;
  for (std::size_t i : data.Indices(Split::kTest)) {
    if (used.count(i)) continue;
    if (o.eval_count > 0 && ex.size() >= static_cast<std::size_t>(o.eval_count)) break;
    ex.push_back(data.inputs[i]);
    ey.push_back(data.labels[i]);
  }
  if (ex.empty()) throw DataError("no held-out test examples left for evaluation");
  PgdConfig pgd;
  pgd.epsilon = o.pgd_eps;
  pgd.steps = o.pgd_steps;
  pgd.step_size = o.pgd_step;
  const CleverConfig cc = o.clever.Config(MixSeed(o.seed, 7));
  const RetrainReport rr = CompareRetrained(model, retrained, set, ex, ey, pgd, cc,
                                            static_cast<std::size_t>(o.clever_probes), o.guard);

  const std::string manifest = Sibling(o.report, ".run.json");
  Network saved = retrained;
  saved.metadata()["run_manifest"] = fs::path(manifest).filename().string();
  SaveModel(saved, o.out);
  json rj = ToJson(rr);
  rj["evaluated"] = ex.size();
  rj["run_manifest"] = fs::path(manifest).filename().string();
  WriteJson(o.report, rj);
  std::ostringstream csv;
  csv << "phase,accuracy,pgd_asr,mean_clever,clever_probes\n";
  for (const auto& [name, s] : {std::pair{"before", rr.before}, std::pair{"after", rr.after}}) {
    csv << name << ',' << s.accuracy << ',' << s.asr << ',' << s.mean_clever << ','
        << s.clever_probes << '\n';
  }
  AtomicWriteFile(Sibling(o.report, ".csv"), csv.str());

  run.seed = o.seed;
  run.config = {{"epochs", o.epochs},
                {"batch_size", o.batch_size},
                {"learning_rate", o.lr},
                {"accuracy_guard", o.guard},
                {"include_intermediates", o.include_intermediates},
                {"eval_count", o.eval_count},
                {"pgd", {{"epsilon", pgd.epsilon}, {"steps", pgd.steps}, {"step_size", pgd.step_size}}},
                {"clever", o.clever.ToJson()},
                {"clever_probes", o.clever_probes},
                {"seed", o.seed}};
  run.inputs = {{"model", o.model}, {"data", o.data.ToJson()}, {"suite", o.suite}};
  run.outputs = {{"model", o.out}, {"report", o.report}, {"report_csv", Sibling(o.report, ".csv")}};
  run.Write(manifest);
  if (rr.accuracy_guard_tripped) {
    std::cerr << "warning: benign accuracy dropped by " << rr.accuracy_drop() << "\n";
  }
  if (rr.degenerate) std::cerr << "warning: suite held no generated tests\n";
  std::cout << "retrained on " << set.benign << " benign + " << set.generated
            << " generated: ASR " << rr.before.asr << " -> " << rr.after.asr << ", CLEVER "
            << rr.before.mean_clever << " -> " << rr.after.mean_clever << "\n";
  return 0;
}

// ---- probe -------------------------------------------------------------------

struct ProbeOptions {
  std::string model;
  DataOptions data;
  std::optional<std::size_t> index;
  bool exact = false;
  std::vector<int> scope_layers;
  int samples = 1000;
  double amplitude = 0.05;
  int draws = 5;
  double lambda = kDefaultLambda;
  std::string threshold_mode = "normalized";
  std::uint64_t seed = 0;
  std::string out;
};

int CmdProbe(const ProbeOptions& o, Run& run) {
  const Network model = LoadModel(o.model);
  const Dataset data = LoadFor(o.data, &model);
  std::size_t index = 0;
  if (o.index) {
    index = *o.index;
    if (index >= data.size()) throw UsageError("--index beyond the dataset");
  } else {
    const auto test = data.Indices(Split::kTest);
    if (test.empty()) throw DataError("dataset has no test split");
    index = test.front();
  }
  std::vector<NeuronId> scope;
  for (NeuronId n : model.neurons()) {
    if (o.scope_layers.empty() ||
        std::find(o.scope_layers.begin(), o.scope_layers.end(), n.layer) != o.scope_layers.end()) {
      scope.push_back(n);
    }
  }
  for (int l : o.scope_layers) {
    if (l < 0 || l >= static_cast<int>(model.layers().size()) || model.unit_count(l) == 0) {
      throw UsageError("--scope-layer " + std::to_string(l) + " has no neurons");
    }
  }
  if (o.threshold_mode != "normalized" && o.threshold_mode != "raw") {
    throw UsageError("--threshold-mode is normalized or raw");
  }
  const ThresholdMode mode =
      o.threshold_mode == "raw" ? ThresholdMode::kRaw : ThresholdMode::kNormalized;
  const UtilityContext ctx = UtilityContext::NoiseProbe(model, data.inputs[index], data.labels[index],
                                                        MixSeed(o.seed, 1), o.amplitude, o.draws);
  const ShapleyReport r = o.exact ? ShapleyExact(ctx, scope)
                                  : ShapleySampled(ctx, scope, o.samples, MixSeed(o.seed, 2));
  const ExcitableSet ex = SelectExcitable(r, o.lambda, mode);
  double sum = 0.0;
  for (double v : r.values) sum += v;
  const double target = r.full_utility - r.empty_utility;
  const double gap = std::abs(sum - target);
  const bool ok = gap <= 1e-9 * std::max(1.0, std::abs(target));
  json excitable = json::array();
  for (NeuronId n : ex.neurons) excitable.push_back(ToString(n));

  run.seed = o.seed;
  run.config = {{"index", index},
                {"exact", o.exact},
                {"scope_layers", o.scope_layers},
                {"samples", o.samples},
                {"amplitude", o.amplitude},
                {"draws", o.draws},
                {"lambda", o.lambda},
                {"threshold_mode", o.threshold_mode},
                {"seed", o.seed}};
  run.inputs = {{"model", o.model}, {"data", o.data.ToJson()}};
  run.outputs = {{"report", o.out}};
  const std::string manifest = Sibling(o.out, ".run.json");
  WriteJson(o.out, {{"run_manifest", fs::path(manifest).filename().string()},
                    {"dataset_index", index},
                    {"label", data.labels[index]},
                    {"report", ToJson(r)},
                    {"excitable", excitable},
                    {"excitable_ratio", ExcitableRatio(ex, model.neuron_count())},
                    {"efficiency", {{"sum", sum}, {"full_minus_empty", target}, {"gap", gap}, {"ok", ok}}}});
  run.Write(manifest);
  std::cout << (o.exact ? "exact" : "sampled") << " Shapley over " << scope.size()
            << " neurons: " << ex.size() << " excitable, efficiency gap " << gap << "\n";
  if (!ok) throw InvariantError("efficiency check failed (gap " + std::to_string(gap) + ")");
  return 0;
}

// ---- clever ------------------------------------------------------------------

struct CleverRunOptions {
  std::string model;
  DataOptions data;
  int count = 20;
  CleverOptions clever;
  std::uint64_t seed = 0;
  std::string out;
};

int CmdClever(const CleverRunOptions& o, Run& run) {
  if (o.count < 1) throw UsageError("--count must be at least 1");
  const Network model = LoadModel(o.model);
  const Dataset data = LoadFor(o.data, &model);
  const auto picked = CorrectTestIndices(model, data, static_cast<std::size_t>(o.count));
  if (picked.empty()) throw DataError("no correctly classified test example");
  std::ostringstream csv;
  WriteCleverCsvHeader(csv);
  json rows = json::array();
  double sum = 0.0;
  for (std::size_t k = 0; k < picked.size(); ++k) {
    const std::size_t i = picked[k];
    const CleverEstimate e =
        CleverL2(model, data.inputs[i], data.labels[i], o.clever.Config(MixSeed(o.seed, k)));
    WriteCleverCsv(csv, static_cast<int>(i), e);
    json j = ToJson(e);
    j["dataset_index"] = i;
    rows.push_back(std::move(j));
    sum += e.score;
  }
  const double mean = sum / static_cast<double>(picked.size());
  const std::string js = Sibling(o.out, ".json");
  const std::string manifest = Sibling(o.out, ".run.json");
  AtomicWriteFile(o.out, csv.str());
  WriteJson(js, {{"run_manifest", fs::path(manifest).filename().string()},
                 {"mean_score", mean},
                 {"estimates", rows}});
  run.seed = o.seed;
  run.config = o.clever.ToJson();
  run.config["count"] = o.count;
  run.config["seed"] = o.seed;
  run.inputs = {{"model", o.model}, {"data", o.data.ToJson()}};
  run.outputs = {{"csv", o.out}, {"json", js}};
  run.Write(manifest);
  std::cout << "CLEVER over " << picked.size() << " inputs: mean " << mean << "\n";
  return 0;
}

// ---- attack ------------------------------------------------------------------

struct AttackOptions {
  std::string model;
  DataOptions data;
  std::string method = "pgd";
  double eps = 0.3;
  int steps = 40;
  double step_size = 0.01;
  bool random_start = false;
  int count = 0;
  std::uint64_t seed = 0;
  std::string out;
};

int CmdAttack(const AttackOptions& o, Run& run) {
  if (o.method != "pgd" && o.method != "fgsm") throw UsageError("--method is pgd or fgsm");
  if (o.count < 0) throw UsageError("--count must be non-negative");
  const Network model = LoadModel(o.model);
  const Dataset data = LoadFor(o.data, &model);
  std::vector<Tensor> x, adv;
  std::vector<int> y;
  for (std::size_t i : data.Indices(Split::kTest)) {
    if (o.count > 0 && x.size() >= static_cast<std::size_t>(o.count)) break;
    x.push_back(data.inputs[i]);
    y.push_back(data.labels[i]);
  }
  if (x.empty()) throw DataError("dataset has no test split");
  PgdConfig pgd;
  pgd.epsilon = o.eps;
  pgd.steps = o.steps;
  pgd.step_size = o.step_size;
  pgd.random_start = o.random_start;
  for (std::size_t i = 0; i < x.size(); ++i) {
    pgd.seed = MixSeed(o.seed, i);
    adv.push_back(o.method == "fgsm" ? AttackFgsm(model, x[i], y[i], o.eps)
                                     : AttackPgd(model, x[i], y[i], pgd));
  }
  const double clean = Accuracy(model, x, y);
  const double asr = AttackSuccessRate(model, adv, y);
  const std::string manifest = Sibling(o.out, ".run.json");
  WriteJson(o.out, {{"run_manifest", fs::path(manifest).filename().string()},
                    {"method", o.method},
                    {"epsilon", o.eps},
                    {"count", x.size()},
                    {"clean_accuracy", clean},
                    {"asr", asr}});
  run.seed = o.seed;
  run.config = {{"method", o.method},
                {"epsilon", o.eps},
                {"steps", o.steps},
                {"step_size", o.step_size},
                {"random_start", o.random_start},
                {"count", o.count},
                {"seed", o.seed}};
  run.inputs = {{"model", o.model}, {"data", o.data.ToJson()}};
  run.outputs = {{"report", o.out}};
  run.Write(manifest);
  std::cout << o.method << " eps " << o.eps << ": clean acc " << clean << ", ASR " << asr << "\n";
  return 0;
}

// ---- report --merge ----------------------------------------------------------

struct ReportOptions {
  std::vector<std::string> merge;
  std::string out;
};

int CmdReport(const ReportOptions& o, Run& run) {
  if (o.merge.empty()) throw UsageError("report needs --merge FILE...");
  json merged = json::object();
  for (const std::string& path : o.merge) {
    const json j = ReadJson(path);
    if (!j.is_object()) throw DataError(path + ": expected a keyed object");
    for (const auto& [key, value] : j.items()) {
      if (merged.contains(key) && merged[key] != value) {
        throw DataError(path + ": key '" + key + "' conflicts with an earlier file");
      }
      merged[key] = value;
    }
  }
  // json objects iterate in key order, so rows come out sorted.
  std::set<std::string> columns;
  for (const auto& [key, value] : merged.items()) {
    if (value.is_object()) {
      for (const auto& [c, v] : value.items()) columns.insert(c);
    } else {
      columns.insert("value");
    }
  }
  std::ostringstream csv;
  csv << "key";
  for (const std::string& c : columns) csv << ',' << c;
  csv << '\n';
  for (const auto& [key, value] : merged.items()) {
    csv << Csv(key);
    for (const std::string& c : columns) {
      json cell;
      if (value.is_object()) {
        if (value.contains(c)) cell = value[c];
      } else if (c == "value") {
        cell = value;
      }
      csv << ',' << Csv(cell);
    }
    csv << '\n';
  }
  const std::string csv_path = Sibling(o.out, ".csv");
  WriteJson(o.out, merged);
  AtomicWriteFile(csv_path, csv.str());
  run.config = {{"merge", o.merge}};
  run.inputs = {{"files", o.merge}};
  run.outputs = {{"json", o.out}, {"csv", csv_path}};
  run.Write(Sibling(o.out, ".run.json"));
  std::cout << "merged " << merged.size() << " rows from " << o.merge.size() << " files\n";
  return 0;
}

// ---- dispatch ----------------------------------------------------------------

int Dispatch(const std::vector<std::string>& args, int depth);

int RunCli(const std::vector<std::string>& args, int depth) {
  CLI::App app{"exfuzz: Shapley-guided fuzzing of small neural networks"};
  app.set_version_flag("--version", EXFUZZ_VERSION);
  app.require_subcommand(1);

  TrainOptions train;
  auto* t = app.add_subcommand("train", "train a model under a regime");
  train.data.Add(t);
  t->add_option("--arch", train.arch, "linear | mlp64 | lenet")->capture_default_str();
  t->add_option("--regime", train.regime, "well | under | over | polluted")->capture_default_str();
  t->add_option("--epochs", train.epochs);
  t->add_option("--batch-size", train.batch_size);
  t->add_option("--lr", train.lr);
  t->add_option("--train-limit", train.train_limit);
  t->add_option("--alpha", train.alpha, "pollution rate");
  t->add_option("--target-class", train.target_class);
  t->add_option("--patch-min", train.patch_min);
  t->add_option("--patch-max", train.patch_max);
  t->add_option("--seed", train.seed)->capture_default_str();
  t->add_option("--out", train.out, "model manifest path")->required();

  FuzzOptions fuzz;
  auto* f = app.add_subcommand("fuzz", "generate a test suite");
  f->add_option("--model", fuzz.model)->required();
  fuzz.data.Add(f);
  f->add_option("--seeds", fuzz.seeds, "number of seeds")->capture_default_str();
  f->add_option("--fitness", fuzz.fitness, "excitable | cached | nc | snac | random")
      ->capture_default_str();
  f->add_option("--iterations", fuzz.iterations)->capture_default_str();
  f->add_option("--population", fuzz.population)->capture_default_str();
  f->add_option("--lambda", fuzz.lambda)->capture_default_str();
  f->add_option("--epsilon", fuzz.epsilon, "stop once g_best exceeds this")->capture_default_str();
  f->add_option("--linf", fuzz.linf)->capture_default_str();
  f->add_option("--velocity-clamp", fuzz.velocity_clamp)->capture_default_str();
  f->add_option("--c1", fuzz.c1)->capture_default_str();
  f->add_option("--c2", fuzz.c2)->capture_default_str();
  f->add_option("--samples", fuzz.samples, "Shapley permutations")->capture_default_str();
  f->add_flag("--per-layer", fuzz.per_layer, "one Shapley game per layer");
  f->add_option("--threshold-mode", fuzz.threshold_mode)->capture_default_str();
  f->add_option("--normalization", fuzz.normalization, "reference | candidate")
      ->capture_default_str();
  f->add_option("--coverage-threshold", fuzz.coverage_threshold)->capture_default_str();
  f->add_flag("--no-random-init", fuzz.no_random_init);
  f->add_flag("--no-intermediates", fuzz.no_intermediates);
  f->add_option("--profile-size", fuzz.profile_size)->capture_default_str();
  f->add_option("--seed", fuzz.seed)->capture_default_str();
  f->add_option("--label", fuzz.label, "row key in summary.json");
  f->add_option("--out", fuzz.out, "output directory")->required();

  RetrainOptions retrain;
  auto* r = app.add_subcommand("retrain", "retrain with generated tests");
  r->add_option("--model", retrain.model)->required();
  retrain.data.Add(r);
  r->add_option("--suite", retrain.suite, "suite.json from fuzz")->required();
  r->add_option("--out", retrain.out, "retrained model path")->required();
  r->add_option("--report", retrain.report, "report json path")->required();
  r->add_option("--epochs", retrain.epochs)->capture_default_str();
  r->add_option("--batch-size", retrain.batch_size)->capture_default_str();
  r->add_option("--lr", retrain.lr)->capture_default_str();
  r->add_option("--guard", retrain.guard, "tolerated accuracy drop")->capture_default_str();
  r->add_flag("--include-intermediates", retrain.include_intermediates);
  r->add_option("--eval-count", retrain.eval_count, "held-out examples (0 = all)")
      ->capture_default_str();
  r->add_option("--pgd-eps", retrain.pgd_eps)->capture_default_str();
  r->add_option("--pgd-steps", retrain.pgd_steps)->capture_default_str();
  r->add_option("--pgd-step", retrain.pgd_step)->capture_default_str();
  r->add_option("--clever-probes", retrain.clever_probes)->capture_default_str();
  retrain.clever.Add(r);
  r->add_option("--seed", retrain.seed)->capture_default_str();

  ProbeOptions probe;
  auto* p = app.add_subcommand("probe", "Shapley values of neurons for one input");
  p->add_option("--model", probe.model)->required();
  probe.data.Add(p);
  p->add_option("--index", probe.index, "dataset index (default: first test example)");
  p->add_flag("--exact", probe.exact, "enumerate every coalition");
  p->add_option("--scope-layer", probe.scope_layers, "restrict to a layer (repeatable)");
  p->add_option("--samples", probe.samples)->capture_default_str();
  p->add_option("--amplitude", probe.amplitude, "noise probe amplitude")->capture_default_str();
  p->add_option("--draws", probe.draws)->capture_default_str();
  p->add_option("--lambda", probe.lambda)->capture_default_str();
  p->add_option("--threshold-mode", probe.threshold_mode)->capture_default_str();
  p->add_option("--seed", probe.seed)->capture_default_str();
  p->add_option("--out", probe.out)->required();

  CleverRunOptions clever;
  auto* c = app.add_subcommand("clever", "CLEVER scores of test examples");
  c->add_option("--model", clever.model)->required();
  clever.data.Add(c);
  c->add_option("--count", clever.count)->capture_default_str();
  clever.clever.Add(c);
  c->add_option("--seed", clever.seed)->capture_default_str();
  c->add_option("--out", clever.out, "CSV path; JSON written beside it")->required();

  AttackOptions attack;
  auto* a = app.add_subcommand("attack", "FGSM or PGD over the test split");
  a->add_option("--model", attack.model)->required();
  attack.data.Add(a);
  a->add_option("--method", attack.method)->capture_default_str();
  a->add_option("--eps", attack.eps)->capture_default_str();
  a->add_option("--steps", attack.steps)->capture_default_str();
  a->add_option("--step-size", attack.step_size)->capture_default_str();
  a->add_flag("--random-start", attack.random_start);
  a->add_option("--count", attack.count, "test examples (0 = all)")->capture_default_str();
  a->add_option("--seed", attack.seed)->capture_default_str();
  a->add_option("--out", attack.out)->required();

  ReportOptions report;
  auto* m = app.add_subcommand("report", "merge keyed report files");
  m->add_option("--merge", report.merge)->required()->expected(1, -1);
  m->add_option("--out", report.out, "merged JSON; CSV written beside it")->required();

  std::string rerun_manifest;
  auto* rr = app.add_subcommand("rerun", "replay a command from its run manifest");
  rr->add_option("--manifest", rerun_manifest)->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  Run run;
  run.argv = args;
  if (*t) {
    run.command = "train";
    return CmdTrain(train, run);
  }
  if (*f) {
    run.command = "fuzz";
    return CmdFuzz(fuzz, run);
  }
  if (*r) {
    run.command = "retrain";
    return CmdRetrain(retrain, run);
  }
  if (*p) {
    run.command = "probe";
    return CmdProbe(probe, run);
  }
  if (*c) {
    run.command = "clever";
    return CmdClever(clever, run);
  }
  if (*a) {
    run.command = "attack";
    return CmdAttack(attack, run);
  }
  if (*m) {
    run.command = "report";
    return CmdReport(report, run);
  }
  if (*rr) {
    if (depth > 0) throw UsageError("a rerun manifest cannot name another rerun");
    const json man = ReadJson(rerun_manifest);
    if (!man.contains("argv") || !man["argv"].is_array()) {
      throw DataError(rerun_manifest + ": manifest has no argv");
    }
    if (man.value("version", "") != EXFUZZ_VERSION) {
      std::cerr << "warning: manifest written by version " << man.value("version", "?") << "\n";
    }
    // Recorded paths are relative to the directory the command ran in.
    if (man.contains("cwd")) {
      std::error_code ec;
      fs::current_path(man["cwd"].get<std::string>(), ec);
      if (ec) throw DataError(rerun_manifest + ": cannot enter " + man["cwd"].dump());
    }
    return Dispatch(man["argv"].get<std::vector<std::string>>(), depth + 1);
  }
  throw InvariantError("no subcommand dispatched");
}

int Dispatch(const std::vector<std::string>& args, int depth) {
  try {
    ThreadCount();
    return RunCli(args, depth);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 2;
  } catch (const InvariantError& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace
}  // namespace exfuzz::cli

int main(int argc, char** argv) {
  return exfuzz::cli::Dispatch(std::vector<std::string>(argv + 1, argv + argc), 0);
}
