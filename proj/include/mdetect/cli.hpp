#pragma once

// Pipeline commands behind the command-line tool. Each writes its outputs
// plus a manifest.json into its own directory and returns a summary.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mdetect/config.hpp"
#include "mdetect/dataset_io.hpp"
#include "mdetect/digest.hpp"
#include "mdetect/encoder.hpp"
#include "mdetect/evaluator.hpp"
#include "mdetect/nn/checkpoint.hpp"
#include "mdetect/nn/model_zoo.hpp"
#include "mdetect/report.hpp"
#include "mdetect/testbed.hpp"
#include "mdetect/trace_io.hpp"
#include "mdetect/trainer.hpp"

namespace mdetect::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitRuntime = 3;
inline constexpr const char* kOutputRootEnv = "MDETECT_OUTPUT_ROOT";
inline constexpr const char* kDefaultOutputRoot = "mdetect-out";

inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kHistoryFile = "history.csv";
inline constexpr const char* kSummaryFile = "summary.json";
inline constexpr const char* kConfigFile = "config.json";

// --output-root flag, then the environment variable, then the default.
inline fs::path resolve_output_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kOutputRootEnv); env != nullptr && *env != '\0') return env;
  return kDefaultOutputRoot;
}

struct Context {
  PipelineConfig config;
  fs::path output_root = kDefaultOutputRoot;
  std::ostream* log = &std::cerr;
};

// Paths inside the output root are recorded relative to it so manifests from
// different roots compare equal.
inline std::string recorded_path(const fs::path& p, const fs::path& root) {
  const auto abs = fs::weakly_canonical(fs::absolute(p));
  const auto base = fs::weakly_canonical(fs::absolute(root));
  const auto rel = abs.lexically_relative(base);
  if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  return abs.generic_string();
}

inline std::string experiment_dir_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "exp-%03zu", i);
  return buf;
}

inline RunManifest base_manifest(const Context& ctx, const std::string& command) {
  RunManifest m;
  m.command = command;
  m.config_digest = config_digest(ctx.config);
  return m;
}

inline void write_config_copy(const fs::path& dir, const Context& ctx) {
  write_text_file(dir / kConfigFile, to_json(ctx.config).dump(2) + "\n");
}

// --- simulate ---------------------------------------------------------------

struct SimulateResult {
  fs::path corpus_dir;
  std::size_t experiments = 0;
  std::size_t samples = 0;
};

inline SimulateResult cmd_simulate(const Context& ctx, fs::path out_dir = {}) {
  const auto& cc = ctx.config.corpus;
  if (out_dir.empty()) out_dir = ctx.output_root / "corpus";
  fs::create_directories(out_dir);
  const auto profiles = profile_library(cc.experiments, cc.profile_seed, cc.families);
  std::vector<std::string> files;
  SimulateResult res{out_dir, 0, 0};
  for (int i = 0; i < cc.experiments; ++i) {
    ExperimentConfig cfg = cc.experiment;
    cfg.malware = profiles[static_cast<std::size_t>(i)];
    cfg.rng_seed = mix_seed(cc.seed, static_cast<std::uint64_t>(i));
    const ExperimentTrace trace = simulate_experiment(cfg);
    const std::string name = experiment_dir_name(static_cast<std::size_t>(i));
    write_trace(out_dir / name, trace);
    files.push_back(name + "/" + kTraceMetaFile);
    files.push_back(name + "/" + kTraceSnapshotsFile);
    ++res.experiments;
    res.samples += trace.snapshots.size();
    *ctx.log << "simulated " << name << " (" << trace.profile_name() << ", injection at " << trace.injection_time_s
             << " s)\n";
  }
  write_config_copy(out_dir, ctx);
  files.push_back(kConfigFile);
  auto m = base_manifest(ctx, "simulate");
  m.seeds = {{"corpus", cc.seed}, {"profiles", cc.profile_seed}};
  m.inputs = {{"corpus_dir", recorded_path(out_dir, ctx.output_root)}};
  write_manifest(out_dir, m, files);
  return res;
}

// --- encode -----------------------------------------------------------------

inline std::vector<std::string> list_experiments(const fs::path& corpus_dir) {
  if (!fs::is_directory(corpus_dir)) throw ValidationError("corpus directory not found: " + corpus_dir.string());
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(corpus_dir)) {
    if (e.is_directory() && fs::exists(e.path() / kTraceMetaFile)) names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw ValidationError("no experiment traces under " + corpus_dir.string());
  return names;
}

struct EncodeResult {
  fs::path dataset_dir;
  std::array<std::size_t, 3> experiments{};
  std::array<std::size_t, 3> samples{};
};

inline EncodeResult cmd_encode(const Context& ctx, const fs::path& corpus_dir, fs::path out_dir = {}) {
  if (out_dir.empty()) out_dir = ctx.output_root / "dataset";
  const auto names = list_experiments(corpus_dir);
  std::vector<ExperimentTrace> corpus;
  corpus.reserve(names.size());
  std::vector<std::string> over_budget;
  for (const auto& n : names) {
    corpus.push_back(read_trace(corpus_dir / n));
    try {
      assign_rows(corpus.back());
    } catch (const CapacityError& e) {
      over_budget.push_back(n + " (" + e.what() + ")");
    }
  }
  if (!over_budget.empty()) {
    std::string msg = "experiments exceed the " + std::to_string(kMaxProcesses) + "-process budget:";
    for (const auto& o : over_budget) msg += "\n  " + o;
    throw CapacityError(msg);
  }
  const auto& sc = ctx.config.split;
  const DatasetSplit split = split_dataset(corpus, sc.ratios, sc.seed);
  StoredDataset ds;
  ds.info.ratios = sc.ratios;
  ds.info.seed = sc.seed;
  ds.info.experiment_names = names;
  ds.info.membership = {split.train, split.validation, split.test};
  ds.data = materialize(corpus, split);
  auto files = write_dataset(out_dir, ds);
  write_config_copy(out_dir, ctx);
  files.push_back(kConfigFile);
  auto m = base_manifest(ctx, "encode");
  m.seeds = {{"split", sc.seed}};
  m.inputs = {{"corpus_dir", recorded_path(corpus_dir, ctx.output_root)},
              {"corpus_manifest", fs::exists(corpus_dir / kManifestFile) ? artifact_digest(corpus_dir / kManifestFile) : ""}};
  write_manifest(out_dir, m, files);
  EncodeResult res{out_dir, {split.train.size(), split.validation.size(), split.test.size()},
                   {ds.data.train.size(), ds.data.validation.size(), ds.data.test.size()}};
  *ctx.log << "encoded " << names.size() << " experiments: " << res.experiments[0] << "/" << res.experiments[1] << "/"
           << res.experiments[2] << " (train/validation/test), " << res.samples[0] << "/" << res.samples[1] << "/"
           << res.samples[2] << " samples\n";
  return res;
}

// --- train ------------------------------------------------------------------

struct TrainCommandResult {
  fs::path run_dir;
  TimeToBest best;
  TrainHistory history;
};

inline TrainCommandResult cmd_train(const Context& ctx, const fs::path& dataset_dir, std::string model = {},
                                    fs::path out_dir = {}) {
  if (model.empty()) model = ctx.config.train.model;
  nn::Network<float> net(nn::build_model(model));  // unknown names fail here
  if (out_dir.empty()) out_dir = ctx.output_root / "runs" / model;
  const StoredDataset ds = read_dataset(dataset_dir);
  nn::sample_channels(net);
  net.initialize(ctx.config.train.init_seed);
  const auto& tc = ctx.config.train.train;
  auto result = train(net, ds.data, tc, [&](const EpochRecord& e) {
    *ctx.log << model << " epoch " << e.epoch << "/" << tc.epochs << " train_loss " << fixed(e.train_loss, 4)
             << " val_loss " << fixed(e.validation_loss, 4) << " val_acc " << fixed(e.validation_accuracy, 4) << " ("
             << fixed(e.cumulative_s, 1) << " s)\n";
  });
  fs::create_directories(out_dir);
  nn::write_checkpoint(out_dir / kCheckpointFile, nn::make_checkpoint(net, result.best_epoch));
  write_history(out_dir / kHistoryFile, result.history);
  const auto best = record_time_to_best(result.history);
  const nlohmann::json summary = {{"model", model},
                                  {"best_validation_accuracy", best.best_validation_accuracy},
                                  {"best_epoch", best.best_epoch},
                                  {"elapsed_s", best.elapsed_s},
                                  {"epochs", tc.epochs},
                                  {"train_samples", ds.data.train.size()},
                                  {"validation_samples", ds.data.validation.size()}};
  write_text_file(out_dir / kSummaryFile, summary.dump(2) + "\n");
  write_config_copy(out_dir, ctx);
  auto m = base_manifest(ctx, "train");
  m.seeds = {{"init", ctx.config.train.init_seed}, {"shuffle", tc.seed}, {"split", ds.info.seed}};
  m.inputs = {{"dataset_dir", recorded_path(dataset_dir, ctx.output_root)},
              {"dataset_manifest", fs::exists(dataset_dir / kManifestFile) ? artifact_digest(dataset_dir / kManifestFile) : ""},
              {"model", model}};
  write_manifest(out_dir, m, {kCheckpointFile, kHistoryFile, kSummaryFile, kConfigFile});
  return {out_dir, best, std::move(result.history)};
}

// --- evaluate ---------------------------------------------------------------

inline nn::Network<float> load_run_network(const fs::path& run_dir) {
  const auto path = run_dir / kCheckpointFile;
  if (!fs::exists(path)) throw ValidationError("no checkpoint at " + path.string());
  return nn::network_from_checkpoint<float>(nn::read_checkpoint(path));
}

struct EvaluateResult {
  fs::path eval_dir;
  MetricReport report;
};

inline EvaluateResult cmd_evaluate(const Context& ctx, const fs::path& run_dir, const fs::path& dataset_dir,
                                   fs::path out_dir = {}) {
  if (out_dir.empty()) out_dir = run_dir / "eval";
  auto net = load_run_network(run_dir);
  const StoredDataset ds = read_dataset(dataset_dir);
  auto rep = evaluate_model(net, ds.data.test, 0);
  rep.latency = detection_time(net, ds.data.test, ctx.config.evaluate.latency_repetitions,
                               ctx.config.evaluate.latency_warmup);
  fs::create_directories(out_dir);
  write_text_file(out_dir / "metrics.json", metrics_json(rep, "test", ds.data.test.size()).dump(2) + "\n");
  std::vector<std::string> files = {"metrics.json", "scores.csv"};
  write_text_file(out_dir / "scores.csv", render_scores(rep, ds.data.test));
  if (!rep.auc_undefined) {
    write_text_file(out_dir / "roc.csv", render_roc({{rep.model, rep.roc}}));
    files.push_back("roc.csv");
  }
  auto m = base_manifest(ctx, "evaluate");
  m.inputs = {{"run_dir", recorded_path(run_dir, ctx.output_root)},
              {"checkpoint", artifact_digest(run_dir / kCheckpointFile)},
              {"dataset_dir", recorded_path(dataset_dir, ctx.output_root)}};
  write_manifest(out_dir, m, files);
  *ctx.log << rep.model << ": accuracy " << fixed(100 * rep.values.accuracy, 1) << " precision "
           << fixed(100 * rep.values.precision, 1) << " recall " << fixed(100 * rep.values.recall, 1) << " f1 "
           << fixed(100 * rep.values.f1, 1) << " auc " << fixed(rep.auc, 4) << " latency " << fixed(rep.latency.median_ms, 2)
           << " ms\n";
  return {out_dir, std::move(rep)};
}

// --- benchmark --------------------------------------------------------------

// Uniform [0, 1) samples for latency runs that need no real data.
inline EncodedSet random_samples(std::size_t n, std::uint64_t seed) {
  EncodedSet s;
  Rng rng(seed);
  s.values.resize(n * kSampleSize);
  for (auto& v : s.values) v = static_cast<float>(rng.uniform());
  s.labels.assign(n, 0);
  s.experiment.assign(n, 0);
  s.timestamp_s.assign(n, 0);
  return s;
}

struct BenchmarkRow {
  std::string model;
  std::size_t parameters = 0;
  LatencyStats latency;
};

// Untrained (seeded) weights: latency depends on the architecture only.
inline std::vector<BenchmarkRow> cmd_benchmark(const Context& ctx, const fs::path& dataset_dir = {}, fs::path out_dir = {}) {
  const auto& bc = ctx.config.benchmark;
  if (out_dir.empty()) out_dir = ctx.output_root / "benchmark";
  const EncodedSet samples = dataset_dir.empty() ? random_samples(16, bc.init_seed) : read_dataset(dataset_dir).data.test;
  std::vector<BenchmarkRow> rows;
  std::string csv = "model,parameters,median_ms,mean_ms,warmup,repetitions\n";
  for (const auto& name : bc.models) {
    nn::Network<float> net(nn::build_model(name));
    net.initialize(bc.init_seed);
    BenchmarkRow row{name, net.spec().param_count(), detection_time(net, samples, bc.repetitions, bc.warmup)};
    csv += name + ',' + std::to_string(row.parameters) + ',' + num(row.latency.median_ms) + ',' + num(row.latency.mean_ms) +
           ',' + std::to_string(row.latency.warmup) + ',' + std::to_string(row.latency.repetitions) + '\n';
    *ctx.log << name << ": median " << fixed(row.latency.median_ms, 2) << " ms, mean " << fixed(row.latency.mean_ms, 2)
             << " ms\n";
    rows.push_back(std::move(row));
  }
  fs::create_directories(out_dir);
  write_text_file(out_dir / "latency.csv", csv);
  auto m = base_manifest(ctx, "benchmark");
  m.seeds = {{"init", bc.init_seed}};
  m.inputs = {{"dataset_dir", dataset_dir.empty() ? "" : recorded_path(dataset_dir, ctx.output_root)}};
  write_manifest(out_dir, m, {"latency.csv"});
  return rows;
}

// --- report -----------------------------------------------------------------

struct ReportResult {
  fs::path report_dir;
  ComparisonReport report;
};

// Evaluates each run's checkpoint on the test split and renders the
// comparison. Runs without history.csv still get a metrics row.
inline ReportResult cmd_report(const Context& ctx, const std::vector<fs::path>& run_dirs, const fs::path& dataset_dir,
                               fs::path out_dir = {}) {
  if (run_dirs.empty()) throw ValidationError("report needs at least one run directory");
  if (out_dir.empty()) out_dir = ctx.output_root / "report";
  const StoredDataset ds = read_dataset(dataset_dir);
  std::vector<ModelResult> results;
  nlohmann::json inputs = {{"dataset_dir", recorded_path(dataset_dir, ctx.output_root)}, {"runs", nlohmann::json::array()}};
  for (const auto& run : run_dirs) {
    auto net = load_run_network(run);
    ModelResult r;
    r.report = evaluate_model(net, ds.data.test, 0);
    r.report.latency = detection_time(net, ds.data.test, ctx.config.evaluate.latency_repetitions,
                                      ctx.config.evaluate.latency_warmup);
    if (fs::exists(run / kHistoryFile)) r.history = read_history(run / kHistoryFile);
    inputs["runs"].push_back({{"dir", recorded_path(run, ctx.output_root)}, {"checkpoint", artifact_digest(run / kCheckpointFile)}});
    results.push_back(std::move(r));
  }
  ReportResult res{out_dir, build_comparison(results)};
  for (const auto& w : res.report.warnings) *ctx.log << "warning: " << w << "\n";
  auto files = write_comparison(out_dir, res.report);
  auto m = base_manifest(ctx, "report");
  m.inputs = inputs;
  write_manifest(out_dir, m, files);
  return res;
}

}  // namespace mdetect::cli
