// Acceptance checks: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <cstring>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include <unistd.h>

#include "mdetect/mdetect.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace mdetect;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kF1Tolerance = 0.15;        // percentage points
constexpr double kAucTolerance = 1e-9;
constexpr double kShuffledAucBand = 0.02;
constexpr double kGradRelTolerance = 1e-4;
constexpr std::size_t kGradSamples = 120;
constexpr double kTargetTestAccuracy = 0.95;
constexpr int kMaxEpochs = 10;
constexpr int kTrainEpochs = 4;
constexpr double kTimeBudgetS = 600.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Bytes = std::vector<std::uint8_t>;

std::string fmt(double v, int decimals = 4) { return fixed(v, decimals); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --- 1 ---------------------------------------------------------------------------

Outcome published_f1() {
  struct Row {
    const char* model;
    double precision, recall, f1;
  };
  const Row rows[] = {{"LeNet-5", 94.7, 80.9, 87.2},     {"ResNet-50", 86.0, 88.9, 87.4},
                      {"ResNet-101", 82.3, 89.7, 85.9},  {"ResNet-152", 89.0, 87.8, 88.4},
                      {"DenseNet-121", 100.0, 84.6, 91.5}, {"DenseNet-169", 99.7, 84.4, 91.4},
                      {"DenseNet-201", 99.5, 84.6, 91.5}};
  int ok = 0;
  double worst = 0;
  for (const auto& r : rows) {
    const double diff = std::abs(100 * f1_score(r.precision / 100, r.recall / 100) - r.f1);
    worst = std::max(worst, diff);
    ok += diff <= kF1Tolerance ? 1 : 0;
  }
  return {ok == 7, std::to_string(ok) + "/7 rows, max |dF1| " + fmt(worst, 3)};
}

// --- 2 ---------------------------------------------------------------------------

Outcome confusion_vs_tally() {
  Rng rng(2024);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 500));
    Bytes pred(n), label(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = rng.bernoulli(0.5);
      label[i] = rng.bernoulli(rng.uniform());
    }
    const auto c = confusion(pred, label);
    const auto t = testsupport::brute_tally(pred, label);
    const auto m = metrics(c);
    bool same = c.tp == t.tp && c.tn == t.tn && c.fp == t.fp && c.fn == t.fn;
    same = same && std::abs(m.accuracy - (t.tp + t.tn) / static_cast<double>(n)) < 1e-12;
    if (t.tp + t.fp > 0) same = same && std::abs(m.precision - t.tp / (t.tp + t.fp)) < 1e-12;
    if (t.tp + t.fn > 0) same = same && std::abs(m.recall - t.tp / (t.tp + t.fn)) < 1e-12;
    if (!same) ++mismatches;
  }
  return {mismatches == 0, "1000 random vectors, " + std::to_string(mismatches) + " mismatches"};
}

// --- 3 ---------------------------------------------------------------------------

Outcome auc_properties() {
  Rng rng(99);
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 1000));
    std::vector<double> s(n);
    Bytes y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.uniform_int(0, 15)) / 15;
      y[i] = rng.bernoulli(0.2 + 0.6 * s[i]);
    }
    y[0] = 1;
    y[n - 1] = 0;
    const auto r = roc_and_auc(s, y);
    worst = std::max({worst, std::abs(testsupport::trapezoid_area(r.curve) - testsupport::pairwise_auc(s, y)),
                      std::abs(r.auc - testsupport::pairwise_auc(s, y))});
  }
  const std::size_t n = 10000;
  std::vector<double> s(n);
  Bytes y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = i % 2;
    s[i] = y[i] ? 0.6 + 0.4 * rng.uniform() : 0.4 * rng.uniform();
  }
  const double perfect = roc_and_auc(s, y).auc;
  rng.shuffle(y);
  const double shuffled = roc_and_auc(s, y).auc;
  const bool pass = worst <= kAucTolerance && perfect == 1.0 && std::abs(shuffled - 0.5) <= kShuffledAucBand;
  return {pass, "max |trapezoid - pairwise| " + std::to_string(worst) + ", separated " + fmt(perfect) + ", shuffled " +
                    fmt(shuffled)};
}

// --- 4 ---------------------------------------------------------------------------

Outcome lenet_shapes() {
  const auto m = nn::build_lenet5();
  auto shape = [&](const char* layer) { return m.layers.at(static_cast<std::size_t>(*m.find(layer))).out_shape; };
  const std::vector<std::pair<const char*, nn::Shape>> expected = {
      {"input", {1, 120, 45}}, {"conv1", {32, 120, 45}}, {"pool1", {32, 60, 23}},
      {"conv2", {64, 60, 23}}, {"pool2", {64, 30, 12}},  {"flatten", {23040, 1, 1}},
      {"fc1", {1024, 1, 1}},   {"fc2", {512, 1, 1}},     {"fc3", {2, 1, 1}}};
  std::string trace;
  bool pass = true;
  for (const auto& [layer, want] : expected) {
    const auto got = shape(layer);
    pass = pass && got.size() == want.size() && (want.h == 1 || got == want);
    trace += std::string(trace.empty() ? "" : " -> ") + got.str();
  }
  nn::Network<float> net(m);
  std::vector<float> x(kSampleSize, 0.5f);
  pass = pass && net.forward(x, 1, nn::Mode::eval).size() == 2;
  return {pass, trace};
}

// --- 5 ---------------------------------------------------------------------------

Outcome architecture_structure() {
  std::size_t blocks = 0, dense = 0;
  std::string failures;
  Rng rng(5);
  for (const char* name : {"resnet50", "resnet101", "resnet152"}) {
    nn::Network<float> net(nn::build_model(name));
    net.initialize(1);
    for (const auto& blk : net.spec().residual_blocks) {
      for (int id : blk.branch_layers) {
        const auto& layer = net.spec().layers[static_cast<std::size_t>(id)].name;
        for (const char* suffix : {".weight", ".bias"}) {
          if (auto* t = net.find_tensor(layer + suffix)) std::fill(t->value.begin(), t->value.end(), 0.0f);
        }
      }
    }
    std::vector<float> x(3 * kSampleSize);
    for (auto& v : x) v = static_cast<float>(rng.uniform());
    net.set_retain_activations(true);
    net.forward(x, 1, nn::Mode::eval);
    for (const auto& blk : net.spec().residual_blocks) {
      const auto& sc = net.activation(blk.shortcut);
      const auto& out = net.activation(blk.output);
      bool ok = sc.size() == out.size();
      for (std::size_t k = 0; ok && k < sc.size(); ++k) ok = out[k] == std::max(0.0f, sc[k]);
      if (!ok) failures += " " + std::string(name) + ":" + blk.name;
      ++blocks;
    }
  }
  for (const char* name : {"densenet121", "densenet169", "densenet201"}) {
    const auto spec = nn::build_model(name);
    for (const auto& d : spec.dense_layers) {
      const auto& in = spec.layers[static_cast<std::size_t>(d.input)].out_shape;
      const auto& out = spec.layers[static_cast<std::size_t>(d.output)].out_shape;
      const bool ok = in.c == d.entry_channels + d.index * d.growth &&
                      out.c == d.entry_channels + (d.index + 1) * d.growth && in.h == out.h && in.w == out.w;
      if (!ok) failures += " " + std::string(name) + ":" + d.name;
      ++dense;
    }
  }
  int logits_ok = 0;
  for (const char* name : nn::model_names()) {
    nn::Network<float> net(nn::build_model(name));
    const auto& in = net.spec().input_shape();
    std::vector<float> x(in.size(), 0.25f);
    if (in.h == 120 && in.w == 45 && net.forward(x, 1, nn::Mode::eval).size() == 2) ++logits_ok;
  }
  const bool pass = failures.empty() && logits_ok == 7 && blocks == 16 + 33 + 50 && dense == 58 + 82 + 98;
  return {pass, std::to_string(blocks) + " residual blocks, " + std::to_string(dense) + " dense layers, " +
                    std::to_string(logits_ok) + "/7 models emit 2 logits" +
                    (failures.empty() ? "" : "; failed:" + failures)};
}

// --- 6 ---------------------------------------------------------------------------

Outcome gradient_check() {
  std::string detail;
  bool pass = true;
  std::uint64_t seed = 1;
  for (const auto& spec : {testsupport::toy_lenet(), testsupport::toy_resnet(), testsupport::toy_densenet()}) {
    nn::Network<double> net(spec);
    net.initialize(seed);
    const auto r = testsupport::gradient_check(net, kGradSamples, seed++);
    pass = pass && r.checked >= 100 && r.max_relative_error <= kGradRelTolerance;
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s%s %zu params max rel %.2e", detail.empty() ? "" : ", ", spec.name.c_str(),
                  r.checked, r.max_relative_error);
    detail += buf;
  }
  return {pass, "12x9 input: " + detail};
}

// --- 7 ---------------------------------------------------------------------------

Outcome separable_training() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto corpus =
      generate_corpus(20, profile_library(20, 11, {MalwareFamily::cpu_spinner, MalwareFamily::io_flooder}), 42);
  const auto split = split_dataset(corpus, {}, 7);
  const auto data = materialize(corpus, split);
  nn::Network<float> net(nn::build_lenet5());
  net.initialize(3);
  TrainConfig cfg;
  cfg.epochs = kTrainEpochs;
  cfg.seed = 5;
  const auto result = train(net, data, cfg, [](const EpochRecord& e) {
    std::cerr << "  epoch " << e.epoch << " val_acc " << fixed(e.validation_accuracy, 4) << " at "
              << fixed(e.cumulative_s, 1) << " s\n";
  });
  const auto report = evaluate_model(net, data.test);
  const double elapsed = seconds_since(t0);

  std::vector<double> acc;
  for (const auto& e : result.history.epochs) acc.push_back(e.validation_accuracy);
  const auto argmax = static_cast<int>(std::max_element(acc.begin(), acc.end()) - acc.begin()) + 1;
  const bool split_ok = split.train.size() == 12 && split.validation.size() == 4 && split.test.size() == 4;
  const bool pass = split_ok && report.values.accuracy >= kTargetTestAccuracy && kTrainEpochs <= kMaxEpochs &&
                    elapsed < kTimeBudgetS && result.best_epoch == argmax && result.best_epoch == best_epoch_of(acc);
  return {pass, "split " + std::to_string(split.train.size()) + "/" + std::to_string(split.validation.size()) + "/" +
                    std::to_string(split.test.size()) + ", test accuracy " + fmt(report.values.accuracy) + " after " +
                    std::to_string(kTrainEpochs) + " epochs, best epoch " + std::to_string(result.best_epoch) +
                    " (argmax " + std::to_string(argmax) + "), " + fmt(elapsed, 1) + " s"};
}

// --- 8 ---------------------------------------------------------------------------

Outcome latency_ordering() {
  const auto samples = cli::random_samples(8, 1);
  std::map<std::string, double> median;
  for (const char* name : {"resnet50", "resnet101", "resnet152", "densenet121", "densenet169", "densenet201"}) {
    nn::Network<float> net(nn::build_model(name));
    net.initialize(1);
    median[name] = detection_time(net, samples, kMinRepetitions, kMinWarmup).median_ms;
  }
  const bool pass = median["resnet50"] <= median["resnet101"] && median["resnet101"] <= median["resnet152"] &&
                    median["densenet121"] <= median["densenet169"] && median["densenet169"] <= median["densenet201"];
  std::string detail;
  for (const char* name : {"resnet50", "resnet101", "resnet152", "densenet121", "densenet169", "densenet201"}) {
    detail += (detail.empty() ? "" : ", ") + display_name(name) + " " + fmt(median[name], 1) + " ms";
  }
  return {pass, "median single-sample latency: " + detail};
}

// --- 9 ---------------------------------------------------------------------------

Outcome protocol_invariants() {
  PipelineConfig defaults;
  auto corpus = generate_corpus(defaults.corpus.experiments,
                                profile_library(defaults.corpus.experiments, 1, defaults.corpus.families), 1);
  std::size_t samples = 0;
  bool per_experiment = true, injection = true, instances = true;
  for (const auto& t : corpus) {
    t.validate();
    samples += t.snapshots.size();
    per_experiment = per_experiment && t.snapshots.size() == 360;
    injection = injection && t.injection_time_s >= 1800;
    for (int n : t.instance_counts) instances = instances && n >= 2 && n <= 10;
  }
  const auto split = split_dataset(corpus, {}, 1);
  std::set<std::size_t> seen;
  std::size_t total = 0;
  for (const auto* part : {&split.train, &split.validation, &split.test}) {
    seen.insert(part->begin(), part->end());
    total += part->size();
  }
  const bool partition = seen.size() == corpus.size() && total == corpus.size() && split.train.size() == 68 &&
                         split.validation.size() == 22 && split.test.size() == 23;
  const auto before = split.stats;
  for (auto& snap : corpus[split.test.front()].snapshots) {
    for (auto& p : snap.processes) {
      p.metrics[feature::cpu_user_pct] = 100.0;
      p.metrics[feature::mem_rss_mb] *= 3;
    }
  }
  const auto after = split_dataset(corpus, {}, 1).stats;
  const bool train_only = std::memcmp(&before.min, &after.min, sizeof before.min) == 0 &&
                          std::memcmp(&before.max, &after.max, sizeof before.max) == 0 &&
                          before.observations == after.observations;
  const bool pass = per_experiment && injection && instances && samples == 40680 && partition && train_only;
  return {pass, std::to_string(corpus.size()) + " experiments, " + std::to_string(samples) + " samples, split " +
                    std::to_string(split.train.size()) + "/" + std::to_string(split.validation.size()) + "/" +
                    std::to_string(split.test.size()) + (injection ? "" : ", early injection") +
                    (instances ? "" : ", instance count out of range") +
                    (train_only ? ", normalization bit-identical after test edit" : ", normalization leaked")};
}

// --- 10 --------------------------------------------------------------------------

Outcome pipeline_determinism() {
  const fs::path base = fs::temp_directory_path() / ("mdetect-accept-" + std::to_string(::getpid()));
  fs::remove_all(base);
  auto chain = [&](const std::string& tag) {
    cli::Context ctx;
    ctx.output_root = base / tag;
    std::ostringstream log;
    ctx.log = &log;
    ctx.config.corpus.experiments = 5;
    ctx.config.corpus.seed = 3;
    ctx.config.split.seed = 4;
    ctx.config.train.train.epochs = 1;
    ctx.config.train.train.seed = 5;
    ctx.config.train.init_seed = 6;
    const auto sim = cli::cmd_simulate(ctx);
    const auto enc = cli::cmd_encode(ctx, sim.corpus_dir);
    const auto run = cli::cmd_train(ctx, enc.dataset_dir, "lenet5");
    cli::cmd_report(ctx, {run.run_dir}, enc.dataset_dir);
    return tree_digests(ctx.output_root);
  };
  const auto a = chain("a");
  const auto b = chain("b");
  fs::remove_all(base);
  std::size_t differing = 0;
  std::string first;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    if (!(a[i] == b[i])) {
      ++differing;
      if (first.empty()) first = a[i].path;
    }
  }
  const bool pass = a.size() == b.size() && differing == 0 && !a.empty();
  return {pass, std::to_string(a.size()) + " artifacts compared, " + std::to_string(differing) + " differ" +
                    (first.empty() ? "" : " (first: " + first + ")")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"published F1 consistency", published_f1},
      {"confusion and metrics vs brute-force tally", confusion_vs_tally},
      {"AUC vs pairwise statistic", auc_properties},
      {"LeNet-5 shape trace", lenet_shapes},
      {"residual identity, dense arithmetic, 2-logit heads", architecture_structure},
      {"gradient check", gradient_check},
      {"separable corpus trains to target accuracy", separable_training},
      {"latency non-decreasing with depth", latency_ordering},
      {"experimental protocol invariants", protocol_invariants},
      {"pipeline bit-identical across runs", pipeline_determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].first << ": " << o.detail << " ("
              << fixed(seconds_since(t0), 1) << " s)" << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
