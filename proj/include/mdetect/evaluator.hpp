#pragma once

// Confusion counts, accuracy/precision/recall/F1, ROC/AUC and single-sample
// detection latency.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mdetect/encoder.hpp"
#include "mdetect/error.hpp"
#include "mdetect/nn/inference.hpp"
#include "mdetect/nn/network.hpp"

namespace mdetect {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const noexcept { return tp + tn + fp + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

inline ConfusionCounts confusion(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> labels) {
  if (predictions.size() != labels.size()) {
    throw ValidationError("confusion: " + std::to_string(predictions.size()) + " predictions vs " +
                          std::to_string(labels.size()) + " labels");
  }
  if (predictions.empty()) throw ValidationError("confusion: no samples");
  ConfusionCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool p = predictions[i] != 0;
    const bool y = labels[i] != 0;
    if (p && y) ++c.tp;
    else if (!p && !y) ++c.tn;
    else if (p) ++c.fp;
    else ++c.fn;
  }
  return c;
}

struct MetricValues {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_undefined = false;  // tp + fp == 0
  bool recall_undefined = false;     // tp + fn == 0
  bool f1_undefined = false;         // either of the above, or precision + recall == 0
};

inline double f1_score(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

inline MetricValues metrics(const ConfusionCounts& c) {
  if (c.total() == 0) throw ValidationError("metrics: empty confusion counts");
  MetricValues m;
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  if (c.tp + c.fp == 0) m.precision_undefined = true;
  else m.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn == 0) m.recall_undefined = true;
  else m.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  m.f1_undefined = m.precision_undefined || m.recall_undefined || m.precision + m.recall == 0.0;
  m.f1 = m.f1_undefined ? 0.0 : f1_score(m.precision, m.recall);
  return m;
}

// Malicious iff the softmax positive-class probability exceeds 0.5, i.e. the
// malicious logit is strictly larger.
inline std::uint8_t predict_label(double positive_probability) { return positive_probability > 0.5 ? 1 : 0; }

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // (0,0), then one per distinct score (descending); ends at (1,1)
};

struct RocResult {
  RocCurve curve;
  double auc = 0.0;
};

// Sweeps thresholds from the highest score down; tied scores move the curve
// in one diagonal step.
inline RocResult roc_and_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ValidationError("roc: scores/labels size mismatch");
  std::uint64_t pos = 0;
  for (auto y : labels) pos += y ? 1 : 0;
  const std::uint64_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw UndefinedAucError("AUC undefined: labels contain a single class");
  for (double s : scores) {
    if (!std::isfinite(s)) throw ValidationError("roc: non-finite score");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocResult r;
  r.curve.points.push_back({0.0, 0.0});
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  double area = 0.0;  // in units of (tp x fp) counts
  for (std::size_t k = 0; k < order.size();) {
    const double s = scores[order[k]];
    std::uint64_t dtp = 0;
    std::uint64_t dfp = 0;
    for (; k < order.size() && scores[order[k]] == s; ++k) (labels[order[k]] ? dtp : dfp) += 1;
    area += static_cast<double>(dfp) * (static_cast<double>(tp) + 0.5 * static_cast<double>(dtp));
    tp += dtp;
    fp += dfp;
    r.curve.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                              static_cast<double>(tp) / static_cast<double>(pos)});
  }
  r.auc = area / (static_cast<double>(pos) * static_cast<double>(neg));
  return r;
}

struct LatencyStats {
  double median_ms = 0.0;
  double mean_ms = 0.0;
  int warmup = 0;
  int repetitions = 0;
};

inline constexpr int kMinWarmup = 10;
inline constexpr int kMinRepetitions = 30;

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Single-sample eval-mode latency. Sample k of the timed loop is
// samples[k % samples.size()].
template <typename T>
LatencyStats detection_time(nn::Network<T>& net, const EncodedSet& samples, int repetitions = kMinRepetitions,
                            int warmup = kMinWarmup) {
  if (repetitions < kMinRepetitions) {
    throw ConfigError("detection_time: repetitions must be >= " + std::to_string(kMinRepetitions));
  }
  if (warmup < kMinWarmup) throw ConfigError("detection_time: warm-up must be >= " + std::to_string(kMinWarmup));
  if (samples.size() == 0) throw ValidationError("detection_time: no samples");
  const int channels = nn::sample_channels(net);
  std::vector<T> input;
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(repetitions));
  for (int r = 0; r < warmup + repetitions; ++r) {
    const std::size_t idx = static_cast<std::size_t>(r) % samples.size();
    const auto t0 = std::chrono::steady_clock::now();
    nn::gather_batch(samples, std::span<const std::size_t>(&idx, 1), channels, input);
    const auto& logits = net.forward(input, 1, nn::Mode::eval);
    volatile double sink = static_cast<double>(logits[0]);
    (void)sink;
    const auto t1 = std::chrono::steady_clock::now();
    if (r >= warmup) times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  net.release_activations();
  LatencyStats st;
  st.median_ms = median_of(times);
  st.mean_ms = std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(times.size());
  st.warmup = warmup;
  st.repetitions = repetitions;
  return st;
}

struct MetricReport {
  std::string model;
  ConfusionCounts counts;
  MetricValues values;
  double auc = 0.0;
  bool auc_undefined = false;
  RocCurve roc;
  LatencyStats latency;  // zero when not measured
  std::vector<double> scores;  // positive-class probability per test sample
};

// Scores the set once in stored order and assembles the report. Latency is
// measured only when `latency_repetitions` > 0.
template <typename T>
MetricReport evaluate_model(nn::Network<T>& net, const EncodedSet& test, int latency_repetitions = 0,
                            std::size_t batch_size = 64) {
  if (test.size() == 0) throw ValidationError("evaluate_model: empty test split");
  const auto logits = nn::score_set(net, test, batch_size);
  MetricReport rep;
  rep.model = net.spec().name;
  rep.scores.resize(test.size());
  std::vector<std::uint8_t> preds(test.size());
  for (std::size_t s = 0; s < test.size(); ++s) {
    const T pair[2] = {logits[2 * s], logits[2 * s + 1]};
    rep.scores[s] = nn::positive_probability(pair);
    preds[s] = logits[2 * s + 1] > logits[2 * s] ? 1 : 0;
  }
  rep.counts = confusion(preds, test.labels);
  rep.values = metrics(rep.counts);
  try {
    auto roc = roc_and_auc(rep.scores, test.labels);
    rep.auc = roc.auc;
    rep.roc = std::move(roc.curve);
  } catch (const UndefinedAucError&) {
    rep.auc_undefined = true;
  }
  if (latency_repetitions > 0) rep.latency = detection_time(net, test, latency_repetitions);
  return rep;
}

}  // namespace mdetect
