#pragma once

// Turns experiment traces into fixed-shape labeled sample matrices and
// experiment-level train/validation/test splits.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mdetect/error.hpp"
#include "mdetect/process_id.hpp"
#include "mdetect/rng.hpp"
#include "mdetect/schema.hpp"
#include "mdetect/testbed.hpp"
#include "mdetect/trace_io.hpp"

namespace mdetect {

inline constexpr std::size_t kSampleRows = kMaxProcesses;
inline constexpr std::size_t kSampleCols = kFeatureCount;
inline constexpr std::size_t kSampleSize = kSampleRows * kSampleCols;

enum class Label : std::uint8_t { benign = 0, malicious = 1 };

// The malware process exists in the snapshot taken at the injection instant,
// so the boundary is malicious.
constexpr Label label_sample(int timestamp_s, int injection_time_s) {
  return timestamp_s >= injection_time_s ? Label::malicious : Label::benign;
}

// X_vm_t: one process-by-feature matrix, channel-major when replicated.
struct SampleMatrix {
  std::vector<float> values = std::vector<float>(kSampleSize, 0.0f);
  int channels = 1;
  int timestamp_s = 0;
  std::string vm_id;
  Label label = Label::benign;

  float at(std::size_t channel, std::size_t row, std::size_t col) const {
    return values[channel * kSampleSize + row * kSampleCols + col];
  }
  std::span<const float> channel(std::size_t c) const {
    return std::span<const float>(values).subspan(c * kSampleSize, kSampleSize);
  }
};

using RowMap = std::map<UniqueProcessId, std::size_t>;

// One stable row per unique process across the whole experiment, ordered by
// first appearance; simultaneous arrivals are ordered by (pid, command, hash).
inline RowMap assign_rows(const ExperimentTrace& trace) {
  RowMap rows;
  for (const auto& snap : trace.snapshots) {
    std::vector<const UniqueProcessId*> arrivals;
    for (const auto& p : snap.processes) {
      if (!rows.contains(p.id)) arrivals.push_back(&p.id);
    }
    std::sort(arrivals.begin(), arrivals.end(), [](const auto* a, const auto* b) { return *a < *b; });
    arrivals.erase(std::unique(arrivals.begin(), arrivals.end(), [](const auto* a, const auto* b) { return *a == *b; }),
                   arrivals.end());
    for (const auto* id : arrivals) {
      if (rows.size() == kSampleRows) {
        throw CapacityError("experiment '" + trace.profile_name() + "' exceeds " + std::to_string(kSampleRows) +
                            " unique processes at t=" + std::to_string(snap.timestamp_s) + ": pid " +
                            std::to_string(id->pid) + " '" + id->command + "' " + id->binary_hash);
      }
      rows.emplace(*id, rows.size());
    }
  }
  return rows;
}

// Per-feature min-max statistics over training samples.
struct NormalizationStats {
  std::array<double, kFeatureCount> min{};
  std::array<double, kFeatureCount> max{};
  std::size_t observations = 0;

  void observe(const FeatureVector& v) {
    if (observations == 0) {
      std::copy(v.begin(), v.end(), min.begin());
      std::copy(v.begin(), v.end(), max.begin());
    } else {
      for (std::size_t i = 0; i < kFeatureCount; ++i) {
        min[i] = std::min(min[i], v[i]);
        max[i] = std::max(max[i], v[i]);
      }
    }
    ++observations;
  }

  // Maps into [0, 1], clipping values outside the training range.
  double normalize(std::size_t i, double v) const {
    const double span = max[i] - min[i];
    if (!(span > 0.0)) return 0.0;
    return std::clamp((v - min[i]) / span, 0.0, 1.0);
  }

  friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

inline SampleMatrix encode_sample(const ProcessSnapshot& snapshot, const RowMap& rows, const FeatureSchema& schema,
                                  const NormalizationStats& stats) {
  SampleMatrix m;
  m.timestamp_s = snapshot.timestamp_s;
  m.vm_id = snapshot.vm_id;
  for (const auto& p : snapshot.processes) {
    const auto it = rows.find(p.id);
    if (it == rows.end()) {
      throw ValidationError("process " + std::to_string(p.id.pid) + " '" + p.id.command + "' has no row assignment");
    }
    schema.validate(p.metrics);
    float* row = m.values.data() + it->second * kSampleCols;
    for (std::size_t f = 0; f < kFeatureCount; ++f) row[f] = static_cast<float>(stats.normalize(f, p.metrics[f]));
  }
  return m;
}

inline SampleMatrix replicate_channels(const SampleMatrix& m) {
  if (m.channels != 1) throw ValidationError("replicate_channels expects a single-channel sample");
  SampleMatrix out = m;
  out.channels = 3;
  out.values.resize(3 * kSampleSize);
  std::copy(m.values.begin(), m.values.end(), out.values.begin() + kSampleSize);
  std::copy(m.values.begin(), m.values.end(), out.values.begin() + 2 * kSampleSize);
  return out;
}

// --- splitting ---------------------------------------------------------------

struct SplitRatios {
  double train = 0.6;
  double validation = 0.2;
  double test = 0.2;
};

// Largest-remainder apportionment of n items; equal remainders go to the later
// part first.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& r) {
  const std::array<double, 3> ratios = {r.train, r.validation, r.test};
  for (double x : ratios) {
    if (!(x >= 0.0 && x <= 1.0)) throw ConfigError("split ratios must lie in [0, 1]");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double quota = static_cast<double>(n) * ratios[i];
    sizes[i] = static_cast<std::size_t>(std::floor(quota + 1e-9));
    remainder[i] = std::max(0.0, quota - static_cast<double>(sizes[i]));
    assigned += sizes[i];
  }
  std::array<std::size_t, 3> order = {2, 1, 0};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b] + 1e-9; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k % 3]];
  return sizes;
}

struct SampleRef {
  std::size_t experiment = 0;
  std::size_t snapshot = 0;

  friend bool operator==(const SampleRef&, const SampleRef&) = default;
};

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
  std::vector<SampleRef> train_samples;       // shuffled
  std::vector<SampleRef> validation_samples;  // (experiment, timestamp) order
  std::vector<SampleRef> test_samples;        // (experiment, timestamp) order
  NormalizationStats stats;
  std::uint64_t seed = 0;
};

inline NormalizationStats compute_normalization(const std::vector<ExperimentTrace>& corpus,
                                                const std::vector<std::size_t>& experiments) {
  NormalizationStats stats;
  for (std::size_t e : experiments) {
    for (const auto& snap : corpus.at(e).snapshots) {
      for (const auto& p : snap.processes) stats.observe(p.metrics);
    }
  }
  return stats;
}

inline DatasetSplit split_dataset(const std::vector<ExperimentTrace>& corpus, const SplitRatios& ratios,
                                  std::uint64_t seed) {
  if (corpus.size() < 5) throw ConfigError("split needs at least 5 experiments, got " + std::to_string(corpus.size()));
  const auto sizes = split_sizes(corpus.size(), ratios);
  if (sizes[0] == 0 || sizes[1] == 0 || sizes[2] == 0) {
    throw ConfigError("every split part needs at least one experiment");
  }

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, 0x5b117));
  rng.shuffle(order);

  DatasetSplit split;
  split.seed = seed;
  split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(sizes[0]));
  split.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(sizes[0]),
                          order.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]));
  split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]), order.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.test.begin(), split.test.end());

  auto refs = [&](const std::vector<std::size_t>& exps) {
    std::vector<SampleRef> out;
    for (std::size_t e : exps) {
      for (std::size_t s = 0; s < corpus[e].snapshots.size(); ++s) out.push_back({e, s});
    }
    return out;
  };
  split.train_samples = refs(split.train);
  Rng shuffle_rng(mix_seed(seed, 0x5f0ff1e));
  shuffle_rng.shuffle(split.train_samples);
  split.validation_samples = refs(split.validation);
  split.test_samples = refs(split.test);
  split.stats = compute_normalization(corpus, split.train);
  return split;
}

// --- materialized tensors ------------------------------------------------------

// N single-channel samples stored contiguously (N x 120 x 45).
struct EncodedSet {
  std::vector<float> values;
  std::vector<std::uint8_t> labels;
  std::vector<std::int32_t> experiment;
  std::vector<std::int32_t> timestamp_s;

  std::size_t size() const noexcept { return labels.size(); }
  std::span<const float> sample(std::size_t i) const {
    return std::span<const float>(values).subspan(i * kSampleSize, kSampleSize);
  }
  std::size_t malicious_count() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
  }

  friend bool operator==(const EncodedSet&, const EncodedSet&) = default;
};

struct EncodedDataset {
  EncodedSet train;
  EncodedSet validation;
  EncodedSet test;
  NormalizationStats stats;
};

inline EncodedSet encode_refs(const std::vector<ExperimentTrace>& corpus, const std::vector<SampleRef>& refs,
                              const NormalizationStats& stats, const FeatureSchema& schema) {
  std::map<std::size_t, RowMap> row_maps;
  EncodedSet out;
  out.values.reserve(refs.size() * kSampleSize);
  out.labels.reserve(refs.size());
  for (const auto& ref : refs) {
    const auto& trace = corpus.at(ref.experiment);
    auto it = row_maps.find(ref.experiment);
    if (it == row_maps.end()) it = row_maps.emplace(ref.experiment, assign_rows(trace)).first;
    const auto& snap = trace.snapshots.at(ref.snapshot);
    const SampleMatrix m = encode_sample(snap, it->second, schema, stats);
    out.values.insert(out.values.end(), m.values.begin(), m.values.end());
    out.labels.push_back(static_cast<std::uint8_t>(label_sample(snap.timestamp_s, trace.injection_time_s)));
    out.experiment.push_back(static_cast<std::int32_t>(ref.experiment));
    out.timestamp_s.push_back(snap.timestamp_s);
  }
  return out;
}

inline EncodedDataset materialize(const std::vector<ExperimentTrace>& corpus, const DatasetSplit& split,
                                  const FeatureSchema& schema = FeatureSchema::canonical()) {
  EncodedDataset ds;
  ds.stats = split.stats;
  ds.train = encode_refs(corpus, split.train_samples, split.stats, schema);
  ds.validation = encode_refs(corpus, split.validation_samples, split.stats, schema);
  ds.test = encode_refs(corpus, split.test_samples, split.stats, schema);
  return ds;
}

// Externally collected traces use the simulator's on-disk format.
inline ExperimentTrace ingest_external_trace(const std::filesystem::path& dir) { return read_trace(dir); }

}  // namespace mdetect
