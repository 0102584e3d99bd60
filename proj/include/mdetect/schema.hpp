#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "mdetect/error.hpp"

namespace mdetect {

inline constexpr std::size_t kFeatureCount = 45;
inline constexpr std::size_t kMaxProcesses = 120;
inline constexpr int kSchemaVersion = 1;

using FeatureVector = std::array<double, kFeatureCount>;

struct MetricDescriptor {
  std::string name;
  std::string unit;
  double min_value;
  double max_value;
};

// Ordered per-process metric columns. The order is part of every encoded
// corpus, so it is fixed at construction and never mutated.
class FeatureSchema {
 public:
  explicit FeatureSchema(std::vector<MetricDescriptor> metrics) : metrics_(std::move(metrics)) {
    if (metrics_.size() != kFeatureCount) {
      throw ConfigError("feature schema must have exactly " + std::to_string(kFeatureCount) +
                        " metrics, got " + std::to_string(metrics_.size()));
    }
    std::unordered_set<std::string> seen;
    for (const auto& m : metrics_) {
      if (!seen.insert(m.name).second) throw ConfigError("duplicate metric name: " + m.name);
      if (!(m.min_value < m.max_value)) throw ConfigError("empty valid range for metric: " + m.name);
    }
  }

  static const FeatureSchema& canonical();

  std::size_t size() const noexcept { return metrics_.size(); }
  const MetricDescriptor& operator[](std::size_t i) const { return metrics_[i]; }
  const std::vector<MetricDescriptor>& metrics() const noexcept { return metrics_; }

  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < metrics_.size(); ++i) {
      if (metrics_[i].name == name) return i;
    }
    return std::nullopt;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(metrics_.size());
    for (const auto& m : metrics_) out.push_back(m.name);
    return out;
  }

  // Throws ValidationError naming the first metric outside its range.
  void validate(const FeatureVector& v) const {
    for (std::size_t i = 0; i < metrics_.size(); ++i) {
      const auto& m = metrics_[i];
      if (!(v[i] >= m.min_value && v[i] <= m.max_value)) {
        throw ValidationError("metric '" + m.name + "' value " + std::to_string(v[i]) +
                              " outside valid range [" + std::to_string(m.min_value) + ", " +
                              std::to_string(m.max_value) + "]");
      }
    }
  }

 private:
  std::vector<MetricDescriptor> metrics_;
};

// Column indices into the canonical schema.
namespace feature {
enum Index : std::size_t {
  cpu_user_pct,
  cpu_system_pct,
  cpu_total_pct,
  mem_rss_mb,
  mem_vms_mb,
  mem_shared_mb,
  mem_pct,
  minor_faults_per_s,
  major_faults_per_s,
  disk_read_bytes_per_s,
  disk_write_bytes_per_s,
  disk_read_ops_per_s,
  disk_write_ops_per_s,
  io_wait_pct,
  open_fds,
  num_threads,
  ctx_voluntary_per_s,
  ctx_involuntary_per_s,
  num_children,
  nice,
  state_running,
  state_sleeping,
  state_disk_sleep,
  state_zombie,
  state_stopped,
  state_idle,
  net_bytes_in_per_s,
  net_bytes_out_per_s,
  net_packets_in_per_s,
  net_packets_out_per_s,
  // First differences against the previous sample of the same process.
  cpu_total_pct_d1,
  mem_rss_mb_d1,
  disk_read_bytes_d1,
  disk_write_bytes_d1,
  net_bytes_in_d1,
  net_bytes_out_d1,
  minor_faults_d1,
  ctx_voluntary_d1,
  // Second differences.
  cpu_total_pct_d2,
  mem_rss_mb_d2,
  disk_read_bytes_d2,
  disk_write_bytes_d2,
  net_bytes_in_d2,
  net_bytes_out_d2,
  num_threads_d1,
};

// Base (non-difference) metrics the simulator drives directly.
inline constexpr std::size_t kBaseCount = cpu_total_pct_d1;
}  // namespace feature

inline const FeatureSchema& FeatureSchema::canonical() {
  constexpr double kBytes = 1e10;
  constexpr double kOps = 1e6;
  static const FeatureSchema schema({
      {"cpu_user_pct", "%", 0, 100},
      {"cpu_system_pct", "%", 0, 100},
      {"cpu_total_pct", "%", 0, 100},
      {"mem_rss_mb", "MiB", 0, 65536},
      {"mem_vms_mb", "MiB", 0, 1048576},
      {"mem_shared_mb", "MiB", 0, 65536},
      {"mem_pct", "%", 0, 100},
      {"minor_faults_per_s", "1/s", 0, kOps},
      {"major_faults_per_s", "1/s", 0, kOps},
      {"disk_read_bytes_per_s", "B/s", 0, kBytes},
      {"disk_write_bytes_per_s", "B/s", 0, kBytes},
      {"disk_read_ops_per_s", "1/s", 0, kOps},
      {"disk_write_ops_per_s", "1/s", 0, kOps},
      {"io_wait_pct", "%", 0, 100},
      {"open_fds", "count", 0, 1048576},
      {"num_threads", "count", 0, 65536},
      {"ctx_voluntary_per_s", "1/s", 0, kOps},
      {"ctx_involuntary_per_s", "1/s", 0, kOps},
      {"num_children", "count", 0, 65536},
      {"nice", "level", -20, 19},
      {"state_running", "flag", 0, 1},
      {"state_sleeping", "flag", 0, 1},
      {"state_disk_sleep", "flag", 0, 1},
      {"state_zombie", "flag", 0, 1},
      {"state_stopped", "flag", 0, 1},
      {"state_idle", "flag", 0, 1},
      {"net_bytes_in_per_s", "B/s", 0, kBytes},
      {"net_bytes_out_per_s", "B/s", 0, kBytes},
      {"net_packets_in_per_s", "1/s", 0, kOps * 10},
      {"net_packets_out_per_s", "1/s", 0, kOps * 10},
      {"cpu_total_pct_d1", "%", -100, 100},
      {"mem_rss_mb_d1", "MiB", -65536, 65536},
      {"disk_read_bytes_d1", "B/s", -kBytes, kBytes},
      {"disk_write_bytes_d1", "B/s", -kBytes, kBytes},
      {"net_bytes_in_d1", "B/s", -kBytes, kBytes},
      {"net_bytes_out_d1", "B/s", -kBytes, kBytes},
      {"minor_faults_d1", "1/s", -kOps, kOps},
      {"ctx_voluntary_d1", "1/s", -kOps, kOps},
      {"cpu_total_pct_d2", "%", -200, 200},
      {"mem_rss_mb_d2", "MiB", -131072, 131072},
      {"disk_read_bytes_d2", "B/s", -2 * kBytes, 2 * kBytes},
      {"disk_write_bytes_d2", "B/s", -2 * kBytes, 2 * kBytes},
      {"net_bytes_in_d2", "B/s", -2 * kBytes, 2 * kBytes},
      {"net_bytes_out_d2", "B/s", -2 * kBytes, 2 * kBytes},
      {"num_threads_d1", "count", -65536, 65536},
  });
  return schema;
}

}  // namespace mdetect
