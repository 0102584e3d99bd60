#pragma once

// Synthetic replay of the data-collection testbed: a 3-tier auto-scaling web
// deployment driven by Pareto ON/OFF traffic, sampled every 10 s on one web
// VM, with a malware profile injected during the second half of the hour.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mdetect/error.hpp"
#include "mdetect/process_id.hpp"
#include "mdetect/rng.hpp"
#include "mdetect/schema.hpp"

namespace mdetect {

struct TrafficModel {
  double mean_on_ms = 500.0;
  double mean_off_ms = 500.0;
  double pareto_shape = 1.5;
  double peak_rate = 40.0;  // requests/second per source while ON

  void validate() const {
    if (!(pareto_shape > 1.0)) throw ConfigError("pareto_shape must be > 1 (finite mean)");
    if (!(mean_on_ms > 0.0 && mean_off_ms > 0.0)) throw ConfigError("ON/OFF means must be positive");
    if (!(peak_rate > 0.0)) throw ConfigError("peak_rate must be positive");
  }
};

struct AutoScalePolicy {
  double scale_out_threshold = 0.70;
  double scale_in_threshold = 0.30;
  int min_instances = 2;
  int max_instances = 10;

  void validate() const {
    if (!(0.0 < scale_in_threshold && scale_in_threshold < scale_out_threshold &&
          scale_out_threshold < 1.0)) {
      throw ConfigError("autoscale thresholds must satisfy 0 < scale_in < scale_out < 1");
    }
    if (!(1 <= min_instances && min_instances <= max_instances)) {
      throw ConfigError("autoscale bounds must satisfy 1 <= min_instances <= max_instances");
    }
  }
};

enum class MalwareFamily { cpu_spinner, io_flooder, stealth, dormant_bursty };

inline const char* to_string(MalwareFamily f) {
  switch (f) {
    case MalwareFamily::cpu_spinner: return "cpu-spinner";
    case MalwareFamily::io_flooder: return "io-flooder";
    case MalwareFamily::stealth: return "stealth";
    case MalwareFamily::dormant_bursty: return "dormant-bursty";
  }
  return "unknown";
}

inline MalwareFamily malware_family_from_string(std::string_view s) {
  for (auto f : {MalwareFamily::cpu_spinner, MalwareFamily::io_flooder, MalwareFamily::stealth,
                 MalwareFamily::dormant_bursty}) {
    if (s == to_string(f)) return f;
  }
  throw ConfigError("unknown malware family: " + std::string(s));
}

using BaseMetrics = std::array<double, feature::kBaseCount>;

// One malicious process: its base metric levels while active, when it starts
// relative to the injection, and an optional duty cycle.
struct MalwareProcess {
  std::string command;
  int start_offset_s = 0;
  BaseMetrics active_levels{};
  int period_s = 0;  // 0: always active
  int active_s = 0;
};

struct MalwareProfile {
  std::string name;
  MalwareFamily family = MalwareFamily::cpu_spinner;
  std::vector<MalwareProcess> process_footprint;
  // Contention the infection adds to co-resident benign processes.
  double host_io_wait_pct = 0.0;
  double host_ctx_involuntary = 0.0;

  int spawn_count() const { return static_cast<int>(process_footprint.size()); }

  std::string binary_hash_for(const MalwareProcess& p) const {
    return binary_hash_of("malware:" + name + ":" + p.command);
  }

  void validate(const FeatureSchema& schema = FeatureSchema::canonical()) const {
    if (name.empty()) throw ConfigError("malware profile needs a name");
    if (process_footprint.empty()) throw ConfigError("malware profile '" + name + "' has spawn_count 0");
    for (const auto& p : process_footprint) {
      if (p.command.empty() || p.command.find_first_of(",\n\r") != std::string::npos) {
        throw ConfigError("malware command must be non-empty without commas/newlines");
      }
      if (p.start_offset_s < 0) throw ConfigError("malware start offset must be >= 0");
      if (p.period_s < 0 || p.active_s < 0 || (p.period_s > 0 && p.active_s > p.period_s)) {
        throw ConfigError("malware duty cycle must satisfy 0 <= active_s <= period_s");
      }
      for (std::size_t i = 0; i < p.active_levels.size(); ++i) {
        const auto& m = schema[i];
        if (!(p.active_levels[i] >= m.min_value && p.active_levels[i] <= m.max_value)) {
          throw ValidationError("malware profile '" + name + "' metric '" + m.name +
                                "' outside valid range");
        }
      }
    }
  }
};

struct InjectionWindow {
  int earliest_s = 1800;
  int latest_s = 2700;
};

struct ExperimentConfig {
  int total_duration_s = 3600;
  int clean_phase_s = 1800;
  int sample_interval_s = 10;
  TrafficModel traffic;
  AutoScalePolicy policy;
  MalwareProfile malware;
  InjectionWindow injection_window;
  std::uint64_t rng_seed = 0;
  int traffic_sources = 8;
  std::string vm_id = "web-0";

  int sample_count() const { return total_duration_s / sample_interval_s; }

  void validate() const {
    if (sample_interval_s <= 0 || total_duration_s <= 0 ||
        total_duration_s % sample_interval_s != 0) {
      throw ConfigError("total_duration_s must be a positive multiple of sample_interval_s");
    }
    if (!(0 <= clean_phase_s && clean_phase_s < total_duration_s)) {
      throw ConfigError("clean_phase_s must lie in [0, total_duration_s)");
    }
    if (injection_window.earliest_s < clean_phase_s ||
        injection_window.latest_s < injection_window.earliest_s ||
        injection_window.latest_s >= total_duration_s) {
      throw ConfigError("injection window must lie inside the infected phase");
    }
    if (traffic_sources < 1) throw ConfigError("traffic_sources must be >= 1");
    if (vm_id.empty() || vm_id.find_first_of(",\n\r") != std::string::npos) {
      throw ConfigError("vm_id must be non-empty without commas/newlines");
    }
    traffic.validate();
    policy.validate();
    malware.validate();
  }
};

struct ProcessRecord {
  UniqueProcessId id;
  FeatureVector metrics{};

  friend bool operator==(const ProcessRecord&, const ProcessRecord&) = default;
};

struct ProcessSnapshot {
  int timestamp_s = 0;
  std::string vm_id;
  std::vector<ProcessRecord> processes;

  friend bool operator==(const ProcessSnapshot&, const ProcessSnapshot&) = default;
};

struct ExperimentTrace {
  ExperimentConfig config;
  std::vector<ProcessSnapshot> snapshots;
  int injection_time_s = 0;
  std::vector<int> instance_counts;  // web-tier size after each sample

  const std::string& profile_name() const { return config.malware.name; }

  bool is_malicious(const UniqueProcessId& id) const {
    for (const auto& p : config.malware.process_footprint) {
      if (id.command == p.command && id.binary_hash == config.malware.binary_hash_for(p)) return true;
    }
    return false;
  }

  // Throws ValidationError on the first broken trace invariant.
  void validate(const FeatureSchema& schema = FeatureSchema::canonical()) const {
    const int expected = config.sample_count();
    if (static_cast<int>(snapshots.size()) != expected) {
      throw ValidationError("trace has " + std::to_string(snapshots.size()) +
                            " snapshots, expected " + std::to_string(expected));
    }
    if (injection_time_s < config.clean_phase_s || injection_time_s >= config.total_duration_s) {
      throw ValidationError("injection_time_s " + std::to_string(injection_time_s) +
                            " outside the infected phase");
    }
    for (std::size_t i = 0; i < snapshots.size(); ++i) {
      const auto& s = snapshots[i];
      if (s.timestamp_s != static_cast<int>(i) * config.sample_interval_s) {
        throw ValidationError("snapshot " + std::to_string(i) + " has timestamp " +
                              std::to_string(s.timestamp_s));
      }
      std::set<UniqueProcessId> seen;
      for (const auto& p : s.processes) {
        if (!seen.insert(p.id).second) {
          throw ValidationError("process " + std::to_string(p.id.pid) + " '" + p.id.command +
                                "' appears twice at t=" + std::to_string(s.timestamp_s));
        }
        if (!is_valid_binary_hash(p.id.binary_hash)) {
          throw ValidationError("bad binary hash '" + p.id.binary_hash + "'");
        }
        schema.validate(p.metrics);
        if (s.timestamp_s < injection_time_s && is_malicious(p.id)) {
          throw ValidationError("malicious process '" + p.id.command + "' present at t=" +
                                std::to_string(s.timestamp_s) + " before injection");
        }
      }
    }
  }
};

// --- autoscaler and traffic ------------------------------------------------

inline int step_autoscaler(double avg_cpu, int current, const AutoScalePolicy& policy) {
  policy.validate();
  if (!(avg_cpu >= 0.0 && avg_cpu <= 1.0)) throw ValidationError("avg_cpu must lie in [0, 1]");
  if (current < policy.min_instances || current > policy.max_instances) {
    throw ValidationError("instance count " + std::to_string(current) + " outside policy bounds");
  }
  int next = current;
  if (avg_cpu > policy.scale_out_threshold) {
    next = current + 1;
  } else if (avg_cpu < policy.scale_in_threshold) {
    next = current - 1;
  }
  return std::clamp(next, policy.min_instances, policy.max_instances);
}

enum class OnOffState { on, off };

struct OnOffSample {
  double duration_ms;
  double load_level;
};

// Scale x_m of a Pareto distribution with the given shape and mean.
inline double pareto_scale_for_mean(double shape, double mean) {
  if (!(shape > 1.0)) throw ConfigError("pareto_shape must be > 1 (finite mean)");
  return mean * (shape - 1.0) / shape;
}

inline OnOffSample sample_pareto_onoff(OnOffState state, const TrafficModel& traffic, Rng& rng) {
  traffic.validate();
  const double mean = state == OnOffState::on ? traffic.mean_on_ms : traffic.mean_off_ms;
  const double scale = pareto_scale_for_mean(traffic.pareto_shape, mean);
  double u = 1.0 - rng.uniform();  // (0, 1]
  const double duration = scale / std::pow(u, 1.0 / traffic.pareto_shape);
  return {duration, state == OnOffState::on ? traffic.peak_rate : 0.0};
}

// --- malware profile library -----------------------------------------------

namespace detail {

inline BaseMetrics zero_levels() {
  BaseMetrics m{};
  m.fill(0.0);
  return m;
}

inline void set_state(BaseMetrics& m, std::size_t state_index) {
  for (std::size_t i = feature::state_running; i <= feature::state_idle; ++i) m[i] = 0.0;
  m[state_index] = 1.0;
}

inline constexpr double kVmMemoryMb = 4096.0;

inline void finish_levels(BaseMetrics& m) {
  m[feature::cpu_total_pct] = std::min(100.0, m[feature::cpu_user_pct] + m[feature::cpu_system_pct]);
  m[feature::mem_pct] = std::min(100.0, 100.0 * m[feature::mem_rss_mb] / kVmMemoryMb);
}

}  // namespace detail

// One jittered malware variant of the given family.
inline MalwareProfile make_malware_profile(MalwareFamily family, int index, Rng& rng) {
  using namespace feature;
  MalwareProfile p;
  p.family = family;
  char suffix[16];
  std::snprintf(suffix, sizeof suffix, "-%03d", index);
  p.name = std::string(to_string(family)) + suffix;

  const int spawn = static_cast<int>(rng.uniform_int(1, 3));
  for (int k = 0; k < spawn; ++k) {
    MalwareProcess proc;
    auto m = detail::zero_levels();
    const int offset = k == 0 ? 0 : static_cast<int>(rng.uniform_int(1, 12)) * 10;
    proc.start_offset_s = offset;
    switch (family) {
      case MalwareFamily::cpu_spinner:
        proc.command = k == 0 ? "/tmp/.xmr/kworkerds -o pool:3333" : "/tmp/.xmr/kworkerds --thread " + std::to_string(k);
        m[cpu_user_pct] = rng.uniform(80.0, 97.0) / (k == 0 ? 1.0 : 2.0);
        m[cpu_system_pct] = rng.uniform(0.5, 3.0);
        m[mem_rss_mb] = rng.uniform(8.0, 60.0);
        m[mem_vms_mb] = m[mem_rss_mb] * rng.uniform(4.0, 12.0);
        m[mem_shared_mb] = rng.uniform(1.0, 4.0);
        m[minor_faults_per_s] = rng.uniform(50.0, 400.0);
        m[num_threads] = std::round(rng.uniform(4.0, 16.0));
        m[open_fds] = std::round(rng.uniform(6.0, 20.0));
        m[ctx_voluntary_per_s] = rng.uniform(5.0, 50.0);
        m[ctx_involuntary_per_s] = rng.uniform(300.0, 2000.0);
        m[net_bytes_out_per_s] = rng.uniform(500.0, 4000.0);
        m[net_bytes_in_per_s] = rng.uniform(200.0, 2000.0);
        m[net_packets_out_per_s] = rng.uniform(2.0, 20.0);
        m[net_packets_in_per_s] = rng.uniform(2.0, 20.0);
        m[nice] = 0.0;
        detail::set_state(m, state_running);
        p.host_ctx_involuntary = rng.uniform(20.0, 80.0);
        break;
      case MalwareFamily::io_flooder:
        proc.command = k == 0 ? "/var/tmp/.cache/enc --walk /" : "/var/tmp/.cache/enc --worker " + std::to_string(k);
        m[cpu_user_pct] = rng.uniform(5.0, 20.0);
        m[cpu_system_pct] = rng.uniform(10.0, 30.0);
        m[mem_rss_mb] = rng.uniform(20.0, 120.0);
        m[mem_vms_mb] = m[mem_rss_mb] * rng.uniform(2.0, 6.0);
        m[mem_shared_mb] = rng.uniform(2.0, 10.0);
        m[minor_faults_per_s] = rng.uniform(500.0, 3000.0);
        m[major_faults_per_s] = rng.uniform(5.0, 60.0);
        m[disk_read_bytes_per_s] = rng.uniform(2e7, 1.5e8);
        m[disk_write_bytes_per_s] = rng.uniform(2e7, 1.5e8);
        m[disk_read_ops_per_s] = rng.uniform(300.0, 3000.0);
        m[disk_write_ops_per_s] = rng.uniform(300.0, 3000.0);
        m[io_wait_pct] = rng.uniform(20.0, 60.0);
        m[open_fds] = std::round(rng.uniform(60.0, 500.0));
        m[num_threads] = std::round(rng.uniform(2.0, 8.0));
        m[ctx_voluntary_per_s] = rng.uniform(800.0, 5000.0);
        m[ctx_involuntary_per_s] = rng.uniform(20.0, 200.0);
        detail::set_state(m, state_disk_sleep);
        p.host_io_wait_pct = rng.uniform(3.0, 12.0);
        break;
      case MalwareFamily::stealth:
        proc.command = k == 0 ? "/usr/lib/.dbus/dbus-helper" : "/usr/lib/.dbus/dbus-helper -c " + std::to_string(k);
        m[cpu_user_pct] = rng.uniform(0.3, 2.5);
        m[cpu_system_pct] = rng.uniform(0.1, 1.0);
        m[mem_rss_mb] = rng.uniform(1.5, 6.0);
        m[mem_vms_mb] = m[mem_rss_mb] * rng.uniform(3.0, 8.0);
        m[mem_shared_mb] = rng.uniform(0.5, 1.5);
        m[minor_faults_per_s] = rng.uniform(1.0, 10.0);
        m[open_fds] = std::round(rng.uniform(3.0, 8.0));
        m[num_threads] = 1.0;
        m[ctx_voluntary_per_s] = rng.uniform(1.0, 6.0);
        m[net_bytes_out_per_s] = rng.uniform(2e3, 2e4);
        m[net_bytes_in_per_s] = rng.uniform(50.0, 400.0);
        m[net_packets_out_per_s] = rng.uniform(20.0, 120.0);
        m[net_packets_in_per_s] = rng.uniform(1.0, 5.0);
        m[nice] = 19.0;
        detail::set_state(m, state_sleeping);
        break;
      case MalwareFamily::dormant_bursty:
        proc.command = k == 0 ? "/dev/shm/.x/bot -d" : "/dev/shm/.x/bot -w " + std::to_string(k);
        m[cpu_user_pct] = rng.uniform(40.0, 80.0);
        m[cpu_system_pct] = rng.uniform(5.0, 15.0);
        m[mem_rss_mb] = rng.uniform(10.0, 50.0);
        m[mem_vms_mb] = m[mem_rss_mb] * rng.uniform(3.0, 8.0);
        m[mem_shared_mb] = rng.uniform(1.0, 5.0);
        m[minor_faults_per_s] = rng.uniform(100.0, 800.0);
        m[open_fds] = std::round(rng.uniform(200.0, 1000.0));
        m[num_threads] = std::round(rng.uniform(16.0, 64.0));
        m[ctx_voluntary_per_s] = rng.uniform(2000.0, 10000.0);
        m[ctx_involuntary_per_s] = rng.uniform(100.0, 600.0);
        m[net_bytes_out_per_s] = rng.uniform(5e6, 5e7);
        m[net_bytes_in_per_s] = rng.uniform(1e4, 1e5);
        m[net_packets_out_per_s] = rng.uniform(5e3, 5e4);
        m[net_packets_in_per_s] = rng.uniform(50.0, 500.0);
        detail::set_state(m, state_running);
        proc.period_s = static_cast<int>(rng.uniform_int(6, 30)) * 10;
        proc.active_s = std::max(10, static_cast<int>(rng.uniform_int(1, 4)) * 10);
        proc.active_s = std::min(proc.active_s, proc.period_s);
        p.host_ctx_involuntary = rng.uniform(5.0, 30.0);
        break;
    }
    detail::finish_levels(m);
    proc.active_levels = m;
    p.process_footprint.push_back(std::move(proc));
  }
  return p;
}

// n distinct variants cycling through the given families.
inline std::vector<MalwareProfile> profile_library(
    int n, std::uint64_t seed,
    const std::vector<MalwareFamily>& families = {MalwareFamily::cpu_spinner, MalwareFamily::io_flooder,
                                                  MalwareFamily::stealth, MalwareFamily::dormant_bursty}) {
  if (families.empty()) throw ConfigError("profile library needs at least one family");
  std::vector<MalwareProfile> out;
  out.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    out.push_back(make_malware_profile(families[static_cast<std::size_t>(i) % families.size()], i, rng));
  }
  return out;
}

// --- experiment simulation -------------------------------------------------

namespace detail {

enum class ProcKind { kernel_thread, daemon, web_master, web_worker, app_master, app_worker, db_client, monitor, cron_job };

struct LiveProcess {
  UniqueProcessId id;
  ProcKind kind = ProcKind::daemon;
  double rss_mb = 0.0;  // per-process constants drawn at spawn
  double vms_factor = 1.0;
  double fds = 0.0;
  double threads = 1.0;
  double nice = 0.0;
  int malware_index = -1;
  int spawned_at_s = 0;
  int exits_at_s = -1;  // -1: lives for the whole experiment
  bool has_history = false;
  BaseMetrics prev{};
  double prev_d1_cpu = 0, prev_d1_rss = 0, prev_d1_rd = 0, prev_d1_wr = 0, prev_d1_in = 0, prev_d1_out = 0;
};

struct SkeletonEntry {
  const char* command;
  const char* binary;
  ProcKind kind;
};

inline const std::vector<SkeletonEntry>& service_skeleton() {
  static const std::vector<SkeletonEntry> entries = {
      {"/sbin/init", "/lib/systemd/systemd", ProcKind::daemon},
      {"[kthreadd]", "kernel", ProcKind::kernel_thread},
      {"[ksoftirqd/0]", "kernel", ProcKind::kernel_thread},
      {"[ksoftirqd/1]", "kernel", ProcKind::kernel_thread},
      {"[rcu_sched]", "kernel", ProcKind::kernel_thread},
      {"[kworker/0:1]", "kernel", ProcKind::kernel_thread},
      {"[kworker/1:2]", "kernel", ProcKind::kernel_thread},
      {"[jbd2/vda1-8]", "kernel", ProcKind::kernel_thread},
      {"/lib/systemd/systemd-journald", "/lib/systemd/systemd-journald", ProcKind::daemon},
      {"/lib/systemd/systemd-udevd", "/lib/systemd/systemd-udevd", ProcKind::daemon},
      {"/lib/systemd/systemd-networkd", "/lib/systemd/systemd-networkd", ProcKind::daemon},
      {"/lib/systemd/systemd-resolved", "/lib/systemd/systemd-resolved", ProcKind::daemon},
      {"/usr/sbin/rsyslogd -n", "/usr/sbin/rsyslogd", ProcKind::daemon},
      {"/usr/sbin/cron -f", "/usr/sbin/cron", ProcKind::daemon},
      {"/usr/sbin/sshd -D", "/usr/sbin/sshd", ProcKind::daemon},
      {"/usr/bin/dbus-daemon --system", "/usr/bin/dbus-daemon", ProcKind::daemon},
      {"/sbin/agetty -o -p -- \\u --noclear tty1 linux", "/sbin/agetty", ProcKind::daemon},
      {"/usr/sbin/collectd -f", "/usr/sbin/collectd", ProcKind::monitor},
      {"/usr/sbin/apache2 -k start", "/usr/sbin/apache2", ProcKind::web_master},
      {"php-fpm: master process (/etc/php/fpm/php-fpm.conf)", "/usr/sbin/php-fpm", ProcKind::app_master},
      {"/usr/bin/python3 /opt/app/dbpool.py --upstream db-tier", "/usr/bin/python3", ProcKind::db_client},
  };
  return entries;
}

inline constexpr int kMaxWebWorkers = 24;
inline constexpr int kMaxAppWorkers = 16;
inline constexpr int kMaxCronJobs = 10;
inline constexpr double kInstanceCapacityRps = 50.0;

inline double jitter(Rng& rng, double v, double rel) {
  return std::max(0.0, v * (1.0 + rel * rng.normal()));
}

// Base metrics for a benign process at the given activity level in [0, 1].
inline BaseMetrics benign_levels(const LiveProcess& p, double activity, double rps_share,
                                 double host_io_wait, double host_ctx, Rng& rng) {
  using namespace feature;
  BaseMetrics m = zero_levels();
  m[mem_rss_mb] = jitter(rng, p.rss_mb * (1.0 + 0.3 * activity), 0.02);
  m[mem_vms_mb] = m[mem_rss_mb] * p.vms_factor;
  m[mem_shared_mb] = m[mem_rss_mb] * 0.15;
  m[open_fds] = std::round(p.fds + (p.kind == ProcKind::web_worker ? 12.0 * activity : 0.0));
  m[num_threads] = p.threads;
  m[nice] = p.nice;
  switch (p.kind) {
    case ProcKind::kernel_thread:
      m[cpu_system_pct] = jitter(rng, 0.05 + 0.4 * activity, 0.5);
      m[ctx_voluntary_per_s] = jitter(rng, 10.0 + 40.0 * activity, 0.3);
      m[disk_write_bytes_per_s] = p.id.command.starts_with("[jbd2") ? jitter(rng, 2e4 + 2e5 * activity, 0.5) : 0.0;
      break;
    case ProcKind::daemon:
      m[cpu_user_pct] = jitter(rng, 0.05, 0.8);
      m[cpu_system_pct] = jitter(rng, 0.03, 0.8);
      m[ctx_voluntary_per_s] = jitter(rng, 3.0, 0.5);
      m[minor_faults_per_s] = jitter(rng, 1.0, 0.8);
      if (p.id.command.find("journald") != std::string::npos || p.id.command.find("rsyslogd") != std::string::npos) {
        m[disk_write_bytes_per_s] = jitter(rng, 4e3 + 6e4 * activity, 0.4);
        m[disk_write_ops_per_s] = jitter(rng, 1.0 + 8.0 * activity, 0.4);
      }
      break;
    case ProcKind::monitor:
      m[cpu_user_pct] = jitter(rng, 0.4, 0.3);
      m[cpu_system_pct] = jitter(rng, 0.2, 0.3);
      m[disk_write_bytes_per_s] = jitter(rng, 8e3, 0.3);
      m[disk_write_ops_per_s] = jitter(rng, 2.0, 0.3);
      m[net_bytes_out_per_s] = jitter(rng, 1.5e3, 0.2);
      m[net_packets_out_per_s] = jitter(rng, 3.0, 0.2);
      m[ctx_voluntary_per_s] = jitter(rng, 20.0, 0.2);
      break;
    case ProcKind::web_master:
    case ProcKind::app_master:
      m[cpu_user_pct] = jitter(rng, 0.2 + 1.0 * activity, 0.3);
      m[cpu_system_pct] = jitter(rng, 0.1 + 0.5 * activity, 0.3);
      m[ctx_voluntary_per_s] = jitter(rng, 5.0 + 30.0 * activity, 0.3);
      break;
    case ProcKind::web_worker:
      m[cpu_user_pct] = jitter(rng, 0.1 + 30.0 * activity, 0.15);
      m[cpu_system_pct] = jitter(rng, 0.05 + 8.0 * activity, 0.15);
      m[minor_faults_per_s] = jitter(rng, 2.0 + 200.0 * activity, 0.2);
      m[ctx_voluntary_per_s] = jitter(rng, 2.0 + 6.0 * rps_share, 0.15);
      m[net_bytes_in_per_s] = jitter(rng, 700.0 * rps_share, 0.1);
      m[net_bytes_out_per_s] = jitter(rng, 18e3 * rps_share, 0.1);
      m[net_packets_in_per_s] = jitter(rng, 4.0 * rps_share, 0.1);
      m[net_packets_out_per_s] = jitter(rng, 14.0 * rps_share, 0.1);
      m[disk_read_bytes_per_s] = jitter(rng, 4e3 * rps_share, 0.3);
      m[disk_read_ops_per_s] = jitter(rng, 0.5 * rps_share, 0.3);
      break;
    case ProcKind::app_worker:
      m[cpu_user_pct] = jitter(rng, 0.1 + 40.0 * activity, 0.15);
      m[cpu_system_pct] = jitter(rng, 0.05 + 6.0 * activity, 0.15);
      m[minor_faults_per_s] = jitter(rng, 5.0 + 400.0 * activity, 0.2);
      m[ctx_voluntary_per_s] = jitter(rng, 3.0 + 10.0 * rps_share, 0.15);
      m[net_bytes_in_per_s] = jitter(rng, 2e3 * rps_share, 0.1);
      m[net_bytes_out_per_s] = jitter(rng, 1.5e3 * rps_share, 0.1);
      m[net_packets_in_per_s] = jitter(rng, 5.0 * rps_share, 0.1);
      m[net_packets_out_per_s] = jitter(rng, 5.0 * rps_share, 0.1);
      break;
    case ProcKind::db_client:
      m[cpu_user_pct] = jitter(rng, 0.5 + 8.0 * activity, 0.2);
      m[cpu_system_pct] = jitter(rng, 0.2 + 3.0 * activity, 0.2);
      m[ctx_voluntary_per_s] = jitter(rng, 10.0 + 400.0 * activity, 0.2);
      m[net_bytes_in_per_s] = jitter(rng, 1e3 + 4e5 * activity, 0.15);
      m[net_bytes_out_per_s] = jitter(rng, 5e2 + 6e4 * activity, 0.15);
      m[net_packets_in_per_s] = jitter(rng, 2.0 + 300.0 * activity, 0.15);
      m[net_packets_out_per_s] = jitter(rng, 2.0 + 250.0 * activity, 0.15);
      break;
    case ProcKind::cron_job:
      m[cpu_user_pct] = jitter(rng, 12.0, 0.5);
      m[cpu_system_pct] = jitter(rng, 4.0, 0.5);
      m[minor_faults_per_s] = jitter(rng, 300.0, 0.5);
      m[disk_read_bytes_per_s] = jitter(rng, 2e5, 0.8);
      m[disk_read_ops_per_s] = jitter(rng, 40.0, 0.8);
      m[ctx_voluntary_per_s] = jitter(rng, 30.0, 0.5);
      break;
  }
  m[cpu_user_pct] = std::min(m[cpu_user_pct], 100.0);
  m[cpu_system_pct] = std::min(m[cpu_system_pct], 100.0 - m[cpu_user_pct]);
  const bool waits_on_io = m[disk_read_bytes_per_s] + m[disk_write_bytes_per_s] > 0.0;
  m[io_wait_pct] = waits_on_io ? std::min(100.0, jitter(rng, 0.3 + host_io_wait, 0.3)) : 0.0;
  m[ctx_involuntary_per_s] = jitter(rng, 0.5 + 3.0 * activity + host_ctx * (m[cpu_user_pct] > 1.0 ? 1.0 : 0.1), 0.3);
  finish_levels(m);
  const double cpu = m[cpu_total_pct];
  if (p.kind == ProcKind::kernel_thread && cpu < 0.1) {
    set_state(m, state_idle);
  } else if (rng.uniform() * 100.0 < cpu) {
    set_state(m, state_running);
  } else {
    set_state(m, state_sleeping);
  }
  return m;
}

inline BaseMetrics malware_levels(const MalwareProcess& proc, int t_since_spawn, Rng& rng) {
  using namespace feature;
  BaseMetrics m = proc.active_levels;
  const bool active = proc.period_s == 0 || (t_since_spawn % proc.period_s) < proc.active_s;
  if (!active) {
    // Dormant: resident but quiet.
    for (auto i : {cpu_user_pct, cpu_system_pct, minor_faults_per_s, major_faults_per_s, disk_read_bytes_per_s,
                   disk_write_bytes_per_s, disk_read_ops_per_s, disk_write_ops_per_s, io_wait_pct,
                   ctx_voluntary_per_s, ctx_involuntary_per_s, net_bytes_in_per_s, net_bytes_out_per_s,
                   net_packets_in_per_s, net_packets_out_per_s}) {
      m[i] *= 0.01;
    }
    set_state(m, state_sleeping);
  }
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (i >= state_running && i <= state_idle) continue;
    if (i == nice || i == num_threads || i == open_fds) continue;
    m[i] = jitter(rng, m[i], 0.1);
  }
  m[cpu_user_pct] = std::min(m[cpu_user_pct], 100.0);
  m[cpu_system_pct] = std::min(m[cpu_system_pct], 100.0 - m[cpu_user_pct]);
  m[io_wait_pct] = std::min(m[io_wait_pct], 100.0);
  finish_levels(m);
  return m;
}

// Completes a feature vector with first/second differences against the
// previous sample of the same process, then clamps into schema ranges.
inline FeatureVector with_differences(LiveProcess& p, const BaseMetrics& base, const FeatureSchema& schema) {
  using namespace feature;
  FeatureVector v{};
  std::copy(base.begin(), base.end(), v.begin());
  if (p.has_history) {
    const double d_cpu = base[cpu_total_pct] - p.prev[cpu_total_pct];
    const double d_rss = base[mem_rss_mb] - p.prev[mem_rss_mb];
    const double d_rd = base[disk_read_bytes_per_s] - p.prev[disk_read_bytes_per_s];
    const double d_wr = base[disk_write_bytes_per_s] - p.prev[disk_write_bytes_per_s];
    const double d_in = base[net_bytes_in_per_s] - p.prev[net_bytes_in_per_s];
    const double d_out = base[net_bytes_out_per_s] - p.prev[net_bytes_out_per_s];
    v[cpu_total_pct_d1] = d_cpu;
    v[mem_rss_mb_d1] = d_rss;
    v[disk_read_bytes_d1] = d_rd;
    v[disk_write_bytes_d1] = d_wr;
    v[net_bytes_in_d1] = d_in;
    v[net_bytes_out_d1] = d_out;
    v[minor_faults_d1] = base[minor_faults_per_s] - p.prev[minor_faults_per_s];
    v[ctx_voluntary_d1] = base[ctx_voluntary_per_s] - p.prev[ctx_voluntary_per_s];
    v[cpu_total_pct_d2] = d_cpu - p.prev_d1_cpu;
    v[mem_rss_mb_d2] = d_rss - p.prev_d1_rss;
    v[disk_read_bytes_d2] = d_rd - p.prev_d1_rd;
    v[disk_write_bytes_d2] = d_wr - p.prev_d1_wr;
    v[net_bytes_in_d2] = d_in - p.prev_d1_in;
    v[net_bytes_out_d2] = d_out - p.prev_d1_out;
    v[num_threads_d1] = base[num_threads] - p.prev[num_threads];
    p.prev_d1_cpu = d_cpu;
    p.prev_d1_rss = d_rss;
    p.prev_d1_rd = d_rd;
    p.prev_d1_wr = d_wr;
    p.prev_d1_in = d_in;
    p.prev_d1_out = d_out;
  }
  p.prev = base;
  p.has_history = true;
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = std::clamp(v[i], schema[i].min_value, schema[i].max_value);
  }
  return v;
}

class PidAllocator {
 public:
  explicit PidAllocator(Rng& rng) : next_(static_cast<int>(rng.uniform_int(300, 2000))) {}
  int next(Rng& rng) {
    const int pid = next_;
    next_ += static_cast<int>(rng.uniform_int(1, 40));
    return pid;
  }

 private:
  int next_;
};

}  // namespace detail

inline ExperimentTrace simulate_experiment(const ExperimentConfig& config) {
  using namespace detail;
  config.validate();
  const FeatureSchema& schema = FeatureSchema::canonical();
  Rng rng(config.rng_seed);

  ExperimentTrace trace;
  trace.config = config;
  const int interval = config.sample_interval_s;
  {
    const int lo = (config.injection_window.earliest_s + interval - 1) / interval;
    const int hi = config.injection_window.latest_s / interval;
    if (hi < lo) throw ConfigError("injection window contains no sampling instant");
    trace.injection_time_s = static_cast<int>(rng.uniform_int(lo, hi)) * interval;
  }

  // Slow demand modulation on top of the ON/OFF sources, so the tier scales.
  const double demand_period_s = rng.uniform(900.0, 2400.0);
  const double demand_phase = rng.uniform(0.0, 6.283185307179586);
  const double demand_depth = rng.uniform(0.3, 0.7);
  const double demand_base = rng.uniform(0.8, 1.6);

  PidAllocator pids(rng);
  std::vector<LiveProcess> live;
  auto spawn = [&](const std::string& command, const std::string& binary, ProcKind kind, int now) {
    LiveProcess p;
    p.id = {pids.next(rng), command, binary_hash_of("bin:" + binary)};
    p.kind = kind;
    p.spawned_at_s = now;
    switch (kind) {
      case ProcKind::kernel_thread: p.rss_mb = 0.0; p.vms_factor = 0.0; p.fds = 0; p.threads = 1; p.nice = -20.0 * (rng.uniform() < 0.3); break;
      case ProcKind::daemon: p.rss_mb = rng.uniform(3.0, 30.0); p.vms_factor = rng.uniform(5.0, 20.0); p.fds = std::round(rng.uniform(8.0, 60.0)); p.threads = std::round(rng.uniform(1.0, 4.0)); break;
      case ProcKind::monitor: p.rss_mb = rng.uniform(8.0, 20.0); p.vms_factor = rng.uniform(10.0, 30.0); p.fds = 24; p.threads = 6; break;
      case ProcKind::web_master: p.rss_mb = rng.uniform(15.0, 25.0); p.vms_factor = 8.0; p.fds = 12; p.threads = 1; break;
      case ProcKind::app_master: p.rss_mb = rng.uniform(20.0, 35.0); p.vms_factor = 6.0; p.fds = 10; p.threads = 1; break;
      case ProcKind::web_worker: p.rss_mb = rng.uniform(25.0, 45.0); p.vms_factor = 8.0; p.fds = std::round(rng.uniform(10.0, 16.0)); p.threads = 1; break;
      case ProcKind::app_worker: p.rss_mb = rng.uniform(35.0, 70.0); p.vms_factor = 5.0; p.fds = std::round(rng.uniform(8.0, 14.0)); p.threads = 1; break;
      case ProcKind::db_client: p.rss_mb = rng.uniform(30.0, 50.0); p.vms_factor = 10.0; p.fds = 40; p.threads = 8; break;
      case ProcKind::cron_job: p.rss_mb = rng.uniform(2.0, 12.0); p.vms_factor = 4.0; p.fds = 6; p.threads = 1; p.nice = 10.0; break;
    }
    live.push_back(std::move(p));
  };

  for (const auto& e : service_skeleton()) spawn(e.command, e.binary, e.kind, 0);
  int web_workers = 0;
  int app_workers = 0;
  int cron_jobs = 0;

  std::vector<OnOffState> source_state(static_cast<std::size_t>(config.traffic_sources));
  std::vector<double> source_remaining(source_state.size());
  for (std::size_t s = 0; s < source_state.size(); ++s) {
    source_state[s] = rng.bernoulli(config.traffic.mean_on_ms / (config.traffic.mean_on_ms + config.traffic.mean_off_ms))
                          ? OnOffState::on
                          : OnOffState::off;
    source_remaining[s] = sample_pareto_onoff(source_state[s], config.traffic, rng).duration_ms;
  }

  int instances = config.policy.min_instances;
  const int samples = config.sample_count();
  trace.snapshots.reserve(static_cast<std::size_t>(samples));
  trace.instance_counts.reserve(static_cast<std::size_t>(samples));
  const double window_ms = 1000.0 * interval;

  for (int step = 0; step < samples; ++step) {
    const int now = step * interval;

    // Aggregate load of all ON/OFF sources over this sampling window.
    double requests = 0.0;
    for (std::size_t s = 0; s < source_state.size(); ++s) {
      double elapsed = 0.0;
      while (elapsed < window_ms) {
        const double chunk = std::min(source_remaining[s], window_ms - elapsed);
        if (source_state[s] == OnOffState::on) requests += chunk / 1000.0 * config.traffic.peak_rate;
        elapsed += chunk;
        source_remaining[s] -= chunk;
        if (source_remaining[s] <= 0.0) {
          source_state[s] = source_state[s] == OnOffState::on ? OnOffState::off : OnOffState::on;
          source_remaining[s] = sample_pareto_onoff(source_state[s], config.traffic, rng).duration_ms;
        }
      }
    }
    const double modulation =
        demand_base * (1.0 + demand_depth * std::sin(6.283185307179586 * now / demand_period_s + demand_phase));
    const double tier_rps = std::max(0.0, requests / interval * modulation);
    const double avg_cpu =
        std::clamp(tier_rps / (instances * kInstanceCapacityRps) + 0.02 * rng.normal(), 0.0, 1.0);
    const double vm_rps = tier_rps / instances;
    const double activity = avg_cpu;

    // Worker pools grow on demand; idle workers stay resident.
    const int want_web = std::min(kMaxWebWorkers, static_cast<int>(std::ceil(activity * kMaxWebWorkers)));
    while (web_workers < want_web) {
      spawn("/usr/sbin/apache2 -k start", "/usr/sbin/apache2", ProcKind::web_worker, now);
      ++web_workers;
    }
    const int want_app = std::min(kMaxAppWorkers, static_cast<int>(std::ceil(activity * kMaxAppWorkers)));
    while (app_workers < want_app) {
      spawn("php-fpm: pool www", "/usr/sbin/php-fpm", ProcKind::app_worker, now);
      ++app_workers;
    }
    if (now > 0 && cron_jobs < kMaxCronJobs && rng.bernoulli(0.025)) {
      spawn("/bin/sh -c run-parts --report /etc/cron.hourly", "/bin/dash", ProcKind::cron_job, now);
      live.back().exits_at_s = now + static_cast<int>(rng.uniform_int(1, 3)) * interval;
      ++cron_jobs;
    }

    // Malware processes enter once their start time arrives.
    double host_io_wait = 0.0;
    double host_ctx = 0.0;
    if (now >= trace.injection_time_s) {
      host_io_wait = config.malware.host_io_wait_pct;
      host_ctx = config.malware.host_ctx_involuntary;
      for (int k = 0; k < config.malware.spawn_count(); ++k) {
        const auto& mp = config.malware.process_footprint[static_cast<std::size_t>(k)];
        const bool present = std::any_of(live.begin(), live.end(), [&](const LiveProcess& p) { return p.malware_index == k; });
        if (!present && now >= trace.injection_time_s + mp.start_offset_s) {
          LiveProcess p;
          p.id = {pids.next(rng), mp.command, config.malware.binary_hash_for(mp)};
          p.malware_index = k;
          p.spawned_at_s = now;
          live.push_back(std::move(p));
        }
      }
    }

    const int active_web = std::max(1, want_web);
    const int active_app = std::max(1, want_app);
    int web_rank = 0;
    int app_rank = 0;
    ProcessSnapshot snap;
    snap.timestamp_s = now;
    snap.vm_id = config.vm_id;
    snap.processes.reserve(live.size());
    for (auto& p : live) {
      if (p.exits_at_s >= 0 && now >= p.exits_at_s) continue;
      BaseMetrics base;
      if (p.malware_index >= 0) {
        const auto& mp = config.malware.process_footprint[static_cast<std::size_t>(p.malware_index)];
        base = malware_levels(mp, now - p.spawned_at_s, rng);
      } else {
        double a = activity;
        double share = vm_rps;
        if (p.kind == ProcKind::web_worker) {
          const bool busy = web_rank++ < active_web;
          a = busy ? activity : 0.0;
          share = busy ? vm_rps / active_web : 0.0;
        } else if (p.kind == ProcKind::app_worker) {
          const bool busy = app_rank++ < active_app;
          a = busy ? activity : 0.0;
          share = busy ? vm_rps / active_app : 0.0;
        }
        base = benign_levels(p, a, share, host_io_wait, host_ctx, rng);
        if (p.kind == ProcKind::web_master) base[feature::num_children] = web_workers;
        if (p.kind == ProcKind::app_master) base[feature::num_children] = app_workers;
      }
      snap.processes.push_back({p.id, with_differences(p, base, schema)});
    }
    std::erase_if(live, [&](const LiveProcess& p) { return p.exits_at_s >= 0 && now >= p.exits_at_s; });
    trace.snapshots.push_back(std::move(snap));

    instances = step_autoscaler(avg_cpu, instances, config.policy);
    trace.instance_counts.push_back(instances);
  }
  return trace;
}

// One experiment per profile; experiment i uses profiles[i] and a seed derived
// from (base_seed, i).
inline std::vector<ExperimentTrace> generate_corpus(int n_experiments, const std::vector<MalwareProfile>& profiles,
                                                    std::uint64_t base_seed,
                                                    const ExperimentConfig& base_config = {}) {
  if (profiles.empty()) throw ConfigError("generate_corpus needs at least one malware profile");
  if (n_experiments < 0 || static_cast<std::size_t>(n_experiments) > profiles.size()) {
    throw ConfigError("requested " + std::to_string(n_experiments) + " experiments but only " +
                      std::to_string(profiles.size()) + " malware profiles");
  }
  std::vector<ExperimentTrace> corpus;
  corpus.reserve(static_cast<std::size_t>(n_experiments));
  for (int i = 0; i < n_experiments; ++i) {
    ExperimentConfig cfg = base_config;
    cfg.malware = profiles[static_cast<std::size_t>(i)];
    cfg.rng_seed = mix_seed(base_seed, static_cast<std::uint64_t>(i));
    corpus.push_back(simulate_experiment(cfg));
  }
  return corpus;
}

}  // namespace mdetect
