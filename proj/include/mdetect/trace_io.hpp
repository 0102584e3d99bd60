#pragma once

// On-disk trace format. One directory per experiment:
//
//   meta       JSON: schema version, config (including the malware profile),
//              seed, injection time, profile name, snapshot count, autoscaler
//              instance counts.
//   snapshots  CSV with a header row. One record per (timestamp, process):
//              timestamp_s,pid,command,binary_hash,<45 metrics in schema order>
//              A snapshot with no processes is a single record whose fields
//              after timestamp_s are all empty.
//
// Numbers are written in shortest round-trip form, so write -> read -> write
// reproduces both files byte for byte.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mdetect/error.hpp"
#include "mdetect/schema.hpp"
#include "mdetect/testbed.hpp"

namespace mdetect {

using json = nlohmann::json;

inline constexpr const char* kTraceMetaFile = "meta";
inline constexpr const char* kTraceSnapshotsFile = "snapshots";

// --- JSON mapping of the simulator types ----------------------------------

inline json to_json(const TrafficModel& t) {
  return {{"mean_on_ms", t.mean_on_ms}, {"mean_off_ms", t.mean_off_ms}, {"pareto_shape", t.pareto_shape},
          {"peak_rate", t.peak_rate}};
}

inline json to_json(const AutoScalePolicy& p) {
  return {{"scale_out_threshold", p.scale_out_threshold}, {"scale_in_threshold", p.scale_in_threshold},
          {"min_instances", p.min_instances}, {"max_instances", p.max_instances}};
}

inline json to_json(const MalwareProfile& p) {
  json procs = json::array();
  for (const auto& proc : p.process_footprint) {
    procs.push_back({{"command", proc.command}, {"start_offset_s", proc.start_offset_s},
                     {"period_s", proc.period_s}, {"active_s", proc.active_s},
                     {"active_levels", std::vector<double>(proc.active_levels.begin(), proc.active_levels.end())}});
  }
  return {{"name", p.name}, {"family", to_string(p.family)}, {"process_footprint", procs},
          {"host_io_wait_pct", p.host_io_wait_pct}, {"host_ctx_involuntary", p.host_ctx_involuntary}};
}

inline json to_json(const ExperimentConfig& c) {
  return {{"total_duration_s", c.total_duration_s},
          {"clean_phase_s", c.clean_phase_s},
          {"sample_interval_s", c.sample_interval_s},
          {"traffic", to_json(c.traffic)},
          {"policy", to_json(c.policy)},
          {"malware", to_json(c.malware)},
          {"injection_window", {{"earliest_s", c.injection_window.earliest_s}, {"latest_s", c.injection_window.latest_s}}},
          {"rng_seed", c.rng_seed},
          {"traffic_sources", c.traffic_sources},
          {"vm_id", c.vm_id}};
}

namespace detail {

template <typename T>
T require(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + ": bad value for '" + key + "': " + e.what());
  }
}

template <typename T>
void optional_into(const json& j, const char* key, T& out, const std::string& where) {
  if (j.is_object() && j.contains(key)) out = require<T>(j, key, where);
}

inline void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

}  // namespace detail

inline TrafficModel traffic_from_json(const json& j, TrafficModel t = {}) {
  detail::reject_unknown_keys(j, {"mean_on_ms", "mean_off_ms", "pareto_shape", "peak_rate"}, "traffic");
  detail::optional_into(j, "mean_on_ms", t.mean_on_ms, "traffic");
  detail::optional_into(j, "mean_off_ms", t.mean_off_ms, "traffic");
  detail::optional_into(j, "pareto_shape", t.pareto_shape, "traffic");
  detail::optional_into(j, "peak_rate", t.peak_rate, "traffic");
  return t;
}

inline AutoScalePolicy policy_from_json(const json& j, AutoScalePolicy p = {}) {
  detail::reject_unknown_keys(j, {"scale_out_threshold", "scale_in_threshold", "min_instances", "max_instances"}, "policy");
  detail::optional_into(j, "scale_out_threshold", p.scale_out_threshold, "policy");
  detail::optional_into(j, "scale_in_threshold", p.scale_in_threshold, "policy");
  detail::optional_into(j, "min_instances", p.min_instances, "policy");
  detail::optional_into(j, "max_instances", p.max_instances, "policy");
  return p;
}

inline MalwareProfile malware_from_json(const json& j) {
  const std::string where = "malware";
  detail::reject_unknown_keys(j, {"name", "family", "process_footprint", "host_io_wait_pct", "host_ctx_involuntary"}, where);
  MalwareProfile p;
  p.name = detail::require<std::string>(j, "name", where);
  p.family = malware_family_from_string(detail::require<std::string>(j, "family", where));
  detail::optional_into(j, "host_io_wait_pct", p.host_io_wait_pct, where);
  detail::optional_into(j, "host_ctx_involuntary", p.host_ctx_involuntary, where);
  for (const auto& pj : detail::require<json>(j, "process_footprint", where)) {
    MalwareProcess proc;
    proc.command = detail::require<std::string>(pj, "command", where);
    proc.start_offset_s = detail::require<int>(pj, "start_offset_s", where);
    proc.period_s = detail::require<int>(pj, "period_s", where);
    proc.active_s = detail::require<int>(pj, "active_s", where);
    const auto levels = detail::require<std::vector<double>>(pj, "active_levels", where);
    if (levels.size() != proc.active_levels.size()) throw ConfigError("malware active_levels has wrong length");
    std::copy(levels.begin(), levels.end(), proc.active_levels.begin());
    p.process_footprint.push_back(std::move(proc));
  }
  return p;
}

// Fields absent from `j` keep the values in `base`.
inline ExperimentConfig experiment_config_from_json(const json& j, ExperimentConfig c = {}) {
  const std::string where = "experiment";
  detail::reject_unknown_keys(j, {"total_duration_s", "clean_phase_s", "sample_interval_s", "traffic", "policy", "malware",
                                  "injection_window", "rng_seed", "traffic_sources", "vm_id"}, where);
  detail::optional_into(j, "total_duration_s", c.total_duration_s, where);
  detail::optional_into(j, "clean_phase_s", c.clean_phase_s, where);
  detail::optional_into(j, "sample_interval_s", c.sample_interval_s, where);
  if (j.contains("traffic")) c.traffic = traffic_from_json(j["traffic"], c.traffic);
  if (j.contains("policy")) c.policy = policy_from_json(j["policy"], c.policy);
  if (j.contains("malware")) c.malware = malware_from_json(j["malware"]);
  if (j.contains("injection_window")) {
    const auto& w = j["injection_window"];
    detail::reject_unknown_keys(w, {"earliest_s", "latest_s"}, "injection_window");
    detail::optional_into(w, "earliest_s", c.injection_window.earliest_s, "injection_window");
    detail::optional_into(w, "latest_s", c.injection_window.latest_s, "injection_window");
  }
  detail::optional_into(j, "rng_seed", c.rng_seed, where);
  detail::optional_into(j, "traffic_sources", c.traffic_sources, where);
  detail::optional_into(j, "vm_id", c.vm_id, where);
  return c;
}

// --- number formatting -----------------------------------------------------

inline void append_number(std::string& out, double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, end);
}

inline bool parse_number(std::string_view s, double& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline std::string snapshots_header(const FeatureSchema& schema = FeatureSchema::canonical()) {
  std::string h = "timestamp_s,pid,command,binary_hash";
  for (const auto& m : schema.metrics()) {
    h += ',';
    h += m.name;
  }
  return h;
}

// --- write / read ----------------------------------------------------------

inline json trace_meta(const ExperimentTrace& trace) {
  return {{"schema_version", kSchemaVersion},
          {"config", to_json(trace.config)},
          {"rng_seed", trace.config.rng_seed},
          {"injection_time_s", trace.injection_time_s},
          {"profile_name", trace.profile_name()},
          {"snapshot_count", trace.snapshots.size()},
          {"instance_counts", trace.instance_counts},
          {"feature_order", FeatureSchema::canonical().names()}};
}

inline std::string render_snapshots(const ExperimentTrace& trace) {
  std::string out = snapshots_header();
  out += '\n';
  for (const auto& s : trace.snapshots) {
    if (s.processes.empty()) {
      out += std::to_string(s.timestamp_s);
      out.append(3 + kFeatureCount, ',');
      out += '\n';
      continue;
    }
    for (const auto& p : s.processes) {
      if (p.id.command.empty() || p.id.command.find_first_of(",\n\r") != std::string::npos) {
        throw ValidationError("command '" + p.id.command + "' cannot be stored in the trace format");
      }
      out += std::to_string(s.timestamp_s);
      out += ',';
      out += std::to_string(p.id.pid);
      out += ',';
      out += p.id.command;
      out += ',';
      out += p.id.binary_hash;
      for (double v : p.metrics) {
        out += ',';
        append_number(out, v);
      }
      out += '\n';
    }
  }
  return out;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw Error("failed writing " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_trace(const std::filesystem::path& dir, const ExperimentTrace& trace) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / kTraceMetaFile, trace_meta(trace).dump(2) + "\n");
  write_text_file(dir / kTraceSnapshotsFile, render_snapshots(trace));
}

// Reads a trace directory and checks every trace invariant. Format problems
// raise ParseError with the offending line; invariant violations raise
// ValidationError.
inline ExperimentTrace read_trace(const std::filesystem::path& dir) {
  const auto meta_path = dir / kTraceMetaFile;
  const auto snap_path = dir / kTraceSnapshotsFile;
  const std::string meta_file = meta_path.string();
  const std::string snap_file = snap_path.string();

  json meta;
  try {
    meta = json::parse(read_text_file(meta_path));
  } catch (const json::parse_error& e) {
    throw ParseError(meta_file, 1, std::string("malformed meta: ") + e.what());
  }
  if (!meta.contains("schema_version") || meta["schema_version"] != kSchemaVersion) {
    throw ParseError(meta_file, 1, "schema version mismatch (expected " + std::to_string(kSchemaVersion) + ")");
  }

  ExperimentTrace trace;
  try {
    trace.config = experiment_config_from_json(meta.at("config"));
    trace.injection_time_s = meta.at("injection_time_s").get<int>();
    trace.instance_counts = meta.at("instance_counts").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw ParseError(meta_file, 1, std::string("bad meta field: ") + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(meta_file, 1, e.what());
  }
  const auto declared_count = meta.value("snapshot_count", static_cast<std::size_t>(0));

  const std::string text = read_text_file(snap_path);
  const FeatureSchema& schema = FeatureSchema::canonical();
  std::size_t pos = 0;
  std::size_t line_no = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    line = std::string_view(text).substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    return true;
  };

  std::string_view line;
  if (!next_line(line)) throw ParseError(snap_file, 1, "empty snapshots file");
  {
    const auto header = split_csv_line(line);
    const std::vector<std::string> fixed = {"timestamp_s", "pid", "command", "binary_hash"};
    std::vector<std::string> expected = fixed;
    for (const auto& n : schema.names()) expected.push_back(n);
    for (const auto& col : expected) {
      if (std::find(header.begin(), header.end(), col) == header.end()) {
        throw ParseError(snap_file, line_no, "missing column '" + col + "'");
      }
    }
    if (header.size() != expected.size()) {
      throw ParseError(snap_file, line_no, "expected " + std::to_string(expected.size()) + " columns, got " +
                                               std::to_string(header.size()));
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
      if (header[i] != expected[i]) {
        throw ParseError(snap_file, line_no, "column " + std::to_string(i) + " is '" + std::string(header[i]) +
                                                 "', expected '" + expected[i] + "'");
      }
    }
  }

  std::set<UniqueProcessId> seen_at_t;
  while (next_line(line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 4 + kFeatureCount) {
      throw ParseError(snap_file, line_no, "expected " + std::to_string(4 + kFeatureCount) + " fields, got " +
                                               std::to_string(fields.size()));
    }
    int t = 0;
    if (!parse_int(fields[0], t)) throw ParseError(snap_file, line_no, "bad timestamp_s");
    if (trace.snapshots.empty() || trace.snapshots.back().timestamp_s != t) {
      if (!trace.snapshots.empty() && t < trace.snapshots.back().timestamp_s) {
        throw ParseError(snap_file, line_no, "timestamps out of order");
      }
      trace.snapshots.push_back({t, trace.config.vm_id, {}});
      seen_at_t.clear();
    }
    const bool tick_row = std::all_of(fields.begin() + 1, fields.end(), [](auto f) { return f.empty(); });
    if (tick_row) {
      if (!trace.snapshots.back().processes.empty()) {
        throw ParseError(snap_file, line_no, "empty-snapshot record for a timestamp that has processes");
      }
      continue;
    }
    ProcessRecord rec;
    if (!parse_int(fields[1], rec.id.pid)) throw ParseError(snap_file, line_no, "bad pid");
    rec.id.command = std::string(fields[2]);
    rec.id.binary_hash = std::string(fields[3]);
    if (rec.id.command.empty()) throw ParseError(snap_file, line_no, "empty command");
    if (!is_valid_binary_hash(rec.id.binary_hash)) throw ParseError(snap_file, line_no, "bad binary_hash");
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
      if (!parse_number(fields[4 + i], rec.metrics[i])) {
        throw ParseError(snap_file, line_no, "bad value for metric '" + schema[i].name + "'");
      }
    }
    if (!seen_at_t.insert(rec.id).second) {
      throw ParseError(snap_file, line_no, "duplicate process " + std::to_string(rec.id.pid) + " at t=" + std::to_string(t));
    }
    trace.snapshots.back().processes.push_back(std::move(rec));
  }

  if (declared_count != trace.snapshots.size()) {
    throw ValidationError(snap_file + ": meta declares " + std::to_string(declared_count) + " snapshots, file has " +
                          std::to_string(trace.snapshots.size()));
  }
  trace.validate(schema);
  return trace;
}

}  // namespace mdetect
