#pragma once

// Content digests for produced artifacts and the run manifest that lists them.
// Wall-clock fields are masked before hashing so repeated runs compare equal.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mdetect/error.hpp"
#include "mdetect/process_id.hpp"
#include "mdetect/rng.hpp"
#include "mdetect/trace_io.hpp"

namespace mdetect {

inline constexpr const char* kToolName = "mdetect";
inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr const char* kManifestFile = "manifest.json";

// Column / key names holding host-dependent timings.
inline const std::set<std::string, std::less<>>& wall_clock_fields() {
  static const std::set<std::string, std::less<>> names = {
      "cumulative_s",      "elapsed_s",         "time_elapsed_s",      "detection_time_ms",
      "detection_time_mean_ms", "median_ms",    "mean_ms",             "Detection Time (ms)",
      "Time Elapsed (s)"};
  return names;
}

inline std::string digest_bytes(std::string_view bytes) { return hex64(fnv1a64(bytes)); }

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_on(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// Blanks every column of a delimited table whose header is a wall-clock
// field. A new header is expected after any line without the separator.
inline std::string mask_table(std::string_view text, char sep) {
  std::string out;
  std::vector<bool> masked;
  bool expect_header = true;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.find(sep) == std::string_view::npos) {
      expect_header = true;
      out.append(line);
      out += '\n';
      continue;
    }
    const auto cells = split_on(line, sep);
    if (expect_header) {
      masked.assign(cells.size(), false);
      for (std::size_t c = 0; c < cells.size(); ++c) masked[c] = wall_clock_fields().contains(trim(cells[c]));
      expect_header = false;
      out.append(line);
    } else {
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (c) out += sep;
        out.append(c < masked.size() && masked[c] ? std::string_view("*") : cells[c]);
      }
    }
    out += '\n';
  }
  return out;
}

inline void mask_json(nlohmann::json& j) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (wall_clock_fields().contains(it.key())) it.value() = "*";
      else mask_json(it.value());
    }
  } else if (j.is_array()) {
    for (auto& v : j) mask_json(v);
  }
}

}  // namespace detail

// Digest of a file's content with wall-clock fields masked (.json by key,
// .csv and .md tables by column header); other files are hashed verbatim.
inline std::string artifact_digest(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  const auto ext = path.extension().string();
  if (ext == ".json") {
    auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) return digest_bytes(text);
    detail::mask_json(j);
    return digest_bytes(j.dump());
  }
  if (ext == ".csv") return digest_bytes(detail::mask_table(text, ','));
  if (ext == ".md") return digest_bytes(detail::mask_table(text, '|'));
  return digest_bytes(text);
}

struct ManifestArtifact {
  std::string path;  // relative to the manifest's directory
  std::string digest;

  friend bool operator==(const ManifestArtifact&, const ManifestArtifact&) = default;
};

struct RunManifest {
  std::string command;
  std::string config_digest;
  nlohmann::json seeds = nlohmann::json::object();
  nlohmann::json inputs = nlohmann::json::object();
  std::vector<ManifestArtifact> artifacts;
};

inline nlohmann::json to_json(const RunManifest& m) {
  nlohmann::json arts = nlohmann::json::array();
  for (const auto& a : m.artifacts) arts.push_back({{"path", a.path}, {"digest", a.digest}});
  return {{"tool", kToolName},       {"tool_version", kToolVersion}, {"command", m.command},
          {"config_digest", m.config_digest}, {"seeds", m.seeds}, {"inputs", m.inputs},
          {"artifacts", arts}};
}

// Records every listed file (relative to `dir`) with its digest and writes
// dir/manifest.json.
inline void write_manifest(const std::filesystem::path& dir, RunManifest m, const std::vector<std::string>& files) {
  m.artifacts.clear();
  std::vector<std::string> sorted = files;
  std::sort(sorted.begin(), sorted.end());
  for (const auto& f : sorted) m.artifacts.push_back({f, artifact_digest(dir / f)});
  write_text_file(dir / kManifestFile, to_json(m).dump(2) + "\n");
}

inline RunManifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / kManifestFile;
  RunManifest m;
  try {
    const auto j = nlohmann::json::parse(read_text_file(path));
    m.command = j.at("command").get<std::string>();
    m.config_digest = j.at("config_digest").get<std::string>();
    m.seeds = j.at("seeds");
    m.inputs = j.at("inputs");
    for (const auto& a : j.at("artifacts")) {
      m.artifacts.push_back({a.at("path").get<std::string>(), a.at("digest").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string(), 0, std::string("bad manifest: ") + e.what());
  }
  return m;
}

// Files under `root` (relative paths, sorted) paired with masked digests.
inline std::vector<ManifestArtifact> tree_digests(const std::filesystem::path& root) {
  std::vector<ManifestArtifact> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    out.push_back({std::filesystem::relative(e.path(), root).generic_string(), artifact_digest(e.path())});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  return out;
}

}  // namespace mdetect
