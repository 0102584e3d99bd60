#pragma once

// Encoded dataset directory:
//   dataset.json            shapes, feature order, split membership, normalization
//   <part>.values.bin       N x 120 x 45 float32 (little-endian), part in
//                           {train, validation, test}
//   <part>.labels.bin       N uint8 labels (1 = malicious)
//   <part>.index.csv        row,experiment,timestamp_s,label

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mdetect/encoder.hpp"
#include "mdetect/error.hpp"
#include "mdetect/schema.hpp"
#include "mdetect/trace_io.hpp"

namespace mdetect {

static_assert(std::endian::native == std::endian::little, "dataset I/O assumes a little-endian host");

inline constexpr const char* kDatasetFile = "dataset.json";
inline constexpr std::array<const char*, 3> kPartNames = {"train", "validation", "test"};

struct DatasetInfo {
  SplitRatios ratios;
  std::uint64_t seed = 0;
  std::vector<std::string> experiment_names;  // corpus order
  std::array<std::vector<std::size_t>, 3> membership;  // experiment indices per part
};

struct StoredDataset {
  DatasetInfo info;
  EncodedDataset data;

  const EncodedSet& part(std::size_t i) const { return i == 0 ? data.train : i == 1 ? data.validation : data.test; }
};

namespace detail {

inline void write_binary(const std::filesystem::path& path, const void* data, std::size_t bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!f) throw Error("failed writing " + path.string());
}

template <typename T>
std::vector<T> read_binary(const std::filesystem::path& path, std::size_t count) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw ValidationError("cannot open " + path.string());
  const auto size = static_cast<std::size_t>(f.tellg());
  if (size != count * sizeof(T)) {
    throw ValidationError(path.string() + ": expected " + std::to_string(count * sizeof(T)) + " bytes, found " +
                          std::to_string(size));
  }
  f.seekg(0);
  std::vector<T> out(count);
  f.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(size));
  return out;
}

}  // namespace detail

// Writes the dataset and returns the written file names (relative to dir).
inline std::vector<std::string> write_dataset(const std::filesystem::path& dir, const StoredDataset& ds) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> files;
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["sample_shape"] = {1, kSampleRows, kSampleCols};
  j["feature_order"] = FeatureSchema::canonical().names();
  j["split"] = {{"train", ds.info.ratios.train},
                {"validation", ds.info.ratios.validation},
                {"test", ds.info.ratios.test},
                {"seed", ds.info.seed}};
  j["experiments"] = ds.info.experiment_names;
  j["normalization"] = {{"min", ds.data.stats.min},
                        {"max", ds.data.stats.max},
                        {"observations", ds.data.stats.observations},
                        {"source", "train"}};
  for (std::size_t p = 0; p < 3; ++p) {
    const auto& set = ds.part(p);
    std::vector<std::string> names;
    for (auto e : ds.info.membership[p]) names.push_back(ds.info.experiment_names.at(e));
    j["parts"][kPartNames[p]] = {{"experiments", ds.info.membership[p]},
                                 {"experiment_names", names},
                                 {"samples", set.size()},
                                 {"malicious", set.malicious_count()}};
    const std::string base = kPartNames[p];
    detail::write_binary(dir / (base + ".values.bin"), set.values.data(), set.values.size() * sizeof(float));
    detail::write_binary(dir / (base + ".labels.bin"), set.labels.data(), set.labels.size());
    std::string index = "row,experiment,timestamp_s,label\n";
    for (std::size_t i = 0; i < set.size(); ++i) {
      index += std::to_string(i) + ',' + std::to_string(set.experiment[i]) + ',' + std::to_string(set.timestamp_s[i]) +
               ',' + std::to_string(set.labels[i]) + '\n';
    }
    write_text_file(dir / (base + ".index.csv"), index);
    files.push_back(base + ".values.bin");
    files.push_back(base + ".labels.bin");
    files.push_back(base + ".index.csv");
  }
  write_text_file(dir / kDatasetFile, j.dump(2) + "\n");
  files.push_back(kDatasetFile);
  return files;
}

inline StoredDataset read_dataset(const std::filesystem::path& dir) {
  const auto meta_path = dir / kDatasetFile;
  StoredDataset ds;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(meta_path));
    if (j.at("schema_version").get<int>() != kSchemaVersion) {
      throw ParseError(meta_path.string(), 0, "schema version mismatch");
    }
    if (j.at("feature_order").get<std::vector<std::string>>() != FeatureSchema::canonical().names()) {
      throw ParseError(meta_path.string(), 0, "feature order differs from the canonical schema");
    }
    const auto& s = j.at("split");
    ds.info.ratios = {s.at("train").get<double>(), s.at("validation").get<double>(), s.at("test").get<double>()};
    ds.info.seed = s.at("seed").get<std::uint64_t>();
    ds.info.experiment_names = j.at("experiments").get<std::vector<std::string>>();
    const auto& n = j.at("normalization");
    ds.data.stats.min = n.at("min").get<std::array<double, kFeatureCount>>();
    ds.data.stats.max = n.at("max").get<std::array<double, kFeatureCount>>();
    ds.data.stats.observations = n.at("observations").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(meta_path.string(), 0, e.what());
  }
  std::array<EncodedSet*, 3> sets = {&ds.data.train, &ds.data.validation, &ds.data.test};
  for (std::size_t p = 0; p < 3; ++p) {
    const std::string base = kPartNames[p];
    std::size_t samples = 0;
    try {
      const auto& pj = j.at("parts").at(base);
      ds.info.membership[p] = pj.at("experiments").get<std::vector<std::size_t>>();
      samples = pj.at("samples").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(meta_path.string(), 0, e.what());
    }
    auto& set = *sets[p];
    set.values = detail::read_binary<float>(dir / (base + ".values.bin"), samples * kSampleSize);
    set.labels = detail::read_binary<std::uint8_t>(dir / (base + ".labels.bin"), samples);
    const auto index_path = dir / (base + ".index.csv");
    const std::string text = read_text_file(index_path);
    std::size_t pos = text.find('\n');
    std::size_t line_no = 1;
    while (pos != std::string::npos && pos + 1 < text.size()) {
      const std::size_t start = pos + 1;
      pos = text.find('\n', start);
      ++line_no;
      const auto line = std::string_view(text).substr(start, (pos == std::string::npos ? text.size() : pos) - start);
      if (line.empty()) continue;
      const auto f = split_csv_line(line);
      int row = 0, exp = 0, ts = 0, label = 0;
      if (f.size() != 4 || !parse_int(f[0], row) || !parse_int(f[1], exp) || !parse_int(f[2], ts) ||
          !parse_int(f[3], label)) {
        throw ParseError(index_path.string(), line_no, "malformed index record");
      }
      if (static_cast<std::size_t>(row) != set.experiment.size() || label != set.labels[static_cast<std::size_t>(row)]) {
        throw ParseError(index_path.string(), line_no, "index disagrees with the label tensor");
      }
      set.experiment.push_back(exp);
      set.timestamp_s.push_back(ts);
    }
    if (set.experiment.size() != samples) {
      throw ValidationError(index_path.string() + ": " + std::to_string(set.experiment.size()) + " rows, expected " +
                            std::to_string(samples));
    }
  }
  return ds;
}

}  // namespace mdetect
