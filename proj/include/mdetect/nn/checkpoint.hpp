#pragma once

// Checkpoint file:
//   8 bytes   magic "MDCKPT\0\1"
//   u32 LE    format version
//   u64 LE    header length
//   header    JSON: model, builder_version, init_seed, epoch, input_shape,
//             tensors [{key, shape, count}] in storage order
//   payload   float32 LE values of each tensor, concatenated

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mdetect/error.hpp"
#include "mdetect/nn/model_zoo.hpp"
#include "mdetect/nn/network.hpp"

namespace mdetect::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'M', 'D', 'C', 'K', 'P', 'T', '\0', '\1'};
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct CheckpointTensor {
  std::string key;
  std::vector<std::size_t> shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::string model;
  int builder_version = kBuilderVersion;
  std::uint64_t init_seed = 0;
  int epoch = 0;
  Shape input_shape;
  std::vector<CheckpointTensor> tensors;
};

template <typename T>
Checkpoint make_checkpoint(const Network<T>& net, int epoch) {
  Checkpoint ck;
  ck.model = net.spec().name;
  ck.init_seed = net.init_seed();
  ck.epoch = epoch;
  ck.input_shape = net.spec().input_shape();
  for (const auto& t : net.tensors()) {
    CheckpointTensor ct{t.key, t.shape, {}};
    ct.values.reserve(t.value.size());
    for (T v : t.value) ct.values.push_back(static_cast<float>(v));
    ck.tensors.push_back(std::move(ct));
  }
  return ck;
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::json header;
  header["model"] = ck.model;
  header["builder_version"] = ck.builder_version;
  header["format_version"] = kCheckpointFormatVersion;
  header["init_seed"] = ck.init_seed;
  header["epoch"] = ck.epoch;
  header["input_shape"] = {ck.input_shape.c, ck.input_shape.h, ck.input_shape.w};
  auto& list = header["tensors"] = nlohmann::json::array();
  for (const auto& t : ck.tensors) list.push_back({{"key", t.key}, {"shape", t.shape}, {"count", t.values.size()}});
  const std::string text = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f.write(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint32_t version = kCheckpointFormatVersion;
  const std::uint64_t len = text.size();
  f.write(reinterpret_cast<const char*>(&version), sizeof version);
  f.write(reinterpret_cast<const char*>(&len), sizeof len);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : ck.tensors) {
    f.write(reinterpret_cast<const char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * sizeof(float)));
  }
  if (!f) throw Error("failed writing " + path.string());
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  f.read(magic, sizeof magic);
  f.read(reinterpret_cast<char*>(&version), sizeof version);
  f.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!f || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw ValidationError(path.string() + ": not a checkpoint file");
  }
  if (version > kCheckpointFormatVersion) {
    throw ValidationError(path.string() + ": checkpoint format " + std::to_string(version) + " is newer than supported " +
                          std::to_string(kCheckpointFormatVersion));
  }
  std::string text(len, '\0');
  f.read(text.data(), static_cast<std::streamsize>(len));
  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(text);
    ck.model = header.at("model").get<std::string>();
    ck.builder_version = header.at("builder_version").get<int>();
    ck.init_seed = header.at("init_seed").get<std::uint64_t>();
    ck.epoch = header.at("epoch").get<int>();
    const auto shape = header.at("input_shape").get<std::vector<int>>();
    if (shape.size() != 3) throw ValidationError("bad input_shape");
    ck.input_shape = {shape[0], shape[1], shape[2]};
    for (const auto& t : header.at("tensors")) {
      CheckpointTensor ct;
      ct.key = t.at("key").get<std::string>();
      ct.shape = t.at("shape").get<std::vector<std::size_t>>();
      ct.values.resize(t.at("count").get<std::size_t>());
      ck.tensors.push_back(std::move(ct));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": bad checkpoint header: " + e.what());
  }
  for (auto& t : ck.tensors) {
    f.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * sizeof(float)));
  }
  if (!f) throw ValidationError(path.string() + ": truncated checkpoint payload");
  return ck;
}

// Copies checkpoint values into a network built from the same architecture.
template <typename T>
void load_weights(Network<T>& net, const Checkpoint& ck) {
  if (ck.model != net.spec().name) {
    throw ValidationError("checkpoint is for model '" + ck.model + "', network is '" + net.spec().name + "'");
  }
  if (ck.builder_version != kBuilderVersion) {
    throw ValidationError("checkpoint builder version " + std::to_string(ck.builder_version) + " does not match " +
                          std::to_string(kBuilderVersion));
  }
  if (!(ck.input_shape == net.spec().input_shape())) {
    throw ValidationError("checkpoint input shape " + ck.input_shape.str() + " does not match model input " +
                          net.spec().input_shape().str());
  }
  auto& tensors = net.tensors();
  if (ck.tensors.size() != tensors.size()) {
    throw ValidationError("checkpoint has " + std::to_string(ck.tensors.size()) + " tensors, model has " +
                          std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& src = ck.tensors[i];
    auto& dst = tensors[i];
    if (src.key != dst.key || src.shape != dst.shape) {
      throw ValidationError("checkpoint tensor '" + src.key + "' does not match model tensor '" + dst.key + "'");
    }
    for (std::size_t k = 0; k < src.values.size(); ++k) dst.value[k] = static_cast<T>(src.values[k]);
  }
}

// Rebuilds the named architecture and loads the checkpoint into it.
template <typename T>
Network<T> network_from_checkpoint(const Checkpoint& ck) {
  Network<T> net(build_model(ck.model));
  load_weights(net, ck);
  return net;
}

}  // namespace mdetect::nn
