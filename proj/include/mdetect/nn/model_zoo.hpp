#pragma once

// Builders for the seven compared architectures. Each takes an options struct
// so tests can instantiate the same topology at toy sizes.

#include <array>
#include <string>
#include <vector>

#include "mdetect/error.hpp"
#include "mdetect/nn/graph.hpp"

namespace mdetect::nn {

inline constexpr int kClasses = 2;
inline constexpr int kBuilderVersion = 1;

// --- LeNet-5 -------------------------------------------------------------------

struct LeNetOptions {
  Shape input{1, 120, 45};
  int conv1_channels = 32;
  int conv2_channels = 64;
  int kernel = 5;
  std::vector<int> hidden = {1024, 512};
  int classes = kClasses;
};

inline ModelSpec build_lenet5(const LeNetOptions& o = {}) {
  GraphBuilder g("lenet5");
  int x = g.input(o.input);
  x = g.conv_same(x, "conv1", o.conv1_channels, o.kernel, true);
  x = g.relu(x, "relu1");
  x = g.max_pool(x, "pool1", 2, 2, 0, true);
  x = g.conv_same(x, "conv2", o.conv2_channels, o.kernel, true);
  x = g.relu(x, "relu2");
  x = g.max_pool(x, "pool2", 2, 2, 0, true);
  x = g.flatten(x, "flatten");
  for (std::size_t i = 0; i < o.hidden.size(); ++i) {
    x = g.fc(x, "fc" + std::to_string(i + 1), o.hidden[i]);
    x = g.relu(x, "relu" + std::to_string(i + 3));
  }
  g.fc(x, "fc" + std::to_string(o.hidden.size() + 1), o.classes);
  return g.finish();
}

// --- residual networks -----------------------------------------------------------

struct ResNetOptions {
  std::string name = "resnet";
  Shape input{3, 120, 45};
  int stem_channels = 64;
  int stem_kernel = 7;
  int stem_stride = 2;
  bool stem_pool = true;
  std::vector<int> blocks = {3, 4, 6, 3};
  std::vector<int> widths = {64, 128, 256, 512};
  int expansion = 4;
  int classes = kClasses;
};

inline std::vector<int> resnet_stage_blocks(int depth) {
  switch (depth) {
    case 50: return {3, 4, 6, 3};
    case 101: return {3, 4, 23, 3};
    case 152: return {3, 8, 36, 3};
    default: throw ConfigError("unsupported ResNet depth " + std::to_string(depth) + " (expected 50, 101 or 152)");
  }
}

// Bottleneck residual network: 1x1 reduce, 3x3 (carries the stage stride),
// 1x1 expand, each followed by batch norm; projection shortcut when the shape
// changes; ReLU after the junction.
inline ModelSpec build_resnet(const ResNetOptions& o) {
  if (o.blocks.size() != o.widths.size() || o.blocks.empty()) throw ConfigError("resnet: blocks/widths mismatch");
  GraphBuilder g(o.name);
  int x = g.input(o.input);
  x = g.conv(x, "conv1", o.stem_channels, o.stem_kernel, o.stem_stride, o.stem_kernel / 2, false);
  x = g.batch_norm(x, "bn1");
  x = g.relu(x, "relu");
  if (o.stem_pool) x = g.max_pool(x, "maxpool", 3, 2, 1, true);

  for (std::size_t stage = 0; stage < o.blocks.size(); ++stage) {
    const int width = o.widths[stage];
    const int out_channels = width * o.expansion;
    for (int b = 0; b < o.blocks[stage]; ++b) {
      const std::string p = "layer" + std::to_string(stage + 1) + "." + std::to_string(b) + ".";
      const int stride = (b == 0 && stage > 0) ? 2 : 1;
      ResidualBlockInfo info;
      info.name = p.substr(0, p.size() - 1);
      info.input = x;
      auto track = [&](int id) {
        info.branch_layers.push_back(id);
        return id;
      };
      int y = track(g.conv(x, p + "conv1", width, 1, 1, 0, false));
      y = track(g.batch_norm(y, p + "bn1"));
      y = track(g.relu(y, p + "relu1"));
      y = track(g.conv(y, p + "conv2", width, 3, stride, 1, false));
      y = track(g.batch_norm(y, p + "bn2"));
      y = track(g.relu(y, p + "relu2"));
      y = track(g.conv(y, p + "conv3", out_channels, 1, 1, 0, false));
      y = track(g.batch_norm(y, p + "bn3"));
      info.branch = y;
      int shortcut = x;
      if (stride != 1 || g.shape_of(x).c != out_channels) {
        shortcut = g.conv(x, p + "downsample.0", out_channels, 1, stride, 0, false);
        info.shortcut_layers.push_back(shortcut);
        shortcut = g.batch_norm(shortcut, p + "downsample.1");
        info.shortcut_layers.push_back(shortcut);
      }
      info.shortcut = shortcut;
      info.junction = g.add(y, shortcut, p + "add");
      x = g.relu(info.junction, p + "relu_out");
      info.output = x;
      g.spec().residual_blocks.push_back(std::move(info));
    }
  }
  x = g.global_avg_pool(x, "avgpool");
  g.fc(x, "fc", o.classes);
  return g.finish();
}

inline ModelSpec build_resnet(int depth) {
  ResNetOptions o;
  o.name = "resnet" + std::to_string(depth);
  o.blocks = resnet_stage_blocks(depth);
  return build_resnet(o);
}

// --- densely connected networks ----------------------------------------------------

struct DenseNetOptions {
  std::string name = "densenet";
  Shape input{3, 120, 45};
  int init_features = 64;
  int stem_kernel = 7;
  int stem_stride = 2;
  bool stem_pool = true;
  int growth = 32;
  int bottleneck_factor = 4;
  double compression = 0.5;
  std::vector<int> blocks = {6, 12, 24, 16};
  int classes = kClasses;
};

inline std::vector<int> densenet_block_layers(int depth) {
  switch (depth) {
    case 121: return {6, 12, 24, 16};
    case 169: return {6, 12, 32, 32};
    case 201: return {6, 12, 48, 32};
    default: throw ConfigError("unsupported DenseNet depth " + std::to_string(depth) + " (expected 121, 169 or 201)");
  }
}

// Dense layers are BN-ReLU-1x1 conv (bottleneck) then BN-ReLU-3x3 conv
// producing `growth` maps, concatenated onto everything before them.
// Transitions are BN-ReLU-1x1 conv (compression) then 2x2 average pooling.
inline ModelSpec build_densenet(const DenseNetOptions& o) {
  if (o.blocks.empty()) throw ConfigError("densenet: no dense blocks");
  GraphBuilder g(o.name);
  int x = g.input(o.input);
  x = g.conv(x, "features.conv0", o.init_features, o.stem_kernel, o.stem_stride, o.stem_kernel / 2, false);
  x = g.batch_norm(x, "features.norm0");
  x = g.relu(x, "features.relu0");
  if (o.stem_pool) x = g.max_pool(x, "features.pool0", 3, 2, 1, true);

  for (std::size_t b = 0; b < o.blocks.size(); ++b) {
    const std::string bp = "features.denseblock" + std::to_string(b + 1) + ".";
    const int entry = g.shape_of(x).c;
    for (int i = 0; i < o.blocks[b]; ++i) {
      const std::string p = bp + "denselayer" + std::to_string(i + 1) + ".";
      DenseLayerInfo info;
      info.name = p.substr(0, p.size() - 1);
      info.block = static_cast<int>(b);
      info.index = i;
      info.entry_channels = entry;
      info.growth = o.growth;
      info.input = x;
      int y = g.batch_norm(x, p + "norm1");
      y = g.relu(y, p + "relu1");
      y = g.conv(y, p + "conv1", o.bottleneck_factor * o.growth, 1, 1, 0, false);
      y = g.batch_norm(y, p + "norm2");
      y = g.relu(y, p + "relu2");
      y = g.conv(y, p + "conv2", o.growth, 3, 1, 1, false);
      x = g.concat({x, y}, p + "concat");
      info.output = x;
      g.spec().dense_layers.push_back(std::move(info));
    }
    if (b + 1 < o.blocks.size()) {
      const std::string tp = "features.transition" + std::to_string(b + 1) + ".";
      const int reduced = static_cast<int>(g.shape_of(x).c * o.compression);
      x = g.batch_norm(x, tp + "norm");
      x = g.relu(x, tp + "relu");
      x = g.conv(x, tp + "conv", reduced, 1, 1, 0, false);
      x = g.avg_pool(x, tp + "pool", 2, 2, 0, true);
    }
  }
  x = g.batch_norm(x, "features.norm5");
  x = g.relu(x, "features.relu5");
  x = g.global_avg_pool(x, "avgpool");
  g.fc(x, "classifier", o.classes);
  return g.finish();
}

inline ModelSpec build_densenet(int depth) {
  DenseNetOptions o;
  o.name = "densenet" + std::to_string(depth);
  o.blocks = densenet_block_layers(depth);
  return build_densenet(o);
}

// --- registry ------------------------------------------------------------------

inline const std::array<const char*, 7>& model_names() {
  static const std::array<const char*, 7> names = {"lenet5",      "resnet50",    "resnet101",  "resnet152",
                                                   "densenet121", "densenet169", "densenet201"};
  return names;
}

inline bool is_known_model(const std::string& name) {
  for (const char* n : model_names()) {
    if (name == n) return true;
  }
  return false;
}

// LeNet-5 reads the single-channel matrix; the deep models read the
// 3-channel replication.
inline int default_input_channels(const std::string& name) {
  if (!is_known_model(name)) throw ConfigError("unknown model '" + name + "'");
  return name == "lenet5" ? 1 : 3;
}

inline ModelSpec build_model(const std::string& name) {
  if (name == "lenet5") return build_lenet5();
  if (name == "resnet50") return build_resnet(50);
  if (name == "resnet101") return build_resnet(101);
  if (name == "resnet152") return build_resnet(152);
  if (name == "densenet121") return build_densenet(121);
  if (name == "densenet169") return build_densenet(169);
  if (name == "densenet201") return build_densenet(201);
  throw ConfigError("unknown model '" + name + "' (expected one of lenet5, resnet50, resnet101, resnet152, "
                    "densenet121, densenet169, densenet201)");
}

inline std::size_t count_params(const ModelSpec& spec) { return spec.param_count(); }

}  // namespace mdetect::nn
