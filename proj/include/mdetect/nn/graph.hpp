#pragma once

// Layer graphs with symbolic shape propagation. A ModelSpec is a topologically
// ordered list of layers; every layer's output shape is computed from its
// inputs when it is added, so a spec that builds is shape-consistent.

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "mdetect/error.hpp"

namespace mdetect::nn {

struct Shape {
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(c) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  std::string str() const { return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w); }

  friend bool operator==(const Shape&, const Shape&) = default;
};

enum class LayerKind {
  input,
  convolution,
  max_pool,
  average_pool,
  global_average_pool,
  flatten,
  fully_connected,
  batch_norm,
  activation,
  add_junction,
  concat_junction,
};

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::input: return "input";
    case LayerKind::convolution: return "convolution";
    case LayerKind::max_pool: return "max-pool";
    case LayerKind::average_pool: return "average-pool";
    case LayerKind::global_average_pool: return "global-average-pool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::fully_connected: return "fully-connected";
    case LayerKind::batch_norm: return "batch-norm";
    case LayerKind::activation: return "activation";
    case LayerKind::add_junction: return "add-junction";
    case LayerKind::concat_junction: return "concat-junction";
  }
  return "?";
}

enum class Padding { explicit_pad, same };

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::input;
  std::vector<int> inputs;
  int kernel_h = 0;
  int kernel_w = 0;
  int stride = 1;
  int pad_h = 0;
  int pad_w = 0;
  Padding padding = Padding::explicit_pad;
  bool ceil_mode = false;
  int out_channels = 0;
  bool bias = false;
  Shape in_shape;
  Shape out_shape;

  std::size_t weight_count() const {
    switch (kind) {
      case LayerKind::convolution:
        return static_cast<std::size_t>(kernel_h) * kernel_w * in_shape.c * out_channels;
      case LayerKind::fully_connected:
        return in_shape.size() * static_cast<std::size_t>(out_channels);
      default:
        return 0;
    }
  }

  std::size_t param_count() const {
    switch (kind) {
      case LayerKind::convolution:
      case LayerKind::fully_connected:
        return weight_count() + (bias ? static_cast<std::size_t>(out_channels) : 0);
      case LayerKind::batch_norm:
        return 2 * static_cast<std::size_t>(in_shape.c);
      default:
        return 0;
    }
  }
};

// Structural annotations the builders leave behind for tests and tooling.
struct ResidualBlockInfo {
  std::string name;
  int input = -1;     // block input node
  int shortcut = -1;  // == input for identity shortcuts
  int branch = -1;    // last node of F(x), before the junction
  int junction = -1;
  int output = -1;    // activation after the junction
  std::vector<int> branch_layers;
  std::vector<int> shortcut_layers;  // empty for identity shortcuts
};

struct DenseLayerInfo {
  std::string name;
  int block = 0;  // zero-based dense block index
  int index = 0;  // zero-based layer index within the block
  int entry_channels = 0;
  int growth = 0;
  int input = -1;   // node feeding the layer (concatenation of all predecessors)
  int output = -1;  // concatenation after the layer
};

struct ModelSpec {
  std::string name;
  std::vector<LayerSpec> layers;
  std::vector<ResidualBlockInfo> residual_blocks;
  std::vector<DenseLayerInfo> dense_layers;

  const Shape& input_shape() const { return layers.front().out_shape; }
  int output_node() const { return static_cast<int>(layers.size()) - 1; }
  const Shape& output_shape() const { return layers.back().out_shape; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.param_count();
    return n;
  }

  std::optional<int> find(const std::string& layer_name) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].name == layer_name) return static_cast<int>(i);
    }
    return std::nullopt;
  }
};

// Output length of a sliding window. Ceiling mode keeps a partial window at
// the end as long as it starts inside the (left-padded) input.
inline int window_output(int in, int kernel, int stride, int pad, bool ceil_mode) {
  const int span = in + 2 * pad - kernel;
  if (span < 0) return 0;
  if (!ceil_mode) return span / stride + 1;
  int out = (span + stride - 1) / stride + 1;
  if ((out - 1) * stride >= in + pad) --out;
  return out;
}

class GraphBuilder {
 public:
  explicit GraphBuilder(std::string model_name) { spec_.name = std::move(model_name); }

  int input(Shape shape) {
    if (!spec_.layers.empty()) throw ShapeError("input must be the first layer");
    if (shape.c <= 0 || shape.h <= 0 || shape.w <= 0) throw ShapeError("input: empty shape " + shape.str());
    LayerSpec l;
    l.name = "input";
    l.kind = LayerKind::input;
    l.in_shape = l.out_shape = shape;
    return push(std::move(l));
  }

  int conv(int from, const std::string& name, int out_channels, int kernel, int stride, int pad, bool bias) {
    LayerSpec l = unary(from, name, LayerKind::convolution);
    l.kernel_h = l.kernel_w = kernel;
    l.stride = stride;
    l.pad_h = l.pad_w = pad;
    l.out_channels = out_channels;
    l.bias = bias;
    l.out_shape = {out_channels, window_output(l.in_shape.h, kernel, stride, pad, false),
                   window_output(l.in_shape.w, kernel, stride, pad, false)};
    return push(checked(std::move(l)));
  }

  // Stride-1 convolution that preserves height and width (odd kernels).
  int conv_same(int from, const std::string& name, int out_channels, int kernel, bool bias) {
    if (kernel % 2 == 0) throw ShapeError(name + ": shape-preserving convolution needs an odd kernel");
    const int id = conv(from, name, out_channels, kernel, 1, (kernel - 1) / 2, bias);
    spec_.layers[static_cast<std::size_t>(id)].padding = Padding::same;
    return id;
  }

  int max_pool(int from, const std::string& name, int kernel, int stride, int pad, bool ceil_mode = true) {
    return pool(from, name, LayerKind::max_pool, kernel, stride, pad, ceil_mode);
  }

  int avg_pool(int from, const std::string& name, int kernel, int stride, int pad, bool ceil_mode = true) {
    return pool(from, name, LayerKind::average_pool, kernel, stride, pad, ceil_mode);
  }

  int global_avg_pool(int from, const std::string& name) {
    LayerSpec l = unary(from, name, LayerKind::global_average_pool);
    l.out_shape = {l.in_shape.c, 1, 1};
    return push(checked(std::move(l)));
  }

  int flatten(int from, const std::string& name) {
    LayerSpec l = unary(from, name, LayerKind::flatten);
    l.out_shape = {static_cast<int>(l.in_shape.size()), 1, 1};
    return push(checked(std::move(l)));
  }

  int fc(int from, const std::string& name, int out_features, bool bias = true) {
    LayerSpec l = unary(from, name, LayerKind::fully_connected);
    l.out_channels = out_features;
    l.bias = bias;
    l.out_shape = {out_features, 1, 1};
    return push(checked(std::move(l)));
  }

  int batch_norm(int from, const std::string& name) {
    LayerSpec l = unary(from, name, LayerKind::batch_norm);
    l.out_shape = l.in_shape;
    return push(checked(std::move(l)));
  }

  int relu(int from, const std::string& name) {
    LayerSpec l = unary(from, name, LayerKind::activation);
    l.out_shape = l.in_shape;
    return push(checked(std::move(l)));
  }

  int add(int a, int b, const std::string& name) {
    LayerSpec l;
    l.name = name;
    l.kind = LayerKind::add_junction;
    l.inputs = {check_ref(a, name), check_ref(b, name)};
    l.in_shape = shape_of(a);
    if (!(shape_of(a) == shape_of(b))) {
      throw ShapeError(name + ": add-junction operands differ (" + shape_of(a).str() + " vs " + shape_of(b).str() + ")");
    }
    l.out_shape = l.in_shape;
    return push(std::move(l));
  }

  int concat(const std::vector<int>& from, const std::string& name) {
    if (from.empty()) throw ShapeError(name + ": concat-junction needs inputs");
    LayerSpec l;
    l.name = name;
    l.kind = LayerKind::concat_junction;
    l.in_shape = shape_of(check_ref(from.front(), name));
    int channels = 0;
    for (int f : from) {
      const Shape s = shape_of(check_ref(f, name));
      if (s.h != l.in_shape.h || s.w != l.in_shape.w) {
        throw ShapeError(name + ": concat-junction spatial mismatch (" + s.str() + " vs " + l.in_shape.str() + ")");
      }
      channels += s.c;
      l.inputs.push_back(f);
    }
    l.out_shape = {channels, l.in_shape.h, l.in_shape.w};
    return push(std::move(l));
  }

  const Shape& shape_of(int node) const { return spec_.layers.at(static_cast<std::size_t>(node)).out_shape; }

  ModelSpec& spec() { return spec_; }

  ModelSpec finish() {
    if (spec_.layers.empty()) throw ShapeError(spec_.name + ": empty model");
    return std::move(spec_);
  }

 private:
  int check_ref(int node, const std::string& name) const {
    if (node < 0 || node >= static_cast<int>(spec_.layers.size())) {
      throw ShapeError(name + ": references unknown layer " + std::to_string(node));
    }
    return node;
  }

  LayerSpec unary(int from, const std::string& name, LayerKind kind) const {
    LayerSpec l;
    l.name = name;
    l.kind = kind;
    l.inputs = {check_ref(from, name)};
    l.in_shape = shape_of(from);
    return l;
  }

  int pool(int from, const std::string& name, LayerKind kind, int kernel, int stride, int pad, bool ceil_mode) {
    LayerSpec l = unary(from, name, kind);
    l.kernel_h = l.kernel_w = kernel;
    l.stride = stride;
    l.pad_h = l.pad_w = pad;
    l.ceil_mode = ceil_mode;
    if (2 * pad > kernel) throw ShapeError(name + ": padding larger than half the window");
    l.out_shape = {l.in_shape.c, window_output(l.in_shape.h, kernel, stride, pad, ceil_mode),
                   window_output(l.in_shape.w, kernel, stride, pad, ceil_mode)};
    return push(checked(std::move(l)));
  }

  LayerSpec checked(LayerSpec l) const {
    if (l.out_shape.c <= 0 || l.out_shape.h <= 0 || l.out_shape.w <= 0) {
      throw ShapeError(l.name + ": " + to_string(l.kind) + " maps " + l.in_shape.str() + " to empty shape " +
                       l.out_shape.str());
    }
    if ((l.kind == LayerKind::convolution || l.kind == LayerKind::max_pool || l.kind == LayerKind::average_pool) &&
        l.stride <= 0) {
      throw ShapeError(l.name + ": stride must be positive");
    }
    return l;
  }

  int push(LayerSpec l) {
    for (const auto& existing : spec_.layers) {
      if (existing.name == l.name) throw ShapeError("duplicate layer name '" + l.name + "'");
    }
    spec_.layers.push_back(std::move(l));
    return static_cast<int>(spec_.layers.size()) - 1;
  }

  ModelSpec spec_;
};

}  // namespace mdetect::nn
