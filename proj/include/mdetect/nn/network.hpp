#pragma once

// Executes a ModelSpec: owns the weights, runs batched forward passes and
// reverse-mode gradients. Convolutions lower to im2col + GEMM (Eigen).
//
// Layout: activations are [N, C, H, W] row-major. Convolution weights are
// [C_out, C_in, K_h, K_w], fully-connected weights [out, in].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mdetect/error.hpp"
#include "mdetect/nn/graph.hpp"
#include "mdetect/rng.hpp"

namespace mdetect::nn {

enum class Mode { train, eval };

template <typename T>
struct Tensor {
  std::string key;  // "<layer name>.<role>"
  std::vector<std::size_t> shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty for non-trainable buffers
  bool trainable = true;

  std::size_t size() const noexcept { return value.size(); }
};

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <typename T>
class Network {
  using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using VecC = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  using MapR = Eigen::Map<MatR>;
  using CMapR = Eigen::Map<const MatR>;

  struct LayerTensors {
    int weight = -1;
    int bias = -1;
    int gamma = -1;
    int beta = -1;
    int running_mean = -1;
    int running_var = -1;
  };

  struct LayerCache {
    std::vector<std::int32_t> argmax;
    std::vector<T> xhat;
    std::vector<T> inv_std;
    bool batch_stats = false;
  };

 public:
  explicit Network(ModelSpec spec) : spec_(std::move(spec)) {
    const auto& layers = spec_.layers;
    index_.resize(layers.size());
    consumers_.assign(layers.size(), 0);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      for (int in : l.inputs) ++consumers_[static_cast<std::size_t>(in)];
      auto add = [&](const std::string& role, std::vector<std::size_t> shape, bool trainable) {
        Tensor<T> t;
        t.key = l.name + "." + role;
        t.shape = std::move(shape);
        const std::size_t n = std::accumulate(t.shape.begin(), t.shape.end(), std::size_t{1}, std::multiplies<>());
        t.value.assign(n, T(0));
        if (trainable) t.grad.assign(n, T(0));
        t.trainable = trainable;
        tensors_.push_back(std::move(t));
        return static_cast<int>(tensors_.size()) - 1;
      };
      const auto oc = static_cast<std::size_t>(l.out_channels);
      const auto ic = static_cast<std::size_t>(l.in_shape.c);
      switch (l.kind) {
        case LayerKind::convolution:
          index_[i].weight = add("weight", {oc, ic, static_cast<std::size_t>(l.kernel_h), static_cast<std::size_t>(l.kernel_w)}, true);
          if (l.bias) index_[i].bias = add("bias", {oc}, true);
          break;
        case LayerKind::fully_connected:
          index_[i].weight = add("weight", {oc, l.in_shape.size()}, true);
          if (l.bias) index_[i].bias = add("bias", {oc}, true);
          break;
        case LayerKind::batch_norm:
          index_[i].gamma = add("weight", {ic}, true);
          index_[i].beta = add("bias", {ic}, true);
          index_[i].running_mean = add("running_mean", {ic}, false);
          index_[i].running_var = add("running_var", {ic}, false);
          break;
        default:
          break;
      }
    }
    initialize(0);
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  std::vector<Tensor<T>>& tensors() noexcept { return tensors_; }
  const std::vector<Tensor<T>>& tensors() const noexcept { return tensors_; }

  Tensor<T>* find_tensor(const std::string& key) {
    for (auto& t : tensors_) {
      if (t.key == key) return &t;
    }
    return nullptr;
  }

  std::size_t trainable_parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.trainable ? t.size() : 0;
    return n;
  }

  std::uint64_t init_seed() const noexcept { return init_seed_; }

  // Fan-in scaled normal weights (std = sqrt(2 / fan_in)), zero biases,
  // unit batch-norm scale, zero shift.
  void initialize(std::uint64_t seed) {
    init_seed_ = seed;
    Rng rng(seed);
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const auto& l = spec_.layers[i];
      const auto& ix = index_[i];
      if (ix.weight >= 0) {
        const double fan_in = l.kind == LayerKind::convolution
                                  ? static_cast<double>(l.in_shape.c) * l.kernel_h * l.kernel_w
                                  : static_cast<double>(l.in_shape.size());
        const double stddev = std::sqrt(2.0 / fan_in);
        for (auto& v : tensors_[static_cast<std::size_t>(ix.weight)].value) v = static_cast<T>(stddev * rng.normal());
      }
      if (ix.bias >= 0) fill(ix.bias, T(0));
      if (ix.gamma >= 0) fill(ix.gamma, T(1));
      if (ix.beta >= 0) fill(ix.beta, T(0));
      if (ix.running_mean >= 0) fill(ix.running_mean, T(0));
      if (ix.running_var >= 0) fill(ix.running_var, T(1));
    }
  }

  // Keep every intermediate activation after an eval-mode forward (train-mode
  // passes always keep them for backward).
  void set_retain_activations(bool retain) { retain_ = retain; }

  // input: n samples of spec().input_shape(), flattened. Returns logits [n, classes].
  const std::vector<T>& forward(std::span<const T> input, std::size_t n, Mode mode) {
    const Shape& in_shape = spec_.input_shape();
    if (input.size() != n * in_shape.size()) {
      throw ShapeError(spec_.name + ": layer 'input' expects " + std::to_string(n) + " x " + in_shape.str() + " (" +
                       std::to_string(n * in_shape.size()) + " values), got " + std::to_string(input.size()));
    }
    batch_ = n;
    mode_ = mode;
    const std::size_t layers = spec_.layers.size();
    acts_.assign(layers, {});
    caches_.assign(layers, {});
    grads_.clear();
    std::vector<int> pending = consumers_;
    const bool keep = mode == Mode::train || retain_;

    for (std::size_t i = 0; i < layers; ++i) {
      const auto& l = spec_.layers[i];
      auto& out = acts_[i];
      out.assign(n * l.out_shape.size(), T(0));
      switch (l.kind) {
        case LayerKind::input: std::copy(input.begin(), input.end(), out.begin()); break;
        case LayerKind::convolution: conv_forward(i, out); break;
        case LayerKind::max_pool: pool_forward(i, out, true); break;
        case LayerKind::average_pool: pool_forward(i, out, false); break;
        case LayerKind::global_average_pool: gap_forward(i, out); break;
        case LayerKind::flatten: out = act(l.inputs[0]); break;
        case LayerKind::fully_connected: fc_forward(i, out); break;
        case LayerKind::batch_norm: bn_forward(i, out); break;
        case LayerKind::activation: {
          const auto& x = act(l.inputs[0]);
          for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] > T(0) ? x[k] : T(0);
          break;
        }
        case LayerKind::add_junction: {
          const auto& a = act(l.inputs[0]);
          const auto& b = act(l.inputs[1]);
          for (std::size_t k = 0; k < a.size(); ++k) out[k] = a[k] + b[k];
          break;
        }
        case LayerKind::concat_junction: concat_forward(i, out); break;
      }
      if (!keep) {
        for (int in : l.inputs) {
          if (--pending[static_cast<std::size_t>(in)] == 0) std::vector<T>().swap(acts_[static_cast<std::size_t>(in)]);
        }
      }
    }
    return acts_.back();
  }

  const std::vector<T>& activation(int node) const { return acts_.at(static_cast<std::size_t>(node)); }

  void zero_grad() {
    for (auto& t : tensors_) std::fill(t.grad.begin(), t.grad.end(), T(0));
  }

  // Accumulates parameter gradients for d(loss)/d(logits) of the last forward.
  void backward(std::span<const T> grad_logits) {
    const std::size_t layers = spec_.layers.size();
    if (acts_.size() != layers || acts_.back().empty()) throw Error("backward without a retained forward pass");
    if (grad_logits.size() != acts_.back().size()) throw ShapeError(spec_.name + ": gradient shape mismatch at output");
    grads_.assign(layers, {});
    grads_.back().assign(grad_logits.begin(), grad_logits.end());

    for (std::size_t ii = layers; ii-- > 1;) {
      if (grads_[ii].empty()) continue;
      const auto& l = spec_.layers[ii];
      const auto& dy = grads_[ii];
      switch (l.kind) {
        case LayerKind::input: break;
        case LayerKind::convolution: conv_backward(ii); break;
        case LayerKind::max_pool: pool_backward(ii, true); break;
        case LayerKind::average_pool: pool_backward(ii, false); break;
        case LayerKind::global_average_pool: gap_backward(ii); break;
        case LayerKind::flatten: {
          auto& dx = grad_of(l.inputs[0]);
          for (std::size_t k = 0; k < dy.size(); ++k) dx[k] += dy[k];
          break;
        }
        case LayerKind::fully_connected: fc_backward(ii); break;
        case LayerKind::batch_norm: bn_backward(ii); break;
        case LayerKind::activation: {
          const auto& y = acts_[ii];
          auto& dx = grad_of(l.inputs[0]);
          for (std::size_t k = 0; k < dy.size(); ++k) dx[k] += y[k] > T(0) ? dy[k] : T(0);
          break;
        }
        case LayerKind::add_junction:
          for (int in : l.inputs) {
            auto& dx = grad_of(in);
            for (std::size_t k = 0; k < dy.size(); ++k) dx[k] += dy[k];
          }
          break;
        case LayerKind::concat_junction: concat_backward(ii); break;
      }
      std::vector<T>().swap(grads_[ii]);
    }
    grads_.clear();
  }

  void release_activations() {
    acts_.clear();
    caches_.clear();
    grads_.clear();
  }

  // Copies of every tensor value (weights and batch-norm buffers).
  std::vector<std::vector<T>> snapshot() const {
    std::vector<std::vector<T>> out;
    out.reserve(tensors_.size());
    for (const auto& t : tensors_) out.push_back(t.value);
    return out;
  }

  void restore(const std::vector<std::vector<T>>& values) {
    if (values.size() != tensors_.size()) throw ShapeError(spec_.name + ": snapshot has wrong tensor count");
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      if (values[i].size() != tensors_[i].value.size()) throw ShapeError(tensors_[i].key + ": snapshot size mismatch");
      tensors_[i].value = values[i];
    }
  }

 private:
  const std::vector<T>& act(int node) const { return acts_[static_cast<std::size_t>(node)]; }

  std::vector<T>& grad_of(int node) {
    auto& g = grads_[static_cast<std::size_t>(node)];
    if (g.empty()) g.assign(batch_ * spec_.layers[static_cast<std::size_t>(node)].out_shape.size(), T(0));
    return g;
  }

  void fill(int tensor, T v) {
    auto& t = tensors_[static_cast<std::size_t>(tensor)].value;
    std::fill(t.begin(), t.end(), v);
  }

  T* value_ptr(int tensor) { return tensors_[static_cast<std::size_t>(tensor)].value.data(); }
  T* grad_ptr(int tensor) { return tensors_[static_cast<std::size_t>(tensor)].grad.data(); }

  static bool is_direct(const LayerSpec& l) {
    return l.kernel_h == 1 && l.kernel_w == 1 && l.stride == 1 && l.pad_h == 0 && l.pad_w == 0;
  }

  // Output columns [lo, hi) whose input column ox*stride - pad + kj is in range.
  static std::pair<int, int> valid_span(int out_w, int in_w, int stride, int pad, int kj) {
    int lo = 0;
    while (lo < out_w && lo * stride - pad + kj < 0) ++lo;
    int hi = out_w;
    while (hi > lo && (hi - 1) * stride - pad + kj >= in_w) --hi;
    return {lo, hi};
  }

  static void im2col(const LayerSpec& l, const T* x, T* col) {
    const Shape& is = l.in_shape;
    const Shape& os = l.out_shape;
    const std::size_t p = static_cast<std::size_t>(os.h) * os.w;
    for (int c = 0; c < is.c; ++c) {
      for (int ki = 0; ki < l.kernel_h; ++ki) {
        for (int kj = 0; kj < l.kernel_w; ++kj) {
          T* row = col + (static_cast<std::size_t>((c * l.kernel_h + ki) * l.kernel_w + kj)) * p;
          const auto [lo, hi] = valid_span(os.w, is.w, l.stride, l.pad_w, kj);
          for (int oy = 0; oy < os.h; ++oy) {
            const int iy = oy * l.stride - l.pad_h + ki;
            T* dst = row + static_cast<std::size_t>(oy) * os.w;
            if (iy < 0 || iy >= is.h) {
              std::fill(dst, dst + os.w, T(0));
              continue;
            }
            const T* src = x + (static_cast<std::size_t>(c) * is.h + iy) * is.w - l.pad_w + kj;
            std::fill(dst, dst + lo, T(0));
            if (l.stride == 1) {
              std::copy(src + lo, src + hi, dst + lo);
            } else {
              for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * l.stride];
            }
            std::fill(dst + hi, dst + os.w, T(0));
          }
        }
      }
    }
  }

  static void col2im(const LayerSpec& l, const T* col, T* dx) {
    const Shape& is = l.in_shape;
    const Shape& os = l.out_shape;
    const std::size_t p = static_cast<std::size_t>(os.h) * os.w;
    for (int c = 0; c < is.c; ++c) {
      for (int ki = 0; ki < l.kernel_h; ++ki) {
        for (int kj = 0; kj < l.kernel_w; ++kj) {
          const T* row = col + (static_cast<std::size_t>((c * l.kernel_h + ki) * l.kernel_w + kj)) * p;
          const auto [lo, hi] = valid_span(os.w, is.w, l.stride, l.pad_w, kj);
          for (int oy = 0; oy < os.h; ++oy) {
            const int iy = oy * l.stride - l.pad_h + ki;
            if (iy < 0 || iy >= is.h) continue;
            const T* src = row + static_cast<std::size_t>(oy) * os.w;
            T* dst = dx + (static_cast<std::size_t>(c) * is.h + iy) * is.w - l.pad_w + kj;
            if (l.stride == 1) {
              for (int ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
            } else {
              for (int ox = lo; ox < hi; ++ox) dst[ox * l.stride] += src[ox];
            }
          }
        }
      }
    }
  }

  void conv_forward(std::size_t i, std::vector<T>& out) {
    const auto& l = spec_.layers[i];
    const auto& x = act(l.inputs[0]);
    const auto k = static_cast<Eigen::Index>(l.in_shape.c) * l.kernel_h * l.kernel_w;
    const auto p = static_cast<Eigen::Index>(l.out_shape.h) * l.out_shape.w;
    const auto oc = static_cast<Eigen::Index>(l.out_channels);
    CMapR w(value_ptr(index_[i].weight), oc, k);
    const bool direct = is_direct(l);
    if (!direct) col_.resize(static_cast<std::size_t>(k * p));
    for (std::size_t s = 0; s < batch_; ++s) {
      const T* xs = x.data() + s * l.in_shape.size();
      MapR y(out.data() + s * l.out_shape.size(), oc, p);
      if (direct) {
        y.noalias() = w * CMapR(xs, k, p);
      } else {
        im2col(l, xs, col_.data());
        y.noalias() = w * CMapR(col_.data(), k, p);
      }
      if (index_[i].bias >= 0) {
        Eigen::Map<const VecC> b(value_ptr(index_[i].bias), oc);
        y.colwise() += b;
      }
    }
  }

  void conv_backward(std::size_t i) {
    const auto& l = spec_.layers[i];
    const auto& x = act(l.inputs[0]);
    const auto& dy = grads_[i];
    const auto k = static_cast<Eigen::Index>(l.in_shape.c) * l.kernel_h * l.kernel_w;
    const auto p = static_cast<Eigen::Index>(l.out_shape.h) * l.out_shape.w;
    const auto oc = static_cast<Eigen::Index>(l.out_channels);
    CMapR w(value_ptr(index_[i].weight), oc, k);
    MapR dw(grad_ptr(index_[i].weight), oc, k);
    const bool direct = is_direct(l);
    const bool need_dx = spec_.layers[static_cast<std::size_t>(l.inputs[0])].kind != LayerKind::input;
    std::vector<T>* dx = need_dx ? &grad_of(l.inputs[0]) : nullptr;
    if (!direct) {
      col_.resize(static_cast<std::size_t>(k * p));
      if (need_dx) dcol_.resize(static_cast<std::size_t>(k * p));
    }
    for (std::size_t s = 0; s < batch_; ++s) {
      const T* xs = x.data() + s * l.in_shape.size();
      CMapR dys(dy.data() + s * l.out_shape.size(), oc, p);
      if (direct) {
        dw.noalias() += dys * CMapR(xs, k, p).transpose();
        if (dx) MapR(dx->data() + s * l.in_shape.size(), k, p).noalias() += w.transpose() * dys;
      } else {
        im2col(l, xs, col_.data());
        dw.noalias() += dys * CMapR(col_.data(), k, p).transpose();
        if (dx) {
          MapR(dcol_.data(), k, p).noalias() = w.transpose() * dys;
          col2im(l, dcol_.data(), dx->data() + s * l.in_shape.size());
        }
      }
      if (index_[i].bias >= 0) {
        T* db = grad_ptr(index_[i].bias);
        const T* dp = dy.data() + s * l.out_shape.size();
        for (Eigen::Index c = 0; c < oc; ++c) db[c] += std::accumulate(dp + c * p, dp + (c + 1) * p, T(0));
      }
    }
  }

  void pool_forward(std::size_t i, std::vector<T>& out, bool is_max) {
    const auto& l = spec_.layers[i];
    const auto& x = act(l.inputs[0]);
    const Shape& is = l.in_shape;
    const Shape& os = l.out_shape;
    auto& cache = caches_[i];
    if (is_max) cache.argmax.assign(out.size(), -1);
    const std::size_t planes = batch_ * static_cast<std::size_t>(is.c);
    for (std::size_t pl = 0; pl < planes; ++pl) {
      const T* xp = x.data() + pl * static_cast<std::size_t>(is.h) * is.w;
      T* yp = out.data() + pl * static_cast<std::size_t>(os.h) * os.w;
      for (int oy = 0; oy < os.h; ++oy) {
        const int y0 = std::max(0, oy * l.stride - l.pad_h);
        const int y1 = std::min(is.h, oy * l.stride - l.pad_h + l.kernel_h);
        for (int ox = 0; ox < os.w; ++ox) {
          const int x0 = std::max(0, ox * l.stride - l.pad_w);
          const int x1 = std::min(is.w, ox * l.stride - l.pad_w + l.kernel_w);
          const std::size_t o = static_cast<std::size_t>(oy) * os.w + ox;
          if (is_max) {
            T best = -std::numeric_limits<T>::infinity();
            int arg = -1;
            for (int iy = y0; iy < y1; ++iy) {
              for (int ix = x0; ix < x1; ++ix) {
                const T v = xp[iy * is.w + ix];
                if (v > best) {
                  best = v;
                  arg = iy * is.w + ix;
                }
              }
            }
            yp[o] = best;
            cache.argmax[pl * static_cast<std::size_t>(os.h) * os.w + o] = arg;
          } else {
            T sum = T(0);
            for (int iy = y0; iy < y1; ++iy) {
              for (int ix = x0; ix < x1; ++ix) sum += xp[iy * is.w + ix];
            }
            yp[o] = sum / static_cast<T>((y1 - y0) * (x1 - x0));
          }
        }
      }
    }
  }

  void pool_backward(std::size_t i, bool is_max) {
    const auto& l = spec_.layers[i];
    const auto& dy = grads_[i];
    auto& dx = grad_of(l.inputs[0]);
    const Shape& is = l.in_shape;
    const Shape& os = l.out_shape;
    const std::size_t planes = batch_ * static_cast<std::size_t>(is.c);
    const std::size_t in_plane = static_cast<std::size_t>(is.h) * is.w;
    const std::size_t out_plane = static_cast<std::size_t>(os.h) * os.w;
    for (std::size_t pl = 0; pl < planes; ++pl) {
      T* dxp = dx.data() + pl * in_plane;
      const T* dyp = dy.data() + pl * out_plane;
      if (is_max) {
        const std::int32_t* arg = caches_[i].argmax.data() + pl * out_plane;
        for (std::size_t o = 0; o < out_plane; ++o) {
          if (arg[o] >= 0) dxp[arg[o]] += dyp[o];
        }
        continue;
      }
      for (int oy = 0; oy < os.h; ++oy) {
        const int y0 = std::max(0, oy * l.stride - l.pad_h);
        const int y1 = std::min(is.h, oy * l.stride - l.pad_h + l.kernel_h);
        for (int ox = 0; ox < os.w; ++ox) {
          const int x0 = std::max(0, ox * l.stride - l.pad_w);
          const int x1 = std::min(is.w, ox * l.stride - l.pad_w + l.kernel_w);
          const T g = dyp[oy * os.w + ox] / static_cast<T>((y1 - y0) * (x1 - x0));
          for (int iy = y0; iy < y1; ++iy) {
            for (int ix = x0; ix < x1; ++ix) dxp[iy * is.w + ix] += g;
          }
        }
      }
    }
  }

  void gap_forward(std::size_t i, std::vector<T>& out) {
    const auto& l = spec_.layers[i];
    const auto& x = act(l.inputs[0]);
    const std::size_t plane = static_cast<std::size_t>(l.in_shape.h) * l.in_shape.w;
    for (std::size_t pl = 0; pl < out.size(); ++pl) {
      const T* xp = x.data() + pl * plane;
      out[pl] = std::accumulate(xp, xp + plane, T(0)) / static_cast<T>(plane);
    }
  }

  void gap_backward(std::size_t i) {
    const auto& l = spec_.layers[i];
    const auto& dy = grads_[i];
    auto& dx = grad_of(l.inputs[0]);
    const std::size_t plane = static_cast<std::size_t>(l.in_shape.h) * l.in_shape.w;
    for (std::size_t pl = 0; pl < dy.size(); ++pl) {
      const T g = dy[pl] / static_cast<T>(plane);
      T* dxp = dx.data() + pl * plane;
      for (std::size_t k = 0; k < plane; ++k) dxp[k] += g;
    }
  }

  void fc_forward(std::size_t i, std::vector<T>& out) {
    const auto& l = spec_.layers[i];
    const auto& x = act(l.inputs[0]);
    const auto n = static_cast<Eigen::Index>(batch_);
    const auto in = static_cast<Eigen::Index>(l.in_shape.size());
    const auto o = static_cast<Eigen::Index>(l.out_channels);
    MapR y(out.data(), n, o);
    y.noalias() = CMapR(x.data(), n, in) * CMapR(value_ptr(index_[i].weight), o, in).transpose();
    if (index_[i].bias >= 0) {
      Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(value_ptr(index_[i].bias), o);
      y.rowwise() += b;
    }
  }

  void fc_backward(std::size_t i) {
    const auto& l = spec_.layers[i];
    const auto& x = act(l.inputs[0]);
    const auto n = static_cast<Eigen::Index>(batch_);
    const auto in = static_cast<Eigen::Index>(l.in_shape.size());
    const auto o = static_cast<Eigen::Index>(l.out_channels);
    CMapR dy(grads_[i].data(), n, o);
    MapR(grad_ptr(index_[i].weight), o, in).noalias() += dy.transpose() * CMapR(x.data(), n, in);
    if (index_[i].bias >= 0) {
      T* db = grad_ptr(index_[i].bias);
      const T* dp = grads_[i].data();
      for (Eigen::Index s = 0; s < n; ++s) {
        for (Eigen::Index c = 0; c < o; ++c) db[c] += dp[s * o + c];
      }
    }
    if (spec_.layers[static_cast<std::size_t>(l.inputs[0])].kind != LayerKind::input) {
      auto& dx = grad_of(l.inputs[0]);
      MapR(dx.data(), n, in).noalias() += dy * CMapR(value_ptr(index_[i].weight), o, in);
    }
  }

  void bn_forward(std::size_t i, std::vector<T>& out) {
    const auto& l = spec_.layers[i];
    const auto& x = act(l.inputs[0]);
    const auto& ix = index_[i];
    const std::size_t c = static_cast<std::size_t>(l.in_shape.c);
    const std::size_t plane = static_cast<std::size_t>(l.in_shape.h) * l.in_shape.w;
    const T* gamma = value_ptr(ix.gamma);
    const T* beta = value_ptr(ix.beta);
    T* rmean = value_ptr(ix.running_mean);
    T* rvar = value_ptr(ix.running_var);
    auto& cache = caches_[i];
    cache.inv_std.assign(c, T(0));
    cache.batch_stats = mode_ == Mode::train;
    if (cache.batch_stats) cache.xhat.assign(x.size(), T(0));
    const T eps = static_cast<T>(kBatchNormEpsilon);
    const T momentum = static_cast<T>(kBatchNormMomentum);
    const std::size_t count = batch_ * plane;
    for (std::size_t ch = 0; ch < c; ++ch) {
      T mean;
      T var;
      if (cache.batch_stats) {
        double sum = 0.0;
        for (std::size_t s = 0; s < batch_; ++s) {
          const T* xp = x.data() + (s * c + ch) * plane;
          for (std::size_t k = 0; k < plane; ++k) sum += xp[k];
        }
        mean = static_cast<T>(sum / static_cast<double>(count));
        double sq = 0.0;
        for (std::size_t s = 0; s < batch_; ++s) {
          const T* xp = x.data() + (s * c + ch) * plane;
          for (std::size_t k = 0; k < plane; ++k) {
            const double d = static_cast<double>(xp[k]) - static_cast<double>(mean);
            sq += d * d;
          }
        }
        var = static_cast<T>(sq / static_cast<double>(count));
        const T unbiased = count > 1 ? static_cast<T>(sq / static_cast<double>(count - 1)) : var;
        rmean[ch] = (T(1) - momentum) * rmean[ch] + momentum * mean;
        rvar[ch] = (T(1) - momentum) * rvar[ch] + momentum * unbiased;
      } else {
        mean = rmean[ch];
        var = rvar[ch];
      }
      const T inv_std = T(1) / std::sqrt(var + eps);
      cache.inv_std[ch] = inv_std;
      for (std::size_t s = 0; s < batch_; ++s) {
        const std::size_t off = (s * c + ch) * plane;
        for (std::size_t k = 0; k < plane; ++k) {
          const T xh = (x[off + k] - mean) * inv_std;
          if (cache.batch_stats) cache.xhat[off + k] = xh;
          out[off + k] = gamma[ch] * xh + beta[ch];
        }
      }
    }
  }

  void bn_backward(std::size_t i) {
    const auto& l = spec_.layers[i];
    const auto& x = act(l.inputs[0]);
    const auto& dy = grads_[i];
    const auto& ix = index_[i];
    auto& dx = grad_of(l.inputs[0]);
    const auto& cache = caches_[i];
    const std::size_t c = static_cast<std::size_t>(l.in_shape.c);
    const std::size_t plane = static_cast<std::size_t>(l.in_shape.h) * l.in_shape.w;
    const T* gamma = value_ptr(ix.gamma);
    const T* rmean = value_ptr(ix.running_mean);
    T* dgamma = grad_ptr(ix.gamma);
    T* dbeta = grad_ptr(ix.beta);
    const T count = static_cast<T>(batch_ * plane);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T inv_std = cache.inv_std[ch];
      auto xhat = [&](std::size_t idx) { return cache.batch_stats ? cache.xhat[idx] : (x[idx] - rmean[ch]) * inv_std; };
      T sum_dy = T(0);
      T sum_dy_xhat = T(0);
      for (std::size_t s = 0; s < batch_; ++s) {
        const std::size_t off = (s * c + ch) * plane;
        for (std::size_t k = 0; k < plane; ++k) {
          sum_dy += dy[off + k];
          sum_dy_xhat += dy[off + k] * xhat(off + k);
        }
      }
      dgamma[ch] += sum_dy_xhat;
      dbeta[ch] += sum_dy;
      const T scale = gamma[ch] * inv_std;
      for (std::size_t s = 0; s < batch_; ++s) {
        const std::size_t off = (s * c + ch) * plane;
        for (std::size_t k = 0; k < plane; ++k) {
          if (cache.batch_stats) {
            dx[off + k] += scale * (dy[off + k] - sum_dy / count - xhat(off + k) * sum_dy_xhat / count);
          } else {
            dx[off + k] += scale * dy[off + k];
          }
        }
      }
    }
  }

  void concat_forward(std::size_t i, std::vector<T>& out) {
    const auto& l = spec_.layers[i];
    const std::size_t out_size = l.out_shape.size();
    std::size_t offset = 0;
    for (int in : l.inputs) {
      const auto& x = act(in);
      const std::size_t part = spec_.layers[static_cast<std::size_t>(in)].out_shape.size();
      for (std::size_t s = 0; s < batch_; ++s) {
        std::copy_n(x.data() + s * part, part, out.data() + s * out_size + offset);
      }
      offset += part;
    }
  }

  void concat_backward(std::size_t i) {
    const auto& l = spec_.layers[i];
    const auto& dy = grads_[i];
    const std::size_t out_size = l.out_shape.size();
    std::size_t offset = 0;
    for (int in : l.inputs) {
      const std::size_t part = spec_.layers[static_cast<std::size_t>(in)].out_shape.size();
      if (spec_.layers[static_cast<std::size_t>(in)].kind != LayerKind::input) {
        auto& dx = grad_of(in);
        for (std::size_t s = 0; s < batch_; ++s) {
          const T* src = dy.data() + s * out_size + offset;
          T* dst = dx.data() + s * part;
          for (std::size_t k = 0; k < part; ++k) dst[k] += src[k];
        }
      }
      offset += part;
    }
  }

  ModelSpec spec_;
  std::vector<Tensor<T>> tensors_;
  std::vector<LayerTensors> index_;
  std::vector<int> consumers_;
  std::vector<std::vector<T>> acts_;
  std::vector<std::vector<T>> grads_;
  std::vector<LayerCache> caches_;
  std::vector<T> col_;
  std::vector<T> dcol_;
  std::size_t batch_ = 0;
  Mode mode_ = Mode::eval;
  bool retain_ = false;
  std::uint64_t init_seed_ = 0;
};

// Mean softmax cross-entropy over a batch; writes d(loss)/d(logits).
template <typename T>
T softmax_cross_entropy(std::span<const T> logits, std::span<const std::uint8_t> labels, std::size_t classes,
                        std::vector<T>& grad) {
  const std::size_t n = labels.size();
  if (logits.size() != n * classes) throw ShapeError("softmax_cross_entropy: logits/labels size mismatch");
  grad.assign(logits.size(), T(0));
  double loss = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const T* z = logits.data() + s * classes;
    const T zmax = *std::max_element(z, z + classes);
    double denom = 0.0;
    for (std::size_t k = 0; k < classes; ++k) denom += std::exp(static_cast<double>(z[k] - zmax));
    const double log_denom = std::log(denom);
    const std::size_t y = labels[s];
    if (y >= classes) throw ShapeError("softmax_cross_entropy: label out of range");
    loss += -(static_cast<double>(z[y] - zmax) - log_denom);
    for (std::size_t k = 0; k < classes; ++k) {
      const double p = std::exp(static_cast<double>(z[k] - zmax) - log_denom);
      grad[s * classes + k] = static_cast<T>((p - (k == y ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  return static_cast<T>(loss / static_cast<double>(n));
}

// Probability of class 1 (malicious) from a two-logit row.
template <typename T>
double positive_probability(const T* logits) {
  return 1.0 / (1.0 + std::exp(static_cast<double>(logits[0]) - static_cast<double>(logits[1])));
}

}  // namespace mdetect::nn
