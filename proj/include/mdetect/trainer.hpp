#pragma once

// Mini-batch Adam training with per-epoch validation and best-epoch
// selection (highest validation accuracy, earliest epoch on ties).

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mdetect/encoder.hpp"
#include "mdetect/error.hpp"
#include "mdetect/nn/inference.hpp"
#include "mdetect/nn/network.hpp"
#include "mdetect/rng.hpp"
#include "mdetect/trace_io.hpp"

namespace mdetect {

class NonFiniteGradientError : public Error {
 public:
  using Error::Error;
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::uint64_t step = 0;
};

// One bias-corrected Adam update of a single tensor. `step` is the 1-based
// step count after incrementing.
template <typename T>
void adam_update(std::span<T> params, std::span<const T> grads, std::span<T> m, std::span<T> v, std::uint64_t step,
                 const AdamConfig& cfg) {
  if (params.size() != grads.size() || m.size() != params.size() || v.size() != params.size()) {
    throw ShapeError("adam: params/grads/state sizes disagree");
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T lr = static_cast<T>(cfg.learning_rate);
  const T eps = static_cast<T>(cfg.epsilon);
  const T inv_c1 = static_cast<T>(1.0 / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const T g = grads[k];
    m[k] = b1 * m[k] + (T(1) - b1) * g;
    v[k] = b2 * v[k] + (T(1) - b2) * g * g;
    const T mhat = m[k] * inv_c1;
    const T vhat = v[k] * inv_c2;
    params[k] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

// Applies one Adam step to every trainable tensor. Gradients are checked for
// finiteness first, so a failing step leaves params and state untouched.
template <typename T>
void adam_step(std::vector<nn::Tensor<T>>& tensors, AdamState<T>& state, const AdamConfig& cfg) {
  if (state.first_moment.size() != tensors.size()) {
    state.first_moment.assign(tensors.size(), {});
    state.second_moment.assign(tensors.size(), {});
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (!tensors[i].trainable) continue;
      state.first_moment[i].assign(tensors[i].size(), T(0));
      state.second_moment[i].assign(tensors[i].size(), T(0));
    }
  }
  for (const auto& t : tensors) {
    if (!t.trainable) continue;
    if (t.grad.size() != t.value.size()) throw ShapeError("adam: gradient of '" + t.key + "' has wrong size");
    for (T g : t.grad) {
      if (!std::isfinite(static_cast<double>(g))) throw NonFiniteGradientError("non-finite gradient in tensor '" + t.key + "'");
    }
  }
  ++state.step;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& t = tensors[i];
    if (!t.trainable) continue;
    adam_update<T>(t.value, t.grad, state.first_moment[i], state.second_moment[i], state.step, cfg);
  }
}

struct TrainConfig {
  int batch_size = 64;
  int epochs = 100;
  AdamConfig adam;
  std::uint64_t seed = 0;  // epoch shuffles

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(adam.learning_rate >= 0.0) || !std::isfinite(adam.learning_rate)) throw ConfigError("learning_rate must be >= 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
      throw ConfigError("adam betas must lie in [0, 1)");
    }
    if (!(adam.epsilon > 0.0)) throw ConfigError("adam epsilon must be > 0");
  }
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double validation_accuracy = 0.0;
  double cumulative_s = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_validation_accuracy = 0.0;
};

// Index (1-based) of the highest accuracy, earliest on ties.
inline int best_epoch_of(std::span<const double> validation_accuracy) {
  if (validation_accuracy.empty()) throw ValidationError("empty history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < validation_accuracy.size(); ++i) {
    if (validation_accuracy[i] > validation_accuracy[best]) best = i;
  }
  return static_cast<int>(best) + 1;
}

struct TimeToBest {
  double best_validation_accuracy = 0.0;
  int best_epoch = 0;
  double elapsed_s = 0.0;
};

inline TimeToBest record_time_to_best(const TrainHistory& history) {
  if (history.epochs.empty()) throw ValidationError("record_time_to_best: empty history");
  std::vector<double> acc;
  for (const auto& e : history.epochs) acc.push_back(e.validation_accuracy);
  const int best = best_epoch_of(acc);
  const auto& rec = history.epochs[static_cast<std::size_t>(best - 1)];
  return {rec.validation_accuracy, rec.epoch, rec.cumulative_s};
}

template <typename T>
struct TrainResult {
  std::vector<std::vector<T>> best_weights;
  int best_epoch = 0;
  TrainHistory history;
};

struct SetEvaluation {
  double loss = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

// Mean cross-entropy and accuracy (malicious iff logit1 > logit0) in eval mode.
template <typename T>
SetEvaluation evaluate_set(nn::Network<T>& net, const EncodedSet& set, std::size_t batch_size = 64) {
  const auto logits = nn::score_set(net, set, batch_size);
  SetEvaluation ev;
  ev.total = set.size();
  double loss = 0.0;
  for (std::size_t s = 0; s < set.size(); ++s) {
    const double z0 = static_cast<double>(logits[2 * s]);
    const double z1 = static_cast<double>(logits[2 * s + 1]);
    const double zmax = std::max(z0, z1);
    const double lse = zmax + std::log(std::exp(z0 - zmax) + std::exp(z1 - zmax));
    loss += lse - (set.labels[s] ? z1 : z0);
    const std::uint8_t pred = z1 > z0 ? 1 : 0;
    ev.correct += pred == set.labels[s] ? 1 : 0;
  }
  ev.loss = set.size() == 0 ? 0.0 : loss / static_cast<double>(set.size());
  return ev;
}

using EpochCallback = std::function<void(const EpochRecord&)>;

// Trains for exactly cfg.epochs epochs and leaves the best-validation weights
// loaded in `net`.
template <typename T>
TrainResult<T> train(nn::Network<T>& net, const EncodedDataset& data, const TrainConfig& cfg,
                     const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (data.train.size() == 0 || data.validation.size() == 0 || data.test.size() == 0) {
    throw ConfigError("train: every split part must be non-empty");
  }
  const int channels = nn::sample_channels(net);
  const auto start = std::chrono::steady_clock::now();

  TrainResult<T> result;
  AdamState<T> adam;
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<T> input;
  std::vector<T> grad_logits;
  std::vector<std::uint8_t> labels;
  std::size_t best_correct = 0;
  double last_time = 0.0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    double loss_sum = 0.0;
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    int batch_index = 0;
    for (std::size_t b = 0; b < order.size(); b += bs, ++batch_index) {
      const std::size_t e = std::min(order.size(), b + bs);
      const std::span<const std::size_t> idx(order.data() + b, e - b);
      nn::gather_batch(data.train, idx, channels, input);
      labels.resize(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) labels[k] = data.train.labels[idx[k]];
      const auto& logits = net.forward(input, idx.size(), nn::Mode::train);
      const T loss = nn::softmax_cross_entropy<T>(logits, labels, 2, grad_logits);
      if (!std::isfinite(static_cast<double>(loss))) {
        throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                  std::to_string(batch_index),
                              epoch, batch_index);
      }
      net.zero_grad();
      net.backward(grad_logits);
      try {
        adam_step(net.tensors(), adam, cfg.adam);
      } catch (const NonFiniteGradientError& err) {
        throw DivergenceError(std::string(err.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                                  std::to_string(batch_index),
                              epoch, batch_index);
      }
      loss_sum += static_cast<double>(loss) * static_cast<double>(idx.size());
    }
    net.release_activations();

    const SetEvaluation val = evaluate_set(net, data.validation, bs);
    double now = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (now <= last_time) now = std::nextafter(last_time, std::numeric_limits<double>::infinity());
    last_time = now;

    EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()), val.loss, val.accuracy(), now};
    result.history.epochs.push_back(rec);
    if (epoch == 1 || val.correct > best_correct) {
      best_correct = val.correct;
      result.best_epoch = epoch;
      result.best_weights = net.snapshot();
    }
    if (on_epoch) on_epoch(rec);
  }
  result.history.best_epoch = result.best_epoch;
  result.history.best_validation_accuracy =
      result.history.epochs[static_cast<std::size_t>(result.best_epoch - 1)].validation_accuracy;
  net.restore(result.best_weights);
  return result;
}

// --- history persistence ------------------------------------------------------

inline constexpr const char* kHistoryHeader = "epoch,train_loss,val_loss,val_acc,cumulative_s";

inline std::string render_history(const TrainHistory& h) {
  std::string out = kHistoryHeader;
  out += '\n';
  for (const auto& e : h.epochs) {
    out += std::to_string(e.epoch);
    for (double v : {e.train_loss, e.validation_loss, e.validation_accuracy, e.cumulative_s}) {
      out += ',';
      append_number(out, v);
    }
    out += '\n';
  }
  return out;
}

inline void write_history(const std::filesystem::path& path, const TrainHistory& h) {
  write_text_file(path, render_history(h));
}

inline TrainHistory read_history(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  TrainHistory h;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    const std::string_view line = std::string_view(text).substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line_no == 1) {
      if (line != kHistoryHeader) throw ParseError(path.string(), 1, "unexpected history header");
      continue;
    }
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    EpochRecord e;
    if (f.size() != 5 || !parse_int(f[0], e.epoch) || !parse_number(f[1], e.train_loss) ||
        !parse_number(f[2], e.validation_loss) || !parse_number(f[3], e.validation_accuracy) ||
        !parse_number(f[4], e.cumulative_s)) {
      throw ParseError(path.string(), line_no, "malformed history record");
    }
    h.epochs.push_back(e);
  }
  if (!h.epochs.empty()) {
    const auto best = record_time_to_best(h);
    h.best_epoch = best.best_epoch;
    h.best_validation_accuracy = best.best_validation_accuracy;
  }
  return h;
}

}  // namespace mdetect
