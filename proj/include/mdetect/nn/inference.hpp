#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mdetect/encoder.hpp"
#include "mdetect/error.hpp"
#include "mdetect/nn/network.hpp"

namespace mdetect::nn {

// Checks that an encoded 120x45 sample can feed the network and returns the
// channel count it expects (1, or 3 for the replicated layout).
template <typename T>
int sample_channels(const Network<T>& net) {
  const Shape& in = net.spec().input_shape();
  if (in.h != static_cast<int>(kSampleRows) || in.w != static_cast<int>(kSampleCols) || (in.c != 1 && in.c != 3)) {
    throw ShapeError(net.spec().name + ": layer 'input' has shape " + in.str() + ", samples are 1x" +
                     std::to_string(kSampleRows) + "x" + std::to_string(kSampleCols) + " (or 3 channels)");
  }
  return in.c;
}

// Copies samples [index...] into a network input buffer, replicating the
// single stored channel when the network wants three.
template <typename T>
void gather_batch(const EncodedSet& set, std::span<const std::size_t> indices, int channels, std::vector<T>& out) {
  out.resize(indices.size() * static_cast<std::size_t>(channels) * kSampleSize);
  T* dst = out.data();
  for (std::size_t idx : indices) {
    const auto src = set.sample(idx);
    for (int c = 0; c < channels; ++c) {
      for (std::size_t k = 0; k < kSampleSize; ++k) dst[k] = static_cast<T>(src[k]);
      dst += kSampleSize;
    }
  }
}

template <typename T>
std::vector<T> to_network_input(std::span<const SampleMatrix> batch, int channels) {
  std::vector<T> out;
  out.reserve(batch.size() * static_cast<std::size_t>(channels) * kSampleSize);
  for (const auto& m : batch) {
    if (m.channels != channels) {
      throw ShapeError("layer 'input' expects " + std::to_string(channels) + " channel(s), sample has " +
                       std::to_string(m.channels));
    }
    for (float v : m.values) out.push_back(static_cast<T>(v));
  }
  return out;
}

// Eval-mode two-class scores for a batch of sample matrices.
template <typename T>
std::vector<std::array<T, 2>> forward(Network<T>& net, std::span<const SampleMatrix> batch) {
  const int channels = sample_channels(net);
  const auto input = to_network_input<T>(batch, channels);
  const auto& logits = net.forward(input, batch.size(), Mode::eval);
  std::vector<std::array<T, 2>> out(batch.size());
  for (std::size_t s = 0; s < batch.size(); ++s) out[s] = {logits[2 * s], logits[2 * s + 1]};
  return out;
}

// Eval-mode logits for every sample of a set, in stored order. The batch size
// only changes how work is chunked.
template <typename T>
std::vector<T> score_set(Network<T>& net, const EncodedSet& set, std::size_t batch_size = 64) {
  const int channels = sample_channels(net);
  std::vector<T> logits;
  logits.reserve(set.size() * 2);
  std::vector<std::size_t> idx;
  std::vector<T> input;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    const std::size_t end = std::min(set.size(), start + batch_size);
    idx.resize(end - start);
    for (std::size_t k = start; k < end; ++k) idx[k - start] = k;
    gather_batch(set, idx, channels, input);
    const auto& out = net.forward(input, idx.size(), Mode::eval);
    logits.insert(logits.end(), out.begin(), out.end());
  }
  net.release_activations();
  return logits;
}

}  // namespace mdetect::nn
