#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include <unistd.h>

#include "mdetect/nn/model_zoo.hpp"
#include "mdetect/trainer.hpp"

using namespace mdetect;
using namespace mdetect::nn;
namespace fs = std::filesystem;

namespace {

ModelSpec small_lenet() {
  LeNetOptions o;
  o.conv1_channels = 2;
  o.conv2_channels = 4;
  o.hidden = {8};
  return build_lenet5(o);
}

// Malicious samples carry a bright block in the first rows.
EncodedSet synthetic_set(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  EncodedSet s;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t label = i % 2;
    for (std::size_t k = 0; k < kSampleSize; ++k) {
      const bool hot = label && k < 4 * kSampleCols;
      s.values.push_back(static_cast<float>(hot ? 0.8 + 0.2 * rng.uniform() : 0.2 * rng.uniform()));
    }
    s.labels.push_back(label);
    s.experiment.push_back(0);
    s.timestamp_s.push_back(static_cast<int>(10 * i));
  }
  return s;
}

EncodedDataset synthetic_dataset() {
  EncodedDataset d;
  d.train = synthetic_set(48, 1);
  d.validation = synthetic_set(16, 2);
  d.test = synthetic_set(16, 3);
  return d;
}

TrainConfig quick_config(int epochs = 3) {
  TrainConfig c;
  c.batch_size = 16;
  c.epochs = epochs;
  c.adam.learning_rate = 1e-3;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParameters) {
  std::vector<double> p = {1.0, -2.0}, g = {0.0, 0.0}, m(2), v(2);
  adam_update<double>(p, g, m, v, 1, {});
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  for (double grad : {1e-3, 0.5, -7.0}) {
    std::vector<double> p = {0.0}, g = {grad}, m(1), v(1);
    adam_update<double>(p, g, m, v, 1, {});
    EXPECT_NEAR(std::abs(p[0]), 1e-4, 1e-8) << grad;
    EXPECT_LT(p[0] * grad, 0.0);
  }
}

TEST(Adam, ConvergesOnConvexQuadratic) {
  const std::vector<double> target = {3.0, -1.5, 0.25};
  std::vector<Tensor<double>> tensors(1);
  tensors[0].key = "x";
  tensors[0].shape = {3};
  tensors[0].value = {0.0, 0.0, 0.0};
  tensors[0].grad.resize(3);
  AdamState<double> state;
  AdamConfig cfg;
  cfg.learning_rate = 1e-2;
  int steps = 0;
  auto dist = [&] {
    double d = 0;
    for (std::size_t k = 0; k < 3; ++k) d = std::max(d, std::abs(tensors[0].value[k] - target[k]));
    return d;
  };
  for (; steps < 5000 && dist() > 1e-3; ++steps) {
    for (std::size_t k = 0; k < 3; ++k) tensors[0].grad[k] = 2 * (tensors[0].value[k] - target[k]);
    adam_step(tensors, state, cfg);
  }
  EXPECT_LE(dist(), 1e-3);
  EXPECT_LE(steps, 5000);
}

TEST(Adam, NonFiniteGradientNamesTensorAndKeepsState) {
  std::vector<Tensor<double>> tensors(2);
  for (std::size_t i = 0; i < 2; ++i) {
    tensors[i].key = i == 0 ? "fc1.weight" : "fc1.bias";
    tensors[i].value = {1.0};
    tensors[i].grad = {0.5};
  }
  tensors[1].grad[0] = std::numeric_limits<double>::quiet_NaN();
  AdamState<double> state;
  try {
    adam_step(tensors, state, {});
    FAIL() << "expected NonFiniteGradientError";
  } catch (const NonFiniteGradientError& e) {
    EXPECT_NE(std::string(e.what()).find("fc1.bias"), std::string::npos);
  }
  EXPECT_EQ(tensors[0].value[0], 1.0);
  EXPECT_EQ(state.step, 0u);
}

TEST(BestEpoch, EarliestMaximum) {
  const std::vector<double> a = {0.5, 0.9, 0.9};
  EXPECT_EQ(best_epoch_of(a), 2);
  const std::vector<double> b = {0.7};
  EXPECT_EQ(best_epoch_of(b), 1);
  const std::vector<double> c = {0.1, 0.3, 0.2, 0.3, 0.25};
  EXPECT_EQ(best_epoch_of(c), 2);
  EXPECT_THROW(best_epoch_of({}), ValidationError);
}

TEST(BestEpoch, TimeToBestReadsThatEpoch) {
  TrainHistory h;
  h.epochs = {{1, 0.7, 0.6, 0.80, 1.5}, {2, 0.5, 0.4, 0.92, 3.0}, {3, 0.4, 0.5, 0.92, 4.5}};
  const auto t = record_time_to_best(h);
  EXPECT_EQ(t.best_epoch, 2);
  EXPECT_DOUBLE_EQ(t.best_validation_accuracy, 0.92);
  EXPECT_DOUBLE_EQ(t.elapsed_s, 3.0);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.adam.learning_rate = -1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Train, ZeroLearningRateKeepsWeights) {
  Network<float> net(small_lenet());
  net.initialize(9);
  const auto before = net.snapshot();
  auto cfg = quick_config(2);
  cfg.adam.learning_rate = 0.0;
  train(net, synthetic_dataset(), cfg);
  EXPECT_EQ(net.snapshot(), before);
}

TEST(Train, LearnsSeparableData) {
  Network<float> net(small_lenet());
  net.initialize(9);
  const auto data = synthetic_dataset();
  const auto r = train(net, data, quick_config(6));
  EXPECT_EQ(r.history.epochs.size(), 6u);
  EXPECT_GE(r.history.best_validation_accuracy, 0.9);
  EXPECT_GE(evaluate_set(net, data.test).accuracy(), 0.9);
}

TEST(Train, RestoresBestWeightsAndRecordsHistory) {
  Network<float> net(small_lenet());
  net.initialize(4);
  const auto data = synthetic_dataset();
  std::vector<int> seen;
  const auto r = train(net, data, quick_config(4), [&](const EpochRecord& e) { seen.push_back(e.epoch); });
  EXPECT_EQ(seen, (std::vector<int>{1, 2, 3, 4}));
  std::vector<double> acc;
  for (std::size_t i = 0; i < r.history.epochs.size(); ++i) {
    acc.push_back(r.history.epochs[i].validation_accuracy);
    if (i > 0) {
      EXPECT_GT(r.history.epochs[i].cumulative_s, r.history.epochs[i - 1].cumulative_s);
    }
  }
  EXPECT_EQ(r.best_epoch, best_epoch_of(acc));
  EXPECT_EQ(net.snapshot(), r.best_weights);
  EXPECT_DOUBLE_EQ(evaluate_set(net, data.validation).accuracy(), r.history.best_validation_accuracy);
}

TEST(Train, DeterministicForSeeds) {
  const auto data = synthetic_dataset();
  auto run = [&](std::uint64_t shuffle_seed) {
    Network<float> net(small_lenet());
    net.initialize(4);
    auto cfg = quick_config(2);
    cfg.seed = shuffle_seed;
    train(net, data, cfg);
    return net.snapshot();
  };
  const auto a = run(1);
  EXPECT_EQ(a, run(1));
  EXPECT_NE(a, run(2));
}

TEST(Train, NonFiniteInputDiverges) {
  Network<float> net(small_lenet());
  auto data = synthetic_dataset();
  data.train.values[0] = std::numeric_limits<float>::quiet_NaN();
  auto cfg = quick_config(1);
  cfg.batch_size = 48;
  try {
    train(net, data, cfg);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.epoch(), 1);
    EXPECT_EQ(e.batch(), 0);
  }
}

TEST(Train, RejectsEmptyParts) {
  Network<float> net(small_lenet());
  auto data = synthetic_dataset();
  data.validation = {};
  EXPECT_THROW(train(net, data, quick_config(1)), ConfigError);
}

TEST(History, CsvRoundTrip) {
  TrainHistory h;
  h.epochs = {{1, 0.693147, 0.6, 0.8125, 1.25}, {2, 0.1 + 0.2, 1.0 / 3, 0.9375, 2.5}};
  const auto path = fs::temp_directory_path() / ("mdetect-history-" + std::to_string(::getpid()) + ".csv");
  write_history(path, h);
  const auto back = read_history(path);
  ASSERT_EQ(back.epochs.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.epochs[i].epoch, h.epochs[i].epoch);
    EXPECT_EQ(back.epochs[i].train_loss, h.epochs[i].train_loss);
    EXPECT_EQ(back.epochs[i].validation_loss, h.epochs[i].validation_loss);
    EXPECT_EQ(back.epochs[i].validation_accuracy, h.epochs[i].validation_accuracy);
    EXPECT_EQ(back.epochs[i].cumulative_s, h.epochs[i].cumulative_s);
  }
  EXPECT_EQ(back.best_epoch, 2);
  write_text_file(path, "epoch,loss\n1,2\n");
  EXPECT_THROW(read_history(path), ParseError);
  fs::remove(path);
}
