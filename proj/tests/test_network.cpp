#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "mdetect/nn/checkpoint.hpp"
#include "mdetect/nn/inference.hpp"
#include "support/gradcheck.hpp"

using namespace mdetect;
using namespace mdetect::nn;
namespace fs = std::filesystem;

namespace {

std::vector<double> random_input(const Network<double>& net, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n * net.spec().input_shape().size());
  for (auto& v : x) v = rng.normal();
  return x;
}

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("mdetect-net-" + std::to_string(::getpid()) + "-" + name);
}

}  // namespace

TEST(GradientCheck, LeNet) {
  Network<double> net(testsupport::toy_lenet());
  net.initialize(3);
  const auto r = testsupport::gradient_check(net, 150, 1);
  EXPECT_GE(r.checked, 100u);
  EXPECT_LE(r.max_relative_error, 1e-4);
}

TEST(GradientCheck, ResNet) {
  Network<double> net(testsupport::toy_resnet());
  net.initialize(3);
  const auto r = testsupport::gradient_check(net, 150, 2);
  EXPECT_GE(r.checked, 100u);
  EXPECT_LE(r.max_relative_error, 1e-4);
}

TEST(GradientCheck, DenseNet) {
  Network<double> net(testsupport::toy_densenet());
  net.initialize(3);
  const auto r = testsupport::gradient_check(net, 150, 3);
  EXPECT_GE(r.checked, 100u);
  EXPECT_LE(r.max_relative_error, 1e-4);
}

TEST(Forward, ZeroWeightsGiveZeroLogits) {
  Network<double> net(testsupport::toy_lenet());
  for (auto& t : net.tensors()) std::fill(t.value.begin(), t.value.end(), 0.0);
  const auto& out = net.forward(random_input(net, 4, 1), 4, Mode::eval);
  ASSERT_EQ(out.size(), 8u);
  for (double v : out) EXPECT_EQ(v, 0.0);
}

TEST(Forward, IdenticalRowsGiveIdenticalLogits) {
  for (const auto& spec : {testsupport::toy_lenet(), testsupport::toy_resnet(), testsupport::toy_densenet()}) {
    Network<double> net(spec);
    net.initialize(5);
    auto x = random_input(net, 1, 2);
    const auto once = x;
    x.insert(x.end(), once.begin(), once.end());
    const auto out = net.forward(x, 2, Mode::eval);
    EXPECT_EQ(out[0], out[2]) << spec.name;
    EXPECT_EQ(out[1], out[3]) << spec.name;
  }
}

TEST(Forward, PointwiseConvScalesLinearly) {
  GraphBuilder g("pointwise");
  int x = g.input({2, 3, 3});
  g.conv(x, "conv", 1, 1, 1, 0, false);
  Network<double> net(g.finish());
  auto* w = net.find_tensor("conv.weight");
  ASSERT_NE(w, nullptr);
  w->value = {2.0, -1.0};
  std::vector<double> in(18);
  for (std::size_t i = 0; i < 9; ++i) {
    in[i] = static_cast<double>(i);
    in[9 + i] = 1.0;
  }
  const auto& out = net.forward(in, 1, Mode::eval);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(out[i], 2.0 * static_cast<double>(i) - 1.0);
}

TEST(Forward, DeterministicForSeed) {
  Network<float> a(build_lenet5()), b(build_lenet5());
  a.initialize(11);
  b.initialize(11);
  std::vector<float> x(kSampleSize, 0.25f);
  const auto ya = a.forward(x, 1, Mode::eval);
  const auto yb = b.forward(x, 1, Mode::eval);
  EXPECT_EQ(ya, yb);
  b.initialize(12);
  EXPECT_NE(b.forward(x, 1, Mode::eval), ya);
}

TEST(Forward, WrongInputSizeNamesInputLayer) {
  Network<float> net(build_lenet5());
  std::vector<float> x(100);
  try {
    net.forward(x, 1, Mode::eval);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("input"), std::string::npos);
  }
}

TEST(Forward, FinalLayerParameterCount) {
  GraphBuilder g("head");
  int x = g.input({512, 1, 1});
  x = g.flatten(x, "flatten");
  g.fc(x, "fc", 2);
  EXPECT_EQ(g.finish().param_count(), 1026u);
}

TEST(Inference, SampleChannelsMatchModel) {
  Network<float> lenet(build_lenet5());
  EXPECT_EQ(sample_channels(lenet), 1);
  Network<float> toy(testsupport::toy_lenet());
  EXPECT_THROW(sample_channels(toy), ShapeError);
}

TEST(Loss, SoftmaxCrossEntropyGradient) {
  const std::vector<double> logits = {0.0, 0.0, 2.0, -1.0};
  const std::vector<std::uint8_t> labels = {1, 0};
  std::vector<double> g;
  const double loss = softmax_cross_entropy<double>(logits, labels, 2, g);
  const double expected = (std::log(2.0) + std::log(1.0 + std::exp(-3.0))) / 2;
  EXPECT_NEAR(loss, expected, 1e-12);
  EXPECT_NEAR(g[0], 0.25, 1e-12);
  EXPECT_NEAR(g[1], -0.25, 1e-12);
  EXPECT_NEAR(g[0] + g[1] + g[2] + g[3], 0.0, 1e-12);
  const double p[2] = {0.0, 0.0};
  EXPECT_DOUBLE_EQ(positive_probability(p), 0.5);
}

TEST(Checkpoint, RoundTripPreservesOutputs) {
  Network<float> net(build_lenet5());
  net.initialize(21);
  const auto path = temp_file("ck.bin");
  write_checkpoint(path, make_checkpoint(net, 4));
  const auto ck = read_checkpoint(path);
  EXPECT_EQ(ck.epoch, 4);
  EXPECT_EQ(ck.init_seed, 21u);
  auto back = network_from_checkpoint<float>(ck);
  std::vector<float> x(kSampleSize);
  Rng rng(1);
  for (auto& v : x) v = static_cast<float>(rng.uniform());
  EXPECT_EQ(back.forward(x, 1, Mode::eval), net.forward(x, 1, Mode::eval));
  fs::remove(path);
}

TEST(Checkpoint, MismatchesRejected) {
  Network<float> net(build_lenet5());
  auto ck = make_checkpoint(net, 1);
  Network<float> other(testsupport::toy_lenet());
  EXPECT_THROW(load_weights(other, ck), ValidationError);  // input shape differs
  auto renamed = ck;
  renamed.model = "resnet50";
  EXPECT_THROW(load_weights(net, renamed), ValidationError);
  auto versioned = ck;
  versioned.builder_version = kBuilderVersion + 1;
  EXPECT_THROW(load_weights(net, versioned), ValidationError);
  auto reshaped = ck;
  reshaped.tensors[0].shape[0] += 1;
  EXPECT_THROW(load_weights(net, reshaped), ValidationError);
}

TEST(Checkpoint, CorruptFilesRejected) {
  const auto path = temp_file("bad.bin");
  {
    std::ofstream f(path, std::ios::binary);
    f << "not a checkpoint";
  }
  EXPECT_THROW(read_checkpoint(path), ValidationError);
  Network<float> net(testsupport::toy_lenet());
  write_checkpoint(path, make_checkpoint(net, 1));
  fs::resize_file(path, fs::file_size(path) - 8);
  EXPECT_THROW(read_checkpoint(path), ValidationError);
  fs::remove(path);
}
