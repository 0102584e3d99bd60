#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mdetect/evaluator.hpp"
#include "mdetect/nn/model_zoo.hpp"
#include "support/oracles.hpp"

using namespace mdetect;

namespace {

using Bytes = std::vector<std::uint8_t>;

}  // namespace

TEST(Confusion, WorkedExample) {
  const Bytes pred = {1, 1, 0, 0, 1, 0, 1, 0};
  const Bytes label = {1, 0, 0, 1, 1, 0, 1, 0};
  const auto c = confusion(pred, label);
  EXPECT_EQ(c, (ConfusionCounts{3, 3, 1, 1}));
  const auto m = metrics(c);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.75);
  EXPECT_DOUBLE_EQ(m.precision, 0.75);
  EXPECT_DOUBLE_EQ(m.recall, 0.75);
  EXPECT_DOUBLE_EQ(m.f1, 0.75);
}

TEST(Confusion, Metrics) {
  const auto m = metrics({40, 40, 10, 10});
  EXPECT_DOUBLE_EQ(m.accuracy, 0.8);
  EXPECT_DOUBLE_EQ(m.precision, 0.8);
  EXPECT_DOUBLE_EQ(m.recall, 0.8);
  EXPECT_NEAR(m.f1, 0.8, 1e-15);
}

TEST(Confusion, RejectsBadInput) {
  EXPECT_THROW(confusion(Bytes{1, 0}, Bytes{1}), ValidationError);
  EXPECT_THROW(confusion(Bytes{}, Bytes{}), ValidationError);
  EXPECT_THROW(metrics({}), ValidationError);
}

TEST(Confusion, UndefinedRatiosFlagged) {
  const auto none_predicted = metrics({0, 5, 0, 3});
  EXPECT_TRUE(none_predicted.precision_undefined);
  EXPECT_FALSE(none_predicted.recall_undefined);
  EXPECT_EQ(none_predicted.precision, 0.0);
  EXPECT_TRUE(none_predicted.f1_undefined);
  const auto no_positives = metrics({0, 5, 2, 0});
  EXPECT_TRUE(no_positives.recall_undefined);
  EXPECT_FALSE(no_positives.precision_undefined);
  const auto all_wrong = metrics({0, 0, 2, 2});
  EXPECT_TRUE(all_wrong.f1_undefined);
}

TEST(Confusion, MatchesBruteForceTally) {
  Rng rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(1, 500));
    Bytes pred(n), label(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = rng.bernoulli(0.5);
      label[i] = rng.bernoulli(0.4);
    }
    const auto c = confusion(pred, label);
    const auto t = testsupport::brute_tally(pred, label);
    ASSERT_EQ(c.tp, t.tp);
    ASSERT_EQ(c.tn, t.tn);
    ASSERT_EQ(c.fp, t.fp);
    ASSERT_EQ(c.fn, t.fn);
    const auto m = metrics(c);
    ASSERT_NEAR(m.accuracy, (t.tp + t.tn) / n, 1e-12);
    if (t.tp + t.fp > 0) {
      ASSERT_NEAR(m.precision, t.tp / (t.tp + t.fp), 1e-12);
    }
    if (t.tp + t.fn > 0) {
      ASSERT_NEAR(m.recall, t.tp / (t.tp + t.fn), 1e-12);
    }
  }
}

TEST(F1, HarmonicMeanOfPublishedPairs) {
  struct Row {
    double precision, recall, f1;
  };
  const Row rows[] = {{94.7, 80.9, 87.2}, {86.0, 88.9, 87.4}, {82.3, 89.7, 85.9},
                      {89.0, 87.8, 88.4}, {99.7, 84.4, 91.4}, {99.5, 84.6, 91.5}};
  for (const auto& r : rows) EXPECT_NEAR(100 * f1_score(r.precision / 100, r.recall / 100), r.f1, 0.15);
  EXPECT_EQ(f1_score(0, 0), 0.0);
}

// The (100.0, 84.6) row is printed with F1 91.5; its harmonic mean is 91.66,
// and no unrounded pair inside the rounding box gets below 91.6.
TEST(F1, PrintedRowOutsideRoundingBox) {
  EXPECT_NEAR(100 * f1_score(1.0, 0.846), 91.6576, 1e-4);
  EXPECT_GT(100 * f1_score(0.9995, 0.8455), 91.55);
}

TEST(Threshold, StrictlyAboveHalf) {
  EXPECT_EQ(predict_label(0.5), 0);
  EXPECT_EQ(predict_label(std::nextafter(0.5, 1.0)), 1);
  EXPECT_EQ(predict_label(0.0), 0);
}

TEST(Auc, WorkedExamples) {
  const std::vector<double> s = {0.9, 0.8, 0.7, 0.6};
  EXPECT_DOUBLE_EQ(roc_and_auc(s, Bytes{1, 0, 1, 0}).auc, 0.75);
  EXPECT_DOUBLE_EQ(roc_and_auc(s, Bytes{1, 1, 0, 0}).auc, 1.0);
  EXPECT_DOUBLE_EQ(roc_and_auc(s, Bytes{0, 0, 1, 1}).auc, 0.0);
  const std::vector<double> tied = {0.5, 0.5, 0.5, 0.5};
  EXPECT_DOUBLE_EQ(roc_and_auc(tied, Bytes{1, 0, 1, 0}).auc, 0.5);
}

TEST(Auc, SingleClassIsUndefined) {
  const std::vector<double> s = {0.1, 0.2};
  EXPECT_THROW(roc_and_auc(s, Bytes{1, 1}), UndefinedAucError);
  EXPECT_THROW(roc_and_auc(s, Bytes{0, 0}), UndefinedAucError);
  EXPECT_THROW(roc_and_auc(s, Bytes{0}), ValidationError);
}

TEST(Auc, MatchesPairwiseStatisticWithTies) {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = static_cast<std::size_t>(rng.uniform_int(2, 1000));
    std::vector<double> s(n);
    Bytes y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.uniform_int(0, 20)) / 20;  // coarse grid forces ties
      y[i] = rng.bernoulli(0.3 + 0.4 * s[i]);
    }
    y[0] = 1;
    y[1] = 0;
    const auto r = roc_and_auc(s, y);
    ASSERT_NEAR(r.auc, testsupport::pairwise_auc(s, y), 1e-9);
    ASSERT_NEAR(testsupport::trapezoid_area(r.curve), r.auc, 1e-9);
  }
}

TEST(Roc, CurveShape) {
  Rng rng(5);
  std::vector<double> s(300);
  Bytes y(300);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = std::round(rng.uniform() * 50) / 50;
    y[i] = i % 3 == 0;
  }
  const auto r = roc_and_auc(s, y);
  const std::set<double> distinct(s.begin(), s.end());
  ASSERT_EQ(r.curve.points.size(), distinct.size() + 1);
  EXPECT_EQ(r.curve.points.front().fpr, 0.0);
  EXPECT_EQ(r.curve.points.front().tpr, 0.0);
  EXPECT_EQ(r.curve.points.back().fpr, 1.0);
  EXPECT_EQ(r.curve.points.back().tpr, 1.0);
  for (std::size_t k = 1; k < r.curve.points.size(); ++k) {
    EXPECT_GE(r.curve.points[k].fpr, r.curve.points[k - 1].fpr);
    EXPECT_GE(r.curve.points[k].tpr, r.curve.points[k - 1].tpr);
  }
}

TEST(Auc, PerfectAndRandomScores) {
  Rng rng(123);
  const std::size_t n = 10000;
  std::vector<double> s(n);
  Bytes y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = i % 2;
    s[i] = y[i] ? 0.5 + 0.5 * rng.uniform() : 0.5 * rng.uniform();
  }
  EXPECT_DOUBLE_EQ(roc_and_auc(s, y).auc, 1.0);
  rng.shuffle(y);
  EXPECT_NEAR(roc_and_auc(s, y).auc, 0.5, 0.02);
}

TEST(Latency, MedianAndProtocolBounds) {
  EXPECT_DOUBLE_EQ(median_of({3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(median_of({4, 1, 3, 2}), 2.5);
  nn::LeNetOptions o;
  o.conv1_channels = 2;
  o.conv2_channels = 2;
  o.hidden = {4};
  nn::Network<float> net(nn::build_lenet5(o));
  EncodedSet set;
  set.values.assign(kSampleSize, 0.5f);
  set.labels = {1};
  set.experiment = {0};
  set.timestamp_s = {0};
  EXPECT_THROW(detection_time(net, set, 29), ConfigError);
  EXPECT_THROW(detection_time(net, set, 30, 9), ConfigError);
  const auto st = detection_time(net, set);
  EXPECT_EQ(st.repetitions, 30);
  EXPECT_EQ(st.warmup, 10);
  EXPECT_GT(st.median_ms, 0.0);
}

TEST(Report, EvaluateModelConsistency) {
  nn::LeNetOptions o;
  o.conv1_channels = 2;
  o.conv2_channels = 2;
  o.hidden = {4};
  nn::Network<float> net(nn::build_lenet5(o));
  net.initialize(3);
  Rng rng(2);
  EncodedSet set;
  for (int i = 0; i < 40; ++i) {
    for (std::size_t k = 0; k < kSampleSize; ++k) set.values.push_back(static_cast<float>(rng.uniform()));
    set.labels.push_back(i % 2);
    set.experiment.push_back(0);
    set.timestamp_s.push_back(10 * i);
  }
  const auto rep = evaluate_model(net, set);
  ASSERT_EQ(rep.scores.size(), 40u);
  Bytes pred;
  for (double p : rep.scores) pred.push_back(predict_label(p));
  EXPECT_EQ(rep.counts, confusion(pred, set.labels));
  EXPECT_NEAR(rep.auc, testsupport::pairwise_auc(rep.scores, set.labels), 1e-9);
}
