#include <gtest/gtest.h>

#include <sstream>

#include "atsc/metrics.hpp"
#include "test_util.hpp"

using namespace atsc;
using namespace atsc::test;

TEST(Top1, SmallExamples) {
  const Tensor<double> p({4, 3}, {0.7, 0.2, 0.1,  //
                                  0.1, 0.8, 0.1,  //
                                  0.3, 0.3, 0.4,  //
                                  0.5, 0.4, 0.1});
  EXPECT_DOUBLE_EQ(top1(p, {0, 1, 2, 0}), 100.0);
  EXPECT_DOUBLE_EQ(top1(p, {0, 1, 2, 1}), 75.0);
  EXPECT_DOUBLE_EQ(top1(p, {1, 0, 0, 1}), 0.0);
}

TEST(Top1, TiesPickLowestIndex) {
  const Tensor<double> p({1, 3}, {0.4, 0.4, 0.2});
  EXPECT_DOUBLE_EQ(top1(p, {0}), 100.0);
  EXPECT_DOUBLE_EQ(top1(p, {1}), 0.0);
}

TEST(Top1, BadInputIsContractViolation) {
  const Tensor<double> p({2, 3}, 0.0);
  EXPECT_THROW(top1(p, {0}), ContractViolation);
  EXPECT_THROW(top1(Tensor<double>({0, 3}), {}), ContractViolation);
  EXPECT_THROW(top1(Tensor<double>({2, 1, 1, 3}), {0, 1}), ContractViolation);
}

TEST(Top1Property, MatchesLoopOracleAndIgnoresMonotoneTransforms) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto r = random_tensor<double>({50, 1, 1, 6}, s);
    const Tensor<double> z({50, 6}, r.data);
    const auto y = random_labels(50, 6, s + 1);
    int correct = 0;
    for (std::size_t b = 0; b < 50; ++b) {
      std::size_t arg = 0;
      for (std::size_t k = 1; k < 6; ++k)
        if (z[b * 6 + k] > z[b * 6 + arg]) arg = k;
      correct += static_cast<int>(arg) == y[b];
    }
    const double v = top1(z, y);
    EXPECT_DOUBLE_EQ(v, 100.0 * correct / 50);
    EXPECT_DOUBLE_EQ(top1(softmax(z), y), v);
    Tensor<double> shifted = z;
    for (auto& x : shifted.data) x = 3 * x + 7;
    EXPECT_DOUBLE_EQ(top1(shifted, y), v);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 100.0);
  }
}

TEST(Drift, RmsOfDisplacement) {
  auto e = make_encoder<double>(mlp_spec(3, {4}), Role::teacher, 1);
  const auto snap = snapshot_params(e);
  EXPECT_EQ(teacher_drift(snap, e), 0.0);
  for (auto* p : e.params())
    for (auto& v : p->value.data) v += 0.5;
  EXPECT_NEAR(teacher_drift(snap, e), 0.5, 1e-15);
}

TEST(Evaluate, ChunkingDoesNotChangeAccuracy) {
  DatasetSpec spec;
  spec.dims = 4;
  spec.num_classes = 3;
  spec.test_size = 97;
  const auto ds = load_dataset<double>(spec);
  auto t = make_encoder<double>(mlp_spec(4, {6}), Role::teacher, 2);
  auto c = make_classifier<double>(6, 3, 3);
  const auto predict = [&](const Tensor<double>& x) { return softmax(c.forward(t.forward(x, false))); };
  const double whole = top1(predict(ds.whole(ds.test).x), ds.test.y);
  EXPECT_DOUBLE_EQ(evaluate_split<double>(ds, ds.test, predict, 10), whole);
  EXPECT_DOUBLE_EQ(evaluate_split<double>(ds, ds.test, predict, 1000), whole);
  EXPECT_DOUBLE_EQ(evaluate_teacher(t, c, ds, ds.test), whole);
}

TEST(MetricsCsv, HeaderAndEmptyCells) {
  EXPECT_STREQ(kMetricsHeader, "epoch,split,top1,feat_mse,anchor,ce,total,teacher_drift_rms,lr,wall_time_s");
  MetricRow r;
  r.epoch = 3;
  r.split = "test";
  r.top1 = 87.5;
  r.lr = 0.005;
  EXPECT_EQ(to_csv(r), "3,test,87.5,,,,,,0.005,");
}

TEST(MetricsCsv, RoundTrip) {
  std::vector<MetricRow> rows(3);
  for (int i = 0; i < 3; ++i) {
    rows[i].epoch = i;
    rows[i].split = i == 2 ? "teacher_test" : "train";
    rows[i].top1 = 12.25 * i;
    rows[i].feat_mse = 0.125 / (i + 1);
    rows[i].total = 1e-7 * i;
    rows[i].lr = 0.05;
  }
  std::stringstream ss;
  ss << kMetricsHeader << '\n';
  for (const auto& r : rows) ss << to_csv(r) << '\n';
  const auto back = read_metrics_csv(ss);
  ASSERT_EQ(back.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].epoch, i);
    EXPECT_EQ(back[i].split, rows[i].split);
    EXPECT_EQ(back[i].top1, rows[i].top1);
    EXPECT_NEAR(back[i].feat_mse, rows[i].feat_mse, 1e-9 * rows[i].feat_mse);  // 10 significant digits
    EXPECT_TRUE(std::isnan(back[i].anchor));
    EXPECT_EQ(back[i].lr, 0.05);
  }
}

TEST(MetricsCsv, MalformedInputIsIngestionError) {
  std::stringstream bad_header("epoch,split\n");
  EXPECT_THROW(read_metrics_csv(bad_header), IngestionError);
  std::stringstream short_row(std::string(kMetricsHeader) + "\n1,train,5\n");
  EXPECT_THROW(read_metrics_csv(short_row), IngestionError);
  std::stringstream bad_number(std::string(kMetricsHeader) + "\n1,train,x,,,,,,,\n");
  EXPECT_THROW(read_metrics_csv(bad_number), IngestionError);
  std::stringstream empty("");
  EXPECT_THROW(read_metrics_csv(empty), IngestionError);
}
