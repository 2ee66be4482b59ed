#include <gtest/gtest.h>

#include "atsc/checkpoint.hpp"
#include "atsc/model.hpp"
#include "test_util.hpp"

using namespace atsc;
using namespace atsc::test;

namespace {

/// Layer-by-layer enumeration of a projector's trainable tensors: bias-free convs, then BN gamma
/// and beta per output channel.
std::size_t projector_oracle(std::size_t cs, std::size_t ct, std::size_t r) {
  const std::size_t hid = ct / r;
  const std::size_t ks[3] = {1, 3, 1};
  const std::size_t cin[3] = {cs, hid, hid};
  const std::size_t cout[3] = {hid, hid, ct};
  std::size_t n = 0;
  for (int i = 0; i < 3; ++i) n += ks[i] * ks[i] * cin[i] * cout[i] + 2 * cout[i];
  return n;
}

}  // namespace

TEST(Projector, ChannelPlanMatchesTable) {
  const auto plan = projector_plan(16, 64, 2);
  EXPECT_EQ(plan[0].ch_in, 16u);
  EXPECT_EQ(plan[0].ch_out, 32u);
  EXPECT_EQ(plan[0].kernel, 1u);
  EXPECT_EQ(plan[1].ch_in, 32u);
  EXPECT_EQ(plan[1].ch_out, 32u);
  EXPECT_EQ(plan[1].kernel, 3u);
  EXPECT_EQ(plan[2].ch_in, 32u);
  EXPECT_EQ(plan[2].ch_out, 64u);
  EXPECT_EQ(plan[2].kernel, 1u);
}

TEST(Projector, IdentityRatio) {
  for (const auto& l : projector_plan(8, 8, 1)) {
    EXPECT_EQ(l.ch_in, 8u);
    EXPECT_EQ(l.ch_out, 8u);
  }
}

TEST(Projector, ReductionLargerThanTeacherWidthIsConfigError) {
  EXPECT_THROW(projector_plan(16, 64, 128), ConfigError);
  EXPECT_THROW(Projector<double>(16, 64, 128), ConfigError);
  EXPECT_THROW(projector_plan(16, 64, 0), ConfigError);
}

TEST(Projector, NonDivisibleReductionWarnsAndFloors) {
  std::vector<std::string> warnings;
  ScopedWarningSink sink([&](const std::string& m) { warnings.push_back(m); });
  Projector<double> p(4, 10, 3);
  EXPECT_EQ(p.plan()[0].ch_out, 3u);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("does not divide"), std::string::npos);
}

TEST(Projector, ParamCountExample) {
  EXPECT_EQ(projector_param_count(16, 64, 2), 12032u);
  EXPECT_EQ(Projector<double>(16, 64, 2).param_count(), 12032u);
}

TEST(Projector, PreservesSpatialDimsAndOutputsTeacherChannels) {
  auto p = make_projector<double>(3, 7, 2, 1);
  const auto y = p.forward(random_tensor<double>({2, 5, 3, 3}, 2), true);
  EXPECT_EQ(y.shape, (Shape{2, 5, 3, 7}));
}

TEST(ProjectorProperty, RandomTriplesMatchOracle) {
  std::mt19937_64 rng(7);
  ScopedWarningSink quiet([](const std::string&) {});
  for (int t = 0; t < 50; ++t) {
    const std::size_t cs = 1 + rng() % 64, ct = 1 + rng() % 128, r = 1 + rng() % ct;
    Projector<double> p(cs, ct, r);
    const auto plan = p.plan();
    EXPECT_EQ(plan[0].ch_in, cs);
    EXPECT_EQ(plan[0].ch_out, ct / r);
    EXPECT_EQ(plan[1].ch_out, ct / r);
    EXPECT_EQ(plan[2].ch_out, ct);
    std::size_t enumerated = 0;
    for (const auto* prm : p.params()) enumerated += prm->value.size();
    EXPECT_EQ(p.param_count(), projector_oracle(cs, ct, r));
    EXPECT_EQ(enumerated, projector_oracle(cs, ct, r));
    EXPECT_EQ(projector_param_count(cs, ct, r), projector_oracle(cs, ct, r));
  }
}

TEST(ProjectorProperty, DoublingReductionShrinksCount) {
  for (std::size_t ct = 2; ct <= 64; ++ct)
    for (std::size_t cs : {1u, 5u, 16u}) EXPECT_LT(projector_param_count(cs, ct, 2), projector_param_count(cs, ct, 1));
}

TEST(AlignSpatial, IdentityWhenShapesMatch) {
  const auto t = random_tensor<double>({2, 8, 8, 3}, 1);
  EXPECT_EQ(align_spatial(t, {8, 8}), t);
}

TEST(AlignSpatial, ConstantField) {
  Tensor<double> t({1, 8, 8, 1}, std::vector<double>(64, 1.0));
  const auto a = align_spatial(t, {4, 4});
  EXPECT_EQ(a.shape, (Shape{1, 4, 4, 1}));
  for (double v : a.data) EXPECT_EQ(v, 1.0);
}

TEST(AlignSpatial, WindowMeans) {
  Tensor<double> t({1, 4, 4, 1});
  for (std::size_t i = 0; i < 16; ++i) t[i] = static_cast<double>(i + 1);
  const auto a = align_spatial(t, {2, 2});
  // brute-force means of each 2x2 block
  std::vector<double> oracle;
  for (std::size_t bi = 0; bi < 2; ++bi)
    for (std::size_t bj = 0; bj < 2; ++bj) {
      double s = 0;
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) s += t.at(0, 2 * bi + i, 2 * bj + j, 0);
      oracle.push_back(s / 4);
    }
  EXPECT_EQ(a.data, oracle);
  EXPECT_EQ(a.data, (std::vector<double>{3.5, 5.5, 11.5, 13.5}));
}

TEST(AlignSpatial, TeacherSmallerIsUnsupported) {
  EXPECT_THROW(align_spatial(random_tensor<double>({1, 2, 2, 1}, 1), {4, 4}), UnsupportedShape);
  EXPECT_THROW(align_spatial(random_tensor<double>({1, 6, 6, 1}, 1), {4, 4}), UnsupportedShape);
}

TEST(AlignSpatialProperty, PreservesChannelMeans) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto t = random_tensor<double>({2, 8, 4, 3}, s);
    const auto a = align_spatial(t, {2, 2});
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t c = 0; c < 3; ++c) {
        double mt = 0, ma = 0;
        for (std::size_t i = 0; i < 8; ++i)
          for (std::size_t j = 0; j < 4; ++j) mt += t.at(b, i, j, c) / 32;
        for (std::size_t i = 0; i < 2; ++i)
          for (std::size_t j = 0; j < 2; ++j) ma += a.at(b, i, j, c) / 4;
        EXPECT_NEAR(mt, ma, 1e-14);
      }
  }
}

TEST(Encoder, OutputShapeMatchesSpec) {
  auto cnn = make_encoder<double>(cnn_spec(8, 8, 3, {4, 6, 5}, {true, false, true}), Role::teacher, 1);
  EXPECT_EQ(cnn.forward(random_tensor<double>({2, 8, 8, 3}, 2), true).shape, (Shape{2, 2, 2, 5}));
  EXPECT_EQ(cnn.spec().out_hw(), (std::array<std::size_t, 2>{2, 2}));
  auto mlp = make_encoder<double>(mlp_spec(10, {7, 4}), Role::student, 1);
  EXPECT_EQ(mlp.forward(random_tensor<double>({3, 1, 1, 10}, 2), false).shape, (Shape{3, 1, 1, 4}));
}

TEST(Encoder, RejectsWrongInput) {
  auto e = make_encoder<double>(mlp_spec(10, {4}), Role::student, 1);
  EXPECT_THROW(e.forward(random_tensor<double>({3, 1, 1, 9}, 2), false), ContractViolation);
}

TEST(Encoder, ParameterOrderIsStable) {
  auto a = make_encoder<double>(cnn_spec(4, 4, 2, {3, 5}), Role::teacher, 3);
  auto b = make_encoder<double>(cnn_spec(4, 4, 2, {3, 5}), Role::teacher, 3);
  const auto pa = a.params(), pb = b.params();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->name, pb[i]->name);
    EXPECT_EQ(pa[i]->value, pb[i]->value);
  }
}

TEST(Snapshot, ImmutableAfterMutation) {
  auto e = make_encoder<double>(mlp_spec(6, {5, 4}), Role::teacher, 1);
  const auto snap = snapshot_params(e);
  const auto before = snap.values();
  for (auto* p : e.params())
    for (auto& v : p->value.data) v = 0.0;
  EXPECT_EQ(snap.values(), before);
}

TEST(Snapshot, LengthEqualsParamCountAndExcludesRunningStats) {
  auto e = make_encoder<double>(mlp_spec(16, {32, 32, 64}), Role::teacher, 1);
  e.forward(random_tensor<double>({4, 1, 1, 16}, 2), true);
  const std::size_t expected = 16 * 32 + 64 + 32 * 32 + 64 + 32 * 64 + 128;
  EXPECT_EQ(e.param_count(), expected);
  EXPECT_EQ(snapshot_params(e).size(), expected);
  EXPECT_EQ(flatten_params<double>(Projector<double>(16, 64, 2)).size(), 12032u);
}

TEST(Snapshot, FingerprintsAreDeterministic) {
  auto e = make_encoder<double>(mlp_spec(6, {5}), Role::teacher, 1);
  EXPECT_EQ(snapshot_params(e).fingerprint(), snapshot_params(e).fingerprint());
  auto f = e;
  f.params()[0]->value[0] += 1e-9;
  EXPECT_NE(snapshot_params(e).fingerprint(), snapshot_params(f).fingerprint());
}

TEST(SnapshotProperty, RestoreReproducesForward) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto e = make_encoder<double>(cnn_spec(4, 4, 2, {3, 4}, {true, false}), Role::teacher, s);
    const auto x = random_tensor<double>({3, 4, 4, 2}, s + 100);
    const auto snap = snapshot_params(e);
    const auto ref = e.forward(x, false);
    jitter(e, s + 1, 0.3);
    EXPECT_NE(e.forward(x, false), ref);
    restore_params(snap, e);
    EXPECT_EQ(e.forward(x, false), ref);
  }
}

TEST(CountParams, IncreaseIsRelativeToTeacherNetwork) {
  PartCounts parts;
  parts.teacher = 1000;
  parts.classifier = 100;
  parts.student = 300;
  parts.projector = 55;
  const auto r = count_params(parts);
  EXPECT_EQ(r.teacher, 1000u);
  EXPECT_EQ(r.projector, 55u);
  EXPECT_DOUBLE_EQ(r.increase_percent, 5.0);
}

TEST(CountParams, EmptySetIsZero) {
  const auto r = count_params({});
  EXPECT_EQ(r.teacher + r.classifier + r.student + r.projector, 0u);
  EXPECT_EQ(r.increase_percent, 0.0);
}

TEST(Classifier, LogitsAndSoftmax) {
  auto c = make_classifier<double>(5, 7, 1);
  const auto logits = c.forward(random_tensor<double>({3, 2, 2, 5}, 2));
  EXPECT_EQ(logits.shape, (Shape{3, 7}));
  const auto p = softmax(logits);
  for (std::size_t b = 0; b < 3; ++b) {
    double s = 0;
    for (std::size_t k = 0; k < 7; ++k) s += p[b * 7 + k];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(StudentPredict, ValidDistribution) {
  auto s = make_encoder<double>(cnn_spec(4, 4, 2, {3}, {true}), Role::student, 1);
  auto p = make_projector<double>(3, 6, 2, 2);
  auto c = make_classifier<double>(6, 5, 3);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto prob = student_predict(random_tensor<double>({4, 4, 4, 2}, seed, 10.0), s, p, c);
    ASSERT_EQ(prob.shape, (Shape{4, 5}));
    for (std::size_t b = 0; b < 4; ++b) {
      double sum = 0;
      for (std::size_t k = 0; k < 5; ++k) {
        EXPECT_GT(prob[b * 5 + k], 0.0);
        EXPECT_LT(prob[b * 5 + k], 1.0);
        sum += prob[b * 5 + k];
      }
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(StudentPredict, ZeroClassifierGivesUniform) {
  auto s = make_encoder<double>(mlp_spec(4, {3}), Role::student, 1);
  auto p = make_projector<double>(3, 6, 2, 2);
  SharedClassifier<double> c(6, 4);
  const auto prob = student_predict(random_tensor<double>({2, 1, 1, 4}, 3), s, p, c);
  for (double v : prob.data) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(StudentPredict, BitStable) {
  auto s = make_encoder<double>(mlp_spec(4, {3}), Role::student, 1);
  auto p = make_projector<double>(3, 6, 2, 2);
  auto c = make_classifier<double>(6, 4, 3);
  const auto x = random_tensor<double>({5, 1, 1, 4}, 4);
  EXPECT_EQ(student_predict(x, s, p, c), student_predict(x, s, p, c));
}

TEST(StudentPredict, ShapeMismatchIsConfigError) {
  auto s = make_encoder<double>(mlp_spec(4, {3}), Role::student, 1);
  auto p = make_projector<double>(5, 6, 2, 2);
  auto c = make_classifier<double>(6, 4, 3);
  EXPECT_THROW(student_predict(random_tensor<double>({2, 1, 1, 4}, 3), s, p, c), ConfigError);
  auto p2 = make_projector<double>(3, 6, 2, 2);
  auto c2 = make_classifier<double>(7, 4, 3);
  EXPECT_THROW(student_predict(random_tensor<double>({2, 1, 1, 4}, 3), s, p2, c2), ConfigError);
}

TEST(StudentPredictProperty, MultiTeacherSingleEqualsSingle) {
  auto s = make_encoder<double>(mlp_spec(4, {3}), Role::student, 1);
  std::vector<Projector<double>> ps{make_projector<double>(3, 6, 2, 2)};
  std::vector<SharedClassifier<double>> cs{make_classifier<double>(6, 4, 3)};
  const auto x = random_tensor<double>({5, 1, 1, 4}, 4);
  EXPECT_EQ(mt_student_predict(x, s, ps, cs), student_predict(x, s, ps[0], cs[0]));
}

TEST(Checkpoint, RoundTripAndIntegrity) {
  const auto dir = scratch_dir("ckpt");
  auto e = make_encoder<double>(cnn_spec(4, 4, 2, {3, 4}, {true, false}), Role::teacher, 1);
  const auto x = random_tensor<double>({3, 4, 4, 2}, 5);
  e.forward(x, true);
  auto c = make_classifier<double>(4, 3, 2);
  CheckpointWriter<double> w;
  w.meta()["seed"] = 7;
  w.add("teacher", e);
  w.add("classifier", c);
  w.save(dir / "ck");

  Checkpoint<double> ck(dir / "ck");
  auto e2 = ck.encoder("teacher");
  auto c2 = ck.classifier("classifier");
  EXPECT_EQ(e2.spec(), e.spec());
  EXPECT_EQ(c2.forward(e2.forward(x, false)), c.forward(e.forward(x, false)));
  EXPECT_EQ(ck.manifest().at("seed"), 7);
  EXPECT_EQ(ck.manifest().at("parts")[0].at("fingerprint").get<std::string>(), hex64(param_fingerprint<double>(e)));
  EXPECT_THROW(ck.encoder("missing"), StartupError);

  // corrupt one parameter value in the blob
  const auto blob = dir / "ck" / "teacher.bin";
  std::fstream f(blob, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(24);
  const double bad = 123.0;
  f.write(reinterpret_cast<const char*>(&bad), sizeof bad);
  f.close();
  EXPECT_THROW(ck.encoder("teacher"), IngestionError);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, MissingManifestIsStartupError) {
  EXPECT_THROW(Checkpoint<double>("/nonexistent/atsc/ck"), StartupError);
}
