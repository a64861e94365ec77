#include "onlinehoi/errors.hpp"
#include "onlinehoi/metrics.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace onlinehoi;
using namespace onlinehoi::testing;
using namespace onlinehoi::metrics;

namespace {

// {+c e_i, -c e_i} with c^2 = (n - 1) / 2 has zero mean and sample covariance I.
Mat identity_cov_design(int F) {
  const int n = 2 * F;
  const double c = std::sqrt((n - 1) / 2.0);
  Mat x = Mat::Zero(n, F);
  for (int i = 0; i < F; ++i) {
    x(2 * i, i) = c;
    x(2 * i + 1, i) = -c;
  }
  return x;
}

}  // namespace

TEST(Fid, IdenticalSetsAreZero) {
  Rng rng = make_rng(1);
  const FeatureSet a{random_mat(rng, 50, 6), "x"};
  EXPECT_NEAR(fid(a, a), 0.0, 1e-8);
}

TEST(Fid, MeanShiftWithEqualCovariance) {
  Rng rng = make_rng(2);
  const Mat x = random_mat(rng, 40, 5);
  const Eigen::RowVectorXd d = random_mat(rng, 1, 5).row(0);
  const FeatureSet a{x, "x"};
  const FeatureSet b{x.rowwise() + d, "x"};
  EXPECT_NEAR(fid(a, b), d.squaredNorm(), 1e-8);
}

TEST(Fid, DiagonalClosedForm) {
  for (int F : {1, 3, 8}) {
    const Mat x = identity_cov_design(F);
    const FeatureSet a{2.0 * x, "x"}, b{x, "x"};  // covariances 4I and I
    const double jittered = F * std::pow(std::sqrt(4.0 + 1e-6) - std::sqrt(1.0 + 1e-6), 2);
    EXPECT_NEAR(fid(a, b), jittered, 1e-10);
    EXPECT_NEAR(fid(a, b), static_cast<double>(F), 1e-5 * F);
  }
}

TEST(Fid, SymmetricAndNonNegative) {
  Rng rng = make_rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const FeatureSet a{random_mat(rng, 30, 4), "x"}, b{random_mat(rng, 25, 4, 1.7), "x"};
    EXPECT_NEAR(fid(a, b), fid(b, a), 1e-9);
    EXPECT_GE(fid(a, b), -1e-6);
  }
}

TEST(Fid, Errors) {
  Rng rng = make_rng(4);
  const FeatureSet a{random_mat(rng, 10, 3), "x"};
  EXPECT_THROW(fid(a, FeatureSet{random_mat(rng, 10, 3), "y"}), ConfigError);
  EXPECT_THROW(fid(a, FeatureSet{random_mat(rng, 1, 3), "x"}), InvalidParameter);
  // Scale far beyond what 1e-6 jitter can regularize.
  Mat degenerate = Mat::Zero(10, 3);
  degenerate.col(0) = random_mat(rng, 10, 1);
  EXPECT_THROW(fid(FeatureSet{-1e30 * Mat::Ones(10, 3) + 1e14 * degenerate, "x"}, a), NumericalError);
}

TEST(Div, IdenticalFeaturesAreZero) {
  const FeatureSet a{Mat::Constant(20, 3, 0.7), "x"};
  EXPECT_EQ(div(a, 10, 1), 0.0);
  EXPECT_NEAR(div(a, 0, 1, DivMode::variance), 0.0, 1e-20);
}

TEST(Div, SinglePair) {
  const FeatureSet a{(Mat(2, 2) << 0, 0, 3, 4).finished(), "x"};
  EXPECT_DOUBLE_EQ(div(a, 1, 9), 5.0);
}

TEST(Div, MatchesAllPairsOracle) {
  Rng rng = make_rng(5);
  const FeatureSet a{random_mat(rng, 1000, 4), "x"};
  double total = 0.0;
  long count = 0;
  for (int i = 0; i < 1000; ++i)
    for (int j = i + 1; j < 1000; ++j, ++count) total += (a.features.row(i) - a.features.row(j)).norm();
  const double oracle = total / count;
  EXPECT_NEAR(div(a, 500, 7), oracle, 0.05 * oracle);
}

TEST(Div, TooManyPairs) {
  Rng rng = make_rng(6);
  EXPECT_THROW(div(FeatureSet{random_mat(rng, 9, 2), "x"}, 5, 1), ConfigError);
}

TEST(RecognitionAccuracy, BoundsAndChance) {
  EXPECT_EQ(recognition_accuracy({1, 2, 3}, {1, 2, 3}), 100.0);
  Rng rng = make_rng(7);
  constexpr int K = 5, n = 3000;
  std::vector<int> labels, guesses;
  for (int i = 0; i < n; ++i) {
    labels.push_back(i % K);
    guesses.push_back(uniform_int(rng, 0, K - 1));
  }
  const double p = 1.0 / K, sd = std::sqrt(p * (1 - p) / n);
  EXPECT_NEAR(recognition_accuracy(guesses, labels), 100.0 * p, 100.0 * 3.29 * sd);  // 99.9% interval
}

TEST(Segments, RunLengths) {
  const auto s = segments({0, 0, 1, 1, 1, 0, 2});
  ASSERT_EQ(s.size(), 4u);
  EXPECT_EQ(s[1].label, 1);
  EXPECT_EQ(s[1].start, 2);
  EXPECT_EQ(s[1].end, 5);
  EXPECT_EQ(segments({0, 0, 1, 0}, {0}).size(), 1u);
}

TEST(FramewiseAcc, Counts) {
  const std::vector<int> gt{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  EXPECT_EQ(framewise_acc(gt, gt), 100.0);
  std::vector<int> wrong(10, -1), half = gt;
  EXPECT_EQ(framewise_acc(wrong, gt), 0.0);
  for (int i = 0; i < 5; ++i) half[i] = -1;
  EXPECT_EQ(framewise_acc(half, gt), 50.0);
  EXPECT_THROW(framewise_acc({1}, gt), ShapeError);
}

TEST(EditScore, Cases) {
  const std::vector<int> gt{0, 0, 1, 1, 1};
  EXPECT_EQ(edit_score(gt, gt), 100.0);
  EXPECT_NEAR(edit_score({0, 0, 1, 1, 2, 2}, {0, 0, 0, 1, 1, 1}), 100.0 * (1.0 - 1.0 / 3.0), 1e-12);
  EXPECT_NEAR(edit_score({0, 0, 1, 1, 2, 2}, {0, 0, 0, 1, 1, 1}), 66.67, 0.005);
  EXPECT_EQ(edit_score({1, 2, 3}, {4, 5, 6}), 0.0);
  EXPECT_THROW(edit_score({}, gt), InvalidParameter);
}

TEST(F1, ThresholdCrossing) {
  // Ground truth segment [0, 5), prediction [3, 5): IoU 2/5 = 0.4. Label 0 is background.
  const std::vector<int> gt{1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
  const std::vector<int> pred{0, 0, 0, 1, 1, 0, 0, 0, 0, 0};
  EXPECT_EQ(f1_at_k(pred, gt, 0.5, {0}), 0.0);
  EXPECT_EQ(f1_at_k(pred, gt, 0.25, {0}), 100.0);
  for (double tau : {0.1, 0.25, 0.5}) EXPECT_EQ(f1_at_k(gt, gt, tau), 100.0);
}

TEST(F1, EmptyConventions) {
  EXPECT_EQ(f1_at_k({0, 0}, {0, 0}, 0.5, {0}), 100.0);
  EXPECT_EQ(f1_at_k({0, 1}, {0, 0}, 0.5, {0}), 0.0);
  EXPECT_THROW(f1_at_k({1}, {1}, 0.0), ConfigError);
}

TEST(SegmentMetrics, MonotoneInTauAndRefinementInvariant) {
  Rng rng = make_rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> gt, pred;
    for (int seg = 0; seg < 6; ++seg) {
      const int len = uniform_int(rng, 1, 5), lab = uniform_int(rng, 0, 3);
      for (int i = 0; i < len; ++i) gt.push_back(lab);
    }
    for (std::size_t i = 0; i < gt.size(); ++i) pred.push_back(uniform(rng) < 0.8 ? gt[i] : uniform_int(rng, 0, 3));
    double prev = 101.0;
    for (double tau : {0.05, 0.1, 0.25, 0.5, 0.75, 1.0}) {
      const double f = f1_at_k(pred, gt, tau);
      EXPECT_LE(f, prev + 1e-12);
      prev = f;
    }
    // Doubling every frame keeps the segment structure.
    std::vector<int> gt2, pred2;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      gt2.insert(gt2.end(), 2, gt[i]);
      pred2.insert(pred2.end(), 2, pred[i]);
    }
    EXPECT_EQ(edit_score(pred, gt), edit_score(pred2, gt2));
    for (double tau : {0.1, 0.25, 0.5}) EXPECT_EQ(f1_at_k(pred, gt, tau), f1_at_k(pred2, gt2, tau));
  }
}

namespace {

// Sinusoids whose frequency encodes the class.
void separable_motions(Rng& rng, int n, int K, int T, int D, std::vector<Mat>& motions, std::vector<int>& labels) {
  for (int i = 0; i < n; ++i) {
    const int k = i % K;
    const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    Mat m(T, D);
    for (int t = 0; t < T; ++t)
      for (int d = 0; d < D; ++d) m(t, d) = std::sin(0.15 * (k + 1) * t + phase + d) + 0.05 * normal(rng);
    motions.push_back(m);
    labels.push_back(k);
  }
}

}  // namespace

TEST(FeatureExtractor, TrainsAboveChanceAndIsDeterministic) {
  Rng rng = make_rng(10);
  std::vector<Mat> motions;
  std::vector<int> labels;
  separable_motions(rng, 60, 4, 24, 3, motions, labels);
  auto train = [&] {
    auto store = std::make_unique<nn::ParamStore>();
    Rng init = make_rng(3);
    auto clf = std::make_unique<MotionClassifier>(*store, ClassifierConfig{3, 16, 8, 4}, init);
    const auto rep = feature_extractor_train(*clf, *store, motions, labels, {.steps = 200, .batch = 8, .seed = 1});
    return std::tuple{std::move(store), std::move(clf), rep};
  };
  auto [s1, c1, r1] = train();
  auto [s2, c2, r2] = train();
  EXPECT_GT(r1.train_accuracy, 25.0);
  EXPECT_TRUE(r1.warning.empty());
  EXPECT_EQ(c1->id, c2->id);
  const FeatureSet f1 = c1->feature_set(motions), f2 = c2->feature_set(motions);
  EXPECT_TRUE((f1.features.array() == f2.features.array()).all());
  EXPECT_TRUE((c1->features(motions[0]).value().array() == c1->features(Mat(motions[0])).value().array()).all());
  EXPECT_EQ(recognition_accuracy(*c1, motions, labels), r1.train_accuracy);
  EXPECT_THROW(recognition_accuracy(*c1, {motions[0]}, {7}), ConfigError);
}
