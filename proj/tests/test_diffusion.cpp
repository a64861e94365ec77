#include "onlinehoi/diffusion.hpp"
#include "onlinehoi/errors.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace onlinehoi;
using namespace onlinehoi::testing;
using namespace onlinehoi::diffusion;

namespace {

const double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

TEST(Schedule, SingleStep) {
  const auto s = DiffusionSchedule::from_alphas({0.99});
  EXPECT_DOUBLE_EQ(s.alpha_bar(1), 0.99);
}

TEST(Schedule, AlphaBarStrictlyDecreasing) {
  for (auto kind : {ScheduleKind::linear, ScheduleKind::cosine}) {
    for (int T : {1, 2, 10, 100, 1000}) {
      const auto s = make_schedule(T, kind);
      for (int t = 1; t <= T; ++t) {
        EXPECT_GT(s.alpha(t), 0.0);
        EXPECT_LT(s.alpha(t), 1.0);
        EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
      }
    }
  }
}

TEST(Schedule, LinearEndpoints) {
  const auto s = make_schedule(50, ScheduleKind::linear, 1e-4, 0.02);
  EXPECT_NEAR(s.beta(1), 1e-4, 1e-15);
  EXPECT_NEAR(s.beta(50), 0.02, 1e-15);
}

TEST(Schedule, Errors) {
  EXPECT_THROW(make_schedule(0, ScheduleKind::linear), ConfigError);
  EXPECT_THROW(make_schedule(-3, ScheduleKind::cosine), ConfigError);
  const auto s = make_schedule(10, ScheduleKind::linear);
  Mat x = Mat::Ones(2, 2);
  EXPECT_THROW(q_sample(x, 0, x, s), IndexError);
  EXPECT_THROW(q_sample(x, 11, x, s), IndexError);
}

TEST(QSample, Limits) {
  Rng rng = make_rng(5);
  const Mat x0 = random_mat(rng, 3, 4), noise = random_mat(rng, 3, 4);
  const auto clean = DiffusionSchedule::from_alphas({1.0 - 1e-14});
  EXPECT_LT((q_sample(x0, 1, noise, clean) - x0).cwiseAbs().maxCoeff(), 1e-6);
  const auto noisy = DiffusionSchedule::from_alphas({1e-14});
  EXPECT_LT((q_sample(x0, 1, noise, noisy) - noise).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(QSample, MonteCarloMomentsMatchClosedForm) {
  for (const auto& m : monte_carlo_moments(100000, 77)) {
    EXPECT_LE(m.mean_rel, 0.01) << describe(m);
    EXPECT_LE(m.var_rel, 0.01) << describe(m);
  }
}

// Moments of the stepwise chain propagated exactly: m <- sqrt(a) m,
// v <- a v + (1 - a).
TEST(QSample, ChainMomentRecursionMatchesClosedForm) {
  for (auto kind : {ScheduleKind::linear, ScheduleKind::cosine}) {
    const auto sched = make_schedule(100, kind);
    double m = 1.0, v = 0.0;
    for (int t = 1; t <= 100; ++t) {
      m *= std::sqrt(sched.alpha(t));
      v = sched.alpha(t) * v + (1.0 - sched.alpha(t));
      EXPECT_NEAR(m, std::sqrt(sched.alpha_bar(t)), 1e-12);
      EXPECT_NEAR(v, 1.0 - sched.alpha_bar(t), 1e-12);
    }
  }
}

class DenoiserTest : public ::testing::Test {
 protected:
  void build(DenoiserConfig c) {
    cfg = c;
    store = std::make_unique<nn::ParamStore>();
    Rng init = make_rng(11);
    model = std::make_unique<Denoiser>(*store, cfg, init);
  }
  void SetUp() override { build(tiny_denoiser_config()); }

  DenoiserConfig cfg;
  std::unique_ptr<nn::ParamStore> store;
  std::unique_ptr<Denoiser> model;
  Rng rng = make_rng(3);
};

TEST_F(DenoiserTest, OnlinePerturbationOnlyAffectsLaterFrames) {
  const int T = 9;
  const GenCondition cond = random_condition(rng, T, cfg.pose_dim, cfg.object_pose_dim);
  const Mat x = random_mat(rng, T, cfg.pose_dim);
  const Mat base = model->forward(Var(x), 4, cond).value();
  for (int k = 0; k < T; ++k) {
    for (int which = 0; which < 3; ++which) {
      GenCondition c2 = cond;
      Mat x2 = x;
      if (which == 0) x2.row(k).array() += 0.5;
      if (which == 1) c2.actor.row(k).array() += 0.5;
      if (which == 2) c2.object_pose.row(k).array() += 0.5;
      const Mat out = model->forward(Var(x2), 4, c2).value();
      EXPECT_TRUE(rows_equal(base, out, k)) << "k=" << k << " input=" << which;
      EXPECT_GT((out.row(k) - base.row(k)).cwiseAbs().maxCoeff(), 0.0) << "k=" << k << " input=" << which;
    }
  }
}

TEST_F(DenoiserTest, OnlineNaNPoisonNeverReachesThePast) {
  const int T = 8;
  const GenCondition cond = random_condition(rng, T, cfg.pose_dim, cfg.object_pose_dim);
  const Mat x = random_mat(rng, T, cfg.pose_dim);
  const Mat base = model->forward(Var(x), 2, cond).value();
  for (int k = 1; k < T; ++k) {
    GenCondition c2 = cond;
    Mat x2 = x;
    x2.bottomRows(T - k).setConstant(kNaN);
    c2.actor.bottomRows(T - k).setConstant(kNaN);
    c2.object_pose.bottomRows(T - k).setConstant(kNaN);
    const Mat out = model->forward(Var(x2), 2, c2, false).value();
    EXPECT_TRUE(rows_equal(base, out, k)) << "k=" << k;
  }
}

TEST_F(DenoiserTest, OfflineModeReadsTheFuture) {
  DenoiserConfig c = tiny_denoiser_config();
  c.online = false;
  build(c);
  const int T = 7;
  const GenCondition cond = random_condition(rng, T, cfg.pose_dim, cfg.object_pose_dim);
  const Mat x = random_mat(rng, T, cfg.pose_dim);
  GenCondition c2 = cond;
  c2.actor.row(T - 1).array() += 0.5;
  const Mat a = model->forward(Var(x), 3, cond).value();
  const Mat b = model->forward(Var(x), 3, c2).value();
  EXPECT_FALSE(rows_equal(a, b, T - 1));
}

TEST_F(DenoiserTest, TransformerBackboneIsCausalOnline) {
  DenoiserConfig c = tiny_denoiser_config();
  c.backbone = BlockKind::causal_transformer;
  build(c);
  const int T = 6;
  const GenCondition cond = random_condition(rng, T, cfg.pose_dim, cfg.object_pose_dim);
  const Mat x = random_mat(rng, T, cfg.pose_dim);
  const Mat base = model->forward(Var(x), 1, cond).value();
  for (int k = 0; k < T; ++k) {
    Mat x2 = x;
    x2.row(k).array() += 0.5;
    EXPECT_TRUE(rows_equal(base, model->forward(Var(x2), 1, cond).value(), k)) << "k=" << k;
  }
}

TEST_F(DenoiserTest, SkipShapesMirror) {
  DenoiserConfig c = tiny_denoiser_config();
  c.depth = 3;
  build(c);
  const GenCondition cond = random_condition(rng, 5, cfg.pose_dim, cfg.object_pose_dim);
  UNetTrace trace;
  model->forward(Var(random_mat(rng, 5, cfg.pose_dim)), 1, cond, true, &trace);
  ASSERT_EQ(trace.encoder_out.size(), 3u);
  ASSERT_EQ(trace.decoder_skip_in.size(), 3u);
  for (std::size_t l = 0; l < 3; ++l) EXPECT_EQ(trace.encoder_out[2 - l], trace.decoder_skip_in[l]);
}

TEST_F(DenoiserTest, ConditionLengthMismatch) {
  GenCondition cond = random_condition(rng, 5, cfg.pose_dim, cfg.object_pose_dim);
  EXPECT_THROW(model->forward(Var(random_mat(rng, 6, cfg.pose_dim)), 1, cond), ShapeError);
  cond.object_pose = random_mat(rng, 4, cfg.object_pose_dim);
  EXPECT_THROW(model->forward(Var(random_mat(rng, 5, cfg.pose_dim)), 1, cond), ShapeError);
}

TEST_F(DenoiserTest, TrainingLossGradientMatchesFiniteDifferences) {
  const auto sched = make_schedule(5, ScheduleKind::linear);
  TrainExample ex{random_mat(rng, 6, cfg.pose_dim), random_condition(rng, 6, cfg.pose_dim, cfg.object_pose_dim)};
  const std::vector<const TrainExample*> batch{&ex};
  auto loss = [&] { return diffusion_loss(*model, batch, sched, 21, 0); };
  const auto res = grad_check(store->items(), loss);
  EXPECT_LE(res.max_rel_error, 1e-4) << res.worst << " over " << res.checked;
}

TEST_F(DenoiserTest, TrainingIsDeterministicAndNonNegative) {
  const auto sched = make_schedule(10, ScheduleKind::cosine);
  TrainExample ex{random_mat(rng, 6, cfg.pose_dim), random_condition(rng, 6, cfg.pose_dim, cfg.object_pose_dim)};
  auto run = [&] {
    nn::ParamStore s;
    Rng init = make_rng(11);
    Denoiser m(s, cfg, init);
    nn::Adam opt(s, {});
    TrainLog log;
    for (int step = 0; step < 15; ++step) train_step(m, opt, {&ex}, sched, 4, step, log);
    return log.losses;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), 15u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_GE(a[i], 0.0);
    EXPECT_EQ(a[i], b[i]);
  }
}

TEST_F(DenoiserTest, NaNLossAbortsWithDiagnostics) {
  const auto sched = make_schedule(5, ScheduleKind::linear);
  TrainExample ex{random_mat(rng, 4, cfg.pose_dim), random_condition(rng, 4, cfg.pose_dim, cfg.object_pose_dim)};
  nn::Adam opt(*store, {});
  TrainLog log;
  train_step(*model, opt, {&ex}, sched, 1, 0, log);
  store->get("den.out_proj.bias").mutable_value()(0, 0) = kNaN;
  try {
    train_step(*model, opt, {&ex}, sched, 1, 1, log);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
}

// Expected loss over every diffusion step with fixed noise.
static double full_schedule_loss(const Denoiser& m, const TrainExample& ex, const DiffusionSchedule& sched) {
  double total = 0.0;
  Rng rng = make_rng(1234);
  for (int t = 1; t <= sched.steps(); ++t) {
    const Mat noise = random_mat(rng, ex.x0.rows(), ex.x0.cols());
    total += ag::mse(m.forward(Var(q_sample(ex.x0, t, noise, sched)), t, ex.cond), Var(ex.x0)).item();
  }
  return total / sched.steps();
}

TEST_F(DenoiserTest, MemorizesAConstantSequence) {
  const auto sched = make_schedule(20, ScheduleKind::linear);
  TrainExample ex;
  ex.x0 = Mat(12, cfg.pose_dim);
  ex.x0.rowwise() = (Eigen::RowVectorXd(4) << 0.5, -0.3, 0.8, 0.1).finished();
  ex.cond = random_condition(rng, 12, cfg.pose_dim, cfg.object_pose_dim);
  const double initial = full_schedule_loss(*model, ex, sched);
  nn::Adam opt(*store, {.lr = 3e-3});
  TrainLog log;
  for (int step = 0; step < 2000; ++step) train_step(*model, opt, {&ex}, sched, 8, step, log);
  const double final = full_schedule_loss(*model, ex, sched);
  EXPECT_LT(final, 0.01 * initial) << "initial " << initial << " final " << final;
}

TEST_F(DenoiserTest, SamplingIsDeterministicAndShaped) {
  const auto sched = make_schedule(8, ScheduleKind::linear);
  const GenCondition cond = random_condition(rng, 7, cfg.pose_dim, cfg.object_pose_dim);
  const Mat a = sample_online(*model, cond, sched, 42);
  const Mat b = sample_online(*model, cond, sched, 42);
  EXPECT_EQ(a.rows(), 7);
  EXPECT_EQ(a.cols(), cfg.pose_dim);
  EXPECT_TRUE((a.array() == b.array()).all());
  EXPECT_FALSE((a.array() == sample_online(*model, cond, sched, 43).array()).all());
}

TEST_F(DenoiserTest, SamplingIsInvariantToConditionTruncation) {
  const auto sched = make_schedule(6, ScheduleKind::cosine);
  const int T = 9;
  const GenCondition cond = random_condition(rng, T, cfg.pose_dim, cfg.object_pose_dim);
  const Mat full = sample_online(*model, cond, sched, 5);
  for (int k = 1; k < T; ++k) {
    GenCondition c2 = cond;
    c2.actor = cond.actor.topRows(k);
    c2.object_pose = cond.object_pose.topRows(k);
    const Mat part = sample_online(*model, c2, sched, 5);
    ASSERT_EQ(part.rows(), k);
    EXPECT_TRUE(rows_equal(full, part, k)) << "k=" << k;
  }
}

TEST_F(DenoiserTest, SamplingRejectsNonFiniteWeights) {
  const auto sched = make_schedule(3, ScheduleKind::linear);
  store->get("den.in_proj.weight").mutable_value()(0, 0) = kNaN;
  EXPECT_THROW(sample_online(*model, random_condition(rng, 4, cfg.pose_dim, cfg.object_pose_dim), sched, 1),
               InvalidState);
}
