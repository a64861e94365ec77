#pragma once

// Reference routines and fixtures shared by the unit tests and the
// acceptance runner.

#include "onlinehoi/diffusion.hpp"
#include "onlinehoi/memory.hpp"
#include "onlinehoi/percept.hpp"
#include "onlinehoi/ssm.hpp"
#include "test_util.hpp"

#include <cmath>
#include <cstdio>
#include <string>
#include <tuple>
#include <vector>

namespace onlinehoi::testing {

inline ssm::SSMParameters random_stable_ssm(Rng& rng, int n) {
  ssm::SSMParameters p;
  // Stable dense A: negative diagonal plus small coupling.
  p.A = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    p.A(i, i) = -uniform(rng, 0.1, 2.0);
    for (int j = 0; j < n; ++j)
      if (i != j) p.A(i, j) = 0.1 * normal(rng) / n;
  }
  p.B = Eigen::VectorXd::NullaryExpr(n, [&] { return normal(rng); });
  p.C = Eigen::RowVectorXd::NullaryExpr(n, [&] { return normal(rng); });
  p.delta = {uniform(rng, 0.01, 0.5)};
  return p;
}

// Direct transcription of the storage procedure: rebuild the full
// similarity list every iteration, take the first maximum, average the pair.
inline std::vector<memory::Vec> brute_force_consolidate(std::vector<memory::Vec> frames, std::size_t cap) {
  while (frames.size() > cap) {
    std::vector<double> sim;
    for (std::size_t t = 0; t + 1 < frames.size(); ++t) sim.push_back(frames[t].dot(frames[t + 1]));
    std::size_t tmax = 0;
    for (std::size_t t = 0; t < sim.size(); ++t)
      if (sim[t] > sim[tmax]) tmax = t;
    frames[tmax] = (frames[tmax] + frames[tmax + 1]) / 2.0;
    frames.erase(frames.begin() + static_cast<std::ptrdiff_t>(tmax + 1));
  }
  return frames;
}

inline memory::Vec random_frame(Rng& rng, int d, bool integer_valued) {
  memory::Vec v(d);
  for (int i = 0; i < d; ++i) v(i) = integer_valued ? uniform_int(rng, -2, 2) : normal(rng);
  return v;
}

struct MomentCheck {
  std::string route;  // closed | chain
  int t = 0;
  int coord = 0;
  double mean_rel = 0.0;
  double var_rel = 0.0;
};

// Moments of x_t over `draws` samples, via the closed form and via t composed
// chain steps, against (sqrt(ab) x0, 1 - ab). Linear schedule, T = 100.
inline std::vector<MomentCheck> monte_carlo_moments(int draws, std::uint64_t seed) {
  using namespace diffusion;
  const auto sched = make_schedule(100, ScheduleKind::linear);
  const Mat x0 = (Mat(1, 3) << 1.5, -0.7, 0.9).finished();
  std::vector<MomentCheck> out;
  for (int t : {1, 50, 100}) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(t)});
    Eigen::ArrayXd sum_c = Eigen::ArrayXd::Zero(3), sq_c = sum_c, sum_s = sum_c, sq_s = sum_c;
    Mat noise(1, 3);
    for (int n = 0; n < draws; ++n) {
      for (int c = 0; c < 3; ++c) noise(0, c) = normal(rng);
      const Eigen::ArrayXd xc = q_sample(x0, t, noise, sched).row(0).transpose().array();
      Mat x = x0;
      for (int s = 1; s <= t; ++s) {
        for (int c = 0; c < 3; ++c) noise(0, c) = normal(rng);
        x = q_step(x, s, noise, sched);
      }
      const Eigen::ArrayXd xs = x.row(0).transpose().array();
      sum_c += xc;
      sq_c += xc * xc;
      sum_s += xs;
      sq_s += xs * xs;
    }
    const double ab = sched.alpha_bar(t);
    for (int c = 0; c < 3; ++c) {
      const double mu = std::sqrt(ab) * x0(0, c), var = 1.0 - ab;
      for (auto [sum, sq, route] : {std::tuple{sum_c[c], sq_c[c], "closed"}, std::tuple{sum_s[c], sq_s[c], "chain"}}) {
        const double m = sum / draws;
        const double v = sq / draws - m * m;
        out.push_back({route, t, c, std::abs(m - mu) / std::abs(mu), std::abs(v - var) / var});
      }
    }
  }
  return out;
}

inline std::string describe(const MomentCheck& m) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s t=%d c=%d mean %.3f%% var %.3f%%", m.route.c_str(), m.t, m.coord,
                100.0 * m.mean_rel, 100.0 * m.var_rel);
  return buf;
}

inline diffusion::DenoiserConfig tiny_denoiser_config() {
  diffusion::DenoiserConfig cfg;
  cfg.pose_dim = 4;
  cfg.object_pose_dim = 3;
  cfg.model_dim = 8;
  cfg.depth = 1;
  cfg.state_dim = 4;
  cfg.conv_width = 3;
  cfg.expansion = 2;
  cfg.cond_heads = 2;
  cfg.geometry_points = 6;
  cfg.memory.short_capacity = 2;
  cfg.memory.long_capacity = 2;
  return cfg;
}

inline diffusion::GenCondition random_condition(Rng& rng, int T, int pose_dim, int obj_dim, int n_geom = 12) {
  diffusion::GenCondition c;
  c.actor = random_mat(rng, T, pose_dim);
  c.object_pose = random_mat(rng, T, obj_dim);
  c.object_geometry = random_mat(rng, n_geom, 3);
  return c;
}

inline percept::PerceptionConfig small_perception_config() {
  percept::PerceptionConfig cfg;
  cfg.channels = {6, 8, 8, 10};
  cfg.radius = 0.6;
  cfg.point_features = 8;
  cfg.model_dim = 8;
  cfg.state_dim = 4;
  cfg.conv_width = 3;
  cfg.heads = 2;
  cfg.num_classes = 3;
  cfg.memory.short_capacity = 3;
  cfg.memory.long_capacity = 2;
  return cfg;
}

inline percept::PointCloudSequence random_clip(Rng& rng, int T, int n, double scale = 0.6) {
  percept::PointCloudSequence seq;
  for (int t = 0; t < T; ++t) {
    percept::PointFrame f{percept::Points(n, 3), percept::Points(n, 3)};
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c) {
        f.points(i, c) = scale * normal(rng) + 0.05 * t;
        f.normals(i, c) = normal(rng);
      }
      f.normals.row(i).normalize();
    }
    seq.frames.push_back(std::move(f));
    seq.labels.push_back(t % 3);
  }
  return seq;
}

inline bool rows_equal(const Mat& a, const Mat& b, Eigen::Index n) {
  return (a.topRows(n).array() == b.topRows(n).array()).all();
}

}  // namespace onlinehoi::testing
