#pragma once

// Diffusion schedule and forward process, the memory-augmented U-Net
// denoiser that predicts clean motion, training and online sampling.

#include "onlinehoi/geometry.hpp"
#include "onlinehoi/memory.hpp"
#include "onlinehoi/nn.hpp"
#include "onlinehoi/transformer.hpp"

#include <deque>
#include <string>
#include <vector>

namespace onlinehoi::diffusion {

using ag::Mat;
using ag::Var;

enum class ScheduleKind { linear, cosine };

std::string to_string(ScheduleKind k);
ScheduleKind parse_schedule_kind(const std::string& s);

/// alphas[t-1] and alpha_bars[t-1] hold the values for step t = 1..steps().
struct DiffusionSchedule {
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  int steps() const { return static_cast<int>(alphas.size()); }
  double alpha(int t) const;
  double alpha_bar(int t) const;  // alpha_bar(0) == 1
  double beta(int t) const { return 1.0 - alpha(t); }

  static DiffusionSchedule from_alphas(std::vector<double> alphas);
};

/// linear: betas evenly spaced from beta_start to beta_end.
/// cosine: alpha_bar follows a squared cosine with offset 0.008, betas capped at 0.999.
DiffusionSchedule make_schedule(int steps, ScheduleKind kind, double beta_start = 1e-4, double beta_end = 0.02);

/// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise.
Mat q_sample(const Mat& x0, int t, const Mat& noise, const DiffusionSchedule& sched);

/// One step of the chain: sqrt(alpha_t) x_{t-1} + sqrt(1 - alpha_t) noise.
Mat q_step(const Mat& x_prev, int t, const Mat& noise, const DiffusionSchedule& sched);

struct MotionSequence {
  Mat frames;  // T_seq x D_pose
  double fps = 30.0;

  void validate() const;
};

struct GenCondition {
  Mat actor;                         // T_seq x D_pose
  Mat object_pose;                   // T_seq x P
  geometry::Points object_geometry;  // points in the object frame
};

struct DenoiserConfig {
  int pose_dim = 6;
  int object_pose_dim = 6;
  int model_dim = 32;
  int depth = 2;  // blocks on each side of the U-Net
  int state_dim = 8;
  int conv_width = 4;
  int expansion = 2;
  int cond_heads = 4;
  int geometry_points = 16;
  BlockKind backbone = BlockKind::mamba;
  bool online = true;
  memory::MemoryConfig memory;

  void validate() const;
  TemporalBlockConfig block_config() const;
};

/// Widths seen at every U-Net level during one forward pass.
struct UNetTrace {
  std::vector<Eigen::Index> encoder_out;
  std::vector<Eigen::Index> decoder_skip_in;
};

class Denoiser {
 public:
  Denoiser(nn::ParamStore& store, const DenoiserConfig& cfg, Rng& rng);

  /// Predicts x0 from x_t. In online mode row r of the result depends on
  /// rows 0..r of x_t and of the per-frame conditions only.
  Var forward(const Var& x_t, int t, const GenCondition& cond, bool check_inputs = true,
              UNetTrace* trace = nullptr) const;

  const DenoiserConfig& config() const { return cfg_; }
  nn::ParamStore& store() const { return *store_; }

 private:
  Var geometry_token(const geometry::Points& pts) const;

  DenoiserConfig cfg_;
  nn::ParamStore* store_;
  nn::Linear in_proj_, step1_, step2_;
  nn::Linear actor_emb_, pose_emb_, geom1_, geom2_;
  nn::Linear attn_q_, attn_k_, attn_v_, attn_o_;
  nn::Linear mem_proj_;
  std::vector<TemporalBlock> encoder_, decoder_;
  std::vector<nn::Linear> skip_proj_;
  nn::RMSNorm out_norm_;
  nn::Linear out_proj_;
};

struct TrainExample {
  Mat x0;
  GenCondition cond;
};

/// Loss history kept for diagnostics; the tail is reported on failure.
struct TrainLog {
  std::vector<double> losses;
  std::string tail(std::size_t n = 5) const;
};

/// Mean over the batch of MSE(x0_hat, x0) with t ~ U{1..T} and Gaussian
/// noise drawn from (seed, step, item). Applies one optimizer step.
/// Throws NumericalError on a non-finite loss.
double train_step(const Denoiser& model, nn::Adam& opt, const std::vector<const TrainExample*>& batch,
                  const DiffusionSchedule& sched, std::uint64_t seed, std::int64_t step, TrainLog& log);

/// Loss only (no update) for the same draw as train_step.
Var diffusion_loss(const Denoiser& model, const std::vector<const TrainExample*>& batch, const DiffusionSchedule& sched,
                   std::uint64_t seed, std::int64_t step);

struct SampleOptions {
  bool check_inputs = true;
};

/// Ancestral sampling with x0-parameterized posteriors. Noise for frame f
/// at step s comes from (seed, s, f), so the result at frame f never
/// depends on later condition frames when the model is online.
Mat sample_online(const Denoiser& model, const GenCondition& cond, const DiffusionSchedule& sched, std::uint64_t seed,
                  SampleOptions opts = {});

}  // namespace onlinehoi::diffusion
