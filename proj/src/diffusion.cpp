#include "onlinehoi/diffusion.hpp"

#include "onlinehoi/errors.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace onlinehoi::diffusion {

std::string to_string(ScheduleKind k) { return k == ScheduleKind::linear ? "linear" : "cosine"; }

ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "cosine") return ScheduleKind::cosine;
  throw ConfigError("unknown schedule kind '" + s + "'");
}

double DiffusionSchedule::alpha(int t) const {
  if (t < 1 || t > steps()) throw IndexError("diffusion step " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
  return alphas[t - 1];
}

double DiffusionSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  if (t < 1 || t > steps()) throw IndexError("diffusion step " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
  return alpha_bars[t - 1];
}

DiffusionSchedule DiffusionSchedule::from_alphas(std::vector<double> alphas) {
  if (alphas.empty()) throw ConfigError("diffusion schedule needs at least one step");
  DiffusionSchedule s;
  double prod = 1.0;
  for (double a : alphas) {
    if (!(a > 0.0 && a < 1.0)) throw ConfigError("diffusion alpha must lie in (0, 1)");
    prod *= a;
    s.alpha_bars.push_back(prod);
  }
  s.alphas = std::move(alphas);
  return s;
}

DiffusionSchedule make_schedule(int steps, ScheduleKind kind, double beta_start, double beta_end) {
  if (steps <= 0) throw ConfigError("diffusion steps must be positive");
  std::vector<double> alphas(steps);
  if (kind == ScheduleKind::linear) {
    if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) throw ConfigError("invalid beta range");
    for (int i = 0; i < steps; ++i) {
      const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
      alphas[i] = 1.0 - (beta_start + frac * (beta_end - beta_start));
    }
  } else {
    constexpr double s = 0.008;
    auto f = [&](int t) {
      const double c = std::cos((static_cast<double>(t) / steps + s) / (1.0 + s) * std::numbers::pi / 2.0);
      return c * c;
    };
    for (int i = 0; i < steps; ++i) alphas[i] = 1.0 - std::min(1.0 - f(i + 1) / f(i), 0.999);
  }
  return DiffusionSchedule::from_alphas(std::move(alphas));
}

Mat q_sample(const Mat& x0, int t, const Mat& noise, const DiffusionSchedule& sched) {
  if (x0.rows() != noise.rows() || x0.cols() != noise.cols()) throw ShapeError("q_sample: noise shape mismatch");
  const double ab = sched.alpha_bar(t);
  if (t == 0) throw IndexError("q_sample: step must be at least 1");
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * noise;
}

Mat q_step(const Mat& x_prev, int t, const Mat& noise, const DiffusionSchedule& sched) {
  if (x_prev.rows() != noise.rows() || x_prev.cols() != noise.cols()) throw ShapeError("q_step: noise shape mismatch");
  const double a = sched.alpha(t);
  return std::sqrt(a) * x_prev + std::sqrt(1.0 - a) * noise;
}

void MotionSequence::validate() const {
  if (frames.rows() < 1) throw InvalidParameter("motion sequence is empty");
  if (!frames.allFinite()) throw InvalidParameter("motion sequence has non-finite entries");
}

void DenoiserConfig::validate() const {
  if (pose_dim <= 0 || object_pose_dim <= 0 || model_dim <= 0) throw ConfigError("denoiser: dimensions must be positive");
  if (depth <= 0) throw ConfigError("denoiser: depth must be positive");
  if (cond_heads <= 0 || model_dim % cond_heads != 0) throw ConfigError("denoiser: model_dim must be divisible by cond_heads");
  if (geometry_points <= 0) throw ConfigError("denoiser: geometry_points must be positive");
  block_config().mamba.validate();
  memory.validate();
}

TemporalBlockConfig DenoiserConfig::block_config() const {
  TemporalBlockConfig b;
  b.kind = backbone;
  b.mamba.model_dim = model_dim;
  b.mamba.state_dim = state_dim;
  b.mamba.conv_width = conv_width;
  b.mamba.expansion = expansion;
  b.heads = cond_heads;
  return b;
}

Denoiser::Denoiser(nn::ParamStore& store, const DenoiserConfig& cfg, Rng& rng) : cfg_(cfg), store_(&store) {
  cfg.validate();
  const int d = cfg.model_dim;
  in_proj_ = nn::Linear(store, "den.in_proj", cfg.pose_dim, d, rng);
  step1_ = nn::Linear(store, "den.step1", d, d, rng);
  step2_ = nn::Linear(store, "den.step2", d, d, rng);
  actor_emb_ = nn::Linear(store, "den.actor_emb", cfg.pose_dim, d, rng);
  pose_emb_ = nn::Linear(store, "den.pose_emb", cfg.object_pose_dim, d, rng);
  geom1_ = nn::Linear(store, "den.geom1", 3, d, rng);
  geom2_ = nn::Linear(store, "den.geom2", d, d, rng);
  const TemporalBlockConfig bc = cfg.block_config();
  for (int l = 0; l < cfg.depth; ++l) encoder_.emplace_back(store, "den.enc" + std::to_string(l), bc, rng);
  attn_q_ = nn::Linear(store, "den.attn.q", d, d, rng, false);
  attn_k_ = nn::Linear(store, "den.attn.k", d, d, rng, false);
  attn_v_ = nn::Linear(store, "den.attn.v", d, d, rng, false);
  attn_o_ = nn::Linear(store, "den.attn.o", d, d, rng);
  mem_proj_ = nn::Linear(store, "den.mem_proj", memory::fused_width(d, cfg.memory), d, rng);
  for (int l = 0; l < cfg.depth; ++l) {
    skip_proj_.emplace_back(store, "den.skip" + std::to_string(l), 2 * d, d, rng);
    decoder_.emplace_back(store, "den.dec" + std::to_string(l), bc, rng);
  }
  out_norm_ = nn::RMSNorm(store, "den.out_norm", d);
  out_proj_ = nn::Linear(store, "den.out_proj", d, cfg.pose_dim, rng);
}

Var Denoiser::geometry_token(const geometry::Points& pts) const {
  if (pts.rows() == 0) throw InvalidParameter("object geometry is empty");
  const auto idx = geometry::farthest_point_sample(pts, cfg_.geometry_points);
  Mat sel(static_cast<Eigen::Index>(idx.size()), 3);
  for (std::size_t i = 0; i < idx.size(); ++i) sel.row(static_cast<Eigen::Index>(i)) = pts.row(idx[i]);
  sel.rowwise() -= sel.colwise().mean();
  std::vector<int> all(idx.size());
  std::iota(all.begin(), all.end(), 0);
  return ag::group_max(geom2_(ag::silu(geom1_(Var(sel)))), {all});
}

Var Denoiser::forward(const Var& x_t, int t, const GenCondition& cond, bool check_inputs, UNetTrace* trace) const {
  const Eigen::Index T = x_t.rows();
  if (x_t.cols() != cfg_.pose_dim) throw ShapeError("denoiser: pose width mismatch");
  if (cond.actor.rows() != T || cond.object_pose.rows() != T) {
    throw ShapeError("denoiser: condition length " + std::to_string(cond.actor.rows()) + "/" +
                     std::to_string(cond.object_pose.rows()) + " does not match sequence length " + std::to_string(T));
  }
  if (cond.actor.cols() != cfg_.pose_dim || cond.object_pose.cols() != cfg_.object_pose_dim) {
    throw ShapeError("denoiser: condition width mismatch");
  }
  if (t < 0) throw IndexError("denoiser: negative diffusion step");
  const bool causal = cfg_.online;
  const int d = cfg_.model_dim;

  std::vector<int> time(static_cast<std::size_t>(T));
  std::iota(time.begin(), time.end(), 0);
  const Var pos(nn::sinusoidal_embedding(time, d));
  const Var step_emb = step2_(ag::silu(step1_(Var(nn::sinusoidal_embedding({t}, d)))));

  Var h = ag::add(ag::add(in_proj_(x_t), pos), step_emb);
  std::vector<Var> skips;
  for (const auto& blk : encoder_) {
    h = blk.forward(h, causal, check_inputs);
    skips.push_back(h);
    if (trace) trace->encoder_out.push_back(h.cols());
  }

  const Var actor = ag::add(actor_emb_(Var(cond.actor)), pos);
  const Var opose = ag::add(pose_emb_(Var(cond.object_pose)), pos);
  const Var tokens = ag::concat_rows({h, actor, opose, geometry_token(cond.object_geometry)});
  std::vector<int> key_time = time;
  key_time.insert(key_time.end(), time.begin(), time.end());
  key_time.insert(key_time.end(), time.begin(), time.end());
  key_time.push_back(-1);
  const Var att = ag::attention(attn_q_(h), attn_k_(tokens), attn_v_(tokens), cfg_.cond_heads, time, key_time, causal);
  h = ag::add(h, attn_o_(att));

  h = mem_proj_(memory::memory_fuse(h, cfg_.memory));

  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    const Var& skip = skips[skips.size() - 1 - l];
    if (trace) trace->decoder_skip_in.push_back(skip.cols());
    h = decoder_[l].forward(skip_proj_[l](ag::concat_cols({h, skip})), causal, check_inputs);
  }
  return out_proj_(out_norm_(h));
}

std::string TrainLog::tail(std::size_t n) const {
  std::ostringstream os;
  const std::size_t start = losses.size() > n ? losses.size() - n : 0;
  for (std::size_t i = start; i < losses.size(); ++i) os << (i > start ? ", " : "") << losses[i];
  return os.str();
}

Var diffusion_loss(const Denoiser& model, const std::vector<const TrainExample*>& batch, const DiffusionSchedule& sched,
                   std::uint64_t seed, std::int64_t step) {
  if (batch.empty()) throw InvalidParameter("train_step: empty batch");
  Var total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TrainExample& ex = *batch[i];
    Rng rng = make_rng(seed, {0x7472u, static_cast<std::uint64_t>(step), i});
    const int t = static_cast<int>(uniform_int(rng, 1, sched.steps()));
    Mat noise(ex.x0.rows(), ex.x0.cols());
    for (Eigen::Index r = 0; r < noise.rows(); ++r)
      for (Eigen::Index c = 0; c < noise.cols(); ++c) noise(r, c) = normal(rng);
    const Var pred = model.forward(Var(q_sample(ex.x0, t, noise, sched)), t, ex.cond);
    const Var l = ag::mse(pred, Var(ex.x0));
    total = total.defined() ? ag::add(total, l) : l;
  }
  return ag::scale(total, 1.0 / static_cast<double>(batch.size()));
}

double train_step(const Denoiser& model, nn::Adam& opt, const std::vector<const TrainExample*>& batch,
                  const DiffusionSchedule& sched, std::uint64_t seed, std::int64_t step, TrainLog& log) {
  const Var loss = diffusion_loss(model, batch, sched, seed, step);
  const double value = loss.item();
  if (!std::isfinite(value)) {
    throw NumericalError("non-finite generation loss at step " + std::to_string(step) + "; recent losses: [" +
                         log.tail() + "]");
  }
  log.losses.push_back(value);
  ag::backward(loss);
  opt.step();
  return value;
}

namespace {

Mat frame_noise(std::uint64_t seed, int step, Eigen::Index rows, Eigen::Index cols) {
  Mat z(rows, cols);
  for (Eigen::Index f = 0; f < rows; ++f) {
    Rng rng = make_rng(seed, {0x73616du, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(f)});
    for (Eigen::Index c = 0; c < cols; ++c) z(f, c) = normal(rng);
  }
  return z;
}

}  // namespace

Mat sample_online(const Denoiser& model, const GenCondition& cond, const DiffusionSchedule& sched, std::uint64_t seed,
                  SampleOptions opts) {
  model.store().check_finite("sample_online");
  const Eigen::Index T = cond.actor.rows();
  const Eigen::Index D = model.config().pose_dim;
  if (T < 1) throw InvalidParameter("sample_online: empty condition");
  const int S = sched.steps();
  Mat x = frame_noise(seed, S + 1, T, D);
  for (int s = S; s >= 1; --s) {
    const Mat x0 = model.forward(Var(x), s, cond, opts.check_inputs).value();
    if (s == 1) return x0;
    const double ab = sched.alpha_bar(s), ab_prev = sched.alpha_bar(s - 1);
    const double a = sched.alpha(s), b = 1.0 - a;
    const double c0 = std::sqrt(ab_prev) * b / (1.0 - ab);
    const double ct = std::sqrt(a) * (1.0 - ab_prev) / (1.0 - ab);
    const double var = b * (1.0 - ab_prev) / (1.0 - ab);
    x = c0 * x0 + ct * x + std::sqrt(var) * frame_noise(seed, s, T, D);
  }
  return x;
}

}  // namespace onlinehoi::diffusion
