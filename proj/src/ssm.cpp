#include "onlinehoi/ssm.hpp"

#include "onlinehoi/errors.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>

namespace onlinehoi::ssm {

using ag::Mat;
using ag::Var;

namespace {

void check_delta(double d) {
  if (!std::isfinite(d) || d < 0.0) throw InvalidParameter("timescale delta must be finite and >= 0, got " + std::to_string(d));
}

// (e^z - 1) / z
double phi(double z) {
  if (std::abs(z) < 1e-4) return 1.0 + z / 2.0 + z * z / 6.0 + z * z * z / 24.0;
  return std::expm1(z) / z;
}

// (z e^z - e^z + 1) / z^2, the derivative of phi.
double psi(double z) {
  if (std::abs(z) < 1e-3) return 0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0;
  return (z * std::exp(z) - std::expm1(z)) / (z * z);
}

}  // namespace

void SSMParameters::validate() const {
  const auto n = A.rows();
  if (n < 1) throw InvalidParameter("state dimension must be >= 1");
  if (A.cols() != n || B.size() != n || C.size() != n) throw InvalidParameter("A, B, C state dimensions disagree");
  if (delta.empty()) throw InvalidParameter("delta must hold at least one timescale");
  for (double d : delta) check_delta(d);
}

Discretized discretize(const Eigen::MatrixXd& A, const Eigen::VectorXd& B, double delta) {
  check_delta(delta);
  const auto n = A.rows();
  Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(n + 1, n + 1);
  aug.topLeftCorner(n, n) = delta * A;
  aug.topRightCorner(n, 1) = delta * B;
  const Eigen::MatrixXd e = aug.exp();
  return {e.topLeftCorner(n, n), e.topRightCorner(n, 1)};
}

Discretized discretize(const SSMParameters& params) {
  params.validate();
  return discretize(params.A, params.B, params.delta.front());
}

ScanResult ssm_scan(std::span<const double> xs, const SSMParameters& params, HiddenState h0, ScanOptions options) {
  params.validate();
  const auto n = params.state_dim();
  if (h0.h.size() == 0) h0.h = Eigen::VectorXd::Zero(n);
  if (h0.h.size() != n) throw ShapeError("initial state has wrong dimension");
  if (!h0.h.allFinite()) throw InvalidParameter("initial state is not finite");
  if (!params.time_invariant() && params.delta.size() < xs.size()) {
    throw ShapeError("per-step delta shorter than the input sequence");
  }

  ScanResult out;
  out.ys.reserve(xs.size());
  Eigen::VectorXd h = h0.h;
  Discretized d = discretize(params.A, params.B, params.delta.front());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(xs[i])) throw InvalidParameter("non-finite input at step " + std::to_string(i));
    if (!params.time_invariant() && i > 0) d = discretize(params.A, params.B, params.delta[i]);
    if (options.eq1_literal) {
      out.ys.push_back(params.C.dot(h));
      h = d.A_bar * h + d.B_bar * xs[i];
    } else {
      h = d.A_bar * h + d.B_bar * xs[i];
      out.ys.push_back(params.C.dot(h));
    }
  }
  out.state.h = h;
  out.state.t = h0.t + static_cast<std::int64_t>(xs.size());
  return out;
}

KernelForm make_kernel(const SSMParameters& params, std::size_t length) {
  if (!params.time_invariant()) throw InvalidParameter("kernel form requires time-invariant parameters");
  const Discretized d = discretize(params);
  KernelForm k;
  k.kbar.reserve(length);
  Eigen::VectorXd v = d.B_bar;
  for (std::size_t i = 0; i < length; ++i) {
    k.kbar.push_back(params.C.dot(v));
    v = d.A_bar * v;
  }
  return k;
}

std::vector<double> ssm_kernel_apply(std::span<const double> xs, const KernelForm& kernel) {
  if (kernel.kbar.size() != xs.size()) {
    throw ShapeError("kernel length " + std::to_string(kernel.kbar.size()) + " != sequence length " +
                     std::to_string(xs.size()));
  }
  std::vector<double> ys(xs.size(), 0.0);
  for (std::size_t t = 0; t < xs.size(); ++t) {
    double acc = 0.0;
    for (std::size_t i = 0; i <= t; ++i) acc += kernel.kbar[i] * xs[t - i];
    ys[t] = acc;
  }
  return ys;
}

double spectral_radius(const Eigen::MatrixXd& m) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(m, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

Var selective_scan(const Var& u, const Var& delta, const Var& A, const Var& B, const Var& C, const Var& D,
                   bool eq1_literal) {
  const Eigen::Index T = u.rows();
  const Eigen::Index E = u.cols();
  const Eigen::Index N = A.cols();
  if (delta.rows() != T || delta.cols() != E) throw ShapeError("selective_scan: delta shape");
  if (A.rows() != E) throw ShapeError("selective_scan: A rows must equal channel count");
  if (B.rows() != T || B.cols() != N || C.rows() != T || C.cols() != N) throw ShapeError("selective_scan: B/C shape");
  if (D.rows() != 1 || D.cols() != E) throw ShapeError("selective_scan: D shape");

  const Mat& uv = u.value();
  const Mat& dv = delta.value();
  const Mat& av = A.value();
  const Mat& bv = B.value();
  const Mat& cv = C.value();
  const Mat& Dv = D.value();

  // states[t+1] holds H_t; states[0] is the zero initial state.
  std::vector<Mat> states(static_cast<std::size_t>(T + 1), Mat::Zero(E, N));
  Mat y(T, E);
  for (Eigen::Index t = 0; t < T; ++t) {
    const Mat& prev = states[static_cast<std::size_t>(t)];
    Mat& cur = states[static_cast<std::size_t>(t + 1)];
    for (Eigen::Index e = 0; e < E; ++e) {
      const double dt = dv(t, e);
      const double ue = uv(t, e);
      double acc = Dv(0, e) * ue;
      for (Eigen::Index n = 0; n < N; ++n) {
        const double z = dt * av(e, n);
        const double abar = std::exp(z);
        const double w = dt * phi(z);
        cur(e, n) = abar * prev(e, n) + w * bv(t, n) * ue;
        acc += cv(t, n) * (eq1_literal ? prev(e, n) : cur(e, n));
      }
      y(t, e) = acc;
    }
  }

  return ag::make_result(std::move(y), {u, delta, A, B, C, D},
                     [u, delta, A, B, C, D, eq1_literal, states = std::move(states)](const Mat& g) {
                       const Mat& uv = u.value();
                       const Mat& dv = delta.value();
                       const Mat& av = A.value();
                       const Mat& bv = B.value();
                       const Mat& cv = C.value();
                       const Mat& Dv = D.value();
                       const Eigen::Index T = uv.rows();
                       const Eigen::Index E = uv.cols();
                       const Eigen::Index N = av.cols();
                       Mat gu = Mat::Zero(T, E), gd = Mat::Zero(T, E), ga = Mat::Zero(E, N);
                       Mat gb = Mat::Zero(T, N), gc = Mat::Zero(T, N), gD = Mat::Zero(1, E);
                       Mat carry = Mat::Zero(E, N);  // dL/dH_t arriving from later steps
                       for (Eigen::Index t = T - 1; t >= 0; --t) {
                         const Mat& prev = states[static_cast<std::size_t>(t)];
                         const Mat& cur = states[static_cast<std::size_t>(t + 1)];
                         Mat next_carry(E, N);
                         for (Eigen::Index e = 0; e < E; ++e) {
                           const double gy = g(t, e);
                           const double ue = uv(t, e);
                           const double dt = dv(t, e);
                           gD(0, e) += gy * ue;
                           gu(t, e) += gy * Dv(0, e);
                           for (Eigen::Index n = 0; n < N; ++n) {
                             double gh = carry(e, n);
                             if (!eq1_literal) {
                               gh += gy * cv(t, n);
                               gc(t, n) += gy * cur(e, n);
                             } else {
                               gc(t, n) += gy * prev(e, n);
                             }
                             const double a = av(e, n);
                             const double z = dt * a;
                             const double abar = std::exp(z);
                             const double w = dt * phi(z);
                             const double g_abar = gh * prev(e, n);
                             const double g_w = gh * bv(t, n) * ue;
                             gb(t, n) += gh * w * ue;
                             gu(t, e) += gh * w * bv(t, n);
                             gd(t, e) += g_abar * a * abar + g_w * abar;
                             ga(e, n) += g_abar * dt * abar + g_w * dt * dt * psi(z);
                             next_carry(e, n) = abar * gh + (eq1_literal ? gy * cv(t, n) : 0.0);
                           }
                         }
                         carry = std::move(next_carry);
                       }
                       ag::accumulate(u, gu);
                       ag::accumulate(delta, gd);
                       ag::accumulate(A, ga);
                       ag::accumulate(B, gb);
                       ag::accumulate(C, gc);
                       ag::accumulate(D, gD);
                     });
}

void MambaBlockConfig::validate() const {
  if (model_dim < 1 || state_dim < 1 || expansion < 1) throw ConfigError("Mamba block dimensions must be >= 1");
  if (conv_width < 1) throw ConfigError("conv_width must be >= 1");
}

MambaBlock::MambaBlock(nn::ParamStore& store, const std::string& name, const MambaBlockConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg.model_dim;
  const int e = cfg.inner_dim();
  const int n = cfg.state_dim;
  const int r = cfg.resolved_dt_rank();
  norm_ = nn::RMSNorm(store, name + ".norm", d);
  in_proj_ = nn::Linear(store, name + ".in_proj", d, 2 * e, rng, false);
  conv_w_ = store.add(name + ".conv.weight", nn::uniform_init(rng, cfg.conv_width, e, 1.0 / std::sqrt(cfg.conv_width)));
  conv_b_ = store.add(name + ".conv.bias", nn::uniform_init(rng, 1, e, 1.0 / std::sqrt(cfg.conv_width)));
  x_proj_ = nn::Linear(store, name + ".x_proj", e, r + 2 * n, rng, false);
  dt_proj_ = nn::Linear(store, name + ".dt_proj", r, e, rng, true);
  // Timescales start log-uniform in [1e-3, 1e-1] through the softplus.
  {
    Mat bias(1, e);
    for (int i = 0; i < e; ++i) {
      const double dt = std::exp(uniform(rng, std::log(1e-3), std::log(1e-1)));
      bias(0, i) = dt + std::log(-std::expm1(-dt));
    }
    dt_proj_.bias.mutable_value() = bias;
  }
  Mat a_log(e, n);
  for (int i = 0; i < e; ++i)
    for (int j = 0; j < n; ++j) a_log(i, j) = std::log(static_cast<double>(j + 1));
  a_log_ = store.add(name + ".A_log", a_log);
  d_skip_ = store.add(name + ".D", Mat::Ones(1, e));
  out_proj_ = nn::Linear(store, name + ".out_proj", e, d, rng, false);
  all_params_ = {norm_.weight, in_proj_.weight, conv_w_, conv_b_, x_proj_.weight, dt_proj_.weight,
                 dt_proj_.bias, a_log_, d_skip_, out_proj_.weight};
}

Var MambaBlock::forward(const Var& x, bool check_inputs) const {
  if (x.cols() != cfg_.model_dim) throw ShapeError("MambaBlock: input width " + std::to_string(x.cols()));
  for (const auto& p : all_params_) {
    if (!p.value().allFinite()) throw InvalidParameter("MambaBlock: non-finite weights");
  }
  if (check_inputs && !x.value().allFinite()) throw InvalidParameter("MambaBlock: non-finite input");
  const int e = cfg_.inner_dim();
  const int n = cfg_.state_dim;
  const int r = cfg_.resolved_dt_rank();

  const Var xn = norm_(x);
  const Var uz = in_proj_(xn);
  const Var u = ag::silu(ag::causal_conv1d(ag::slice_cols(uz, 0, e), conv_w_, conv_b_));
  const Var z = ag::slice_cols(uz, e, e);
  const Var dbc = x_proj_(u);
  const Var dt = ag::softplus(dt_proj_(ag::slice_cols(dbc, 0, r)));
  const Var b = ag::slice_cols(dbc, r, n);
  const Var c = ag::slice_cols(dbc, r + n, n);
  const Var a = ag::scale(ag::exp(a_log_), -1.0);
  const Var y = selective_scan(u, dt, a, b, c, d_skip_, cfg_.eq1_literal);
  const Var gated = ag::mul(y, ag::silu(z));
  return ag::add(x, out_proj_(gated));
}

std::size_t MambaBlock::parameter_count(const MambaBlockConfig& cfg) {
  const std::size_t d = static_cast<std::size_t>(cfg.model_dim);
  const std::size_t e = static_cast<std::size_t>(cfg.inner_dim());
  const std::size_t n = static_cast<std::size_t>(cfg.state_dim);
  const std::size_t r = static_cast<std::size_t>(cfg.resolved_dt_rank());
  const std::size_t k = static_cast<std::size_t>(cfg.conv_width);
  return d + d * 2 * e + k * e + e + e * (r + 2 * n) + r * e + e + e * n + e + e * d;
}

}  // namespace onlinehoi::ssm
