#pragma once

// Selective state-space machinery: zero-order-hold discretization, the
// sequential scan, its convolution-kernel equivalent, and the unidirectional
// Mamba block built on top of them.

#include "onlinehoi/autograd.hpp"
#include "onlinehoi/nn.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace onlinehoi::ssm {

/// Single-input single-output continuous-time SSM. `delta` holds either one
/// timescale (time-invariant) or one per scanned step.
struct SSMParameters {
  Eigen::MatrixXd A;     // N x N
  Eigen::VectorXd B;     // N
  Eigen::RowVectorXd C;  // N
  std::vector<double> delta{1.0};

  Eigen::Index state_dim() const { return A.rows(); }
  bool time_invariant() const { return delta.size() == 1; }
  /// Throws InvalidParameter on inconsistent shapes or a bad timescale.
  void validate() const;
};

struct Discretized {
  Eigen::MatrixXd A_bar;
  Eigen::VectorXd B_bar;
};

/// Zero-order hold: A_bar = exp(dA), B_bar = (dA)^-1 (exp(dA) - I) dB, computed
/// through the augmented exponential exp([[dA, dB], [0, 0]]) so singular A
/// (including A = 0) needs no special casing. delta = 0 yields (I, 0).
Discretized discretize(const Eigen::MatrixXd& A, const Eigen::VectorXd& B, double delta);
Discretized discretize(const SSMParameters& params);

struct HiddenState {
  Eigen::VectorXd h;
  std::int64_t t = 0;
};

struct ScanOptions {
  /// h_{t+1} = A_bar h_t + B_bar x_t, y_t = C h_t (output lags input by one).
  bool eq1_literal = false;
};

struct ScanResult {
  std::vector<double> ys;
  HiddenState state;
};

/// Sequential recurrence h_t = A_bar h_{t-1} + B_bar x_t, y_t = C h_t.
/// A per-step delta vector is indexed relative to `xs`. An empty h0.h means
/// the zero state.
ScanResult ssm_scan(std::span<const double> xs, const SSMParameters& params, HiddenState h0 = {},
                    ScanOptions options = {});

struct KernelForm {
  std::vector<double> kbar;  // kbar[i] = C A_bar^i B_bar
};

KernelForm make_kernel(const SSMParameters& params, std::size_t length);

/// Causal convolution y_t = sum_{i<=t} kbar[i] x_{t-i}.
std::vector<double> ssm_kernel_apply(std::span<const double> xs, const KernelForm& kernel);

double spectral_radius(const Eigen::MatrixXd& m);

/// Fused selective scan over E channels with diagonal state matrices.
///   u, delta: T x E;  A: E x N (negative);  B, C: T x N;  D: 1 x E.
/// Per channel e and state n the step uses exact ZOH for a diagonal A:
///   h = exp(delta*A) h + (exp(delta*A) - 1) / A * B * u,  y = C.h + D*u.
ag::Var selective_scan(const ag::Var& u, const ag::Var& delta, const ag::Var& A, const ag::Var& B, const ag::Var& C,
                       const ag::Var& D, bool eq1_literal = false);

struct MambaBlockConfig {
  int model_dim = 32;
  int state_dim = 8;
  int conv_width = 4;
  int expansion = 2;
  int dt_rank = 0;  // 0 selects ceil(model_dim / 16)
  bool eq1_literal = false;

  int inner_dim() const { return expansion * model_dim; }
  int resolved_dt_rank() const { return dt_rank > 0 ? dt_rank : (model_dim + 15) / 16; }
  void validate() const;
};

/// Pre-norm residual Mamba block:
///   norm -> in_proj -> [u | z]; u -> causal conv -> SiLU -> (dt, B, C)
///   -> selective scan -> gate by SiLU(z) -> out_proj -> + residual.
class MambaBlock {
 public:
  MambaBlock() = default;
  MambaBlock(nn::ParamStore& store, const std::string& name, const MambaBlockConfig& cfg, Rng& rng);

  /// `check_inputs` rejects non-finite inputs at entry; the causality guard
  /// disables it to feed NaN-poisoned futures through.
  ag::Var forward(const ag::Var& x, bool check_inputs = true) const;

  const MambaBlockConfig& config() const { return cfg_; }
  nn::Linear& out_proj() { return out_proj_; }

  static std::size_t parameter_count(const MambaBlockConfig& cfg);

 private:
  MambaBlockConfig cfg_;
  nn::RMSNorm norm_;
  nn::Linear in_proj_;
  ag::Var conv_w_;
  ag::Var conv_b_;
  nn::Linear x_proj_;
  nn::Linear dt_proj_;
  ag::Var a_log_;
  ag::Var d_skip_;
  nn::Linear out_proj_;
  std::vector<ag::Var> all_params_;
};

}  // namespace onlinehoi::ssm
