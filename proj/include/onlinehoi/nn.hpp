#pragma once

#include "onlinehoi/autograd.hpp"
#include "onlinehoi/random.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace onlinehoi::nn {

using ag::Mat;
using ag::Var;

/// Ordered registry of named trainable tensors. Names are the archive keys.
class ParamStore {
 public:
  Var add(const std::string& name, Mat init);
  Var get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
  std::size_t scalar_count() const;
  void zero_grad();
  /// Throws InvalidState if any parameter holds a non-finite value.
  void check_finite(const std::string& context) const;

 private:
  std::vector<std::pair<std::string, Var>> items_;
  std::map<std::string, std::size_t> index_;
};

Mat uniform_init(Rng& rng, Eigen::Index rows, Eigen::Index cols, double bound);

struct Linear {
  Var weight;  // in x out
  Var bias;    // 1 x out, may be undefined

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng, bool with_bias = true);
  Var operator()(const Var& x) const { return ag::linear(x, weight, bias); }
};

struct RMSNorm {
  Var weight;
  RMSNorm() = default;
  RMSNorm(ParamStore& store, const std::string& name, int dim);
  Var operator()(const Var& x) const { return ag::rms_norm(x, weight); }
};

struct LayerNorm {
  Var gamma;
  Var beta;
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, int dim);
  Var operator()(const Var& x) const { return ag::layer_norm(x, gamma, beta); }
};

/// Sinusoidal embedding of integer positions, one row per position.
Mat sinusoidal_embedding(const std::vector<int>& positions, int dim);

struct AdamConfig {
  double lr = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;  // global-norm clip, <= 0 disables
};

class Adam {
 public:
  Adam(ParamStore& params, AdamConfig cfg);

  /// Applies one update from the accumulated gradients, then clears them.
  void step();
  std::int64_t steps_taken() const { return t_; }

  const std::vector<Mat>& first_moments() const { return m_; }
  const std::vector<Mat>& second_moments() const { return v_; }
  void restore(std::int64_t t, std::vector<Mat> m, std::vector<Mat> v);

 private:
  ParamStore& params_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
};

/// Central-difference gradient of `loss` with respect to every entry of `p`.
template <typename LossFn>
Mat finite_difference_grad(Var p, LossFn&& loss, double step = 1e-5) {
  Mat g(p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const double orig = p.value()(i, j);
      p.mutable_value()(i, j) = orig + step;
      const double fp = loss();
      p.mutable_value()(i, j) = orig - step;
      const double fm = loss();
      p.mutable_value()(i, j) = orig;
      g(i, j) = (fp - fm) / (2.0 * step);
    }
  }
  return g;
}

}  // namespace onlinehoi::nn
