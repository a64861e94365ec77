#include "onlinehoi/nn.hpp"

#include "onlinehoi/errors.hpp"

#include <cmath>

namespace onlinehoi::nn {

Var ParamStore::add(const std::string& name, Mat init) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  Var v = Var::param(std::move(init));
  index_[name] = items_.size();
  items_.emplace_back(name, v);
  return v;
}

Var ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return items_[it->second].second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : items_) n += static_cast<std::size_t>(v.value().size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, v] : items_) v.zero_grad();
}

void ParamStore::check_finite(const std::string& context) const {
  for (const auto& [name, v] : items_) {
    if (!v.value().allFinite()) throw InvalidState(context + ": non-finite weights in '" + name + "'");
  }
}

Mat uniform_init(Rng& rng, Eigen::Index rows, Eigen::Index cols, double bound) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = uniform(rng, -bound, bound);
  return m;
}

Linear::Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng, bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = store.add(name + ".weight", uniform_init(rng, in, out, bound));
  if (with_bias) bias = store.add(name + ".bias", uniform_init(rng, 1, out, bound));
}

RMSNorm::RMSNorm(ParamStore& store, const std::string& name, int dim) {
  weight = store.add(name + ".weight", Mat::Ones(1, dim));
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, int dim) {
  gamma = store.add(name + ".gamma", Mat::Ones(1, dim));
  beta = store.add(name + ".beta", Mat::Zero(1, dim));
}

Mat sinusoidal_embedding(const std::vector<int>& positions, int dim) {
  Mat out(static_cast<Eigen::Index>(positions.size()), dim);
  const int half = dim / 2;
  for (std::size_t r = 0; r < positions.size(); ++r) {
    for (int i = 0; i < dim; ++i) {
      const int k = i % std::max(half, 1);
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / std::max(half, 1));
      const double a = positions[r] * freq;
      out(static_cast<Eigen::Index>(r), i) = i < half ? std::sin(a) : std::cos(a);
    }
  }
  return out;
}

Adam::Adam(ParamStore& params, AdamConfig cfg) : params_(params), cfg_(cfg) {
  for (const auto& [name, v] : params_.items()) {
    m_.push_back(Mat::Zero(v.rows(), v.cols()));
    v_.push_back(Mat::Zero(v.rows(), v.cols()));
  }
}

void Adam::step() {
  ++t_;
  double norm2 = 0.0;
  for (const auto& [name, v] : params_.items()) {
    if (v.grad().size() > 0) norm2 += v.grad().squaredNorm();
  }
  const double norm = std::sqrt(norm2);
  const double clip = (cfg_.grad_clip > 0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  std::size_t i = 0;
  for (const auto& [name, v] : params_.items()) {
    if (v.grad().size() > 0) {
      const Mat g = v.grad() * clip;
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      Var p = v;
      p.mutable_value().array() -=
          cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
    }
    ++i;
  }
  params_.zero_grad();
}

void Adam::restore(std::int64_t t, std::vector<Mat> m, std::vector<Mat> v) {
  if (m.size() != m_.size() || v.size() != v_.size()) throw ShapeError("Adam::restore: moment count mismatch");
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace onlinehoi::nn
