#pragma once

// Small reverse-mode automatic differentiation over dense row-major matrices.
//
// Rows are time steps (or points) and columns are features throughout the
// library. Every forward kernel here is row-local unless it is explicitly a
// temporal operator, which is what lets the causality tests compare prefixes
// with exact equality.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace onlinehoi::ag {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Node {
  Mat value;
  Mat grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Mat&)> backward_fn;

  Mat& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Mat value, bool requires_grad = false);

  static Var param(Mat value) { return Var(std::move(value), true); }

  bool defined() const { return node_ != nullptr; }
  const Mat& value() const { return node_->value; }
  Mat& mutable_value() { return node_->value; }
  /// Accumulated gradient; zero-sized until a backward pass reaches this node.
  const Mat& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.resize(0, 0); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Builds an op result. `backward` receives the upstream gradient and must
/// accumulate into the parents it cares about via accumulate(). It is only
/// stored when at least one parent requires a gradient.
Var make_result(Mat value, const std::vector<Var>& parents, std::function<void(const Mat&)> backward);

/// Adds `g` into the gradient buffer of `v` if it requires one.
void accumulate(const Var& v, const Mat& g);

/// Reverse pass from a 1x1 root. Gradients accumulate into leaves.
void backward(const Var& root);

// Row-local matrix product with a fixed accumulation order.
Mat matmul_rows(const Mat& a, const Mat& b);

Var matmul(const Var& a, const Var& b);
/// x * W + b, where `bias` may be undefined.
Var linear(const Var& x, const Var& weight, const Var& bias);
/// Element-wise sum. `b` may be a 1xC row broadcast over the rows of `a`.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
/// Element-wise product. `b` may be a 1xC row broadcast over the rows of `a`.
Var mul(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);
Var scale(const Var& a, double s);

Var silu(const Var& x);
Var sigmoid(const Var& x);
Var softplus(const Var& x);
Var exp(const Var& x);
Var tanh(const Var& x);

Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count);
Var slice_rows(const Var& x, Eigen::Index start, Eigen::Index count);

/// Sparse row mixing: out[i] = sum_j w_ij * x[idx_ij].
struct SparseRows {
  std::vector<std::vector<std::pair<int, double>>> rows;
};
Var sparse_mix(const Var& x, const SparseRows& mix, Eigen::Index out_rows = -1);
Var gather_rows(const Var& x, const std::vector<int>& index);

/// Element-wise max over each group of rows. Empty groups yield zero rows.
/// Ties resolve to the earliest row listed in the group.
Var group_max(const Var& x, const std::vector<std::vector<int>>& groups);

Var sum(const Var& x);
Var mean(const Var& x);
Var mse(const Var& pred, const Var& target);
/// Mean softmax cross-entropy over rows.
Var cross_entropy(const Var& logits, const std::vector<int>& labels);

Var rms_norm(const Var& x, const Var& weight, double eps = 1e-6);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);

/// Depthwise convolution over time, padded on the past side only.
/// weight is KxC; row K-1 multiplies the current frame.
Var causal_conv1d(const Var& x, const Var& weight, const Var& bias);

/// Multi-head scaled dot-product attention. With `causal`, query i may only
/// read keys with key_time[j] <= query_time[i]; a negative time marks a
/// global token visible to all queries. Masked keys are skipped, never
/// multiplied by zero, so non-finite values there cannot leak.
Var attention(const Var& q, const Var& k, const Var& v, int heads, const std::vector<int>& query_time,
              const std::vector<int>& key_time, bool causal);

}  // namespace onlinehoi::ag
