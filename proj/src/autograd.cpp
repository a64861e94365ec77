#include "onlinehoi/autograd.hpp"

#include "onlinehoi/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace onlinehoi::ag {

namespace {

std::string shape_str(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " + shape_str(b.value()));
  }
}

bool is_row_broadcast(const Var& a, const Var& b) {
  return b.rows() == 1 && a.rows() != 1 && b.cols() == a.cols();
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

}  // namespace

Mat& Node::grad_buffer() {
  if (grad.rows() != value.rows() || grad.cols() != value.cols()) grad = Mat::Zero(value.rows(), value.cols());
  return grad;
}

Var::Var(Mat value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

double Var::item() const {
  if (rows() != 1 || cols() != 1) throw ShapeError("item() on non-scalar " + shape_str(value()));
  return value()(0, 0);
}

Var make_result(Mat value, const std::vector<Var>& parents, std::function<void(const Mat&)> backward) {
  Var out(std::move(value));
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    Node* n = out.node();
    n->requires_grad = true;
    for (const auto& p : parents) {
      if (p.requires_grad()) n->parents.push_back(p.shared());
    }
    n->backward_fn = std::move(backward);
  }
  return out;
}

void accumulate(const Var& v, const Mat& g) {
  if (!v.requires_grad()) return;
  v.node()->grad_buffer() += g;
}

void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1) throw ShapeError("backward() requires a scalar root");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() > 0) n->backward_fn(n->grad);
  }
  // Free intermediate gradients so repeated passes over shared leaves stay
  // correct; leaves (no backward_fn) keep their accumulated gradient.
  for (Node* n : order) {
    if (n->backward_fn) n->grad.resize(0, 0);
  }
}

Mat matmul_rows(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimension mismatch " + shape_str(a) + " * " + shape_str(b));
  Mat out = Mat::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (Eigen::Index p = 0; p < a.cols(); ++p) orow.noalias() += a(i, p) * b.row(p);
  }
  return out;
}

Var matmul(const Var& a, const Var& b) {
  Mat out = matmul_rows(a.value(), b.value());
  return make_result(std::move(out), {a, b}, [a, b](const Mat& g) {
    if (a.requires_grad()) accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) accumulate(b, a.value().transpose() * g);
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  Mat out = matmul_rows(x.value(), weight.value());
  if (bias.defined()) {
    if (bias.rows() != 1 || bias.cols() != out.cols()) throw ShapeError("linear: bias shape " + shape_str(bias.value()));
    out.rowwise() += bias.value().row(0);
  }
  std::vector<Var> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result(std::move(out), parents, [x, weight, bias](const Mat& g) {
    if (x.requires_grad()) accumulate(x, g * weight.value().transpose());
    if (weight.requires_grad()) accumulate(weight, x.value().transpose() * g);
    if (bias.defined() && bias.requires_grad()) accumulate(bias, g.colwise().sum());
  });
}

Var add(const Var& a, const Var& b) {
  if (is_row_broadcast(a, b)) {
    Mat out = a.value();
    out.rowwise() += b.value().row(0);
    return make_result(std::move(out), {a, b}, [a, b](const Mat& g) {
      accumulate(a, g);
      if (b.requires_grad()) accumulate(b, g.colwise().sum());
    });
  }
  require_same_shape(a, b, "add");
  return make_result(a.value() + b.value(), {a, b}, [a, b](const Mat& g) {
    accumulate(a, g);
    accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return make_result(a.value() - b.value(), {a, b}, [a, b](const Mat& g) {
    accumulate(a, g);
    if (b.requires_grad()) accumulate(b, -g);
  });
}

Var mul(const Var& a, const Var& b) {
  if (is_row_broadcast(a, b)) {
    Mat out = a.value();
    for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i).array() *= b.value().row(0).array();
    return make_result(std::move(out), {a, b}, [a, b](const Mat& g) {
      if (a.requires_grad()) {
        Mat ga = g;
        for (Eigen::Index i = 0; i < ga.rows(); ++i) ga.row(i).array() *= b.value().row(0).array();
        accumulate(a, ga);
      }
      if (b.requires_grad()) accumulate(b, (g.array() * a.value().array()).matrix().colwise().sum());
    });
  }
  require_same_shape(a, b, "mul");
  Mat out = (a.value().array() * b.value().array()).matrix();
  return make_result(std::move(out), {a, b}, [a, b](const Mat& g) {
    if (a.requires_grad()) accumulate(a, (g.array() * b.value().array()).matrix());
    if (b.requires_grad()) accumulate(b, (g.array() * a.value().array()).matrix());
  });
}

Var maximum(const Var& a, const Var& b) {
  require_same_shape(a, b, "maximum");
  Mat out = a.value().cwiseMax(b.value());
  return make_result(std::move(out), {a, b}, [a, b](const Mat& g) {
    // Ties send the gradient to `a`.
    const Mat mask = (a.value().array() >= b.value().array()).cast<double>().matrix();
    if (a.requires_grad()) accumulate(a, (g.array() * mask.array()).matrix());
    if (b.requires_grad()) accumulate(b, (g.array() * (1.0 - mask.array())).matrix());
  });
}

Var scale(const Var& a, double s) {
  return make_result(a.value() * s, {a}, [a, s](const Mat& g) { accumulate(a, g * s); });
}

Var silu(const Var& x) {
  Mat sig = x.value().unaryExpr(&sigmoid_scalar);
  Mat out = (x.value().array() * sig.array()).matrix();
  return make_result(std::move(out), {x}, [x, sig = std::move(sig)](const Mat& g) {
    const auto s = sig.array();
    accumulate(x, (g.array() * (s * (1.0 + x.value().array() * (1.0 - s)))).matrix());
  });
}

Var sigmoid(const Var& x) {
  Mat out = x.value().unaryExpr(&sigmoid_scalar);
  return make_result(out, {x}, [x, out](const Mat& g) {
    accumulate(x, (g.array() * out.array() * (1.0 - out.array())).matrix());
  });
}

Var softplus(const Var& x) {
  Mat out = x.value().unaryExpr(&softplus_scalar);
  return make_result(std::move(out), {x}, [x](const Mat& g) {
    accumulate(x, (g.array() * x.value().unaryExpr(&sigmoid_scalar).array()).matrix());
  });
}

Var exp(const Var& x) {
  Mat out = x.value().array().exp().matrix();
  return make_result(out, {x}, [x, out](const Mat& g) { accumulate(x, (g.array() * out.array()).matrix()); });
}

Var tanh(const Var& x) {
  Mat out = x.value().array().tanh().matrix();
  return make_result(out, {x}, [x, out](const Mat& g) {
    accumulate(x, (g.array() * (1.0 - out.array().square())).matrix());
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return make_result(std::move(out), parts, [parts](const Mat& g) {
    Eigen::Index off = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Mat out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return make_result(std::move(out), parts, [parts](const Mat& g) {
    Eigen::Index off = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) accumulate(p, g.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) throw ShapeError("slice_cols: out of range");
  Mat out = x.value().middleCols(start, count);
  return make_result(std::move(out), {x}, [x, start, count](const Mat& g) {
    Mat full = Mat::Zero(x.rows(), x.cols());
    full.middleCols(start, count) = g;
    accumulate(x, full);
  });
}

Var slice_rows(const Var& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) throw ShapeError("slice_rows: out of range");
  Mat out = x.value().middleRows(start, count);
  return make_result(std::move(out), {x}, [x, start, count](const Mat& g) {
    Mat full = Mat::Zero(x.rows(), x.cols());
    full.middleRows(start, count) = g;
    accumulate(x, full);
  });
}

Var sparse_mix(const Var& x, const SparseRows& mix, Eigen::Index out_rows) {
  const Eigen::Index n = out_rows >= 0 ? out_rows : static_cast<Eigen::Index>(mix.rows.size());
  if (static_cast<Eigen::Index>(mix.rows.size()) != n) throw ShapeError("sparse_mix: row count mismatch");
  Mat out = Mat::Zero(n, x.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (const auto& [j, w] : mix.rows[i]) {
      if (j < 0 || j >= x.rows()) throw IndexError("sparse_mix: source row out of range");
      out.row(i).noalias() += w * x.value().row(j);
    }
  }
  return make_result(std::move(out), {x}, [x, mix](const Mat& g) {
    Mat gx = Mat::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < mix.rows.size(); ++i) {
      for (const auto& [j, w] : mix.rows[i]) gx.row(j).noalias() += w * g.row(static_cast<Eigen::Index>(i));
    }
    accumulate(x, gx);
  });
}

Var gather_rows(const Var& x, const std::vector<int>& index) {
  SparseRows mix;
  mix.rows.reserve(index.size());
  for (int j : index) mix.rows.push_back({{j, 1.0}});
  return sparse_mix(x, mix);
}

Var group_max(const Var& x, const std::vector<std::vector<int>>& groups) {
  const Eigen::Index n = static_cast<Eigen::Index>(groups.size());
  const Eigen::Index c = x.cols();
  Mat out = Mat::Zero(n, c);
  std::vector<int> arg(static_cast<std::size_t>(n * c), -1);
  const Mat& xv = x.value();
  for (Eigen::Index gi = 0; gi < n; ++gi) {
    const auto& grp = groups[static_cast<std::size_t>(gi)];
    if (grp.empty()) continue;
    for (Eigen::Index k = 0; k < c; ++k) {
      int best = grp.front();
      double bv = xv(best, k);
      for (std::size_t m = 1; m < grp.size(); ++m) {
        const double v = xv(grp[m], k);
        if (v > bv) {
          bv = v;
          best = grp[m];
        }
      }
      out(gi, k) = bv;
      arg[static_cast<std::size_t>(gi * c + k)] = best;
    }
  }
  return make_result(std::move(out), {x}, [x, arg = std::move(arg), n, c](const Mat& g) {
    Mat gx = Mat::Zero(x.rows(), x.cols());
    for (Eigen::Index gi = 0; gi < n; ++gi) {
      for (Eigen::Index k = 0; k < c; ++k) {
        const int src = arg[static_cast<std::size_t>(gi * c + k)];
        if (src >= 0) gx(src, k) += g(gi, k);
      }
    }
    accumulate(x, gx);
  });
}

Var sum(const Var& x) {
  Mat out(1, 1);
  out(0, 0) = x.value().sum();
  return make_result(std::move(out), {x}, [x](const Mat& g) {
    accumulate(x, Mat::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  return scale(sum(x), 1.0 / n);
}

Var mse(const Var& pred, const Var& target) {
  require_same_shape(pred, target, "mse");
  const double n = static_cast<double>(pred.value().size());
  Mat diff = pred.value() - target.value();
  Mat out(1, 1);
  out(0, 0) = diff.squaredNorm() / n;
  return make_result(std::move(out), {pred, target}, [pred, target, diff = std::move(diff), n](const Mat& g) {
    const Mat gd = diff * (2.0 * g(0, 0) / n);
    accumulate(pred, gd);
    if (target.requires_grad()) accumulate(target, -gd);
  });
}

Var cross_entropy(const Var& logits, const std::vector<int>& labels) {
  const Eigen::Index n = logits.rows();
  const Eigen::Index k = logits.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n) throw ShapeError("cross_entropy: label count mismatch");
  Mat probs(n, k);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw ConfigError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    const double m = logits.value().row(i).maxCoeff();
    const auto e = (logits.value().row(i).array() - m).exp();
    const double z = e.sum();
    probs.row(i) = e / z;
    total += std::log(z) + m - logits.value()(i, y);
  }
  Mat out(1, 1);
  out(0, 0) = total / static_cast<double>(n);
  return make_result(std::move(out), {logits}, [logits, labels, probs = std::move(probs), n](const Mat& g) {
    Mat gl = probs;
    for (Eigen::Index i = 0; i < n; ++i) gl(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
    accumulate(logits, gl * (g(0, 0) / static_cast<double>(n)));
  });
}

Var rms_norm(const Var& x, const Var& weight, double eps) {
  const Eigen::Index n = x.rows();
  const Eigen::Index c = x.cols();
  if (weight.rows() != 1 || weight.cols() != c) throw ShapeError("rms_norm: weight shape");
  Eigen::VectorXd r(n);
  Mat out(n, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    r(i) = 1.0 / std::sqrt(x.value().row(i).squaredNorm() / static_cast<double>(c) + eps);
    out.row(i) = (x.value().row(i).array() * r(i) * weight.value().row(0).array()).matrix();
  }
  return make_result(std::move(out), {x, weight}, [x, weight, r, c](const Mat& g) {
    const Mat& xv = x.value();
    if (x.requires_grad()) {
      Mat gx(xv.rows(), c);
      for (Eigen::Index i = 0; i < xv.rows(); ++i) {
        const Eigen::RowVectorXd gw = (g.row(i).array() * weight.value().row(0).array()).matrix();
        const double dot = gw.dot(xv.row(i));
        gx.row(i) = r(i) * gw - xv.row(i) * (r(i) * r(i) * r(i) * dot / static_cast<double>(c));
      }
      accumulate(x, gx);
    }
    if (weight.requires_grad()) {
      Mat gw = Mat::Zero(1, c);
      for (Eigen::Index i = 0; i < xv.rows(); ++i) gw.row(0).array() += g.row(i).array() * xv.row(i).array() * r(i);
      accumulate(weight, gw);
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index n = x.rows();
  const Eigen::Index c = x.cols();
  if (gamma.cols() != c || beta.cols() != c) throw ShapeError("layer_norm: parameter shape");
  Mat xhat(n, c);
  Eigen::VectorXd r(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.value().row(i).mean();
    const Eigen::RowVectorXd d = x.value().row(i).array() - mu;
    r(i) = 1.0 / std::sqrt(d.squaredNorm() / static_cast<double>(c) + eps);
    xhat.row(i) = d * r(i);
  }
  Mat out = xhat;
  for (Eigen::Index i = 0; i < n; ++i) {
    out.row(i) = (xhat.row(i).array() * gamma.value().row(0).array() + beta.value().row(0).array()).matrix();
  }
  return make_result(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat = std::move(xhat), r, c](const Mat& g) {
    if (x.requires_grad()) {
      Mat gx(xhat.rows(), c);
      for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
        const Eigen::RowVectorXd gg = (g.row(i).array() * gamma.value().row(0).array()).matrix();
        const double m1 = gg.mean();
        const double m2 = gg.dot(xhat.row(i)) / static_cast<double>(c);
        gx.row(i) = r(i) * (gg.array() - m1 - xhat.row(i).array() * m2).matrix();
      }
      accumulate(x, gx);
    }
    if (gamma.requires_grad()) accumulate(gamma, (g.array() * xhat.array()).matrix().colwise().sum());
    if (beta.requires_grad()) accumulate(beta, g.colwise().sum());
  });
}

Var causal_conv1d(const Var& x, const Var& weight, const Var& bias) {
  const Eigen::Index t_len = x.rows();
  const Eigen::Index c = x.cols();
  const Eigen::Index k = weight.rows();
  if (k < 1) throw InvalidParameter("causal_conv1d: width must be >= 1");
  if (weight.cols() != c || bias.cols() != c) throw ShapeError("causal_conv1d: channel mismatch");
  Mat out(t_len, c);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    Eigen::RowVectorXd acc = bias.value().row(0);
    for (Eigen::Index j = 0; j < k; ++j) {
      const Eigen::Index src = t - (k - 1) + j;
      if (src < 0) continue;
      acc.array() += weight.value().row(j).array() * x.value().row(src).array();
    }
    out.row(t) = acc;
  }
  return make_result(std::move(out), {x, weight, bias}, [x, weight, bias, k](const Mat& g) {
    const Eigen::Index t_len = x.rows();
    Mat gx = Mat::Zero(t_len, x.cols());
    Mat gw = Mat::Zero(k, x.cols());
    for (Eigen::Index t = 0; t < t_len; ++t) {
      for (Eigen::Index j = 0; j < k; ++j) {
        const Eigen::Index src = t - (k - 1) + j;
        if (src < 0) continue;
        gx.row(src).array() += g.row(t).array() * weight.value().row(j).array();
        gw.row(j).array() += g.row(t).array() * x.value().row(src).array();
      }
    }
    accumulate(x, gx);
    accumulate(weight, gw);
    accumulate(bias, g.colwise().sum());
  });
}

Var attention(const Var& q, const Var& k, const Var& v, int heads, const std::vector<int>& query_time,
              const std::vector<int>& key_time, bool causal) {
  const Eigen::Index nq = q.rows();
  const Eigen::Index nk = k.rows();
  const Eigen::Index d = q.cols();
  if (k.cols() != d || v.cols() != d || v.rows() != nk) throw ShapeError("attention: q/k/v shape mismatch");
  if (heads < 1 || d % heads != 0) throw InvalidParameter("attention: width not divisible by head count");
  if (static_cast<Eigen::Index>(query_time.size()) != nq || static_cast<Eigen::Index>(key_time.size()) != nk) {
    throw ShapeError("attention: time index length mismatch");
  }
  const Eigen::Index dh = d / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<std::vector<int>> allowed(static_cast<std::size_t>(nq));
  for (Eigen::Index i = 0; i < nq; ++i) {
    for (Eigen::Index j = 0; j < nk; ++j) {
      const int kt = key_time[static_cast<std::size_t>(j)];
      const int qt = query_time[static_cast<std::size_t>(i)];
      if (!causal || kt < 0 || qt < 0 || kt <= qt) allowed[static_cast<std::size_t>(i)].push_back(static_cast<int>(j));
    }
  }

  // probs[h][i] holds the softmax weights over allowed[i].
  std::vector<std::vector<std::vector<double>>> probs(static_cast<std::size_t>(heads),
                                                      std::vector<std::vector<double>>(static_cast<std::size_t>(nq)));
  Mat out = Mat::Zero(nq, d);
  const Mat& qv = q.value();
  const Mat& kv = k.value();
  const Mat& vv = v.value();
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index off = h * dh;
    for (Eigen::Index i = 0; i < nq; ++i) {
      const auto& keys = allowed[static_cast<std::size_t>(i)];
      if (keys.empty()) continue;
      auto& p = probs[static_cast<std::size_t>(h)][static_cast<std::size_t>(i)];
      p.resize(keys.size());
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < keys.size(); ++a) {
        p[a] = qv.row(i).segment(off, dh).dot(kv.row(keys[a]).segment(off, dh)) * inv;
        m = std::max(m, p[a]);
      }
      double z = 0.0;
      for (double& s : p) {
        s = std::exp(s - m);
        z += s;
      }
      for (std::size_t a = 0; a < keys.size(); ++a) {
        p[a] /= z;
        out.row(i).segment(off, dh).noalias() += p[a] * vv.row(keys[a]).segment(off, dh);
      }
    }
  }

  return make_result(std::move(out), {q, k, v},
                     [q, k, v, heads, dh, inv, allowed = std::move(allowed), probs = std::move(probs)](const Mat& g) {
                       const Mat& qv = q.value();
                       const Mat& kv = k.value();
                       const Mat& vv = v.value();
                       Mat gq = Mat::Zero(qv.rows(), qv.cols());
                       Mat gk = Mat::Zero(kv.rows(), kv.cols());
                       Mat gv = Mat::Zero(vv.rows(), vv.cols());
                       std::vector<double> dp;
                       for (int h = 0; h < heads; ++h) {
                         const Eigen::Index off = h * dh;
                         for (Eigen::Index i = 0; i < qv.rows(); ++i) {
                           const auto& keys = allowed[static_cast<std::size_t>(i)];
                           if (keys.empty()) continue;
                           const auto& p = probs[static_cast<std::size_t>(h)][static_cast<std::size_t>(i)];
                           const auto gi = g.row(i).segment(off, dh);
                           dp.assign(keys.size(), 0.0);
                           double pdp = 0.0;
                           for (std::size_t a = 0; a < keys.size(); ++a) {
                             gv.row(keys[a]).segment(off, dh).noalias() += p[a] * gi;
                             dp[a] = gi.dot(vv.row(keys[a]).segment(off, dh));
                             pdp += p[a] * dp[a];
                           }
                           for (std::size_t a = 0; a < keys.size(); ++a) {
                             const double ds = p[a] * (dp[a] - pdp) * inv;
                             gq.row(i).segment(off, dh).noalias() += ds * kv.row(keys[a]).segment(off, dh);
                             gk.row(keys[a]).segment(off, dh).noalias() += ds * qv.row(i).segment(off, dh);
                           }
                         }
                       }
                       accumulate(q, gq);
                       accumulate(k, gk);
                       accumulate(v, gv);
                     });
}

}  // namespace onlinehoi::ag
