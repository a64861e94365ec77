#include "onlinehoi/autograd.hpp"
#include "onlinehoi/errors.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <limits>

using namespace onlinehoi;
using namespace onlinehoi::testing;
using ag::Mat;
using ag::Var;

namespace {

constexpr double kTol = 1e-4;

struct OpCase {
  std::string name;
  std::function<Var(const std::vector<Var>&)> fn;
  std::vector<std::pair<int, int>> shapes;
};

}  // namespace

TEST(Autograd, ElementwiseAndStructuralOpsMatchFiniteDifferences) {
  const std::vector<OpCase> cases = {
      {"matmul", [](auto& v) { return ag::matmul(v[0], v[1]); }, {{4, 3}, {3, 5}}},
      {"linear", [](auto& v) { return ag::linear(v[0], v[1], v[2]); }, {{4, 3}, {3, 5}, {1, 5}}},
      {"add_bcast", [](auto& v) { return ag::add(v[0], v[1]); }, {{4, 3}, {1, 3}}},
      {"sub", [](auto& v) { return ag::sub(v[0], v[1]); }, {{4, 3}, {4, 3}}},
      {"mul", [](auto& v) { return ag::mul(v[0], v[1]); }, {{4, 3}, {4, 3}}},
      {"mul_bcast", [](auto& v) { return ag::mul(v[0], v[1]); }, {{4, 3}, {1, 3}}},
      {"silu", [](auto& v) { return ag::silu(v[0]); }, {{4, 3}}},
      {"sigmoid", [](auto& v) { return ag::sigmoid(v[0]); }, {{4, 3}}},
      {"softplus", [](auto& v) { return ag::softplus(v[0]); }, {{4, 3}}},
      {"exp", [](auto& v) { return ag::exp(v[0]); }, {{4, 3}}},
      {"tanh", [](auto& v) { return ag::tanh(v[0]); }, {{4, 3}}},
      {"concat", [](auto& v) { return ag::concat_cols({v[0], v[1]}); }, {{4, 3}, {4, 2}}},
      {"concat_rows", [](auto& v) { return ag::concat_rows({v[0], v[1]}); }, {{2, 3}, {4, 3}}},
      {"slice", [](auto& v) { return ag::slice_cols(ag::slice_rows(v[0], 1, 2), 1, 2); }, {{4, 3}}},
      {"group_max", [](auto& v) { return ag::group_max(v[0], {{0, 1}, {2, 3, 4}, {}}); }, {{5, 3}}},
      {"gather", [](auto& v) { return ag::gather_rows(v[0], {2, 0, 2}); }, {{4, 3}}},
      {"rms_norm", [](auto& v) { return ag::rms_norm(v[0], v[1]); }, {{4, 6}, {1, 6}}},
      {"layer_norm", [](auto& v) { return ag::layer_norm(v[0], v[1], v[2]); }, {{4, 6}, {1, 6}, {1, 6}}},
      {"conv1d", [](auto& v) { return ag::causal_conv1d(v[0], v[1], v[2]); }, {{7, 3}, {3, 3}, {1, 3}}},
      {"attention_causal",
       [](auto& v) { return ag::attention(v[0], v[1], v[2], 2, {0, 1, 2, 3}, {0, 1, 2, 3, -1}, true); },
       {{4, 4}, {5, 4}, {5, 4}}},
      {"attention_full",
       [](auto& v) { return ag::attention(v[0], v[1], v[2], 1, {0, 1, 2}, {0, 1, 2}, false); },
       {{3, 4}, {3, 4}, {3, 4}}},
      {"mse", [](auto& v) { return ag::mse(v[0], v[1]); }, {{4, 3}, {4, 3}}},
      {"cross_entropy", [](auto& v) { return ag::cross_entropy(v[0], {0, 2, 1, 2}); }, {{4, 3}}},
  };
  Rng rng = make_rng(1);
  for (const auto& c : cases) {
    std::vector<std::pair<std::string, Var>> params;
    std::vector<Var> inputs;
    for (std::size_t i = 0; i < c.shapes.size(); ++i) {
      Var v = Var::param(random_mat(rng, c.shapes[i].first, c.shapes[i].second));
      inputs.push_back(v);
      params.emplace_back(c.name + std::to_string(i), v);
    }
    auto loss = [&] {
      Var out = c.fn(inputs);
      return out.rows() == 1 && out.cols() == 1 ? out : probe_loss(out);
    };
    const auto res = grad_check(params, loss);
    EXPECT_LE(res.max_rel_error, kTol) << c.name << ": " << res.worst;
  }
}

TEST(Autograd, MatmulIsRowLocalUnderNaNPoison) {
  Rng rng = make_rng(2);
  Mat a = random_mat(rng, 6, 4);
  Mat b = random_mat(rng, 4, 5);
  Mat clean = ag::matmul_rows(a, b);
  a.row(4).setConstant(std::numeric_limits<double>::quiet_NaN());
  Mat poisoned = ag::matmul_rows(a, b);
  for (int r = 0; r < 4; ++r) EXPECT_TRUE((clean.row(r).array() == poisoned.row(r).array()).all());
  EXPECT_FALSE(poisoned.row(4).allFinite());
}

TEST(Autograd, CausalAttentionSkipsMaskedKeys) {
  Rng rng = make_rng(3);
  Mat q = random_mat(rng, 4, 4), k = random_mat(rng, 4, 4), v = random_mat(rng, 4, 4);
  const Mat clean = ag::attention(Var(q), Var(k), Var(v), 2, {0, 1, 2, 3}, {0, 1, 2, 3}, true).value();
  k.row(3).setConstant(std::numeric_limits<double>::quiet_NaN());
  v.row(3).setConstant(std::numeric_limits<double>::quiet_NaN());
  const Mat poisoned = ag::attention(Var(q), Var(k), Var(v), 2, {0, 1, 2, 3}, {0, 1, 2, 3}, true).value();
  EXPECT_TRUE((clean.topRows(3).array() == poisoned.topRows(3).array()).all());
}

TEST(Autograd, GradientsAccumulateAcrossSharedUses) {
  Var x = Var::param(Mat::Constant(1, 1, 3.0));
  Var y = ag::add(ag::mul(x, x), x);  // x^2 + x
  ag::backward(y);
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 7.0);
}

TEST(Autograd, ShapeErrors) {
  Var a(Mat::Zero(2, 3)), b(Mat::Zero(3, 2));
  EXPECT_THROW(ag::add(a, b), ShapeError);
  EXPECT_THROW(ag::matmul(a, a), ShapeError);
  EXPECT_THROW(ag::cross_entropy(a, {0, 5}), ConfigError);
}
