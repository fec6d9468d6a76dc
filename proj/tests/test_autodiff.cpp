#include <gtest/gtest.h>

#include "nbd/gradcheck.hpp"

using namespace nbd;
using namespace nbd::ad;

namespace {

Parameter& random_param(ParameterSet& ps, const std::string& name, int r, int c, std::mt19937_64& rng,
                        double scale = 1.0) {
  Parameter& p = ps.add(name, r, c);
  std::normal_distribution<double> n(0.0, scale);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = n(rng);
  return p;
}

// Weighted sum so every output element gets a distinct adjoint.
Var probe(Tape& t, const Var& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Matrix w(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = n(rng);
  return sum_all(mul(y, t.constant(w)));
}

void expect_gradients(ParameterSet& ps, const std::function<Var(Tape&)>& f) {
  for (const auto& e : gradient_check(ps, f, 40, 17)) {
    EXPECT_LE(e.max_rel_error, 1e-4) << e.tensor;
    EXPECT_GT(e.checked, 0) << e.tensor;
  }
}

}  // namespace

TEST(Autodiff, LinearAndMatmul) {
  std::mt19937_64 rng(1);
  ParameterSet ps;
  random_param(ps, "x", 5, 4, rng);
  random_param(ps, "w", 4, 3, rng);
  random_param(ps, "b", 1, 3, rng);
  random_param(ps, "m", 3, 6, rng);
  expect_gradients(ps, [&](Tape& t) {
    Var h = linear(t.param(ps.get("x")), t.param(ps.get("w")), t.param(ps.get("b")));
    return probe(t, matmul(h, t.param(ps.get("m"))), 2);
  });
}

TEST(Autodiff, ElementwiseOps) {
  std::mt19937_64 rng(2);
  ParameterSet ps;
  random_param(ps, "x", 4, 7, rng);
  for (const auto& f : std::vector<std::function<Var(const Var&)>>{
           [](const Var& v) { return elu(v); }, [](const Var& v) { return ad::tanh(v); },
           [](const Var& v) { return sigmoid(v); }, [](const Var& v) { return ad::exp(v); },
           [](const Var& v) { return square(v); }, [](const Var& v) { return gelu(v); },
           [](const Var& v) { return clamp(v, -0.5, 0.7); }, [](const Var& v) { return softmax_rows(v); },
           [](const Var& v) { return add_scalar(scale(v, 2.5), 1.0); }}) {
    expect_gradients(ps, [&](Tape& t) { return probe(t, f(t.param(ps.get("x"))), 3); });
  }
}

TEST(Autodiff, BinaryAndStructuralOps) {
  std::mt19937_64 rng(3);
  ParameterSet ps;
  random_param(ps, "a", 6, 4, rng);
  random_param(ps, "b", 6, 4, rng);
  random_param(ps, "r", 1, 4, rng);
  random_param(ps, "w", 6, 2, rng);
  expect_gradients(ps, [&](Tape& t) {
    Var a = t.param(ps.get("a")), b = t.param(ps.get("b"));
    Var s = add(mul(a, b), sub(a, b));
    s = add(s, t.param(ps.get("r")));
    Var c = concat_cols({s, slice_cols(a, 1, 2)});
    Var rows = slice_rows(c, 2, 3);
    Var sel = select_rows({true, false, true, false, false, true}, a, b);
    Var m = mix(softmax_rows(t.param(ps.get("w"))), {a, b});
    return add(add(probe(t, rows, 4), probe(t, sel, 5)), add(probe(t, m, 6), mean_all(c)));
  });
}

TEST(Autodiff, LayerNorm) {
  std::mt19937_64 rng(4);
  ParameterSet ps;
  random_param(ps, "x", 5, 8, rng);
  random_param(ps, "g", 1, 8, rng);
  random_param(ps, "b", 1, 8, rng);
  expect_gradients(ps, [&](Tape& t) {
    return probe(t, layer_norm(t.param(ps.get("x")), t.param(ps.get("g")), t.param(ps.get("b"))), 7);
  });
}

TEST(Autodiff, AttentionAndTokens) {
  std::mt19937_64 rng(5);
  ParameterSet ps;
  const int batch = 2, c = 3, h = 8;
  random_param(ps, "proj", batch * c, h, rng);
  random_param(ps, "pos", c, h, rng);
  random_param(ps, "glob", 1, h, rng);
  random_param(ps, "wk", h, h, rng, 0.5);
  random_param(ps, "wv", h, h, rng, 0.5);
  expect_gradients(ps, [&](Tape& t) {
    Var tok = assemble_tokens(t.param(ps.get("proj")), t.param(ps.get("pos")), t.param(ps.get("glob")), batch);
    Var k = matmul(tok, t.param(ps.get("wk")));
    Var v = matmul(tok, t.param(ps.get("wv")));
    Var o = attention(tok, k, v, c + 1, 2);
    return add(probe(t, o, 8), probe(t, take_group_rows(o, c + 1, 0), 9));
  });
}

TEST(Autodiff, ReusedNodesAccumulate) {
  ParameterSet ps;
  ps.add("x", 1, 1).value(0, 0) = 3.0;
  Tape t;
  Var x = t.param(ps.get("x"));
  Var y = add(mul(x, x), x);  // x^2 + x
  t.backward(sum_all(y));
  EXPECT_DOUBLE_EQ(ps.get("x").grad(0, 0), 7.0);
}

TEST(Autodiff, NoGradTapeRecordsNoAdjoints) {
  ParameterSet ps;
  ps.add("x", 2, 2).value.setOnes();
  Tape t(false);
  Var y = sum_all(square(t.param(ps.get("x"))));
  EXPECT_FALSE(t.needs_grad(y.id));
  t.backward(y);
  EXPECT_EQ(ps.get("x").grad.cwiseAbs().sum(), 0.0);
}

TEST(Autodiff, FrozenParametersGetNoGradient) {
  ParameterSet ps;
  ps.add("x", 2, 2).value.setConstant(2.0);
  ps.add("f", 2, 2, false).value.setConstant(3.0);
  Tape t;
  t.backward(sum_all(mul(t.param(ps.get("x")), t.param(ps.get("f")))));
  EXPECT_EQ(ps.get("x").grad, Matrix::Constant(2, 2, 3.0));
  EXPECT_EQ(ps.get("f").grad.cwiseAbs().sum(), 0.0);
}

TEST(Autodiff, ShapeErrors) {
  Tape t;
  Var a = t.constant(Matrix::Ones(2, 3));
  Var b = t.constant(Matrix::Ones(3, 2));
  EXPECT_THROW(add(a, b), Error);
  EXPECT_THROW(matmul(a, a), Error);
  EXPECT_THROW(t.backward(a), Error);
}
