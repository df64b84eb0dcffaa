#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "craf/adam.hpp"
#include "craf/autodiff.hpp"
#include "craf/matrix.hpp"
#include "craf/rng.hpp"

using craf::Matrix;
using craf::Rng;
namespace ad = craf::ad;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.raw()) v = rng.normal() * scale;
  return m;
}

}  // namespace

TEST_CASE("matmul against identity returns the operand") {
  Rng rng(7);
  Matrix a = random_matrix(rng, 3, 5);
  Matrix c = craf::matmul(a, Matrix::identity(5));
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(c.raw()[i] == a.raw()[i]);
}

TEST_CASE("shape mismatches are rejected with the offending dims") {
  ad::Tape t;
  ad::Var a = t.leaf(Matrix(2, 3, 1.0));
  ad::Var b = t.leaf(Matrix(2, 3, 1.0));
  REQUIRE_THROWS_WITH(t.matmul(a, b), Catch::Matchers::ContainsSubstring("2x3"));
  ad::Var c = t.leaf(Matrix(3, 3, 1.0));
  REQUIRE_THROWS_AS(t.add(a, c), std::invalid_argument);
}

TEST_CASE("row softmax of a uniform row is uniform") {
  ad::Tape t;
  ad::Var x = t.leaf(Matrix(1, 4, 0.37));
  ad::Var y = t.row_softmax(x);
  for (std::size_t j = 0; j < 4; ++j)
    REQUIRE(t.value(y)(0, j) == Catch::Approx(0.25).margin(1e-15));
}

TEST_CASE("row softmax rows sum to one and are nonnegative") {
  Rng rng(11);
  ad::Tape t;
  ad::Var x = t.leaf(random_matrix(rng, 6, 9, 3.0));
  ad::Var y = t.row_softmax(x);
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 9; ++j) {
      REQUIRE(t.value(y)(i, j) >= 0.0);
      s += t.value(y)(i, j);
    }
    REQUIRE(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("masked row softmax ignores excluded entries") {
  ad::Tape t;
  Matrix x(1, 4);
  x(0, 0) = 100.0;  // excluded, must not dominate
  x(0, 1) = 1.0;
  x(0, 2) = 1.0;
  x(0, 3) = -5.0;
  Matrix mask(1, 4);
  mask(0, 1) = 1.0;
  mask(0, 2) = 1.0;
  ad::Var y = t.masked_row_softmax(t.leaf(x), mask);
  REQUIRE(t.value(y)(0, 0) == 0.0);
  REQUIRE(t.value(y)(0, 3) == 0.0);
  REQUIRE(t.value(y)(0, 1) == Catch::Approx(0.5));
  REQUIRE(t.value(y)(0, 2) == Catch::Approx(0.5));
}

TEST_CASE("glu with an all-zero gate half returns half the content") {
  Matrix x(2, 4);
  x(0, 0) = 1.0;
  x(0, 1) = -2.0;
  x(1, 0) = 3.0;
  x(1, 1) = 0.5;
  // gate columns (2,3) stay zero: sigmoid(0) = 0.5
  ad::Tape t;
  ad::Var y = t.glu_cols(t.leaf(x));
  REQUIRE(t.value(y)(0, 0) == Catch::Approx(0.5));
  REQUIRE(t.value(y)(0, 1) == Catch::Approx(-1.0));
  REQUIRE(t.value(y)(1, 0) == Catch::Approx(1.5));
  REQUIRE(t.value(y)(1, 1) == Catch::Approx(0.25));
}

TEST_CASE("backward of x squared at x=3 gives 6") {
  ad::Tape t;
  ad::Var x = t.leaf(Matrix(1, 1, 3.0));
  ad::Var loss = t.sum_all(t.mul(x, x));
  t.backward(loss);
  REQUIRE(t.grad(x)(0, 0) == Catch::Approx(6.0));
}

TEST_CASE("backward of sum(A*B) wrt A is ones times B transpose") {
  Rng rng(3);
  Matrix a = random_matrix(rng, 2, 3);
  Matrix b = random_matrix(rng, 3, 4);
  ad::Tape t;
  ad::Var va = t.leaf(a);
  ad::Var vb = t.leaf(b);
  ad::Var loss = t.sum_all(t.matmul(va, vb));
  t.backward(loss);
  Matrix expect = craf::matmul(Matrix::ones(2, 4), craf::transposed(b));
  for (std::size_t i = 0; i < expect.size(); ++i)
    REQUIRE(t.grad(va).raw()[i] == Catch::Approx(expect.raw()[i]));
}

TEST_CASE("non-scalar loss is rejected") {
  ad::Tape t;
  ad::Var x = t.leaf(Matrix(2, 2, 1.0));
  REQUIRE_THROWS_AS(t.backward(x), std::invalid_argument);
}

TEST_CASE("leaves unreachable from the loss get exactly zero gradient") {
  ad::Tape t;
  ad::Var x = t.leaf(Matrix(1, 1, 2.0));
  ad::Var unused = t.leaf(Matrix(3, 3, 5.0));
  ad::Var loss = t.sum_all(t.mul(x, x));
  t.backward(loss);
  for (double v : t.grad(unused).raw()) REQUIRE(v == 0.0);
}

TEST_CASE("backward is deterministic bit for bit") {
  Rng rng(21);
  Matrix a = random_matrix(rng, 4, 4);
  Matrix b = random_matrix(rng, 4, 4);
  auto run = [&]() {
    ad::Tape t;
    ad::Var va = t.leaf(a);
    ad::Var vb = t.leaf(b);
    ad::Var h = t.tanh(t.matmul(va, vb));
    ad::Var loss = t.sum_all(t.mul(h, h));
    t.backward(loss);
    return t.grad(va).raw();
  };
  auto g1 = run();
  auto g2 = run();
  REQUIRE(g1 == g2);
}

TEST_CASE("grad_check on a quadratic form is exact to rounding") {
  Rng rng(5);
  Matrix q = random_matrix(rng, 4, 4);
  Matrix x0 = random_matrix(rng, 4, 1);
  auto f = [&](ad::Tape& t, std::span<const ad::Var> p) {
    ad::Var x = p[0];
    return t.sum_all(t.mul(x, t.matmul(t.leaf(q), x)));
  };
  REQUIRE(ad::grad_check(f, {x0}, 1e-6) < 1e-8);
}

TEST_CASE("grad_check covers every primitive") {
  Rng rng(42);
  const double tol = 1e-4;
  const double eps = 1e-6;

  SECTION("matmul") {
    auto f = [](ad::Tape& t, std::span<const ad::Var> p) {
      return t.sum_all(t.matmul(p[0], p[1]));
    };
    REQUIRE(ad::grad_check(f, {random_matrix(rng, 3, 4), random_matrix(rng, 4, 2)}, eps) < tol);
  }
  SECTION("add sub mul scale") {
    auto f = [](ad::Tape& t, std::span<const ad::Var> p) {
      return t.sum_all(t.mul(t.scale(t.add(p[0], p[1]), 1.7), t.sub(p[0], p[1])));
    };
    REQUIRE(ad::grad_check(f, {random_matrix(rng, 3, 3), random_matrix(rng, 3, 3)}, eps) < tol);
  }
  SECTION("add_row") {
    auto f = [](ad::Tape& t, std::span<const ad::Var> p) {
      return t.sum_all(t.sigmoid(t.add_row(p[0], p[1])));
    };
    REQUIRE(ad::grad_check(f, {random_matrix(rng, 4, 3), random_matrix(rng, 1, 3)}, eps) < tol);
  }
  SECTION("concat_cols and transpose") {
    auto f = [](ad::Tape& t, std::span<const ad::Var> p) {
      return t.sum_all(t.matmul(t.concat_cols(p[0], p[1]), t.transpose(p[2])));
    };
    REQUIRE(ad::grad_check(
                f, {random_matrix(rng, 3, 2), random_matrix(rng, 3, 2), random_matrix(rng, 5, 4)},
                eps) < tol);
  }
  SECTION("row_softmax") {
    Matrix w = random_matrix(rng, 4, 4);
    auto f = [&](ad::Tape& t, std::span<const ad::Var> p) {
      return t.sum_all(t.mul(t.row_softmax(p[0]), t.leaf(w)));
    };
    REQUIRE(ad::grad_check(f, {random_matrix(rng, 4, 4)}, eps) < tol);
  }
  SECTION("masked_row_softmax") {
    Matrix mask(4, 4);
    Rng mr(9);
    for (double& v : mask.raw()) v = mr.uniform() < 0.6 ? 1.0 : 0.0;
    for (std::size_t i = 0; i < 4; ++i) mask(i, i) = 1.0;
    Matrix w = random_matrix(rng, 4, 4);
    auto f = [&](ad::Tape& t, std::span<const ad::Var> p) {
      return t.sum_all(t.mul(t.masked_row_softmax(p[0], mask), t.leaf(w)));
    };
    REQUIRE(ad::grad_check(f, {random_matrix(rng, 4, 4)}, eps) < tol);
  }
  SECTION("leaky_relu elu sigmoid tanh") {
    auto f = [](ad::Tape& t, std::span<const ad::Var> p) {
      return t.sum_all(t.leaky_relu(t.elu(t.sigmoid(t.tanh(p[0])))));
    };
    REQUIRE(ad::grad_check(f, {random_matrix(rng, 5, 5)}, eps) < tol);
  }
  SECTION("glu_cols") {
    auto f = [](ad::Tape& t, std::span<const ad::Var> p) {
      return t.sum_all(t.glu_cols(p[0]));
    };
    REQUIRE(ad::grad_check(f, {random_matrix(rng, 4, 6)}, eps) < tol);
  }
  SECTION("masked_mse") {
    Matrix target = random_matrix(rng, 4, 3);
    Matrix mask(4, 3);
    Rng mr(13);
    for (double& v : mask.raw()) v = mr.uniform() < 0.5 ? 1.0 : 0.0;
    mask(0, 0) = 1.0;
    auto f = [&](ad::Tape& t, std::span<const ad::Var> p) {
      return t.masked_mse(p[0], target, mask);
    };
    REQUIRE(ad::grad_check(f, {random_matrix(rng, 4, 3)}, eps) < tol);
  }
  SECTION("sum_all") {
    auto f = [](ad::Tape& t, std::span<const ad::Var> p) { return t.sum_all(p[0]); };
    REQUIRE(ad::grad_check(f, {random_matrix(rng, 3, 7)}, eps) < tol);
  }
}

TEST_CASE("grad_check rejects non-finite function values") {
  auto f = [](ad::Tape& t, std::span<const ad::Var> p) {
    return t.sum_all(t.scale(p[0], std::numeric_limits<double>::infinity()));
  };
  REQUIRE_THROWS_AS(ad::grad_check(f, {Matrix(1, 1, 1.0)}, 1e-6), std::invalid_argument);
}

TEST_CASE("adam first step on a scalar moves by about lr") {
  Matrix p(1, 1, 5.0);
  Matrix g(1, 1, 1.0);
  ad::AdamState st;
  st.lr = 0.1;
  std::vector<ad::ParamRef> refs{{"p", &p, &g}};
  ad::adam_step(refs, st);
  // bias-corrected first step: mhat = 1, vhat = 1 -> delta = lr / (1 + eps)
  REQUIRE(p(0, 0) == Catch::Approx(5.0 - 0.1).epsilon(1e-6));
  REQUIRE(st.step == 1);
}

TEST_CASE("adam with zero gradients is a fixed point for fresh state") {
  Matrix p(2, 2, 1.25);
  Matrix g(2, 2, 0.0);
  ad::AdamState st;
  std::vector<ad::ParamRef> refs{{"p", &p, &g}};
  ad::adam_step(refs, st);
  ad::adam_step(refs, st);
  for (double v : p.raw()) REQUIRE(v == 1.25);
}

TEST_CASE("adam applies identical updates to identical parameters") {
  Matrix p1(2, 1, 0.5), p2(2, 1, 0.5);
  Matrix g(2, 1, 0.3);
  ad::AdamState st;
  std::vector<ad::ParamRef> refs{{"a", &p1, &g}, {"b", &p2, &g}};
  ad::adam_step(refs, st);
  REQUIRE(p1.raw() == p2.raw());
}

TEST_CASE("adam rejects non-finite gradients naming the parameter") {
  Matrix p(1, 1, 0.0);
  Matrix g(1, 1, std::nan(""));
  ad::AdamState st;
  std::vector<ad::ParamRef> refs{{"w_attn", &p, &g}};
  REQUIRE_THROWS_WITH(ad::adam_step(refs, st), Catch::Matchers::ContainsSubstring("w_attn"));
}
