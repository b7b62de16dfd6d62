#include <cmath>

#include "doctest.h"

#include "amref/autodiff.hpp"
#include "amref/rng.hpp"

using amref::Rng;
using amref::ad::Tape;
using amref::ad::Var;
using Matrix = Eigen::MatrixXd;

namespace {

// Finite-difference check: builds the graph with `build`, reduces the output
// to a scalar with sum(), and compares d(sum)/d(input) against central
// differences on every entry.
void fd_check(const Matrix& x0,
              const std::function<Var(Tape&, Var)>& build, double tol = 1e-6) {
  Tape tape;
  Var x = tape.input(x0);
  Var out = tape.sum(build(tape, x));
  tape.seed(out, Matrix::Constant(1, 1, 1.0));
  tape.backward();
  Matrix analytic = tape.grad(x);

  const double h = 1e-6;
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    for (Eigen::Index j = 0; j < x0.cols(); ++j) {
      auto eval = [&](double delta) {
        Matrix xp = x0;
        xp(i, j) += delta;
        Tape t2;
        Var v = t2.input(xp);
        return t2.value(t2.sum(build(t2, v)))(0, 0);
      };
      double fd = (eval(h) - eval(-h)) / (2.0 * h);
      CHECK(analytic(i, j) == doctest::Approx(fd).epsilon(tol));
    }
  }
}

}  // namespace

TEST_CASE("tape: basic op values") {
  Tape tape;
  Matrix a(2, 2), b(2, 2);
  a << 1, 2, 3, 4;
  b << 5, 6, 7, 8;
  Var va = tape.input(a), vb = tape.input(b);
  CHECK(tape.value(tape.add(va, vb))(0, 0) == 6.0);
  CHECK(tape.value(tape.sub(va, vb))(1, 1) == -4.0);
  CHECK(tape.value(tape.mul(va, vb))(0, 1) == 12.0);
  CHECK(tape.value(tape.matmul(va, vb))(0, 0) == 1 * 5 + 2 * 7);
  CHECK(tape.value(tape.scale(va, 3.0))(1, 0) == 9.0);
  CHECK(tape.value(tape.transpose(va))(0, 1) == 3.0);
  CHECK(tape.value(tape.sum(va))(0, 0) == 10.0);
}

TEST_CASE("tape: softmax rows sum to one and are shift invariant") {
  Rng rng(7);
  Matrix x = rng.gaussian_matrix(3, 5, 2.0);
  Tape tape;
  Var s = tape.softmax_rows(tape.input(x));
  Matrix y = tape.value(s);
  for (int r = 0; r < 3; ++r) CHECK(y.row(r).sum() == doctest::Approx(1.0));

  Tape t2;
  Matrix shifted = x;
  shifted.array() += 100.0;
  Matrix y2 = t2.value(t2.softmax_rows(t2.input(shifted)));
  CHECK((y - y2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("tape: gelu matches exact formula") {
  Tape tape;
  Matrix x(1, 3);
  x << -1.0, 0.0, 2.0;
  Matrix y = tape.value(tape.gelu(tape.input(x)));
  for (int j = 0; j < 3; ++j) {
    double v = x(0, j);
    double expect = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    CHECK(y(0, j) == doctest::Approx(expect).epsilon(1e-14));
  }
  CHECK(y(0, 1) == 0.0);
}

TEST_CASE("tape: gradients match finite differences") {
  Rng rng(42);
  Matrix x = rng.gaussian_matrix(3, 4, 0.8);
  Matrix w = rng.gaussian_matrix(4, 3, 0.8);
  Matrix row = rng.gaussian_matrix(1, 4, 0.5);

  fd_check(x, [](Tape& t, Var v) { return t.sigmoid(v); });
  fd_check(x, [](Tape& t, Var v) { return t.gelu(v); });
  fd_check(x, [](Tape& t, Var v) { return t.softmax_rows(v); });
  fd_check(x, [](Tape& t, Var v) { return t.row_mean(v); });
  fd_check(x, [](Tape& t, Var v) { return t.transpose(v); });
  fd_check(x, [](Tape& t, Var v) { return t.scale(v, -2.5); });
  fd_check(x, [&](Tape& t, Var v) { return t.matmul(v, t.input(w)); });
  fd_check(x, [&](Tape& t, Var v) { return t.add_rowvec(v, t.input(row)); });
  fd_check(x, [&](Tape& t, Var v) { return t.mul(v, v); });
  // composite: sigmoid(softmax(x) * w) stresses the chain rule through
  // several ops at once
  fd_check(x, [&](Tape& t, Var v) {
    return t.sigmoid(t.matmul(t.softmax_rows(v), t.input(w)));
  });
}

TEST_CASE("tape: hcat concatenates columns and routes gradients") {
  Rng rng(3);
  Matrix a = rng.gaussian_matrix(4, 1, 1.0);
  Matrix b = rng.gaussian_matrix(4, 1, 1.0);
  Tape tape;
  Var va = tape.input(a), vb = tape.input(b);
  Var cat = tape.hcat({va, vb});
  CHECK(tape.value(cat).cols() == 2);
  CHECK(tape.value(cat).col(0) == a.col(0));
  CHECK(tape.value(cat).col(1) == b.col(0));

  Matrix g(4, 2);
  g.setZero();
  g(2, 1) = 1.0;
  tape.seed(cat, g);
  tape.backward();
  CHECK(tape.grad(va).cwiseAbs().maxCoeff() == 0.0);
  CHECK(tape.grad(vb)(2, 0) == 1.0);
}

TEST_CASE("tape: gradient accumulates over shared subexpressions") {
  Matrix x = Matrix::Constant(1, 1, 3.0);
  Tape tape;
  Var v = tape.input(x);
  Var y = tape.add(tape.mul(v, v), v);  // x^2 + x, dy/dx = 2x + 1
  tape.seed(y, Matrix::Constant(1, 1, 1.0));
  tape.backward();
  CHECK(tape.grad(v)(0, 0) == doctest::Approx(7.0));
}
