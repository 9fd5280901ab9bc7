#include "support.hpp"

#include "affjord/core_math.hpp"
#include "affjord/errors.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace affjord;
using affjord::test::dev;
using affjord::test::random_matrix;

TEST_CASE("mat_exp of zero is identity") {
  CHECK(dev(mat_exp(Matrix::Zero(3, 3)) - Matrix::Identity(3, 3)) == 0.0);
}

TEST_CASE("mat_exp of a diagonal matrix exponentiates the diagonal") {
  Matrix a = Matrix::Zero(2, 2);
  a(0, 0) = 1.0;
  a(1, 1) = -2.0;
  const Matrix e = mat_exp(a);
  CHECK(e(0, 0) == doctest::Approx(std::exp(1.0)).epsilon(1e-13));
  CHECK(e(1, 1) == doctest::Approx(std::exp(-2.0)).epsilon(1e-13));
  CHECK(e(0, 1) == 0.0);
  CHECK(e(1, 0) == 0.0);
}

TEST_CASE("mat_exp of a nilpotent matrix truncates") {
  Matrix n(2, 2);
  n << 0, 1, 0, 0;
  Matrix expect(2, 2);
  expect << 1, 1, 0, 1;
  CHECK(dev(mat_exp(n) - expect) < 1e-15);
}

TEST_CASE("mat_exp matches a rotation and large-norm scaling") {
  const double th = 2.3;
  Matrix a(2, 2);
  a << 0, -th, th, 0;
  const Matrix e = mat_exp(a);
  CHECK(e(0, 0) == doctest::Approx(std::cos(th)).epsilon(1e-13));
  CHECK(e(1, 0) == doctest::Approx(std::sin(th)).epsilon(1e-13));

  Matrix big = Matrix::Zero(2, 2);
  big(0, 0) = 30.0;
  CHECK(mat_exp(big)(0, 0) == doctest::Approx(std::exp(30.0)).epsilon(1e-12));
}

TEST_CASE("mat_exp rejects bad input") {
  CHECK_THROWS_AS(mat_exp(Matrix::Zero(2, 3)), DimensionError);
  Matrix a = Matrix::Zero(2, 2);
  a(1, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(mat_exp(a), DomainError);
  a(1, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(mat_exp(a), DomainError);
}

TEST_CASE("commutator basics") {
  const Matrix a = random_matrix(4, 4, 1);
  CHECK(dev(commutator(a, a)) == 0.0);
  Matrix e(2, 2), f(2, 2);
  e << 0, 1, 0, 0;
  f << 0, 0, 1, 0;
  Matrix h(2, 2);
  h << 1, 0, 0, -1;
  CHECK(dev(commutator(e, f) - h) == 0.0);
  CHECK_THROWS_AS(commutator(Matrix::Zero(2, 2), Matrix::Zero(3, 3)), DimensionError);
}

TEST_CASE("commutators are traceless") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix a = random_matrix(5, 5, 2 * s);
    const Matrix b = random_matrix(5, 5, 2 * s + 1);
    CHECK(std::abs(commutator(a, b).trace()) <= 1e-12);
  }
}

TEST_CASE("exp(A + B) = exp(A) exp(B) for commuting diagonal pairs") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix da = random_matrix(4, 1, 3 * s);
    const Matrix db = random_matrix(4, 1, 3 * s + 1);
    const Matrix a = Matrix(da.col(0).asDiagonal());
    const Matrix b = Matrix(db.col(0).asDiagonal());
    CHECK(dev(mat_exp(a + b) - mat_exp(a) * mat_exp(b)) <= 1e-9);
  }
}

TEST_CASE("det exp(A) = exp(tr A)") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix a = random_matrix(4, 4, 100 + s, 0.7);
    const double det = mat_exp(a).determinant();
    const double expect = std::exp(a.trace());
    CHECK(std::abs(det - expect) / expect <= 1e-8);
  }
}

TEST_CASE("finite_diff_jacobian") {
  SUBCASE("identity") {
    const Matrix j = finite_diff_jacobian([](const Vector& x) { return x; }, Vector::Ones(3));
    CHECK(dev(j - Matrix::Identity(3, 3)) < 1e-10);
  }
  SUBCASE("linear map") {
    const Matrix a = random_matrix(3, 4, 7);
    const Matrix j = finite_diff_jacobian([&](const Vector& x) { return Vector(a * x); },
                                          affjord::test::random_vector(4, 8));
    CHECK(dev(j - a) < 1e-10);
  }
  SUBCASE("quadratic map") {
    auto f = [](const Vector& x) {
      Vector y(2);
      y << x(0) * x(0), x(0) * x(1);
      return y;
    };
    Vector x(2);
    x << 1.0, 2.0;
    Matrix expect(2, 2);
    expect << 2, 0, 2, 1;
    CHECK(dev(finite_diff_jacobian(f, x) - expect) < 1e-8);
  }
  SUBCASE("non-finite output") {
    auto f = [](const Vector& x) { return Vector(x.array().log()); };
    CHECK_THROWS_AS(finite_diff_jacobian(f, Vector::Zero(2)), DomainError);
  }
}

TEST_CASE("log_abs_det and det_sign") {
  Matrix a(2, 2);
  a << 0, 2, 3, 0;
  CHECK(log_abs_det(a) == doctest::Approx(std::log(6.0)));
  CHECK(det_sign(a) == -1);
  CHECK(std::isinf(log_abs_det(Matrix::Zero(2, 2))));
  CHECK(det_sign(Matrix::Zero(2, 2)) == 0);
  const Matrix r = random_matrix(6, 6, 11);
  CHECK(log_abs_det(r) == doctest::Approx(std::log(std::abs(r.determinant()))).epsilon(1e-12));
}

TEST_CASE("flatten is row-major and unflatten inverts it") {
  Matrix m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  const Vector v = flatten(m);
  CHECK(v(1) == 2.0);
  CHECK(v(3) == 4.0);
  CHECK(unflatten(v, 2, 3) == m);
}
