#include "affjord/core_math.hpp"

#include "affjord/errors.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace affjord {
namespace {

constexpr int kTaylorOrder = 12;
constexpr double kScaledNormBound = 0.5;

void require_square(const Matrix& a, const char* op) {
  if (a.rows() != a.cols()) {
    throw DimensionError(std::string(op) + ": expected a square matrix, got " +
                         std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  }
}

double one_norm(const Matrix& a) {
  return a.cwiseAbs().colwise().sum().maxCoeff();
}

}  // namespace

Matrix mat_exp(const Matrix& a) {
  require_square(a, "mat_exp");
  require_finite(a, "mat_exp argument");
  const Eigen::Index n = a.rows();
  if (n == 0) return Matrix(0, 0);

  int squarings = 0;
  const double norm = one_norm(a);
  if (norm > kScaledNormBound) {
    squarings = static_cast<int>(std::ceil(std::log2(norm / kScaledNormBound)));
  }
  const Matrix x = a / std::ldexp(1.0, squarings);

  // Horner form of sum_{k<=12} x^k / k!.
  const Matrix identity = Matrix::Identity(n, n);
  Matrix result = identity;
  for (int k = kTaylorOrder; k >= 1; --k) {
    result = identity + (x * result) / static_cast<double>(k);
  }
  for (int i = 0; i < squarings; ++i) {
    result = (result * result).eval();
  }
  return result;
}

Matrix commutator(const Matrix& a, const Matrix& b) {
  require_square(a, "commutator");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("commutator: operands have different shapes");
  }
  return a * b - b * a;
}

Matrix finite_diff_jacobian(const VectorFunction& f, const Vector& x, double h) {
  if (!(h > 0.0)) throw ArgumentError("finite_diff_jacobian: step must be positive");
  const Vector f0 = f(x);
  require_finite(f0, "finite_diff_jacobian: f(x)");
  Matrix jac(f0.size(), x.size());
  Vector xp = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    xp(j) = x(j) + h;
    const Vector fp = f(xp);
    xp(j) = x(j) - h;
    const Vector fm = f(xp);
    xp(j) = x(j);
    if (!all_finite(fp) || !all_finite(fm)) {
      throw DomainError("finite_diff_jacobian: non-finite evaluation at column " +
                        std::to_string(j));
    }
    if (fp.size() != f0.size() || fm.size() != f0.size()) {
      throw DimensionError("finite_diff_jacobian: output size changed between evaluations");
    }
    jac.col(j) = (fp - fm) / (2.0 * h);
  }
  return jac;
}

double log_abs_det(const Matrix& a) {
  require_square(a, "log_abs_det");
  if (a.rows() == 0) return 0.0;
  const Eigen::PartialPivLU<Matrix> lu(a);
  const Matrix& packed = lu.matrixLU();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < packed.rows(); ++i) {
    const double d = std::abs(packed(i, i));
    if (d == 0.0) return -std::numeric_limits<double>::infinity();
    acc += std::log(d);
  }
  return acc;
}

int det_sign(const Matrix& a) {
  require_square(a, "det_sign");
  if (a.rows() == 0) return 1;
  const Eigen::PartialPivLU<Matrix> lu(a);
  int sign = static_cast<int>(lu.permutationP().determinant());
  const Matrix& packed = lu.matrixLU();
  for (Eigen::Index i = 0; i < packed.rows(); ++i) {
    if (packed(i, i) == 0.0) return 0;
    if (packed(i, i) < 0.0) sign = -sign;
  }
  return sign;
}

double max_abs(const Matrix& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }
double max_abs(const Vector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

bool all_finite(const Matrix& a) { return a.allFinite(); }
bool all_finite(const Vector& v) { return v.allFinite(); }

void require_finite(const Matrix& a, const char* what) {
  if (!a.allFinite()) throw DomainError(std::string(what) + ": non-finite entries");
}

void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) throw DomainError(std::string(what) + ": non-finite entries");
}

Vector flatten(const Matrix& m) {
  return Eigen::Map<const Vector>(m.data(), m.size());
}

Matrix unflatten(const Eigen::Ref<const Vector>& v, Eigen::Index rows, Eigen::Index cols) {
  if (v.size() != rows * cols) throw DimensionError("unflatten: size mismatch");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < v.size(); ++i) m.data()[i] = v(i);
  return m;
}

}  // namespace affjord
