#pragma once

#include <Eigen/Dense>

#include <functional>

namespace affjord {

using Vector = Eigen::VectorXd;
/// Dense row-major matrix; flattening a Matrix yields its rows in order.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using VectorFunction = std::function<Vector(const Vector&)>;

inline constexpr double kDefaultFdStep = 1e-5;

/// Matrix exponential by scaling and squaring around a degree-12 Taylor
/// polynomial; the scaled argument satisfies ||A / 2^s||_1 <= 0.5.
Matrix mat_exp(const Matrix& a);

/// Lie bracket [a, b] = ab - ba.
Matrix commutator(const Matrix& a, const Matrix& b);

/// Central-difference Jacobian. Column j is (f(x + h e_j) - f(x - h e_j)) / 2h.
Matrix finite_diff_jacobian(const VectorFunction& f, const Vector& x,
                            double h = kDefaultFdStep);

/// log|det a| from an LU factorisation with partial pivoting, accumulated in
/// log space. Returns -inf for singular input.
double log_abs_det(const Matrix& a);

/// Sign of det a (+1, -1 or 0), from the same factorisation.
int det_sign(const Matrix& a);

double max_abs(const Matrix& a);
double max_abs(const Vector& v);

bool all_finite(const Matrix& a);
bool all_finite(const Vector& v);

/// Throws DomainError naming `what` when any entry is non-finite.
void require_finite(const Matrix& a, const char* what);
void require_finite(const Vector& v, const char* what);

/// Row-major flatten / unflatten helpers for carrying matrices in ODE states.
Vector flatten(const Matrix& m);
Matrix unflatten(const Eigen::Ref<const Vector>& v, Eigen::Index rows, Eigen::Index cols);

}  // namespace affjord
