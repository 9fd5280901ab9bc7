#pragma once

#include "affjord/core_math.hpp"

#include <cstdint>
#include <algorithm>
#include <cmath>
#include <random>
#include <span>

namespace affjord::test {

// Largest absolute entry of any Eigen expression.
template <class E>
double dev(const Eigen::MatrixBase<E>& e) {
  return e.cwiseAbs().maxCoeff();
}

inline std::span<const double> sp(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}
inline std::span<double> sp(Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                            double scale = 1.0) {
  std::mt19937_64 engine(seed);
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(engine);
  return m;
}

inline Vector random_vector(Eigen::Index n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 engine(seed);
  std::normal_distribution<double> normal(0.0, scale);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(engine);
  return v;
}

// Central difference of a scalar function along every coordinate of p.
template <class F>
Vector fd_gradient(F&& f, const Vector& p, double h = 1e-6) {
  Vector g(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    Vector a = p, b = p;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

inline double rel_err(double a, double b, double floor = 1.0) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace affjord::test
