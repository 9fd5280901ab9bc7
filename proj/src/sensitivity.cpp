#include "affjord/sensitivity.hpp"

#include "affjord/errors.hpp"

#include <string>

namespace affjord {
namespace {

// Integral of samples[0..i] on a uniform grid with spacing h: Simpson on an
// even number of intervals, Simpson plus a 3/8 panel on an odd number >= 3,
// trapezoid for a single interval.
Matrix prefix_integral(const std::vector<Matrix>& samples, std::size_t i, double h) {
  const Matrix zero = Matrix::Zero(samples[0].rows(), samples[0].cols());
  if (i == 0) return zero;
  if (i == 1) return 0.5 * h * (samples[0] + samples[1]);
  Matrix acc = zero;
  const std::size_t simpson_end = (i % 2 == 0) ? i : i - 3;
  for (std::size_t k = 0; k + 2 <= simpson_end; k += 2) {
    acc += (h / 3.0) * (samples[k] + 4.0 * samples[k + 1] + samples[k + 2]);
  }
  if (i % 2 == 1) {
    const std::size_t k = i - 3;
    acc += (3.0 * h / 8.0) *
           (samples[k] + 3.0 * samples[k + 1] + 3.0 * samples[k + 2] + samples[k + 3]);
  }
  return acc;
}

void check_state(const SmoothField& field, const Vector& z0) {
  if (static_cast<std::size_t>(z0.size()) != field.dim()) {
    throw DimensionError("sensitivity: initial state has " + std::to_string(z0.size()) +
                         " entries, field has dimension " + std::to_string(field.dim()));
  }
}

}  // namespace

Vector flow_map(const SmoothField& field, const Vector& z0, double t0, double t1,
                const SolverConfig& config) {
  check_state(field, z0);
  const OdeFunction rhs = [&field](double t, const Vector& y, Vector& dy) {
    dy = field.eval(t, y);
  };
  return integrate(rhs, z0, t0, t1, config).state;
}

Matrix jacobian_via_ode(const SmoothField& field, const Vector& z0, double t0, double t1,
                        const SolverConfig& config) {
  check_state(field, z0);
  const auto n = static_cast<Eigen::Index>(field.dim());
  Vector y0(n + n * n);
  y0.head(n) = z0;
  y0.tail(n * n) = flatten(Matrix::Identity(n, n));
  const OdeFunction rhs = [&field, n](double t, const Vector& y, Vector& dy) {
    const Vector z = y.head(n);
    const Matrix j = unflatten(y.tail(n * n), n, n);
    dy.resize(y.size());
    dy.head(n) = field.eval(t, z);
    dy.tail(n * n) = flatten(field.jacobian(t, z) * j);
  };
  const SolverRun run = integrate(rhs, y0, t0, t1, config);
  return unflatten(run.state.tail(n * n), n, n);
}

JacobianTrajectory jacobian_trajectory(const SmoothField& field, const Vector& z0,
                                       double horizon, std::size_t steps) {
  check_state(field, z0);
  const auto n = static_cast<Eigen::Index>(field.dim());
  Vector y0(n + n * n);
  y0.head(n) = z0;
  y0.tail(n * n) = flatten(Matrix::Identity(n, n));
  const OdeFunction rhs = [&field, n](double t, const Vector& y, Vector& dy) {
    const Vector z = y.head(n);
    dy.resize(y.size());
    dy.head(n) = field.eval(t, z);
    dy.tail(n * n) = flatten(field.jacobian(t, z) * unflatten(y.tail(n * n), n, n));
  };
  const auto states = rk4_trajectory(rhs, y0, 0.0, horizon, steps);
  JacobianTrajectory out;
  const double h = horizon / static_cast<double>(steps);
  for (std::size_t k = 0; k < states.size(); ++k) {
    out.times.push_back(h * static_cast<double>(k));
    out.states.push_back(states[k].head(n));
    out.jacobians.push_back(unflatten(states[k].tail(n * n), n, n));
  }
  return out;
}

MagnusTruncation magnus_log_jacobian(const SmoothField& field, const Vector& z0, double horizon,
                                     int order, std::size_t quadrature_steps) {
  if (order < 1 || order > 3) {
    throw ArgumentError("magnus_log_jacobian: unsupported order " + std::to_string(order) +
                        " (supported: 1, 2, 3)");
  }
  check_state(field, z0);
  std::size_t steps = std::max<std::size_t>(quadrature_steps, 2);
  if (steps % 2 == 1) ++steps;
  const double h = horizon / static_cast<double>(steps);

  const OdeFunction rhs = [&field](double t, const Vector& y, Vector& dy) {
    dy = field.eval(t, y);
  };
  const auto traj = rk4_trajectory(rhs, z0, 0.0, horizon, steps);
  std::vector<Matrix> a(traj.size());
  for (std::size_t k = 0; k < traj.size(); ++k) {
    a[k] = field.jacobian(h * static_cast<double>(k), traj[k]);
  }
  const auto n = a[0].rows();

  MagnusTruncation out;
  out.order = order;
  for (auto& t : out.terms) t = Matrix::Zero(n, n);
  out.terms[0] = prefix_integral(a, steps, h);

  if (order >= 2) {
    // C(t) = int_0^t A.
    std::vector<Matrix> cumulative(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) cumulative[k] = prefix_integral(a, k, h);

    // Omega_2 = 1/2 int_0^T [A(t1), C(t1)] dt1.
    std::vector<Matrix> integrand(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) integrand[k] = commutator(a[k], cumulative[k]);
    out.terms[1] = 0.5 * prefix_integral(integrand, steps, h);

    if (order >= 3) {
      // Innermost integral over t3 gives C(t2); the t2 integral is taken per t1 node.
      std::vector<Matrix> outer(a.size());
      std::vector<Matrix> inner(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
          inner[j] = commutator(a[i], commutator(a[j], cumulative[j])) +
                     commutator(cumulative[j], commutator(a[j], a[i]));
        }
        outer[i] = prefix_integral(inner, i, h);
      }
      out.terms[2] = prefix_integral(outer, steps, h) / 6.0;
    }
  }

  out.omega = Matrix::Zero(n, n);
  for (int k = 0; k < order; ++k) out.omega += out.terms[static_cast<std::size_t>(k)];
  return out;
}

Matrix forward_sensitivity_params(const SmoothField& field, const Vector& z0, double horizon,
                                  const SolverConfig& config) {
  check_state(field, z0);
  const auto n = static_cast<Eigen::Index>(field.dim());
  const auto p = static_cast<Eigen::Index>(field.param_count());
  Vector y0 = Vector::Zero(n + n * p);
  y0.head(n) = z0;
  const OdeFunction rhs = [&field, n, p](double t, const Vector& y, Vector& dy) {
    const Vector z = y.head(n);
    const Matrix s = unflatten(y.tail(n * p), n, p);
    dy.resize(y.size());
    dy.head(n) = field.eval(t, z);
    dy.tail(n * p) = flatten(field.jacobian(t, z) * s + field.param_jacobian(t, z));
  };
  const SolverRun run = integrate(rhs, y0, 0.0, horizon, config);
  return unflatten(run.state.tail(n * p), n, p);
}

CableAgreement verify_cable_via_adjoint(const SmoothField& field, const Vector& z0,
                                        double horizon, const SolverConfig& config) {
  check_state(field, z0);
  const auto n = static_cast<Eigen::Index>(field.dim());
  Vector y0(n + n * n);
  y0.head(n) = z0;
  y0.tail(n * n) = flatten(Matrix::Identity(n, n));
  const OdeFunction rhs = [&field, n](double t, const Vector& y, Vector& dy) {
    const Vector z = y.head(n);
    dy.resize(y.size());
    dy.head(n) = field.eval(t, z);
    dy.tail(n * n) = flatten(-unflatten(y.tail(n * n), n, n) * field.jacobian(t, z));
  };
  CableAgreement out;
  out.inverse_jacobian = unflatten(integrate(rhs, y0, 0.0, horizon, config).state.tail(n * n), n, n);
  out.jacobian = jacobian_via_ode(field, z0, 0.0, horizon, config);
  out.max_deviation = max_abs(Matrix(out.inverse_jacobian * out.jacobian - Matrix::Identity(n, n)));
  return out;
}

}  // namespace affjord
