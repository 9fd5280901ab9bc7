#pragma once

#include "affjord/core_math.hpp"
#include "affjord/ode_solver.hpp"
#include "affjord/vector_field.hpp"

#include <array>
#include <vector>

namespace affjord {

/// z(t1) for z(t0) = z0 under `field`.
Vector flow_map(const SmoothField& field, const Vector& z0, double t0, double t1,
                const SolverConfig& config);

/// dz(t1)/dz(t0) from the linear variational equation dJ/dt = (df/dz) J,
/// J(t0) = I, integrated jointly with z.
Matrix jacobian_via_ode(const SmoothField& field, const Vector& z0, double t0, double t1,
                        const SolverConfig& config);
inline Matrix jacobian_via_ode(const SmoothField& field, const Vector& z0, double horizon,
                               const SolverConfig& config) {
  return jacobian_via_ode(field, z0, 0.0, horizon, config);
}

struct JacobianTrajectory {
  std::vector<double> times;
  std::vector<Vector> states;
  std::vector<Matrix> jacobians;  // dz(t_k)/dz(0)
};

/// Fixed-step rk4 version of jacobian_via_ode recording every grid point.
JacobianTrajectory jacobian_trajectory(const SmoothField& field, const Vector& z0,
                                       double horizon, std::size_t steps);

/// Truncated Magnus expansion of log(dz(T)/dz(0)).
struct MagnusTruncation {
  int order = 1;
  Matrix omega;                 // sum of the retained terms
  std::array<Matrix, 3> terms;  // Omega_1..Omega_3 (unused ones are zero)
};

inline constexpr std::size_t kDefaultMagnusQuadratureSteps = 200;

/// Omega_1..Omega_order (order <= 3) with A(t) = df/dz sampled along an rk4
/// trajectory on a uniform grid of `quadrature_steps` intervals (rounded up to
/// an even count); nested integrals use composite Simpson with a 3/8 closing
/// panel on odd-length prefixes.
MagnusTruncation magnus_log_jacobian(const SmoothField& field, const Vector& z0, double horizon,
                                     int order,
                                     std::size_t quadrature_steps = kDefaultMagnusQuadratureSteps);

/// dz(T)/dtheta (n x p) from dS/dt = (df/dz) S + df/dtheta, S(0) = 0.
Matrix forward_sensitivity_params(const SmoothField& field, const Vector& z0, double horizon,
                                  const SolverConfig& config);

struct CableAgreement {
  Matrix inverse_jacobian;  // dz(0)/dz(T) from dA/dt = -A df/dz
  Matrix jacobian;          // dz(T)/dz(0) from jacobian_via_ode
  double max_deviation = 0.0;  // max |A(T) J(T) - I|
};

/// Integrates the inverse-Jacobian equation and checks it against the
/// forward Jacobian: the two must be mutual inverses.
CableAgreement verify_cable_via_adjoint(const SmoothField& field, const Vector& z0,
                                        double horizon, const SolverConfig& config);

}  // namespace affjord
