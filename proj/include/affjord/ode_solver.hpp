#pragma once

#include "affjord/core_math.hpp"

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace affjord {

enum class SolverMethod { rk4, dopri5 };

SolverMethod parse_solver_method(const std::string& name);
std::string to_string(SolverMethod m);

struct SolverConfig {
  SolverMethod method = SolverMethod::rk4;
  std::size_t steps = 40;  // rk4 only
  double atol = 1e-8;      // dopri5 only
  double rtol = 1e-6;      // dopri5 only
  std::size_t max_steps = 100000;

  /// Throws ConfigurationError on steps == 0, non-positive tolerances or
  /// max_steps == 0.
  void validate() const;

  static SolverConfig rk4(std::size_t steps) {
    SolverConfig c;
    c.steps = steps;
    return c;
  }
  static SolverConfig dopri5(double atol, double rtol) {
    SolverConfig c;
    c.method = SolverMethod::dopri5;
    c.atol = atol;
    c.rtol = rtol;
    return c;
  }
};

struct SolverRun {
  Vector state;
  std::size_t nfe = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  bool success = false;
};

/// dy/dt = f(t, y), written into the output argument.
using OdeFunction = std::function<void(double t, const Vector& y, Vector& dydt)>;

/// Integrates from t0 to t1 (either direction). A backward span is solved as
/// the forward problem tau -> -f(t0 - tau, y) on [0, t0 - t1].
///
/// rk4 uses exactly 4 * steps evaluations. dopri5 uses the 7-stage FSAL
/// tableau with a PI step controller; its evaluation count is
/// 1 + 6 * (accepted + rejected).
SolverRun integrate(const OdeFunction& f, const Vector& y0, double t0, double t1,
                    const SolverConfig& config);

/// Fixed-step rk4 returning the state at every grid point t0 + k (t1 - t0) / steps.
std::vector<Vector> rk4_trajectory(const OdeFunction& f, const Vector& y0, double t0, double t1,
                                   std::size_t steps);

}  // namespace affjord
