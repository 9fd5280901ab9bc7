#include "affjord/ode_solver.hpp"

#include "affjord/errors.hpp"

#include <algorithm>
#include <cmath>

namespace affjord {
namespace {

// Dormand-Prince 5(4) coefficients.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                 a75 = -2187.0 / 6784, a76 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

constexpr double kSafety = 0.9;
constexpr double kMinFactor = 0.2;
constexpr double kMaxFactor = 10.0;
constexpr double kBeta = 0.04;
constexpr double kAlpha = 0.2 - 0.75 * kBeta;

// Evaluates f and rejects non-finite derivatives.
class CountedRhs {
 public:
  CountedRhs(const OdeFunction& f, double origin, bool backward)
      : f_(f), origin_(origin), backward_(backward) {}

  void operator()(double tau, const Vector& y, Vector& dydt) {
    ++nfe;
    if (backward_) {
      f_(origin_ - tau, y, dydt);
      dydt = -dydt;
    } else {
      f_(origin_ + tau, y, dydt);
    }
    if (!dydt.allFinite()) {
      throw DomainError("integrate: non-finite derivative at t = " +
                        std::to_string(backward_ ? origin_ - tau : origin_ + tau));
    }
  }

  std::size_t nfe = 0;

 private:
  const OdeFunction& f_;
  double origin_;
  bool backward_;
};

double error_norm(const Vector& err, const Vector& y, const Vector& y_new, double atol,
                  double rtol) {
  if (err.size() == 0) return 0.0;
  const Eigen::ArrayXd scale = atol + rtol * y.array().abs().max(y_new.array().abs());
  return std::sqrt((err.array() / scale).square().mean());
}

SolverRun run_rk4(CountedRhs& rhs, const Vector& y0, double span, std::size_t steps) {
  const double h = span / static_cast<double>(steps);
  Vector y = y0, k1, k2, k3, k4;
  for (std::size_t i = 0; i < steps; ++i) {
    const double tau = h * static_cast<double>(i);
    rhs(tau, y, k1);
    rhs(tau + 0.5 * h, y + 0.5 * h * k1, k2);
    rhs(tau + 0.5 * h, y + 0.5 * h * k2, k3);
    rhs(tau + h, y + h * k3, k4);
    y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  SolverRun run;
  run.state = std::move(y);
  run.nfe = rhs.nfe;
  run.accepted = steps;
  run.success = true;
  return run;
}

SolverRun run_dopri5(CountedRhs& rhs, const Vector& y0, double span,
                     const SolverConfig& cfg) {
  Vector y = y0;
  Vector k1, k2, k3, k4, k5, k6, k7;
  rhs(0.0, y, k1);

  double h;
  {
    const Eigen::ArrayXd scale = cfg.atol + cfg.rtol * y.array().abs();
    const double d0 = y.size() ? std::sqrt((y.array() / scale).square().mean()) : 0.0;
    const double d1 = y.size() ? std::sqrt((k1.array() / scale).square().mean()) : 0.0;
    h = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h = std::min(h, span);
  }

  std::size_t accepted = 0, rejected = 0;
  double tau = 0.0;
  double prev_err = 1e-4;
  while (tau < span) {
    if (accepted + rejected >= cfg.max_steps) {
      throw StiffnessError("dopri5: exceeded max_steps before reaching the end of the span",
                           tau, accepted, rejected, rhs.nfe);
    }
    bool last = false;
    if (tau + h >= span) {
      h = span - tau;
      last = true;
    }
    if (h <= 1e-14 * std::max(1.0, std::abs(tau))) {
      throw StiffnessError("dopri5: step size underflow", tau, accepted, rejected, rhs.nfe);
    }

    rhs(tau + c2 * h, y + h * (a21 * k1), k2);
    rhs(tau + c3 * h, y + h * (a31 * k1 + a32 * k2), k3);
    rhs(tau + c4 * h, y + h * (a41 * k1 + a42 * k2 + a43 * k3), k4);
    rhs(tau + c5 * h, y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4), k5);
    rhs(tau + h, y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5), k6);
    Vector y_new = y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
    rhs(tau + h, y_new, k7);

    const Vector err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    const double en = error_norm(err, y, y_new, cfg.atol, cfg.rtol);

    if (en <= 1.0) {
      ++accepted;
      tau = last ? span : tau + h;
      y = std::move(y_new);
      k1 = k7;
      double factor = (en == 0.0)
                          ? kMaxFactor
                          : kSafety * std::pow(en, -kAlpha) * std::pow(prev_err, kBeta);
      factor = std::clamp(factor, kMinFactor, kMaxFactor);
      prev_err = std::max(en, 1e-4);
      h *= factor;
    } else {
      ++rejected;
      h *= std::max(kMinFactor, kSafety * std::pow(en, -kAlpha));
    }
  }

  SolverRun run;
  run.state = std::move(y);
  run.nfe = rhs.nfe;
  run.accepted = accepted;
  run.rejected = rejected;
  run.success = true;
  return run;
}

}  // namespace

SolverMethod parse_solver_method(const std::string& name) {
  if (name == "rk4") return SolverMethod::rk4;
  if (name == "dopri5") return SolverMethod::dopri5;
  throw ConfigurationError("unknown solver method '" + name + "'");
}

std::string to_string(SolverMethod m) { return m == SolverMethod::rk4 ? "rk4" : "dopri5"; }

void SolverConfig::validate() const {
  if (steps == 0) throw ConfigurationError("solver: steps must be >= 1");
  if (!(atol > 0.0) || !(rtol > 0.0)) throw ConfigurationError("solver: tolerances must be > 0");
  if (max_steps == 0) throw ConfigurationError("solver: max_steps must be >= 1");
}

SolverRun integrate(const OdeFunction& f, const Vector& y0, double t0, double t1,
                    const SolverConfig& config) {
  config.validate();
  if (t0 == t1) throw ArgumentError("integrate: empty time span");
  require_finite(y0, "integrate: initial state");
  const bool backward = t1 < t0;
  CountedRhs rhs(f, t0, backward);
  const double span = std::abs(t1 - t0);
  if (config.method == SolverMethod::rk4) return run_rk4(rhs, y0, span, config.steps);
  return run_dopri5(rhs, y0, span, config);
}

std::vector<Vector> rk4_trajectory(const OdeFunction& f, const Vector& y0, double t0, double t1,
                                   std::size_t steps) {
  if (steps == 0) throw ConfigurationError("rk4_trajectory: steps must be >= 1");
  if (t0 == t1) throw ArgumentError("rk4_trajectory: empty time span");
  const double h = (t1 - t0) / static_cast<double>(steps);
  std::vector<Vector> out;
  out.reserve(steps + 1);
  out.push_back(y0);
  Vector y = y0, k1, k2, k3, k4;
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = t0 + h * static_cast<double>(i);
    f(t, y, k1);
    f(t + 0.5 * h, y + 0.5 * h * k1, k2);
    f(t + 0.5 * h, y + 0.5 * h * k2, k3);
    f(t + h, y + h * k3, k4);
    y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!y.allFinite()) throw DomainError("rk4_trajectory: non-finite state");
    out.push_back(y);
  }
  return out;
}

}  // namespace affjord
