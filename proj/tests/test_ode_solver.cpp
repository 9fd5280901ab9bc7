#include "affjord/errors.hpp"
#include "affjord/ode_solver.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace affjord;

namespace {

const OdeFunction kZero = [](double, const Vector& y, Vector& dy) { dy = Vector::Zero(y.size()); };
const OdeFunction kGrowth = [](double, const Vector& y, Vector& dy) { dy = y; };
const OdeFunction kRotation = [](double, const Vector& y, Vector& dy) {
  dy.resize(2);
  dy << -y(1), y(0);
};
// Nonlinear, time-dependent test problem.
const OdeFunction kNonlinear = [](double t, const Vector& y, Vector& dy) {
  dy.resize(2);
  dy << std::sin(t) * y(1) - 0.3 * y(0) * y(0), std::cos(y(0)) - 0.5 * y(1);
};

Vector v2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

}  // namespace

TEST_CASE("rk4 evaluation count is 4 * steps") {
  for (std::size_t steps : {1, 7, 40, 123}) {
    const SolverRun run = integrate(kZero, Vector::Ones(3), 0.0, 1.0, SolverConfig::rk4(steps));
    CHECK(run.nfe == 4 * steps);
    CHECK(run.success);
    CHECK(run.state == Vector::Ones(3));
  }
}

TEST_CASE("exponential growth reaches e") {
  CHECK(integrate(kGrowth, Vector::Ones(1), 0.0, 1.0, SolverConfig::dopri5(1e-12, 1e-12)).state(0) ==
        doctest::Approx(std::numbers::e).epsilon(1e-8));
  CHECK(integrate(kGrowth, Vector::Ones(1), 0.0, 1.0, SolverConfig::rk4(400)).state(0) ==
        doctest::Approx(std::numbers::e).epsilon(1e-8));
}

TEST_CASE("rotation by a quarter turn") {
  for (const SolverConfig& c : {SolverConfig::rk4(100), SolverConfig::dopri5(1e-10, 1e-10)}) {
    const Vector y = integrate(kRotation, v2(1, 0), 0.0, std::numbers::pi / 2, c).state;
    CHECK(std::abs(y(0)) < 1e-6);
    CHECK(std::abs(y(1) - 1.0) < 1e-6);
  }
}

TEST_CASE("forward then backward integration is reversible") {
  for (const SolverConfig& c : {SolverConfig::rk4(200), SolverConfig::dopri5(1e-10, 1e-10)}) {
    const Vector y0 = v2(0.4, -0.8);
    const Vector y1 = integrate(kNonlinear, y0, 0.0, 1.5, c).state;
    const Vector back = integrate(kNonlinear, y1, 1.5, 0.0, c).state;
    CHECK((back - y0).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("rk4 is fourth order") {
  const Vector y0 = v2(0.4, -0.8);
  const Vector ref = integrate(kNonlinear, y0, 0.0, 2.0, SolverConfig::dopri5(1e-13, 1e-13)).state;
  const double e1 = (integrate(kNonlinear, y0, 0.0, 2.0, SolverConfig::rk4(20)).state - ref).norm();
  const double e2 = (integrate(kNonlinear, y0, 0.0, 2.0, SolverConfig::rk4(40)).state - ref).norm();
  const double ratio = e1 / e2;
  CHECK(ratio >= 12.0);
  CHECK(ratio <= 20.0);
}

TEST_CASE("dopri5 agrees with fine rk4 and reports consistent counts") {
  const Vector y0 = v2(0.4, -0.8);
  const SolverRun a = integrate(kNonlinear, y0, 0.0, 2.0, SolverConfig::dopri5(1e-8, 1e-8));
  const SolverRun b = integrate(kNonlinear, y0, 0.0, 2.0, SolverConfig::rk4(400));
  CHECK((a.state - b.state).cwiseAbs().maxCoeff() < 1e-5);
  CHECK(a.nfe == 6 * (a.accepted + a.rejected) + 1);
  CHECK(a.accepted > 0);
}

TEST_CASE("rk4_trajectory records every grid point") {
  const auto traj = rk4_trajectory(kGrowth, Vector::Ones(1), 0.0, 1.0, 10);
  REQUIRE(traj.size() == 11);
  CHECK(traj.front()(0) == 1.0);
  CHECK(traj.back()(0) ==
        doctest::Approx(integrate(kGrowth, Vector::Ones(1), 0.0, 1.0, SolverConfig::rk4(10)).state(0))
            .epsilon(1e-15));
}

TEST_CASE("solver errors") {
  SUBCASE("step budget exhausted") {
    SolverConfig c = SolverConfig::dopri5(1e-12, 1e-12);
    c.max_steps = 5;
    CHECK_THROWS_AS(integrate(kNonlinear, v2(0.4, -0.8), 0.0, 10.0, c), StiffnessError);
  }
  SUBCASE("blow-up reports a domain error") {
    const OdeFunction blowup = [](double, const Vector& y, Vector& dy) { dy = y.array().square(); };
    CHECK_THROWS_AS(integrate(blowup, Vector::Constant(1, 10.0), 0.0, 1.0, SolverConfig::rk4(4)),
                    DomainError);
  }
  SUBCASE("non-finite initial state") {
    CHECK_THROWS_AS(integrate(kZero, Vector::Constant(1, NAN), 0.0, 1.0, SolverConfig::rk4(4)),
                    DomainError);
  }
  SUBCASE("bad configuration") {
    CHECK_THROWS_AS(integrate(kZero, Vector::Ones(1), 0.0, 1.0, SolverConfig::rk4(0)),
                    ConfigurationError);
    CHECK_THROWS_AS(integrate(kZero, Vector::Ones(1), 0.0, 1.0, SolverConfig::dopri5(0.0, 1e-6)),
                    ConfigurationError);
    CHECK_THROWS_AS(integrate(kZero, Vector::Ones(1), 1.0, 1.0, SolverConfig::rk4(4)), ArgumentError);
  }
  CHECK(parse_solver_method("dopri5") == SolverMethod::dopri5);
  CHECK_THROWS_AS(parse_solver_method("euler"), ConfigurationError);
}
