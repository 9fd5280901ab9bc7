#include "support.hpp"

#include "affjord/cnf_flow.hpp"
#include "affjord/errors.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace affjord;
using affjord::test::dev;
using affjord::test::random_vector;

namespace {

const SolverConfig kFine = SolverConfig::rk4(200);
constexpr double kEps = 1e-4;  // tanh(eps x) / eps ~ x for the near-linear fields below

FlowArchitecture small_arch(Variant v, std::size_t n = 2) {
  FlowArchitecture a;
  a.variant = v;
  a.data_dim = n;
  a.hidden = {16, 16};
  a.aug_dim = 4;
  a.hyper_inputs = 3;
  a.g_hidden = 8;
  return a;
}

FlowModel seeded_model(Variant v, std::uint64_t seed, std::size_t n = 2,
                       SolverConfig solver = kFine) {
  const FlowModel m = FlowModel::initialize(small_arch(v, n), seed, solver);
  return m.with_params(1.5 * m.params());
}

// FFJORD model whose field is diag(rates) z up to O(eps^2).
FlowModel diagonal_model(const Vector& rates) {
  const auto n = rates.size();
  FlowArchitecture a;
  a.variant = Variant::ffjord_concat_time;
  a.data_dim = static_cast<std::size_t>(n);
  a.hidden = {static_cast<std::size_t>(n)};
  Vector p = Vector::Zero(static_cast<Eigen::Index>(a.param_count()));
  // W1: n x (n + 1), b1: n, W2: n x n, b2: n.
  for (Eigen::Index i = 0; i < n; ++i) {
    p(i * (n + 1) + i) = kEps;
    p(n * (n + 1) + n + i * n + i) = rates(i) / kEps;
  }
  return FlowModel(a, p, kFine);
}

double fd_log_det(const FlowModel& m, const Vector& x) {
  return log_abs_det(finite_diff_jacobian(
      [&](const Vector& z) { return forward_with_logdet(m, z).z_terminal; }, x));
}

}  // namespace

TEST_CASE("zero fields leave points and volume unchanged") {
  for (Variant v : {Variant::ffjord_concat_time, Variant::affjord_concat, Variant::affjord_hypernet}) {
    const FlowModel m = FlowModel::zeros(small_arch(v));
    const Vector x = random_vector(2, 1);
    const SingleForward f = forward_with_logdet(m, x);
    CHECK(f.z_terminal == x);
    CHECK(f.delta_logdet == 0.0);
    CHECK(f.nfe == 160);

    Matrix origin = Matrix::Zero(1, 2);
    CHECK(log_likelihood(m, origin).log_likelihood(0) ==
          doctest::Approx(-std::log(2.0 * std::numbers::pi)).epsilon(1e-15));
    const Matrix pts = affjord::test::random_matrix(5, 2, 2);
    const Vector ll = log_likelihood(m, pts).log_likelihood;
    for (Eigen::Index i = 0; i < 5; ++i) {
      CHECK(ll(i) == doctest::Approx(standard_normal_log_density(pts.row(i).transpose())));
    }
  }
}

TEST_CASE("constant-trace field accumulates a + b") {
  Vector rates(2);
  rates << 0.7, -0.4;
  const FlowModel m = diagonal_model(rates);
  Vector x(2);
  x << 0.3, -0.5;
  const SingleForward f = forward_with_logdet(m, x);
  CHECK(f.delta_logdet == doctest::Approx(0.3).epsilon(1e-6));
  CHECK(f.z_terminal(0) == doctest::Approx(0.3 * std::exp(0.7)).epsilon(1e-6));
}

TEST_CASE("change of variables matches the FD determinant of the flow map") {
  for (Variant v : {Variant::ffjord_concat_time, Variant::affjord_concat, Variant::affjord_hypernet}) {
    for (std::size_t n : {2, 3, 5}) {
      const FlowModel m = seeded_model(v, 10 + n, n);
      const Vector x = random_vector(static_cast<Eigen::Index>(n), 20 + n);
      const double delta = forward_with_logdet(m, x).delta_logdet;
      CHECK(std::abs(delta - fd_log_det(m, x)) < 1e-3);
    }
  }
}

TEST_CASE("log-likelihood matches a brute-force oracle at fixed points") {
  const FlowModel m = seeded_model(Variant::affjord_hypernet, 3);
  const Matrix pts = affjord::test::random_matrix(3, 2, 4);
  const Vector ll = log_likelihood(m, pts).log_likelihood;
  for (Eigen::Index i = 0; i < 3; ++i) {
    const Vector x = pts.row(i).transpose();
    const double oracle =
        standard_normal_log_density(forward_with_logdet(m, x).z_terminal) + fd_log_det(m, x);
    CHECK(std::abs(ll(i) - oracle) < 1e-3);
  }
  CHECK(bits_per_dim(-std::numbers::ln2 * 4.0, 2) == doctest::Approx(2.0));
}

TEST_CASE("Hutchinson models refuse exact-only requests") {
  const FlowModel m = seeded_model(Variant::ffjord_concat_time, 1).with_trace(TraceMode::hutchinson);
  ForwardOptions opts;
  opts.require_exact = true;
  CHECK_THROWS_AS(forward_with_logdet(m, Vector::Zero(2), opts), ConfigurationError);
  CHECK_THROWS_AS(forward_with_logdet(m, Vector::Zero(3)), DimensionError);
}

TEST_CASE("Hutchinson log-determinant is unbiased over probe seeds") {
  const FlowModel exact = seeded_model(Variant::affjord_hypernet, 5, 3, SolverConfig::rk4(20));
  const FlowModel hutch = exact.with_trace(TraceMode::hutchinson, 1);
  const Vector x = random_vector(3, 6);
  const double target = forward_with_logdet(exact, x).delta_logdet;
  const int n = 1000;
  double sum = 0.0, sq = 0.0;
  for (int s = 0; s < n; ++s) {
    ForwardOptions opts;
    opts.probe_seed = static_cast<std::uint64_t>(s);
    const double d = forward_with_logdet(hutch, x, opts).delta_logdet;
    sum += d;
    sq += d * d;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sq / n - mean * mean) / (n - 1));
  CHECK(se > 0.0);
  CHECK(std::abs(mean - target) <= 3.0 * se);
}

TEST_CASE("sampling") {
  SUBCASE("zero fields return the base draws") {
    const FlowModel m = FlowModel::zeros(small_arch(Variant::affjord_hypernet));
    CHECK(sample(m, 7, 3) == draw_base(7, 2, 3));
  }
  SUBCASE("linear field scales by exp(-cT)") {
    Vector rates = Vector::Constant(2, 0.6);
    const FlowModel m = diagonal_model(rates);
    const Matrix s = sample(m, 16, 4);
    const Matrix expect = draw_base(16, 2, 4) * std::exp(-0.6);
    CHECK(dev(Matrix(s - expect)) < 1e-6);
  }
  SUBCASE("forward of a sample recovers the base draw") {
    for (Variant v : {Variant::ffjord_concat_time, Variant::affjord_concat, Variant::affjord_hypernet}) {
      const FlowModel m = seeded_model(v, 8, 2, SolverConfig::rk4(40));
      const Matrix s = sample(m, 16, 9);
      const Matrix z = forward_batch(m, s).z_terminal;
      CHECK(dev(Matrix(z - draw_base(16, 2, 9))) < 1e-4);
    }
  }
  SUBCASE("sampling is deterministic") {
    const FlowModel m = seeded_model(Variant::affjord_hypernet, 8, 2, SolverConfig::rk4(40));
    CHECK(sample(m, 10, 1) == sample(m, 10, 1));
  }
}

TEST_CASE("augmented state is a constant of the model") {
  const FlowModel m = seeded_model(Variant::affjord_hypernet, 12, 2, SolverConfig::rk4(40));
  const FlowForward a = forward_batch(m, affjord::test::random_matrix(8, 2, 1));
  const FlowForward b = forward_batch(m, affjord::test::random_matrix(3, 2, 2));
  CHECK(a.zstar_terminal == b.zstar_terminal);
  CHECK(a.zstar_terminal == augmented_terminal(m));
  CHECK(augmented_terminal(FlowModel::zeros(small_arch(Variant::ffjord_concat_time))).size() == 0);
}

TEST_CASE("injectivity report") {
  SUBCASE("zero fields are the identity") {
    const FlowModel m = FlowModel::zeros(small_arch(Variant::affjord_concat));
    const Matrix x = affjord::test::random_matrix(20, 2, 3);
    const InjectivityReport r = verify_injectivity(m, x);
    CHECK(r.zstar_spread == 0.0);
    CHECK(r.min_output_separation == doctest::Approx(r.min_input_separation));
    CHECK(r.injective);
  }
  SUBCASE("seeded model on 512 points") {
    const FlowModel m = seeded_model(Variant::affjord_hypernet, 14, 2, SolverConfig::rk4(40));
    const InjectivityReport r = verify_injectivity(m, affjord::test::random_matrix(512, 2, 4));
    CHECK(r.zstar_spread <= 1e-10);
    CHECK(r.min_input_separation >= 1e-3);
    CHECK(r.injective);
  }
}

TEST_CASE("block-triangular joint Jacobian") {
  SUBCASE("zero fields give the identity") {
    const BlockTriangularReport r =
        verify_block_triangular(FlowModel::zeros(small_arch(Variant::affjord_concat)), Vector::Ones(2));
    CHECK(dev(Matrix(r.joint_jacobian - Matrix::Identity(6, 6))) < 1e-12);
    CHECK(r.lower_left_max == 0.0);
  }
  SUBCASE("scalar linear system has the closed-form Jacobian") {
    const double a = 0.5, b = 0.8, c = -0.3;
    FlowArchitecture arch;
    arch.variant = Variant::affjord_concat;
    arch.data_dim = 1;
    arch.aug_dim = 1;
    arch.hidden = {2};
    arch.g_hidden = 1;
    // main widths {2, 2, 1}: hidden unit 0 sees z, unit 1 sees z*.
    Vector p = Vector::Zero(static_cast<Eigen::Index>(arch.param_count()));
    p(0) = kEps;
    p(3) = kEps;
    p(6) = a / kEps;
    p(7) = b / kEps;
    // g widths {1, 1, 1}.
    p(9) = 1.0;
    p(11) = c;
    const FlowModel m(arch, p, kFine);
    const BlockTriangularReport r = verify_block_triangular(m, Vector::Constant(1, 0.2));
    const Matrix& j = r.joint_jacobian;
    CHECK(j(0, 0) == doctest::Approx(std::exp(a)).epsilon(1e-6));
    CHECK(j(1, 1) == doctest::Approx(std::exp(c)).epsilon(1e-9));
    CHECK(j(0, 1) == doctest::Approx(b * (std::exp(a) - std::exp(c)) / (a - c)).epsilon(1e-6));
    CHECK(j(1, 0) == 0.0);
    CHECK(r.log_det_data_block == doctest::Approx(a).epsilon(1e-6));
  }
  SUBCASE("seeded augmented model") {
    FlowArchitecture arch = small_arch(Variant::affjord_hypernet);
    arch.aug_dim = 2;
    arch.hyper_inputs = 2;
    const FlowModel m0 = FlowModel::initialize(arch, 21, kFine);
    const FlowModel m = m0.with_params(1.5 * m0.params());
    const BlockTriangularReport r = verify_block_triangular(m, random_vector(2, 22));
    CHECK(r.lower_left_max < 1e-6);
    CHECK(r.trace_identity_error() < 1e-4);
    CHECK(r.block_identity_error() < 1e-4);
  }
  SUBCASE("a coupled g breaks the zero block") {
    const CoupledAugmentedField joint(2, 2, {8}, 3);
    const BlockTriangularReport r =
        block_triangular_report(joint, 2, random_vector(4, 5), 1.0, SolverConfig::dopri5(1e-10, 1e-10));
    CHECK(r.lower_left_max > 1e-3);
  }
}

TEST_CASE("density integrates to one") {
  const FlowModel m = seeded_model(Variant::affjord_hypernet, 31, 2, SolverConfig::rk4(40));
  const int n = 121;
  const double h = 12.0 / (n - 1);
  Matrix pts(n * n, 2);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      pts(r * n + c, 0) = -6.0 + h * c;
      pts(r * n + c, 1) = -6.0 + h * r;
    }
  const Vector ll = log_likelihood(m, pts).log_likelihood;
  CHECK(ll.array().exp().sum() * h * h == doctest::Approx(1.0).epsilon(1e-2));
}

TEST_CASE("variant and trace names round-trip") {
  for (Variant v : {Variant::ffjord_concat_time, Variant::affjord_concat, Variant::affjord_hypernet}) {
    CHECK(parse_variant(to_string(v)) == v);
  }
  CHECK(parse_variant("affjord_hypernet") == Variant::affjord_hypernet);
  CHECK_THROWS_AS(parse_variant("realnvp"), ConfigurationError);
  CHECK(parse_trace_mode("hutchinson") == TraceMode::hutchinson);
  FlowArchitecture bad = small_arch(Variant::affjord_hypernet);
  bad.hyper_inputs = 9;
  CHECK_THROWS_AS(bad.validate(), ConfigurationError);
}
