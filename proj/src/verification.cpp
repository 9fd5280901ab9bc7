#include "affjord/verification.hpp"

#include "affjord/cnf_flow.hpp"
#include "affjord/errors.hpp"
#include "affjord/multiscale.hpp"
#include "affjord/sensitivity.hpp"
#include "affjord/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <random>

namespace affjord {
namespace {

constexpr double kFdStep = 1e-5;
// Fixed-step reference solver for FD-of-flow oracles: smooth in z0 and theta,
// unlike an adaptive solver whose step sequence jumps with the input.
const SolverConfig kFdSolver = SolverConfig::rk4(200);
const SolverConfig kTightSolver = SolverConfig::dopri5(1e-10, 1e-10);

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

CheckResult finish(std::string name, double value, double tolerance, const Timer& timer,
                   double time_limit, std::string detail) {
  CheckResult r;
  r.name = std::move(name);
  r.value = value;
  r.tolerance = tolerance;
  r.seconds = timer.seconds();
  r.time_limit = time_limit;
  r.detail = std::move(detail);
  r.pass = std::isfinite(value) && value <= tolerance &&
           (time_limit <= 0.0 || r.seconds <= time_limit);
  return r;
}

std::string fmt(const char* spec, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

Vector normal_vector(std::size_t n, std::mt19937_64& engine, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Vector v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = normal(engine);
  return v;
}

Matrix normal_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& engine, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(engine);
  return m;
}

// A concat-time tanh field with its default initialisation doubled, so the
// flows are visibly nonlinear over the unit horizon.
MlpField seeded_field(std::size_t n, std::uint64_t seed, std::size_t hidden = 16) {
  MlpField f = MlpField::initialize({n + 1, hidden, hidden, n}, InputMode::concat_time, n, seed);
  return f.with_params(2.0 * f.params());
}

// A(t) = A0 + t A1 applied to z; [A0, A1] != 0 in general.
class AffineTimeLinearField final : public SmoothField {
 public:
  AffineTimeLinearField(Matrix a0, Matrix a1) : a0_(std::move(a0)), a1_(std::move(a1)) {}
  std::size_t dim() const override { return static_cast<std::size_t>(a0_.rows()); }
  Vector eval(double t, const Vector& z) const override { return jacobian(t, z) * z; }
  Matrix jacobian(double t, const Vector&) const override { return a0_ + t * a1_; }

 private:
  Matrix a0_;
  Matrix a1_;
};

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

FlowArchitecture small_architecture(Variant v) {
  FlowArchitecture arch;
  arch.variant = v;
  arch.data_dim = 2;
  arch.hidden = {8, 8};
  arch.aug_dim = 4;
  arch.hyper_inputs = 3;
  arch.g_hidden = 8;
  return arch;
}

constexpr Variant kVariants[] = {Variant::ffjord_concat_time, Variant::affjord_concat,
                                 Variant::affjord_hypernet};

}  // namespace

CheckResult check_cable_rule(const SuiteOptions& options) {
  const Timer timer;
  double worst = 0.0;
  for (std::size_t i = 0; i < options.fields; ++i) {
    const std::size_t n = 2 + i % 3;
    const std::uint64_t seed = options.seed * 7919 + i;
    const MlpTimeField field(seeded_field(n, seed));
    auto engine = derived_engine(seed, 101);
    const Vector z0 = normal_vector(n, engine);
    const Matrix j = jacobian_via_ode(field, z0, 1.0, SolverConfig::dopri5(1e-8, 1e-8));
    const Matrix fd = finite_diff_jacobian(
        [&](const Vector& z) { return flow_map(field, z, 0.0, 1.0, kFdSolver); }, z0, kFdStep);
    worst = std::max(worst, max_abs(Matrix(j - fd)));
  }
  return finish("cable_rule_jacobian", worst, 1e-4, timer, 60.0,
                std::to_string(options.fields) + " fields, dims 2-4, max |J_ode - J_fd|");
}

CheckResult check_change_of_variables(const SuiteOptions& options) {
  const Timer timer;
  double worst = 0.0;
  for (std::size_t i = 0; i < options.fields; ++i) {
    const std::size_t n = 2 + i % 4;
    const std::uint64_t seed = options.seed * 7919 + 1000 + i;
    FlowArchitecture arch;
    arch.variant = Variant::ffjord_concat_time;
    arch.data_dim = n;
    arch.hidden = {16, 16};
    const FlowModel base = FlowModel::initialize(arch, seed);
    const FlowModel model =
        base.with_params(2.0 * base.params()).with_solver(SolverConfig::dopri5(1e-8, 1e-8));
    auto engine = derived_engine(seed, 102);
    const Vector z0 = normal_vector(n, engine);
    const double dl = forward_with_logdet(model, z0).delta_logdet;
    const MlpTimeField field(model.main_field());
    const Matrix fd = finite_diff_jacobian(
        [&](const Vector& z) { return flow_map(field, z, 0.0, 1.0, kFdSolver); }, z0, kFdStep);
    worst = std::max(worst, relative_error(dl, log_abs_det(fd), 1.0));
  }
  return finish("change_of_variables", worst, 1e-3, timer, 60.0,
                std::to_string(options.fields) +
                    " fields, dims 2-5, |dlogdet - log|det J_fd|| / max(|.|, 1)");
}

CheckResult check_magnus_linear(const SuiteOptions& options) {
  const Timer timer;
  double worst = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    const std::size_t n = 2 + i % 3;
    auto engine = derived_engine(options.seed * 7919 + 2000 + i, 103);
    const LinearField field(normal_matrix(n, n, engine, 0.6));
    const Vector z0 = normal_vector(n, engine);
    const MagnusTruncation m = magnus_log_jacobian(field, z0, 1.0, 3);
    const Matrix j = jacobian_via_ode(field, z0, 1.0, kTightSolver);
    worst = std::max({worst, max_abs(m.terms[1]), max_abs(m.terms[2]),
                      max_abs(Matrix(mat_exp(m.terms[0]) - j))});
  }
  return finish("magnus_linear_exact", worst, 1e-7, timer, 0.0,
                "20 linear fields: max(|Omega_2|, |Omega_3|, |exp(Omega_1) - J|)");
}

CheckResult check_magnus_trace(const SuiteOptions& options) {
  const Timer timer;
  double worst = 0.0;
  for (std::size_t i = 0; i < 40; ++i) {
    const std::size_t n = 2 + i % 3;
    const std::uint64_t seed = options.seed * 7919 + 3000 + i;
    auto engine = derived_engine(seed, 104);
    const Vector z0 = normal_vector(n, engine);
    MagnusTruncation m;
    if (i % 2 == 0) {
      const AffineTimeLinearField field(normal_matrix(n, n, engine, 0.6),
                                        normal_matrix(n, n, engine, 0.6));
      m = magnus_log_jacobian(field, z0, 1.0, 3);
    } else {
      const MlpTimeField field(seeded_field(n, seed));
      m = magnus_log_jacobian(field, z0, 1.0, 3);
    }
    worst = std::max({worst, std::abs(m.terms[1].trace()), std::abs(m.terms[2].trace())});
  }
  return finish("magnus_commutator_trace", worst, 1e-8, timer, 0.0,
                "40 fields: max(|tr Omega_2|, |tr Omega_3|)");
}

CheckResult check_magnus_order(const SuiteOptions& options) {
  const Timer timer;
  double worst = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < 40; ++i) {
    const std::size_t n = 2 + i % 3;
    const std::uint64_t seed = options.seed * 7919 + 4000 + i;
    auto engine = derived_engine(seed, 105);
    const Vector z0 = normal_vector(n, engine);
    const double horizon = 0.5;
    std::unique_ptr<SmoothField> field;
    if (i % 2 == 0) {
      field = std::make_unique<AffineTimeLinearField>(normal_matrix(n, n, engine, 0.6),
                                                      normal_matrix(n, n, engine, 0.6));
    } else {
      field = std::make_unique<MlpTimeField>(seeded_field(n, seed));
    }
    const Matrix j = jacobian_via_ode(*field, z0, horizon, kTightSolver);
    const MagnusTruncation m = magnus_log_jacobian(*field, z0, horizon, 2);
    // Fields whose commutator term is negligible carry no information here.
    if (max_abs(m.terms[1]) < 1e-9) continue;
    const double e1 = (mat_exp(m.terms[0]) - j).norm();
    const double e2 = (mat_exp(Matrix(m.terms[0] + m.terms[1])) - j).norm();
    worst = std::max(worst, e2 / e1);
    ++count;
  }
  if (count == 0) worst = std::numeric_limits<double>::quiet_NaN();
  return finish("magnus_order2_improves", worst, 1.0, timer, 0.0,
                std::to_string(count) + " non-commuting fields at T=0.5: max err2/err1");
}

CheckResult check_gradient_triangulation(const SuiteOptions& options) {
  const Timer timer;
  double worst = 0.0;
  std::string detail;
  for (Variant v : kVariants) {
    const std::uint64_t seed = options.seed * 7919 + 5000 + static_cast<std::uint64_t>(v);
    const FlowModel model = FlowModel::initialize(small_architecture(v), seed);
    auto engine = derived_engine(seed, 106);
    Matrix batch(8, 2);
    for (Eigen::Index r = 0; r < batch.rows(); ++r) batch.row(r) = normal_vector(2, engine);

    const FlowGradient adjoint = flow_nll_gradient(model, batch, GradientMethod::adjoint);
    const FlowGradient discrete = flow_nll_gradient(model, batch, GradientMethod::discrete);
    auto loss = [&](const Vector& p) {
      return -log_likelihood(model.with_params(p), batch).log_likelihood.mean();
    };

    const auto p = static_cast<Eigen::Index>(model.params().size());
    std::uniform_int_distribution<Eigen::Index> pick(0, p - 1);
    const double scale = std::max(max_abs(adjoint.gradient), 1e-12);
    double variant_worst = 0.0;
    for (int k = 0; k < 20; ++k) {
      const Eigen::Index j = pick(engine);
      Vector plus = model.params();
      Vector minus = model.params();
      plus(j) += kFdStep;
      minus(j) -= kFdStep;
      const double fd = (loss(plus) - loss(minus)) / (2.0 * kFdStep);
      const double a = adjoint.gradient(j);
      const double d = discrete.gradient(j);
      // Coordinates far below the gradient's scale are compared against it.
      const double floor = 1e-3 * scale;
      variant_worst = std::max({variant_worst, relative_error(a, d, floor),
                                relative_error(a, fd, floor), relative_error(d, fd, floor)});
    }
    worst = std::max(worst, variant_worst);
    detail += to_string(v) + "=" + fmt("%.2e", variant_worst) + " ";
  }
  detail += "(20 sampled coordinates each, pairwise relative)";
  return finish("gradient_triangulation", worst, 1e-3, timer, 120.0, detail);
}

namespace {

TerminalLoss quadratic_loss(const Vector& y) {
  // L = sum_i (i + 1) y_i / n + |y|^2 / 2: no symmetry forces a zero gradient.
  const Eigen::Index n = y.size();
  const Vector w = Vector::LinSpaced(n, 1.0, static_cast<double>(n)) / static_cast<double>(n);
  return {w.dot(y) + 0.5 * y.squaredNorm(), w + y};
}

}  // namespace

CheckResult check_piecewise_tied(const SuiteOptions& options) {
  const Timer timer;
  double worst = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    const std::size_t n = 2 + i % 3;
    const std::uint64_t seed = options.seed * 7919 + 6000 + i;
    const FieldDynamics dyn(seeded_field(n, seed, 12));
    auto engine = derived_engine(seed, 107);
    const Vector z0 = normal_vector(n, engine);
    const PiecewiseGradient pw =
        piecewise_adjoint_gradient(dyn, dyn, z0, 1.0, quadratic_loss, SolverConfig::rk4(20));
    const GradientResult whole =
        adjoint_gradient(dyn, z0, 0.0, 1.0, quadratic_loss, SolverConfig::rk4(40));
    const Vector sum = pw.first_gradient + pw.second_gradient;
    worst = std::max(worst, max_abs(Vector(sum - whole.param_gradient)) /
                                std::max(1.0, max_abs(whole.param_gradient)));
  }
  return finish("piecewise_tied_sum", worst, 1e-6, timer, 0.0,
                "10 fields: max |g_first + g_second - g_whole| / max(|g_whole|, 1)");
}

CheckResult check_piecewise_fd(const SuiteOptions& options) {
  const Timer timer;
  double worst = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    const std::size_t n = 2 + i % 3;
    const std::uint64_t seed = options.seed * 7919 + 7000 + i;
    const MlpField f = seeded_field(n, seed, 10);
    const MlpField g = seeded_field(n, seed + 500, 10);
    auto engine = derived_engine(seed, 108);
    const Vector z0 = normal_vector(n, engine);
    const SolverConfig half = SolverConfig::rk4(100);
    const PiecewiseGradient pw = piecewise_adjoint_gradient(FieldDynamics(f), FieldDynamics(g), z0,
                                                            1.0, quadratic_loss, half);
    auto loss = [&](const MlpField& ff, const MlpField& gg) {
      const Vector mid = flow_map(MlpTimeField(ff), z0, 0.0, 0.5, half);
      return quadratic_loss(flow_map(MlpTimeField(gg), mid, 0.5, 1.0, half)).value;
    };
    const double scale = std::max({max_abs(pw.first_gradient), max_abs(pw.second_gradient), 1e-12});
    for (int side = 0; side < 2; ++side) {
      const MlpField& field = side == 0 ? f : g;
      const Vector& grad = side == 0 ? pw.first_gradient : pw.second_gradient;
      std::uniform_int_distribution<Eigen::Index> pick(0, grad.size() - 1);
      for (int k = 0; k < 10; ++k) {
        const Eigen::Index j = pick(engine);
        Vector plus = field.params();
        Vector minus = field.params();
        plus(j) += kFdStep;
        minus(j) -= kFdStep;
        const double fd = side == 0 ? (loss(f.with_params(plus), g) - loss(f.with_params(minus), g))
                                    : (loss(f, g.with_params(plus)) - loss(f, g.with_params(minus)));
        worst = std::max(worst, relative_error(grad(j), fd / (2.0 * kFdStep), 1e-3 * scale));
      }
    }
  }
  return finish("piecewise_fd", worst, 1e-3, timer, 0.0,
                "6 field pairs, 10 coordinates per half, relative");
}

namespace {

FlowModel structure_model(Variant v, std::uint64_t seed) {
  FlowArchitecture arch;
  arch.variant = v;
  arch.hidden = {32, 32};
  return FlowModel::initialize(arch, seed);
}

Matrix normal_batch(std::size_t rows, std::size_t dim, std::uint64_t seed) {
  return draw_base(rows, dim, seed);
}

}  // namespace

CheckResult check_augmented_spread(const SuiteOptions& options) {
  const Timer timer;
  double worst = 0.0;
  for (Variant v : {Variant::affjord_concat, Variant::affjord_hypernet}) {
    const std::uint64_t seed = options.seed * 7919 + 8000 + static_cast<std::uint64_t>(v);
    const FlowModel model = structure_model(v, seed);
    const InjectivityReport r = verify_injectivity(model, normal_batch(512, 2, seed));
    worst = std::max(worst, r.zstar_spread);
  }
  return finish("augmented_state_spread", worst, 1e-10, timer, 0.0,
                "512 samples solved one at a time, concat and hypernet: max |z*_b(T) - z*_0(T)|");
}

CheckResult check_block_lower_left(const SuiteOptions& options) {
  const Timer timer;
  double worst = 0.0;
  for (Variant v : {Variant::affjord_concat, Variant::affjord_hypernet}) {
    for (std::size_t i = 0; i < 5; ++i) {
      const std::uint64_t seed = options.seed * 7919 + 8100 + 10 * static_cast<std::uint64_t>(v) + i;
      const FlowModel model = structure_model(v, seed);
      auto engine = derived_engine(seed, 109);
      const BlockTriangularReport r = verify_block_triangular(model, normal_vector(2, engine));
      worst = std::max(worst, r.lower_left_max);
    }
  }
  return finish("joint_jacobian_lower_left", worst, 1e-6, timer, 0.0,
                "10 models: max |dz*(T)/dz(0)|");
}

CheckResult check_block_determinant(const SuiteOptions& options) {
  const Timer timer;
  double worst = 0.0;
  for (Variant v : {Variant::affjord_concat, Variant::affjord_hypernet}) {
    for (std::size_t i = 0; i < 5; ++i) {
      const std::uint64_t seed = options.seed * 7919 + 8200 + 10 * static_cast<std::uint64_t>(v) + i;
      const FlowModel model = structure_model(v, seed);
      auto engine = derived_engine(seed, 110);
      const BlockTriangularReport r = verify_block_triangular(model, normal_vector(2, engine));
      worst = std::max({worst, r.block_identity_error(), r.trace_identity_error()});
    }
  }
  return finish("block_determinant_identity", worst, 1e-4, timer, 0.0,
                "10 models: max(|logdet joint - blocks|, |trace integral - logdet data block|)");
}

CheckResult check_hutchinson(const SuiteOptions& options) {
  const Timer timer;
  constexpr std::size_t kProbes = 10000;
  double worst = 0.0;
  double replay = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    const std::size_t n = 2 + i % 4;
    const std::uint64_t seed = options.seed * 7919 + 9000 + i;
    const MlpField field = seeded_field(n, seed);
    auto engine = derived_engine(seed, 111);
    const Vector z = normal_vector(n, engine);
    const double t = 0.3;
    const std::span<const double> aux(&t, 1);
    const double exact = field.divergence_exact(z, aux);

    RademacherNoise noise(seed, n);
    const double mean = field.divergence_hutchinson(z, aux, noise, kProbes);
    // Replay the same probes against the explicit Jacobian for the spread.
    const Matrix jac = field.jacobian_z(z, aux);
    RademacherNoise again(seed, n);
    double sum = 0.0;
    double sum_sq = 0.0;
    for (std::size_t k = 0; k < kProbes; ++k) {
      const Vector e = again.draw();
      const double s = e.dot(jac * e);
      sum += s;
      sum_sq += s * s;
    }
    const double m = sum / kProbes;
    const double var = std::max(0.0, (sum_sq - kProbes * m * m) / (kProbes - 1));
    const double stderr_ = std::sqrt(var / kProbes);
    replay = std::max(replay, std::abs(m - mean));
    const double dev = std::abs(mean - exact);
    worst = std::max(worst, stderr_ > 0.0 ? dev / stderr_ : (dev < 1e-12 ? 0.0 : HUGE_VAL));
  }
  CheckResult r = finish("hutchinson_unbiased", worst, 3.0, timer, 0.0,
                         "20 fields, 1e4 Rademacher probes: max |mean - exact| / stderr; replay "
                         "mismatch " + fmt("%.1e", replay));
  r.pass = r.pass && replay < 1e-9;
  return r;
}

CheckResult check_flow_round_trip(const SuiteOptions& options) {
  const Timer timer;
  double worst = 0.0;
  std::string detail;
  for (Variant v : kVariants) {
    const std::uint64_t seed = options.seed * 7919 + 9500 + static_cast<std::uint64_t>(v);
    const FlowModel model = structure_model(v, seed);
    const Matrix x = normal_batch(512, 2, seed);
    const FlowForward fwd = forward_batch(model, x);
    const Matrix back = inverse_batch(model, fwd.z_terminal, fwd.zstar_terminal);
    const double err = max_abs(Matrix(back - x));
    worst = std::max(worst, err);
    detail += to_string(v) + "=" + fmt("%.1e", err) + " ";
  }
  detail += "(512 points, max |x - inverse(forward(x))|)";
  return finish("flow_round_trip", worst, 1e-4, timer, 0.0, detail);
}

CheckResult check_multiscale_round_trip(const SuiteOptions& options) {
  const Timer timer;
  double worst = 0.0;
  for (Variant v : kVariants) {
    MultiscaleArchitecture arch;
    arch.channels = 3;
    arch.size = 8;
    arch.levels = 2;
    arch.variant = v;
    arch.hidden = {32};
    arch.g_hidden = 16;
    const std::uint64_t seed = options.seed * 7919 + 9600 + static_cast<std::uint64_t>(v);
    const MultiscaleStack stack = MultiscaleStack::initialize(arch, seed);
    auto engine = derived_engine(seed, 112);
    const ImageTensor x(3, 8, normal_vector(3 * 8 * 8, engine));
    const MultiscaleForward fwd = pipeline_forward(stack, x);
    const ImageTensor back = pipeline_inverse(stack, fwd.output, fwd.state);
    worst = std::max(worst, max_abs(Vector(back.data - x.data)));
  }
  return finish("multiscale_round_trip", worst, 1e-5, timer, 0.0,
                "[3,8,8] input, all variants: max |x - inverse(forward(x))|");
}

CheckResult check_rk4_nfe(const SuiteOptions& options) {
  const Timer timer;
  double mismatches = 0.0;
  std::string detail;
  for (std::size_t steps : {1, 7, 40, 123}) {
    const SolverRun run = integrate([](double, const Vector& y, Vector& dy) { dy = -y; },
                                    Vector::Ones(3), 0.0, 1.0, SolverConfig::rk4(steps));
    if (run.nfe != 4 * steps) ++mismatches;
  }
  for (Variant v : kVariants) {
    const FlowModel model = structure_model(v, options.seed + 1);
    const std::size_t nfe = forward_batch(model, normal_batch(16, 2, options.seed)).nfe;
    if (nfe != 4 * model.solver().steps) ++mismatches;
    detail += to_string(v) + "=" + std::to_string(nfe) + " ";
  }
  detail += "(rk4/40 forward solves; value = mismatch count)";
  return finish("rk4_nfe_accounting", mismatches, 0.0, timer, 0.0, detail);
}

std::vector<CheckResult> run_identity_suite(const SuiteOptions& options) {
  using Check = CheckResult (*)(const SuiteOptions&);
  constexpr Check checks[] = {
      check_cable_rule,         check_change_of_variables,  check_magnus_linear,
      check_magnus_trace,       check_magnus_order,         check_gradient_triangulation,
      check_piecewise_tied,     check_piecewise_fd,         check_augmented_spread,
      check_block_lower_left,   check_block_determinant,    check_hutchinson,
      check_flow_round_trip,    check_multiscale_round_trip, check_rk4_nfe,
  };
  std::vector<CheckResult> out;
  for (Check c : checks) out.push_back(c(options));
  return out;
}

std::string checks_csv(const std::vector<CheckResult>& results) {
  std::string out = "name,pass,value,tolerance,seconds,time_limit,detail\n";
  for (const auto& r : results) {
    std::string detail = r.detail;
    std::replace(detail.begin(), detail.end(), '"', '\'');
    out += r.name + "," + (r.pass ? "1" : "0") + "," + fmt("%.6e", r.value) + "," +
           fmt("%.3e", r.tolerance) + "," + fmt("%.3f", r.seconds) + "," +
           fmt("%.0f", r.time_limit) + ",\"" + detail + "\"\n";
  }
  return out;
}

}  // namespace affjord
