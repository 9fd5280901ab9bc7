#include "affjord/cnf_flow.hpp"

#include "affjord/errors.hpp"
#include "affjord/sensitivity.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace affjord {
namespace {

OdeFunction rhs_of(const ParametricDynamics& dyn) {
  return [&dyn](double t, const Vector& y, Vector& dydt) { dyn.derivative(t, y, dydt); };
}

}  // namespace

FlowForward forward_batch(const FlowModel& model, const Matrix& x, const ForwardOptions& options) {
  if (options.require_exact && model.trace_mode() != TraceMode::exact) {
    throw ConfigurationError("exact log-density requested from a Hutchinson-trace model");
  }
  if (static_cast<std::size_t>(x.cols()) != model.data_dim()) {
    throw DimensionError("forward: input has " + std::to_string(x.cols()) +
                         " columns, model dimension is " + std::to_string(model.data_dim()));
  }
  require_finite(x, "forward input");
  const FlowBatchDynamics dyn(model, static_cast<std::size_t>(x.rows()), true,
                              options.probe_seed);
  const SolverRun run = integrate(rhs_of(dyn), dyn.pack(x), 0.0, model.horizon(), model.solver());
  FlowForward out;
  out.z_terminal = dyn.unpack_z(run.state);
  out.delta_logdet = dyn.unpack_logdet(run.state);
  out.zstar_terminal = dyn.unpack_zstar(run.state);
  out.nfe = run.nfe;
  return out;
}

SingleForward forward_with_logdet(const FlowModel& model, const Vector& x,
                                  const ForwardOptions& options) {
  const FlowForward f = forward_batch(model, x.transpose(), options);
  return {f.z_terminal.row(0).transpose(), f.delta_logdet(0), f.nfe};
}

double standard_normal_log_density(const Vector& z) {
  return -0.5 * z.squaredNorm() -
         0.5 * static_cast<double>(z.size()) * std::log(2.0 * std::numbers::pi);
}

Likelihood log_likelihood(const FlowModel& model, const Matrix& x, const ForwardOptions& options) {
  const FlowForward f = forward_batch(model, x, options);
  Likelihood out;
  out.nfe = f.nfe;
  out.log_likelihood.resize(x.rows());
  for (Eigen::Index b = 0; b < x.rows(); ++b) {
    out.log_likelihood(b) =
        standard_normal_log_density(f.z_terminal.row(b).transpose()) + f.delta_logdet(b);
  }
  return out;
}

double bits_per_dim(double log_likelihood, std::size_t dim) {
  if (dim == 0) throw ArgumentError("bits_per_dim: dimension must be positive");
  return -log_likelihood / (static_cast<double>(dim) * std::numbers::ln2);
}

Vector augmented_terminal(const FlowModel& model) {
  if (!is_augmented(model.arch().variant)) return Vector();
  const MlpField g = model.g_field();
  const OdeFunction rhs = [&g](double, const Vector& y, Vector& dydt) { dydt = g.eval(y); };
  return integrate(rhs, Vector::Zero(static_cast<Eigen::Index>(model.aug_dim())), 0.0,
                   model.horizon(), model.solver())
      .state;
}

Matrix inverse_batch(const FlowModel& model, const Matrix& z_terminal, std::size_t* nfe) {
  return inverse_batch(model, z_terminal, augmented_terminal(model), nfe);
}

Matrix inverse_batch(const FlowModel& model, const Matrix& z_terminal,
                     const Vector& zstar_terminal, std::size_t* nfe) {
  if (static_cast<std::size_t>(z_terminal.cols()) != model.data_dim()) {
    throw DimensionError("inverse: base points have wrong dimension");
  }
  require_finite(z_terminal, "inverse input");
  const FlowBatchDynamics dyn(model, static_cast<std::size_t>(z_terminal.rows()), false);
  const Vector y_terminal = dyn.pack(z_terminal, zstar_terminal);
  const SolverRun run = integrate(rhs_of(dyn), y_terminal, model.horizon(), 0.0, model.solver());
  if (nfe != nullptr) *nfe = run.nfe;
  return dyn.unpack_z(run.state);
}

Matrix draw_base(std::size_t count, std::size_t dim, std::uint64_t seed) {
  auto engine = derived_engine(seed, 31);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix z(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index j = 0; j < z.cols(); ++j) z(i, j) = normal(engine);
  }
  return z;
}

Matrix sample(const FlowModel& model, std::size_t count, std::uint64_t seed) {
  if (count == 0) throw ArgumentError("sample: count must be positive");
  return inverse_batch(model, draw_base(count, model.data_dim(), seed));
}

InjectivityReport verify_injectivity(const FlowModel& model, const Matrix& batch) {
  if (batch.rows() < 2) throw ArgumentError("verify_injectivity: need at least two samples");
  const auto rows = batch.rows();
  Matrix outputs(rows, batch.cols());
  std::vector<Vector> zstars;
  zstars.reserve(static_cast<std::size_t>(rows));
  const FlowBatchDynamics dyn(model, 1, false);
  for (Eigen::Index b = 0; b < rows; ++b) {
    const SolverRun run = integrate(rhs_of(dyn), dyn.pack(batch.row(b)), 0.0, model.horizon(),
                                    model.solver());
    outputs.row(b) = dyn.unpack_z(run.state).row(0);
    zstars.push_back(dyn.unpack_zstar(run.state));
  }
  InjectivityReport report;
  for (const Vector& zs : zstars) {
    if (zs.size() > 0) {
      report.zstar_spread = std::max(report.zstar_spread, max_abs(Vector(zs - zstars.front())));
    }
  }
  report.min_input_separation = std::numeric_limits<double>::infinity();
  report.min_output_separation = std::numeric_limits<double>::infinity();
  report.injective = true;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = i + 1; j < rows; ++j) {
      const double din = (batch.row(i) - batch.row(j)).norm();
      const double dout = (outputs.row(i) - outputs.row(j)).norm();
      report.min_input_separation = std::min(report.min_input_separation, din);
      report.min_output_separation = std::min(report.min_output_separation, dout);
      if (din > 0.0 && dout == 0.0) report.injective = false;
    }
  }
  return report;
}

double BlockTriangularReport::block_identity_error() const {
  return std::abs(log_det_joint - (log_det_data_block + log_det_aug_block));
}

double BlockTriangularReport::trace_identity_error() const {
  return std::abs(trace_integral - log_det_data_block);
}

BlockTriangularReport block_triangular_report(const SmoothField& joint, std::size_t data_dim,
                                              const Vector& y0, double horizon,
                                              const SolverConfig& solver) {
  const auto d = static_cast<Eigen::Index>(joint.dim());
  const auto n = static_cast<Eigen::Index>(data_dim);
  if (y0.size() != d || n == 0 || n > d) {
    throw DimensionError("block_triangular_report: inconsistent dimensions");
  }
  const Eigen::Index m = d - n;
  BlockTriangularReport report;
  report.joint_jacobian = jacobian_via_ode(joint, y0, horizon, solver);
  const Matrix& j = report.joint_jacobian;
  report.lower_left_max = m > 0 ? max_abs(Matrix(j.bottomLeftCorner(m, n))) : 0.0;
  report.log_det_joint = log_abs_det(j);
  report.log_det_data_block = log_abs_det(Matrix(j.topLeftCorner(n, n)));
  report.log_det_aug_block = m > 0 ? log_abs_det(Matrix(j.bottomRightCorner(m, m))) : 0.0;

  const OdeFunction rhs = [&](double t, const Vector& y, Vector& dydt) {
    const Vector state = y.head(d);
    dydt.resize(d + 1);
    dydt.head(d) = joint.eval(t, state);
    dydt(d) = joint.jacobian(t, state).topLeftCorner(n, n).trace();
  };
  Vector aug = Vector::Zero(d + 1);
  aug.head(d) = y0;
  report.trace_integral = integrate(rhs, aug, 0.0, horizon, solver).state(d);
  return report;
}

BlockTriangularReport verify_block_triangular(const FlowModel& model, const Vector& z0) {
  const auto n = static_cast<Eigen::Index>(model.data_dim());
  const auto m = static_cast<Eigen::Index>(model.aug_dim());
  if (z0.size() != n) throw DimensionError("verify_block_triangular: point has wrong dimension");
  const FlowModel exact = model.trace_mode() == TraceMode::exact
                              ? model
                              : model.with_trace(TraceMode::exact);
  const JointFlowField joint(exact);
  Vector y0 = Vector::Zero(n + m);
  y0.head(n) = z0;
  BlockTriangularReport report =
      block_triangular_report(joint, model.data_dim(), y0, exact.horizon(), exact.solver());
  // The likelihood path's own trace accumulator, not the joint re-derivation.
  report.trace_integral = forward_with_logdet(exact, z0).delta_logdet;
  return report;
}

}  // namespace affjord
