#include "affjord/training.hpp"

#include "affjord/errors.hpp"
#include "affjord/sensitivity.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace affjord {
namespace {

OdeFunction rhs_of(const ParametricDynamics& dyn) {
  return [&dyn](double t, const Vector& y, Vector& dydt) { dyn.derivative(t, y, dydt); };
}

TerminalLoss checked_loss(const TerminalLossFn& loss, const Vector& terminal) {
  TerminalLoss l = loss(terminal);
  if (l.gradient.size() != terminal.size()) {
    throw DimensionError("loss gradient size differs from the state size");
  }
  if (!std::isfinite(l.value) || !all_finite(l.gradient)) {
    throw DomainError("loss or its gradient is not finite");
  }
  return l;
}

struct AdjointLeg {
  Vector state;
  Vector adjoint;
  Vector param_gradient;
  std::size_t nfe = 0;
};

// Integrates [y, a, g] from t_end back to t_begin.
AdjointLeg adjoint_leg(const ParametricDynamics& dyn, const Vector& y_end, const Vector& a_end,
                       double t_end, double t_begin, const SolverConfig& config) {
  const auto s = static_cast<Eigen::Index>(dyn.state_dim());
  const auto p = static_cast<Eigen::Index>(dyn.param_dim());
  Vector aug = Vector::Zero(2 * s + p);
  aug.head(s) = y_end;
  aug.segment(s, s) = a_end;
  const OdeFunction rhs = [&dyn, s, p](double t, const Vector& u, Vector& du) {
    const Vector y = u.head(s);
    const Vector a = u.segment(s, s);
    Vector f, y_bar;
    Vector p_bar = Vector::Zero(p);
    dyn.derivative_and_vjp(t, y, a, f, y_bar, p_bar);
    du.resize(u.size());
    du.head(s) = f;
    du.segment(s, s) = -y_bar;
    du.tail(p) = -p_bar;
  };
  const SolverRun run = integrate(rhs, aug, t_end, t_begin, config);
  return {run.state.head(s), run.state.segment(s, s), run.state.tail(p), run.nfe};
}

}  // namespace

GradientResult adjoint_gradient(const ParametricDynamics& dyn, const Vector& y0, double t0,
                                double t1, const TerminalLossFn& loss,
                                const SolverConfig& config) {
  if (static_cast<std::size_t>(y0.size()) != dyn.state_dim()) {
    throw DimensionError("adjoint_gradient: initial state size mismatch");
  }
  const SolverRun fwd = integrate(rhs_of(dyn), y0, t0, t1, config);
  const TerminalLoss l = checked_loss(loss, fwd.state);
  const AdjointLeg back = adjoint_leg(dyn, fwd.state, l.gradient, t1, t0, config);
  return {l.value, back.param_gradient, back.adjoint, fwd.nfe, back.nfe};
}

GradientResult discrete_backprop_gradient(const ParametricDynamics& dyn, const Vector& y0,
                                          double t0, double t1, const TerminalLossFn& loss,
                                          std::size_t steps, std::size_t memory_limit_bytes) {
  if (steps == 0) throw ConfigurationError("discrete_backprop_gradient: steps must be >= 1");
  const std::size_t s = dyn.state_dim();
  if (static_cast<std::size_t>(y0.size()) != s) {
    throw DimensionError("discrete_backprop_gradient: initial state size mismatch");
  }
  const double bytes = static_cast<double>(steps + 1) * static_cast<double>(s) * sizeof(double);
  if (bytes > static_cast<double>(memory_limit_bytes)) {
    throw ResourceError("discrete_backprop_gradient: unrolled trajectory needs " +
                        std::to_string(static_cast<std::size_t>(bytes)) + " bytes, limit is " +
                        std::to_string(memory_limit_bytes));
  }
  const double h = (t1 - t0) / static_cast<double>(steps);
  std::vector<Vector> ys;
  ys.reserve(steps + 1);
  ys.push_back(y0);
  GradientResult out;
  Vector k1, k2, k3, k4;
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = t0 + static_cast<double>(i) * h;
    const Vector& y = ys.back();
    dyn.derivative(t, y, k1);
    dyn.derivative(t + 0.5 * h, y + 0.5 * h * k1, k2);
    dyn.derivative(t + 0.5 * h, y + 0.5 * h * k2, k3);
    dyn.derivative(t + h, y + h * k3, k4);
    Vector next = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    require_finite(next, "discrete_backprop_gradient state");
    ys.push_back(std::move(next));
    out.forward_nfe += 4;
  }
  const TerminalLoss l = checked_loss(loss, ys.back());
  out.loss = l.value;

  Vector y_bar = l.gradient;
  Vector p_bar = Vector::Zero(static_cast<Eigen::Index>(dyn.param_dim()));
  Vector u_bar;
  for (std::size_t i = steps; i-- > 0;) {
    const double t = t0 + static_cast<double>(i) * h;
    const Vector& y = ys[i];
    dyn.derivative(t, y, k1);
    const Vector u2 = y + 0.5 * h * k1;
    dyn.derivative(t + 0.5 * h, u2, k2);
    const Vector u3 = y + 0.5 * h * k2;
    dyn.derivative(t + 0.5 * h, u3, k3);
    const Vector u4 = y + h * k3;
    out.backward_nfe += 3;

    Vector prev_bar = y_bar;
    Vector k4_bar = (h / 6.0) * y_bar;
    Vector k3_bar = (h / 3.0) * y_bar;
    Vector k2_bar = (h / 3.0) * y_bar;
    Vector k1_bar = (h / 6.0) * y_bar;
    dyn.vjp(t + h, u4, k4_bar, u_bar, p_bar);
    prev_bar += u_bar;
    k3_bar += h * u_bar;
    dyn.vjp(t + 0.5 * h, u3, k3_bar, u_bar, p_bar);
    prev_bar += u_bar;
    k2_bar += 0.5 * h * u_bar;
    dyn.vjp(t + 0.5 * h, u2, k2_bar, u_bar, p_bar);
    prev_bar += u_bar;
    k1_bar += 0.5 * h * u_bar;
    dyn.vjp(t, y, k1_bar, u_bar, p_bar);
    prev_bar += u_bar;
    out.backward_nfe += 4;
    y_bar = std::move(prev_bar);
  }
  out.param_gradient = std::move(p_bar);
  out.state_gradient = std::move(y_bar);
  return out;
}

PiecewiseGradient piecewise_adjoint_gradient(const ParametricDynamics& first,
                                             const ParametricDynamics& second, const Vector& y0,
                                             double horizon, const TerminalLossFn& loss,
                                             const SolverConfig& config) {
  if (first.state_dim() != second.state_dim()) {
    throw DimensionError("piecewise_adjoint_gradient: segments have different state sizes");
  }
  if (static_cast<std::size_t>(y0.size()) != first.state_dim()) {
    throw DimensionError("piecewise_adjoint_gradient: initial state size mismatch");
  }
  const double mid = 0.5 * horizon;
  const SolverRun a = integrate(rhs_of(first), y0, 0.0, mid, config);
  const SolverRun b = integrate(rhs_of(second), a.state, mid, horizon, config);
  const TerminalLoss l = checked_loss(loss, b.state);
  const AdjointLeg back2 = adjoint_leg(second, b.state, l.gradient, horizon, mid, config);
  const AdjointLeg back1 = adjoint_leg(first, back2.state, back2.adjoint, mid, 0.0, config);
  return {l.value, back1.param_gradient, back2.param_gradient, back1.adjoint};
}

Matrix total_derivative_decomposition(const SmoothField& field, const Vector& z0, double horizon,
                                      std::size_t grid_points) {
  if (grid_points < 2) throw ArgumentError("total_derivative_decomposition: need >= 2 nodes");
  const std::size_t steps = grid_points - 1;
  const JacobianTrajectory traj = jacobian_trajectory(field, z0, horizon, steps);
  const Matrix& jt = traj.jacobians.back();
  const double h = horizon / static_cast<double>(steps);
  Matrix total = Matrix::Zero(z0.size(), static_cast<Eigen::Index>(field.param_count()));
  for (std::size_t k = 0; k <= steps; ++k) {
    const double w = (k == 0 || k == steps) ? 0.5 * h : h;
    const Matrix propagate = jt * traj.jacobians[k].inverse();
    total += w * propagate * field.param_jacobian(traj.times[k], traj.states[k]);
  }
  return total;
}

TerminalLossFn flow_nll_loss(const FlowBatchDynamics& dyn) {
  return [&dyn](const Vector& y) {
    const Matrix z = dyn.unpack_z(y);
    const Vector logdet = dyn.unpack_logdet(y);
    const auto b = static_cast<double>(z.rows());
    const double log_norm = 0.5 * static_cast<double>(z.cols()) * std::log(2.0 * std::numbers::pi);
    TerminalLoss l;
    l.value = (0.5 * z.rowwise().squaredNorm().array() + log_norm - logdet.array()).mean();
    l.gradient = Vector::Zero(y.size());
    l.gradient.head(z.size()) = Eigen::Map<const Vector>(z.data(), z.size()) / b;
    if (dyn.tracks_logdet()) {
      l.gradient.segment(static_cast<Eigen::Index>(dyn.logdet_offset()), z.rows()).setConstant(-1.0 / b);
    }
    return l;
  };
}

FlowGradient flow_nll_gradient(const FlowModel& model, const Matrix& batch, GradientMethod method,
                               std::uint64_t probe_seed) {
  if (static_cast<std::size_t>(batch.cols()) != model.data_dim() || batch.rows() == 0) {
    throw DimensionError("flow_nll_gradient: batch shape does not match the model");
  }
  require_finite(batch, "training batch");
  const FlowBatchDynamics dyn(model, static_cast<std::size_t>(batch.rows()), true, probe_seed);
  const Vector y0 = dyn.pack(batch);
  GradientResult g;
  if (method == GradientMethod::adjoint) {
    g = adjoint_gradient(dyn, y0, 0.0, model.horizon(), flow_nll_loss(dyn), model.solver());
  } else {
    if (model.solver().method != SolverMethod::rk4) {
      throw ConfigurationError("discrete backprop is defined for fixed-step rk4 only");
    }
    g = discrete_backprop_gradient(dyn, y0, 0.0, model.horizon(), flow_nll_loss(dyn),
                                   model.solver().steps);
  }
  return {g.loss, std::move(g.param_gradient), g.forward_nfe, g.backward_nfe};
}

// -------------------------------------------------------------------- Adam

Adam::Adam(std::size_t dim, AdamConfig config)
    : config_(config),
      m_(Vector::Zero(static_cast<Eigen::Index>(dim))),
      v_(Vector::Zero(static_cast<Eigen::Index>(dim))) {
  if (!(config_.learning_rate >= 0.0)) throw ConfigurationError("adam: learning rate must be >= 0");
  if (!(config_.beta1 >= 0.0 && config_.beta1 < 1.0 && config_.beta2 >= 0.0 &&
        config_.beta2 < 1.0)) {
    throw ConfigurationError("adam: betas must lie in [0, 1)");
  }
  if (!(config_.epsilon > 0.0)) throw ConfigurationError("adam: epsilon must be positive");
}

void Adam::step(Vector& params, const Vector& grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw DimensionError("adam: parameter and gradient sizes must match the optimizer");
  }
  ++t_;
  m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * grad;
  v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  params.array() -= config_.learning_rate * (m_.array() / c1) /
                    ((v_.array() / c2).sqrt() + config_.epsilon);
}

double clip_global_norm(Vector& grad, double max_norm) {
  const double norm = grad.norm();
  if (max_norm > 0.0 && norm > max_norm) grad *= max_norm / norm;
  return norm;
}

// ------------------------------------------------------------------- train

void TrainConfig::validate() const {
  if (!(adam.learning_rate >= 0.0) || !std::isfinite(adam.learning_rate)) {
    throw ConfigurationError("train: learning rate must be >= 0");
  }
  if (batch_size == 0) throw ConfigurationError("train: batch size must be >= 1");
  if (eval_every == 0) throw ConfigurationError("train: eval cadence must be >= 1");
  if (dataset_size < 2) throw ConfigurationError("train: dataset needs at least two points");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigurationError("train: validation fraction must lie in (0, 1)");
  }
  if (!(clip_norm >= 0.0)) throw ConfigurationError("train: clip norm must be >= 0");
}

double validation_nll(const FlowModel& model, const Standardization& standardization,
                      const Matrix& data, std::size_t chunk) {
  if (data.rows() == 0) throw ArgumentError("validation_nll: empty data");
  const FlowModel exact =
      model.trace_mode() == TraceMode::exact ? model : model.with_trace(TraceMode::exact);
  const Matrix z = standardization.apply(data);
  double total = 0.0;
  for (Eigen::Index begin = 0; begin < z.rows(); begin += static_cast<Eigen::Index>(chunk)) {
    const Eigen::Index count = std::min<Eigen::Index>(static_cast<Eigen::Index>(chunk),
                                                      z.rows() - begin);
    total -= log_likelihood(exact, z.middleRows(begin, count)).log_likelihood.sum();
  }
  return total / static_cast<double>(z.rows()) + standardization.log_scale_sum();
}

TrainResult train(const FlowModel& model, const Matrix& data, const TrainConfig& config,
                  const std::function<void(const TrainLogRow&)>& on_row) {
  config.validate();
  if (data.rows() < 2 || static_cast<std::size_t>(data.cols()) != model.data_dim()) {
    throw DimensionError("train: data must have at least two rows of the model dimension");
  }
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    if (!config.record_wallclock) return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  auto split_engine = derived_engine(config.seed, 51);
  std::shuffle(order.begin(), order.end(), split_engine);
  const auto n_val = std::max<Eigen::Index>(
      1, static_cast<Eigen::Index>(std::llround(config.validation_fraction *
                                                static_cast<double>(data.rows()))));
  if (n_val >= data.rows()) throw ConfigurationError("train: validation split leaves no training data");
  Matrix val(n_val, data.cols());
  Matrix train_data(data.rows() - n_val, data.cols());
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const auto src = order[static_cast<std::size_t>(i)];
    if (i < n_val) {
      val.row(i) = data.row(src);
    } else {
      train_data.row(i - n_val) = data.row(src);
    }
  }

  TrainResult result{model, Standardization::identity(model.data_dim()), {}, false, {}, 0.0};
  if (config.standardize) result.standardization = fit_standardization(train_data);
  const Standardization& st = result.standardization;
  const Matrix train_std = st.apply(train_data);
  const double log_scale = st.log_scale_sum();

  auto emit = [&](TrainLogRow row) {
    row.wallclock_s = elapsed();
    result.log.push_back(row);
    if (on_row) on_row(row);
  };

  TrainLogRow first;
  first.iteration = 0;
  first.val_nll = validation_nll(model, st, val);
  result.final_val_nll = *first.val_nll;
  emit(first);

  Adam adam(model.arch().param_count(), config.adam);
  Vector params = model.params();
  auto batch_engine = derived_engine(config.seed, 52);
  std::uniform_int_distribution<Eigen::Index> pick(0, train_std.rows() - 1);
  Matrix batch(static_cast<Eigen::Index>(config.batch_size), train_std.cols());
  double nfe_total = 0.0;

  for (std::size_t it = 1; it <= config.iterations; ++it) {
    for (Eigen::Index r = 0; r < batch.rows(); ++r) batch.row(r) = train_std.row(pick(batch_engine));
    const FlowModel current = result.model;
    FlowGradient g;
    try {
      g = flow_nll_gradient(current, batch, GradientMethod::adjoint,
                            config.seed * 1000003ULL + it);
    } catch (const DomainError& e) {
      result.diverged = true;
      result.message = "iteration " + std::to_string(it) + ": " + e.what();
      break;
    } catch (const StiffnessError& e) {
      result.diverged = true;
      result.message = "iteration " + std::to_string(it) + ": " + e.what();
      break;
    }
    if (!std::isfinite(g.nll) || !all_finite(g.gradient)) {
      result.diverged = true;
      result.message = "iteration " + std::to_string(it) + ": non-finite loss or gradient";
      break;
    }
    clip_global_norm(g.gradient, config.clip_norm);
    adam.step(params, g.gradient);
    nfe_total += static_cast<double>(g.forward_nfe);

    TrainLogRow row;
    row.iteration = it;
    row.train_nll = g.nll + log_scale;
    row.nfe_mean = nfe_total / static_cast<double>(it);
    const FlowModel next = current.with_params(params);
    if (it % config.eval_every == 0 || it == config.iterations) {
      double v = std::numeric_limits<double>::quiet_NaN();
      try {
        v = validation_nll(next, st, val);
      } catch (const DomainError&) {
      } catch (const StiffnessError&) {
      }
      if (!std::isfinite(v)) {
        result.diverged = true;
        result.message = "iteration " + std::to_string(it) + ": non-finite validation loss";
        break;
      }
      row.val_nll = v;
      result.final_val_nll = v;
    }
    result.model = next;
    emit(row);
  }
  return result;
}

std::string train_log_csv(const std::vector<TrainLogRow>& log) {
  std::ostringstream out;
  out << "iteration,train_nll,val_nll,nfe_mean,wallclock_s\n";
  char buf[64];
  auto field = [&](const std::optional<double>& v) {
    if (!v) return std::string();
    std::snprintf(buf, sizeof buf, "%.10g", *v);
    return std::string(buf);
  };
  for (const auto& row : log) {
    out << row.iteration << ',' << field(row.train_nll) << ',' << field(row.val_nll) << ',';
    std::snprintf(buf, sizeof buf, "%.6g", row.nfe_mean);
    out << buf << ',';
    std::snprintf(buf, sizeof buf, "%.3f", row.wallclock_s);
    out << buf << '\n';
  }
  return out.str();
}

}  // namespace affjord
