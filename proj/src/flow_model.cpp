#include "affjord/flow_model.hpp"

#include "affjord/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace affjord {
namespace {

std::vector<std::size_t> widths_with(std::size_t in, const std::vector<std::size_t>& hidden,
                                     std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

Eigen::MatrixXd as_column(const Vector& v) { return Eigen::MatrixXd(v); }

// d(network output)/d(input) for a single input column.
Matrix input_jacobian(const MlpLayout& layout, Activation act, const Vector& params,
                      const Vector& x) {
  MlpTape tape(layout, act);
  const auto in = static_cast<Eigen::Index>(layout.input_dim());
  const Eigen::MatrixXd seeds = Eigen::MatrixXd::Identity(in, in);
  tape.forward(std::span(params.data(), params.size()), as_column(x), &seeds);
  return tape.output_tangents();
}

// d(network output)/d(params), one reverse pass per output.
Matrix output_param_jacobian(const MlpLayout& layout, Activation act, const Vector& params,
                             const Vector& x) {
  MlpTape tape(layout, act);
  const std::span<const double> p(params.data(), params.size());
  tape.forward(p, as_column(x));
  const auto out = static_cast<Eigen::Index>(layout.output_dim());
  Matrix jac = Matrix::Zero(out, params.size());
  Vector row(params.size());
  for (Eigen::Index i = 0; i < out; ++i) {
    row.setZero();
    tape.backward(p, as_column(Vector::Unit(out, i)), nullptr, nullptr,
                  std::span(row.data(), row.size()));
    jac.row(i) = row.transpose();
  }
  return jac;
}

}  // namespace

Variant parse_variant(const std::string& name) {
  std::string n = name;
  std::replace(n.begin(), n.end(), '_', '-');
  if (n == "ffjord" || n == "ffjord-concat-time") return Variant::ffjord_concat_time;
  if (n == "affjord-concat") return Variant::affjord_concat;
  if (n == "affjord" || n == "affjord-hypernet") return Variant::affjord_hypernet;
  throw ConfigurationError("unknown model variant '" + name + "'");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::ffjord_concat_time: return "ffjord-concat-time";
    case Variant::affjord_concat: return "affjord-concat";
    case Variant::affjord_hypernet: return "affjord-hypernet";
  }
  return "?";
}

TraceMode parse_trace_mode(const std::string& name) {
  if (name == "exact") return TraceMode::exact;
  if (name == "hutchinson") return TraceMode::hutchinson;
  throw ConfigurationError("unknown trace mode '" + name + "'");
}

std::string to_string(TraceMode t) { return t == TraceMode::exact ? "exact" : "hutchinson"; }

// -------------------------------------------------------- FlowArchitecture

void FlowArchitecture::validate() const {
  if (data_dim == 0) throw ConfigurationError("model: data dimension must be positive");
  if (hidden.empty()) throw ConfigurationError("model: at least one hidden layer is required");
  for (std::size_t h : hidden) {
    if (h == 0) throw ConfigurationError("model: hidden widths must be positive");
  }
  if (is_augmented(variant)) {
    if (aug_dim == 0) throw ConfigurationError("model: augmented dimension must be positive");
    if (g_hidden == 0) throw ConfigurationError("model: g hidden width must be positive");
  }
  if (variant == Variant::affjord_hypernet && (hyper_inputs == 0 || hyper_inputs > aug_dim)) {
    throw ConfigurationError("model: hypernet inputs must lie in [1, aug_dim]");
  }
}

MlpLayout FlowArchitecture::main_layout() const {
  const std::size_t aux = variant == Variant::ffjord_concat_time ? 1 : aug_dim;
  return MlpLayout(widths_with(data_dim + aux, hidden, data_dim));
}

MlpLayout FlowArchitecture::g_layout() const {
  return MlpLayout({aug_dim, g_hidden, aug_dim});
}

std::size_t FlowArchitecture::main_param_count() const {
  const std::size_t p = main_layout().param_count();
  return variant == Variant::affjord_hypernet ? hyper_inputs * p : p;
}

std::size_t FlowArchitecture::aug_param_count() const {
  return is_augmented(variant) ? g_layout().param_count() : 0;
}

// --------------------------------------------------------------- FlowModel

FlowModel::FlowModel(FlowArchitecture arch, Vector params, SolverConfig solver, TraceMode trace,
                     double horizon)
    : arch_(std::move(arch)),
      params_(std::move(params)),
      solver_(solver),
      trace_(trace),
      horizon_(horizon) {
  arch_.validate();
  solver_.validate();
  if (static_cast<std::size_t>(params_.size()) != arch_.param_count()) {
    throw DimensionError("FlowModel: expected " + std::to_string(arch_.param_count()) +
                         " parameters, got " + std::to_string(params_.size()));
  }
  if (!(horizon_ > 0.0) || !std::isfinite(horizon_)) {
    throw ConfigurationError("FlowModel: horizon must be positive and finite");
  }
}

FlowModel FlowModel::initialize(const FlowArchitecture& arch, std::uint64_t seed,
                                SolverConfig solver, TraceMode trace) {
  arch.validate();
  Vector params(static_cast<Eigen::Index>(arch.param_count()));
  const MlpLayout main = arch.main_layout();
  auto engine = derived_engine(seed, 11);
  if (arch.variant == Variant::affjord_hypernet) {
    // Each column of W gets the fan-in bound of the parameter it generates.
    const std::size_t p = main.param_count();
    Vector bound(static_cast<Eigen::Index>(p));
    for (std::size_t l = 0; l < main.layer_count(); ++l) {
      const double b = 1.0 / std::sqrt(static_cast<double>(main.widths()[l]));
      const std::size_t end = main.bias_offset(l) + main.widths()[l + 1];
      for (std::size_t j = main.weight_offset(l); j < end; ++j) {
        bound(static_cast<Eigen::Index>(j)) = b;
      }
    }
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::size_t i = 0; i < arch.hyper_inputs; ++i) {
      for (std::size_t j = 0; j < p; ++j) {
        params(static_cast<Eigen::Index>(i * p + j)) = u(engine) * bound(static_cast<Eigen::Index>(j));
      }
    }
  } else {
    params.head(static_cast<Eigen::Index>(main.param_count())) = init_mlp_params(main, engine);
  }
  if (is_augmented(arch.variant)) {
    auto g_engine = derived_engine(seed, 12);
    params.tail(static_cast<Eigen::Index>(arch.aug_param_count())) =
        init_mlp_params(arch.g_layout(), g_engine);
  }
  return FlowModel(arch, std::move(params), solver, trace);
}

FlowModel FlowModel::zeros(const FlowArchitecture& arch, SolverConfig solver, TraceMode trace) {
  arch.validate();
  return FlowModel(arch, Vector::Zero(static_cast<Eigen::Index>(arch.param_count())), solver,
                   trace);
}

FlowModel FlowModel::with_params(Vector params) const {
  FlowModel m(arch_, std::move(params), solver_, trace_, horizon_);
  m.probes_ = probes_;
  return m;
}

FlowModel FlowModel::with_solver(SolverConfig solver) const {
  FlowModel m(arch_, params_, solver, trace_, horizon_);
  m.probes_ = probes_;
  return m;
}

FlowModel FlowModel::with_trace(TraceMode trace, std::size_t probes) const {
  if (probes == 0) throw ArgumentError("FlowModel: Hutchinson probe count must be >= 1");
  FlowModel m(arch_, params_, solver_, trace, horizon_);
  m.probes_ = probes;
  return m;
}

MlpField FlowModel::main_field() const {
  if (arch_.variant == Variant::affjord_hypernet) {
    throw ConfigurationError("FlowModel: hypernet main field depends on z*; use hypernet()");
  }
  const InputMode mode = arch_.variant == Variant::ffjord_concat_time ? InputMode::concat_time
                                                                      : InputMode::concat_augmented;
  return MlpField(arch_.main_layout().widths(), mode, arch_.data_dim, main_params(),
                  arch_.activation);
}

MlpField FlowModel::g_field() const {
  if (!is_augmented(arch_.variant)) {
    throw ConfigurationError("FlowModel: FFJORD models have no augmented field");
  }
  return MlpField(arch_.g_layout().widths(), InputMode::autonomous, arch_.aug_dim, aug_params(),
                  arch_.activation);
}

HypernetField FlowModel::hypernet() const {
  if (arch_.variant != Variant::affjord_hypernet) {
    throw ConfigurationError("FlowModel: not a hypernet model");
  }
  return HypernetField(arch_.data_dim, arch_.aug_dim, arch_.hyper_inputs, arch_.hidden,
                       arch_.g_hidden, main_params(), aug_params(), arch_.activation);
}

Vector FlowModel::main_params_at(const Vector& zstar) const {
  if (arch_.variant != Variant::affjord_hypernet) return main_params();
  if (static_cast<std::size_t>(zstar.size()) != arch_.aug_dim) {
    throw DimensionError("FlowModel: augmented state size mismatch");
  }
  const auto q = static_cast<Eigen::Index>(arch_.hyper_inputs);
  const auto p = static_cast<Eigen::Index>(arch_.main_layout().param_count());
  const Eigen::Map<const Matrix> w(params_.data(), q, p);
  return w.transpose() * zstar.head(q);
}

// ------------------------------------------------------- FlowBatchDynamics

FlowBatchDynamics::FlowBatchDynamics(const FlowModel& model, std::size_t batch,
                                     bool track_logdet, std::uint64_t probe_seed)
    : model_(&model),
      batch_(batch),
      track_logdet_(track_logdet),
      main_layout_(model.arch().main_layout()),
      g_layout_(is_augmented(model.arch().variant) ? model.arch().g_layout() : MlpLayout({1, 1})) {
  if (batch_ == 0) throw DimensionError("FlowBatchDynamics: empty batch");
  const auto n = static_cast<Eigen::Index>(model.data_dim());
  const auto b = static_cast<Eigen::Index>(batch_);
  if (!track_logdet_) return;
  if (model.trace_mode() == TraceMode::exact) {
    probes_ = Eigen::MatrixXd::Zero(n, n * b);
    for (Eigen::Index j = 0; j < n; ++j) probes_.row(j).segment(j * b, b).setOnes();
  } else {
    const auto k = static_cast<Eigen::Index>(model.probes());
    auto engine = derived_engine(probe_seed, 21);
    std::bernoulli_distribution coin(0.5);
    probes_.resize(n, k * b);
    // Column j*B + b is probe j of sample b.
    for (Eigen::Index c = 0; c < probes_.cols(); ++c) {
      for (Eigen::Index i = 0; i < n; ++i) probes_(i, c) = coin(engine) ? 1.0 : -1.0;
    }
  }
}

std::size_t FlowBatchDynamics::state_dim() const {
  return zstar_offset() + model_->aug_dim();
}

Vector FlowBatchDynamics::pack(const Matrix& z0) const {
  return pack(z0, Vector::Zero(static_cast<Eigen::Index>(model_->aug_dim())));
}

Vector FlowBatchDynamics::pack(const Matrix& z, const Vector& zstar) const {
  const std::size_t n = model_->data_dim();
  if (static_cast<std::size_t>(z.rows()) != batch_ || static_cast<std::size_t>(z.cols()) != n) {
    throw DimensionError("FlowBatchDynamics: batch must be " + std::to_string(batch_) + " x " +
                         std::to_string(n) + ", got " + std::to_string(z.rows()) + " x " +
                         std::to_string(z.cols()));
  }
  if (static_cast<std::size_t>(zstar.size()) != model_->aug_dim()) {
    throw DimensionError("FlowBatchDynamics: augmented state size mismatch");
  }
  Vector y = Vector::Zero(static_cast<Eigen::Index>(state_dim()));
  y.head(z.size()) = Eigen::Map<const Vector>(z.data(), z.size());
  y.tail(zstar.size()) = zstar;
  return y;
}

Matrix FlowBatchDynamics::unpack_z(const Vector& y) const {
  return Eigen::Map<const Matrix>(y.data(), static_cast<Eigen::Index>(batch_),
                                  static_cast<Eigen::Index>(model_->data_dim()));
}

Vector FlowBatchDynamics::unpack_logdet(const Vector& y) const {
  if (!track_logdet_) return Vector::Zero(static_cast<Eigen::Index>(batch_));
  return y.segment(static_cast<Eigen::Index>(logdet_offset()), static_cast<Eigen::Index>(batch_));
}

Vector FlowBatchDynamics::unpack_zstar(const Vector& y) const {
  return y.tail(static_cast<Eigen::Index>(model_->aug_dim()));
}

void FlowBatchDynamics::derivative(double t, const Vector& y, Vector& dydt) const {
  evaluate(t, y, nullptr, &dydt, nullptr, nullptr);
}

void FlowBatchDynamics::vjp(double t, const Vector& y, const Vector& cot, Vector& y_bar,
                            Vector& p_bar) const {
  evaluate(t, y, &cot, nullptr, &y_bar, &p_bar);
}

void FlowBatchDynamics::derivative_and_vjp(double t, const Vector& y, const Vector& cot,
                                           Vector& dydt, Vector& y_bar, Vector& p_bar) const {
  evaluate(t, y, &cot, &dydt, &y_bar, &p_bar);
}

void FlowBatchDynamics::evaluate(double t, const Vector& y, const Vector* cot, Vector* dydt,
                                 Vector* y_bar, Vector* p_bar) const {
  const FlowModel& model = *model_;
  const FlowArchitecture& arch = model.arch();
  const auto n = static_cast<Eigen::Index>(arch.data_dim);
  const auto b = static_cast<Eigen::Index>(batch_);
  const auto m = static_cast<Eigen::Index>(model.aug_dim());
  const auto lo = static_cast<Eigen::Index>(logdet_offset());
  const auto zo = static_cast<Eigen::Index>(zstar_offset());
  if (static_cast<std::size_t>(y.size()) != state_dim()) {
    throw DimensionError("FlowBatchDynamics: state size mismatch");
  }
  const bool augmented = is_augmented(arch.variant);
  const bool hyper = arch.variant == Variant::affjord_hypernet;

  const Vector zstar = y.segment(zo, m);
  const Vector theta = model.main_params_at(zstar);
  const std::span<const double> theta_span(theta.data(), theta.size());

  // The time or augmented state is common to the batch and enters as a bias.
  const Eigen::MatrixXd x = Eigen::Map<const Eigen::MatrixXd>(y.data(), n, b);
  const std::span<const double> shared =
      augmented ? std::span<const double>(zstar.data(), zstar.size()) : std::span(&t, 1);

  if (!tapes_.main) {
    tapes_.main.emplace(main_layout_, arch.activation);
    tapes_.g.emplace(g_layout_, arch.activation);
  }
  MlpTape& tape = *tapes_.main;
  tape.forward(theta_span, x, track_logdet_ ? &probes_ : nullptr, shared);

  const Vector phi = model.aug_params();
  MlpTape& g_tape = *tapes_.g;
  if (augmented) g_tape.forward(std::span(phi.data(), phi.size()), as_column(zstar));

  const Eigen::Index k = track_logdet_ ? static_cast<Eigen::Index>(tape.tangent_count()) : 0;
  const double probe_scale =
      model.trace_mode() == TraceMode::exact ? 1.0 : 1.0 / static_cast<double>(k);

  if (dydt != nullptr) {
    dydt->resize(y.size());
    Eigen::Map<Eigen::MatrixXd>(dydt->data(), n, b) = tape.output();
    if (track_logdet_) {
      const Eigen::MatrixXd& tangents = tape.output_tangents();
      Vector div = Vector::Zero(b);
      for (Eigen::Index j = 0; j < k; ++j) {
        div += (probes_.middleCols(j * b, b).cwiseProduct(tangents.middleCols(j * b, b)))
                   .colwise()
                   .sum()
                   .transpose();
      }
      dydt->segment(lo, b) = probe_scale * div;
    }
    if (augmented) dydt->segment(zo, m) = g_tape.output().col(0);
  }

  if (cot == nullptr) return;
  if (cot->size() != y.size()) throw DimensionError("FlowBatchDynamics: cotangent size mismatch");
  const auto main_count = static_cast<Eigen::Index>(arch.main_param_count());
  const Eigen::MatrixXd out_bar = Eigen::Map<const Eigen::MatrixXd>(cot->data(), n, b);
  Eigen::MatrixXd tangent_bar;
  if (track_logdet_) {
    const Vector cl = cot->segment(lo, b) * probe_scale;
    tangent_bar.resize(n, k * b);
    for (Eigen::Index j = 0; j < k; ++j) {
      tangent_bar.middleCols(j * b, b) =
          probes_.middleCols(j * b, b) * cl.asDiagonal();
    }
  }
  Vector theta_bar = Vector::Zero(theta.size());
  Eigen::MatrixXd input_bar;
  Vector zstar_bar;
  tape.backward(theta_span, out_bar, track_logdet_ ? &tangent_bar : nullptr, &input_bar,
                std::span(theta_bar.data(), theta_bar.size()), &zstar_bar);

  y_bar->setZero(y.size());
  Eigen::Map<Eigen::MatrixXd>(y_bar->data(), n, b) = input_bar;
  if (!augmented) {
    p_bar->head(main_count) += theta_bar;
    return;
  }
  if (hyper) {
    const auto q = static_cast<Eigen::Index>(arch.hyper_inputs);
    const Eigen::Index p = theta.size();
    const Eigen::Map<const Matrix> w(model.params().data(), q, p);
    zstar_bar.head(q) += w * theta_bar;
    Eigen::Map<Matrix>(p_bar->data(), q, p).noalias() += zstar.head(q) * theta_bar.transpose();
  } else {
    p_bar->head(main_count) += theta_bar;
  }
  Eigen::MatrixXd g_in_bar;
  g_tape.backward(std::span(phi.data(), phi.size()), as_column(cot->segment(zo, m)), nullptr,
                  &g_in_bar, std::span(p_bar->data() + main_count, phi.size()));
  zstar_bar += g_in_bar.col(0);
  y_bar->segment(zo, m) = zstar_bar;
}

// ---------------------------------------------------------- JointFlowField

JointFlowField::JointFlowField(const FlowModel& model) : model_(&model) {}

Vector JointFlowField::eval(double t, const Vector& y) const {
  const auto n = static_cast<Eigen::Index>(model_->data_dim());
  const auto m = static_cast<Eigen::Index>(model_->aug_dim());
  if (y.size() != n + m) throw DimensionError("JointFlowField: state size mismatch");
  const Vector z = y.head(n);
  if (m == 0) {
    const double aux = t;
    return model_->main_field().eval(z, std::span(&aux, 1));
  }
  const Vector zstar = y.tail(m);
  Vector out(n + m);
  if (model_->arch().variant == Variant::affjord_hypernet) {
    out.head(n) = model_->hypernet().eval(z, zstar);
  } else {
    out.head(n) = model_->main_field().eval(z, std::span(zstar.data(), zstar.size()));
  }
  out.tail(m) = model_->g_field().eval(zstar);
  return out;
}

Matrix JointFlowField::jacobian(double t, const Vector& y) const {
  const FlowArchitecture& arch = model_->arch();
  const auto n = static_cast<Eigen::Index>(arch.data_dim);
  const auto m = static_cast<Eigen::Index>(model_->aug_dim());
  if (y.size() != n + m) throw DimensionError("JointFlowField: state size mismatch");
  const MlpLayout layout = arch.main_layout();
  if (m == 0) {
    const double aux = t;
    return model_->main_field().jacobian_z(y, std::span(&aux, 1));
  }
  const Vector zstar = y.tail(m);
  const Vector theta = model_->main_params_at(zstar);
  Matrix jac = Matrix::Zero(n + m, n + m);
  jac.topRows(n) = input_jacobian(layout, arch.activation, theta, y);
  if (arch.variant == Variant::affjord_hypernet) {
    // Chain through theta = W^T z*[0:q].
    const auto q = static_cast<Eigen::Index>(arch.hyper_inputs);
    const Eigen::Map<const Matrix> w(model_->params().data(), q, theta.size());
    const Matrix dtheta = output_param_jacobian(layout, arch.activation, theta, y);
    jac.block(0, n, n, q) += dtheta * w.transpose();
  }
  jac.bottomRightCorner(m, m) = model_->g_field().jacobian_z(zstar);
  return jac;
}

// --------------------------------------------------- CoupledAugmentedField

CoupledAugmentedField::CoupledAugmentedField(std::size_t data_dim, std::size_t aug_dim,
                                             std::vector<std::size_t> hidden, std::uint64_t seed)
    : n_(data_dim),
      m_(aug_dim),
      f_(MlpField::initialize(widths_with(data_dim + aug_dim, hidden, data_dim),
                              InputMode::concat_augmented, data_dim, seed)),
      g_(MlpField::initialize(widths_with(data_dim + aug_dim, hidden, aug_dim),
                              InputMode::concat_augmented, aug_dim, seed + 1)) {}

Vector CoupledAugmentedField::eval(double, const Vector& y) const {
  const auto n = static_cast<Eigen::Index>(n_);
  const auto m = static_cast<Eigen::Index>(m_);
  if (y.size() != n + m) throw DimensionError("CoupledAugmentedField: state size mismatch");
  const Vector z = y.head(n);
  const Vector zs = y.tail(m);
  Vector out(n + m);
  out.head(n) = f_.eval(z, std::span(zs.data(), zs.size()));
  out.tail(m) = g_.eval(zs, std::span(z.data(), z.size()));
  return out;
}

Matrix CoupledAugmentedField::jacobian(double, const Vector& y) const {
  const auto n = static_cast<Eigen::Index>(n_);
  const auto m = static_cast<Eigen::Index>(m_);
  if (y.size() != n + m) throw DimensionError("CoupledAugmentedField: state size mismatch");
  Vector swapped(n + m);
  swapped.head(m) = y.tail(m);
  swapped.tail(n) = y.head(n);
  Matrix jac(n + m, n + m);
  jac.topRows(n) = input_jacobian(f_.layout(), f_.activation(), f_.params(), y);
  const Matrix g = input_jacobian(g_.layout(), g_.activation(), g_.params(), swapped);
  jac.bottomLeftCorner(m, n) = g.rightCols(n);
  jac.bottomRightCorner(m, m) = g.leftCols(m);
  return jac;
}

}  // namespace affjord
