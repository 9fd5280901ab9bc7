#include "affjord/vector_field.hpp"

#include "affjord/errors.hpp"

#include <cmath>
#include <string>

namespace affjord {
namespace {

std::vector<double> time_aux(InputMode mode, double t) {
  if (mode == InputMode::concat_time) return {t};
  return {};
}

void check_aux(const MlpField& f, std::span<const double> aux) {
  if (aux.size() != f.aux_dim()) {
    throw DimensionError("MlpField: auxiliary input has " + std::to_string(aux.size()) +
                         " entries, field expects " + std::to_string(f.aux_dim()));
  }
}

}  // namespace

RademacherNoise::RademacherNoise(std::uint64_t seed, std::size_t dim,
                                 ProbeDistribution distribution)
    : seed_(seed), dim_(dim), distribution_(distribution), engine_(derived_engine(seed, 0)) {}

Vector RademacherNoise::draw() {
  Vector e(static_cast<Eigen::Index>(dim_));
  if (distribution_ == ProbeDistribution::rademacher) {
    std::bernoulli_distribution coin(0.5);
    for (Eigen::Index i = 0; i < e.size(); ++i) e(i) = coin(engine_) ? 1.0 : -1.0;
  } else {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < e.size(); ++i) e(i) = normal(engine_);
  }
  return e;
}

std::mt19937_64 derived_engine(std::uint64_t root_seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(root_seed),
                    static_cast<std::uint32_t>(root_seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

Vector init_mlp_params(const MlpLayout& layout, std::mt19937_64& engine) {
  Vector p(static_cast<Eigen::Index>(layout.param_count()));
  for (std::size_t l = 0; l < layout.layer_count(); ++l) {
    const std::size_t fan_in = layout.widths()[l];
    const std::size_t fan_out = layout.widths()[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    const std::size_t begin = layout.weight_offset(l);
    const std::size_t end = layout.bias_offset(l) + fan_out;
    for (std::size_t i = begin; i < end; ++i) p(static_cast<Eigen::Index>(i)) = u(engine);
  }
  return p;
}

// ---------------------------------------------------------------- MlpField

MlpField::MlpField(std::vector<std::size_t> widths, InputMode mode, std::size_t state_dim,
                   Vector params, Activation activation)
    : layout_(std::move(widths)),
      mode_(mode),
      state_dim_(state_dim),
      params_(std::move(params)),
      activation_(activation) {
  if (layout_.output_dim() != state_dim_ || layout_.input_dim() < state_dim_) {
    throw DimensionError("MlpField: widths must start at >= state_dim and end at state_dim");
  }
  const std::size_t aux = layout_.input_dim() - state_dim_;
  if ((mode_ == InputMode::autonomous && aux != 0) ||
      (mode_ == InputMode::concat_time && aux != 1) ||
      (mode_ == InputMode::concat_augmented && aux == 0)) {
    throw DimensionError("MlpField: input width inconsistent with input mode");
  }
  if (static_cast<std::size_t>(params_.size()) != layout_.param_count()) {
    throw DimensionError("MlpField: expected " + std::to_string(layout_.param_count()) +
                         " parameters, got " + std::to_string(params_.size()));
  }
}

MlpField MlpField::initialize(std::vector<std::size_t> widths, InputMode mode,
                              std::size_t state_dim, std::uint64_t seed, Activation activation) {
  MlpLayout layout(widths);
  auto engine = derived_engine(seed, 0);
  Vector p = init_mlp_params(layout, engine);
  return MlpField(std::move(widths), mode, state_dim, std::move(p), activation);
}

MlpField MlpField::zeros(std::vector<std::size_t> widths, InputMode mode, std::size_t state_dim,
                         Activation activation) {
  const std::size_t count = MlpLayout(widths).param_count();
  return MlpField(std::move(widths), mode, state_dim,
                  Vector::Zero(static_cast<Eigen::Index>(count)), activation);
}

MlpField MlpField::with_params(Vector params) const {
  return MlpField(layout_.widths(), mode_, state_dim_, std::move(params), activation_);
}

Eigen::MatrixXd MlpField::input_column(const Vector& z, std::span<const double> aux) const {
  if (static_cast<std::size_t>(z.size()) != state_dim_) {
    throw DimensionError("MlpField: state has " + std::to_string(z.size()) +
                         " entries, field expects " + std::to_string(state_dim_));
  }
  check_aux(*this, aux);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(layout_.input_dim()), 1);
  x.col(0).head(z.size()) = z;
  for (std::size_t i = 0; i < aux.size(); ++i) {
    x(static_cast<Eigen::Index>(state_dim_ + i), 0) = aux[i];
  }
  return x;
}

Vector MlpField::eval(const Vector& z, std::span<const double> aux) const {
  MlpTape tape(layout_, activation_);
  tape.forward(std::span(params_.data(), params_.size()), input_column(z, aux));
  return tape.output().col(0);
}

Matrix MlpField::jacobian_z(const Vector& z, std::span<const double> aux) const {
  MlpTape tape(layout_, activation_);
  const auto n = static_cast<Eigen::Index>(state_dim_);
  const Eigen::MatrixXd seeds = Eigen::MatrixXd::Identity(n, n);
  tape.forward(std::span(params_.data(), params_.size()), input_column(z, aux), &seeds);
  return tape.output_tangents();
}

double MlpField::divergence_exact(const Vector& z, std::span<const double> aux) const {
  return jacobian_z(z, aux).trace();
}

double MlpField::divergence_hutchinson(const Vector& z, std::span<const double> aux,
                                       RademacherNoise& noise, std::size_t n_probes) const {
  if (n_probes == 0) throw ArgumentError("divergence_hutchinson: n_probes must be >= 1");
  if (noise.dim() != state_dim_) throw DimensionError("divergence_hutchinson: noise dim mismatch");
  MlpTape tape(layout_, activation_);
  const std::span<const double> p(params_.data(), params_.size());
  tape.forward(p, input_column(z, aux));
  Vector scratch = Vector::Zero(params_.size());
  Eigen::MatrixXd input_bar;
  double total = 0.0;
  for (std::size_t k = 0; k < n_probes; ++k) {
    const Vector e = noise.draw();
    tape.backward(p, Eigen::MatrixXd(e), nullptr, &input_bar,
                  std::span(scratch.data(), scratch.size()));
    total += input_bar.col(0).head(z.size()).dot(e);
  }
  return total / static_cast<double>(n_probes);
}

Vector MlpField::param_gradient(const Vector& z, std::span<const double> aux,
                                const Vector& upstream) const {
  if (static_cast<std::size_t>(upstream.size()) != state_dim_) {
    throw DimensionError("param_gradient: upstream size mismatch");
  }
  MlpTape tape(layout_, activation_);
  const std::span<const double> p(params_.data(), params_.size());
  tape.forward(p, input_column(z, aux));
  Vector grad = Vector::Zero(params_.size());
  tape.backward(p, Eigen::MatrixXd(upstream), nullptr, nullptr,
                std::span(grad.data(), grad.size()));
  return grad;
}

Vector MlpField::state_vjp(const Vector& z, std::span<const double> aux,
                           const Vector& upstream) const {
  if (static_cast<std::size_t>(upstream.size()) != state_dim_) {
    throw DimensionError("state_vjp: upstream size mismatch");
  }
  MlpTape tape(layout_, activation_);
  const std::span<const double> p(params_.data(), params_.size());
  tape.forward(p, input_column(z, aux));
  Vector scratch = Vector::Zero(params_.size());
  Eigen::MatrixXd input_bar;
  tape.backward(p, Eigen::MatrixXd(upstream), nullptr, &input_bar,
                std::span(scratch.data(), scratch.size()));
  return input_bar.col(0).head(z.size());
}

// ----------------------------------------------------------- HypernetField

namespace {

std::vector<std::size_t> main_widths(std::size_t n, std::size_t m,
                                     const std::vector<std::size_t>& hidden) {
  std::vector<std::size_t> w{n + m};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(n);
  return w;
}

}  // namespace

HypernetField::HypernetField(std::size_t state_dim, std::size_t aug_dim,
                             std::size_t hyper_inputs, std::vector<std::size_t> main_hidden,
                             std::size_t g_hidden, Vector hyper_weights, Vector g_params,
                             Activation activation)
    : state_dim_(state_dim),
      aug_dim_(aug_dim),
      hyper_inputs_(hyper_inputs),
      main_layout_(main_widths(state_dim, aug_dim, main_hidden)),
      hyper_weights_(std::move(hyper_weights)),
      g_({aug_dim, g_hidden, aug_dim}, InputMode::autonomous, aug_dim, std::move(g_params),
         activation),
      activation_(activation) {
  if (hyper_inputs_ == 0 || hyper_inputs_ > aug_dim_) {
    throw DimensionError("HypernetField: hypernet inputs must be in [1, aug_dim]");
  }
  if (static_cast<std::size_t>(hyper_weights_.size()) !=
      hyper_inputs_ * main_layout_.param_count()) {
    throw DimensionError("HypernetField: hypernet weight count must be q * p");
  }
}

Vector HypernetField::generated_params(const Vector& zstar) const {
  if (static_cast<std::size_t>(zstar.size()) != aug_dim_) {
    throw DimensionError("HypernetField: augmented state size mismatch");
  }
  const auto q = static_cast<Eigen::Index>(hyper_inputs_);
  const auto p = static_cast<Eigen::Index>(main_layout_.param_count());
  const Eigen::Map<const Matrix> w(hyper_weights_.data(), q, p);
  return w.transpose() * zstar.head(q);
}

MlpField HypernetField::main_field_at(const Vector& zstar) const {
  return MlpField(main_layout_.widths(), InputMode::concat_augmented, state_dim_,
                  generated_params(zstar), activation_);
}

Vector HypernetField::eval(const Vector& z, const Vector& zstar) const {
  return main_field_at(zstar).eval(z, std::span(zstar.data(), zstar.size()));
}

Matrix HypernetField::jacobian_z(const Vector& z, const Vector& zstar) const {
  return main_field_at(zstar).jacobian_z(z, std::span(zstar.data(), zstar.size()));
}

double HypernetField::divergence_exact(const Vector& z, const Vector& zstar) const {
  return jacobian_z(z, zstar).trace();
}

double HypernetField::divergence_hutchinson(const Vector& z, const Vector& zstar,
                                            RademacherNoise& noise,
                                            std::size_t n_probes) const {
  return main_field_at(zstar).divergence_hutchinson(z, std::span(zstar.data(), zstar.size()),
                                                    noise, n_probes);
}

Vector HypernetField::param_gradient(const Vector& z, const Vector& zstar,
                                     const Vector& upstream) const {
  const Vector theta_bar =
      main_field_at(zstar).param_gradient(z, std::span(zstar.data(), zstar.size()), upstream);
  const auto q = static_cast<Eigen::Index>(hyper_inputs_);
  const auto p = static_cast<Eigen::Index>(main_layout_.param_count());
  Matrix w_bar = zstar.head(q) * theta_bar.transpose();
  return Eigen::Map<const Vector>(w_bar.data(), q * p);
}

Vector HypernetField::g_eval(const Vector& zstar) const { return g_.eval(zstar); }

// ------------------------------------------------------------- SmoothField

Matrix SmoothField::param_jacobian(double, const Vector&) const {
  throw ConfigurationError("SmoothField: field exposes no parameters");
}

MlpTimeField::MlpTimeField(MlpField field) : field_(std::move(field)) {
  if (field_.mode() == InputMode::concat_augmented) {
    throw ConfigurationError("MlpTimeField: augmented-input fields are not time fields");
  }
}

std::vector<double> MlpTimeField::aux(double t) const { return time_aux(field_.mode(), t); }

Vector MlpTimeField::eval(double t, const Vector& z) const {
  const auto a = aux(t);
  return field_.eval(z, a);
}

Matrix MlpTimeField::jacobian(double t, const Vector& z) const {
  const auto a = aux(t);
  return field_.jacobian_z(z, a);
}

Matrix MlpTimeField::param_jacobian(double t, const Vector& z) const {
  const auto a = aux(t);
  const auto n = static_cast<Eigen::Index>(field_.state_dim());
  Matrix jac(n, static_cast<Eigen::Index>(field_.param_count()));
  for (Eigen::Index i = 0; i < n; ++i) {
    jac.row(i) = field_.param_gradient(z, a, Vector::Unit(n, i)).transpose();
  }
  return jac;
}

LinearField::LinearField(Matrix a, std::function<double(double)> schedule)
    : a_(std::move(a)), schedule_(std::move(schedule)) {
  if (a_.rows() != a_.cols()) throw DimensionError("LinearField: matrix must be square");
}

Vector LinearField::eval(double t, const Vector& z) const {
  const double s = schedule_ ? schedule_(t) : 1.0;
  return s * (a_ * z);
}

Matrix LinearField::jacobian(double t, const Vector&) const {
  const double s = schedule_ ? schedule_(t) : 1.0;
  return s * a_;
}

Matrix LinearField::param_jacobian(double t, const Vector& z) const {
  const double s = schedule_ ? schedule_(t) : 1.0;
  const Eigen::Index n = a_.rows();
  Matrix jac = Matrix::Zero(n, n * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) jac(i, i * n + j) = s * z(j);
  }
  return jac;
}

// ----------------------------------------------------------- FieldDynamics

FieldDynamics::FieldDynamics(MlpField field) : field_(std::move(field)) {
  if (field_.mode() == InputMode::concat_augmented) {
    throw ConfigurationError("FieldDynamics: augmented-input fields need a flow model");
  }
}

void FieldDynamics::derivative(double t, const Vector& y, Vector& dydt) const {
  const auto a = time_aux(field_.mode(), t);
  dydt = field_.eval(y, a);
}

void FieldDynamics::vjp(double t, const Vector& y, const Vector& cot, Vector& y_bar,
                        Vector& p_bar) const {
  const auto a = time_aux(field_.mode(), t);
  MlpTape tape(field_.layout(), field_.activation());
  const std::span<const double> p(field_.params().data(), field_.params().size());
  Eigen::MatrixXd x(static_cast<Eigen::Index>(field_.layout().input_dim()), 1);
  x.col(0).head(y.size()) = y;
  if (!a.empty()) x(y.size(), 0) = a[0];
  tape.forward(p, x);
  Eigen::MatrixXd input_bar;
  tape.backward(p, Eigen::MatrixXd(cot), nullptr, &input_bar,
                std::span(p_bar.data(), p_bar.size()));
  y_bar = input_bar.col(0).head(y.size());
}

}  // namespace affjord
