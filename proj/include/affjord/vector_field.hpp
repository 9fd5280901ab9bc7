#pragma once

#include "affjord/core_math.hpp"
#include "affjord/mlp.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace affjord {

/// How the auxiliary input is fed to a field alongside the state z.
enum class InputMode {
  autonomous,        // f(z)
  concat_time,       // f([z, t])
  concat_augmented,  // f([z, z*])
};

enum class ProbeDistribution { rademacher, gaussian };

/// Seeded source of probe vectors for Hutchinson's trace estimator.
class RademacherNoise {
 public:
  RademacherNoise(std::uint64_t seed, std::size_t dim,
                  ProbeDistribution distribution = ProbeDistribution::rademacher);

  Vector draw();
  std::uint64_t seed() const { return seed_; }
  std::size_t dim() const { return dim_; }

 private:
  std::uint64_t seed_;
  std::size_t dim_;
  ProbeDistribution distribution_;
  std::mt19937_64 engine_;
};

/// Deterministic generator for stream `stream` derived from a root seed.
std::mt19937_64 derived_engine(std::uint64_t root_seed, std::uint64_t stream);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases for `layout`.
Vector init_mlp_params(const MlpLayout& layout, std::mt19937_64& engine);

/// A dense tanh (or softplus) network used as a vector field dz/dt.
///
/// The input is [z, aux] where aux is empty (autonomous), the scalar time, or
/// an augmented state. Only z is differentiated by `jacobian_z` and the
/// divergence routines; aux is held fixed.
class MlpField {
 public:
  MlpField(std::vector<std::size_t> widths, InputMode mode, std::size_t state_dim, Vector params,
           Activation activation = Activation::tanh);

  static MlpField initialize(std::vector<std::size_t> widths, InputMode mode,
                             std::size_t state_dim, std::uint64_t seed,
                             Activation activation = Activation::tanh);
  static MlpField zeros(std::vector<std::size_t> widths, InputMode mode, std::size_t state_dim,
                        Activation activation = Activation::tanh);

  MlpField with_params(Vector params) const;

  const MlpLayout& layout() const { return layout_; }
  InputMode mode() const { return mode_; }
  Activation activation() const { return activation_; }
  std::size_t state_dim() const { return state_dim_; }
  std::size_t aux_dim() const { return layout_.input_dim() - state_dim_; }
  std::size_t param_count() const { return layout_.param_count(); }
  const Vector& params() const { return params_; }

  Vector eval(const Vector& z, std::span<const double> aux = {}) const;
  Matrix jacobian_z(const Vector& z, std::span<const double> aux = {}) const;
  double divergence_exact(const Vector& z, std::span<const double> aux = {}) const;
  /// Mean of e^T (df/dz) e over `n_probes` probes, each formed from one
  /// vector-Jacobian product.
  double divergence_hutchinson(const Vector& z, std::span<const double> aux,
                               RademacherNoise& noise, std::size_t n_probes) const;
  /// upstream^T df/dtheta as a flat parameter vector.
  Vector param_gradient(const Vector& z, std::span<const double> aux,
                        const Vector& upstream) const;
  /// upstream^T df/dz.
  Vector state_vjp(const Vector& z, std::span<const double> aux, const Vector& upstream) const;

 private:
  Eigen::MatrixXd input_column(const Vector& z, std::span<const double> aux) const;

  MlpLayout layout_;
  InputMode mode_;
  std::size_t state_dim_;
  Vector params_;
  Activation activation_;
};

/// Main field whose parameters are produced by a linear hypernetwork from the
/// augmented state, plus the autonomous field g driving that state:
///
///   dz/dt  = f([z, z*]; theta(t)),  theta(t) = W^T z*[0:q]
///   dz*/dt = g(z*; phi)
///
/// W is q x p (row-major in `hyper_weights`), p the main-field parameter count.
class HypernetField {
 public:
  HypernetField(std::size_t state_dim, std::size_t aug_dim, std::size_t hyper_inputs,
                std::vector<std::size_t> main_hidden, std::size_t g_hidden, Vector hyper_weights,
                Vector g_params, Activation activation = Activation::tanh);

  std::size_t state_dim() const { return state_dim_; }
  std::size_t aug_dim() const { return aug_dim_; }
  std::size_t hyper_inputs() const { return hyper_inputs_; }
  const MlpLayout& main_layout() const { return main_layout_; }
  const MlpField& g_field() const { return g_; }
  const Vector& hyper_weights() const { return hyper_weights_; }
  Activation activation() const { return activation_; }

  /// theta(z*) = W^T z*[0:q].
  Vector generated_params(const Vector& zstar) const;
  /// The main field with parameters frozen at theta(z*).
  MlpField main_field_at(const Vector& zstar) const;

  Vector eval(const Vector& z, const Vector& zstar) const;
  Matrix jacobian_z(const Vector& z, const Vector& zstar) const;
  double divergence_exact(const Vector& z, const Vector& zstar) const;
  double divergence_hutchinson(const Vector& z, const Vector& zstar, RademacherNoise& noise,
                               std::size_t n_probes) const;
  /// upstream^T df/dW at fixed z*, flattened like `hyper_weights`.
  Vector param_gradient(const Vector& z, const Vector& zstar, const Vector& upstream) const;
  Vector g_eval(const Vector& zstar) const;

 private:
  std::size_t state_dim_;
  std::size_t aug_dim_;
  std::size_t hyper_inputs_;
  MlpLayout main_layout_;
  Vector hyper_weights_;
  MlpField g_;
  Activation activation_;
};

/// Smooth, possibly time-dependent vector field on R^n with an analytic
/// Jacobian. This is the interface the sensitivity verifiers work against.
class SmoothField {
 public:
  virtual ~SmoothField() = default;
  virtual std::size_t dim() const = 0;
  virtual Vector eval(double t, const Vector& z) const = 0;
  virtual Matrix jacobian(double t, const Vector& z) const = 0;
  virtual std::size_t param_count() const { return 0; }
  /// df/dtheta (n x p).
  virtual Matrix param_jacobian(double t, const Vector& z) const;
};

/// MlpField in autonomous or concat-time mode seen as f(z, t).
class MlpTimeField final : public SmoothField {
 public:
  explicit MlpTimeField(MlpField field);
  std::size_t dim() const override { return field_.state_dim(); }
  Vector eval(double t, const Vector& z) const override;
  Matrix jacobian(double t, const Vector& z) const override;
  std::size_t param_count() const override { return field_.param_count(); }
  Matrix param_jacobian(double t, const Vector& z) const override;
  const MlpField& field() const { return field_; }

 private:
  MlpField field_;
  std::vector<double> aux(double t) const;
};

/// f(z, t) = s(t) A z with optional scalar schedule s (defaults to 1).
/// Parameters are the entries of A, row-major.
class LinearField final : public SmoothField {
 public:
  explicit LinearField(Matrix a, std::function<double(double)> schedule = {});
  std::size_t dim() const override { return static_cast<std::size_t>(a_.rows()); }
  Vector eval(double t, const Vector& z) const override;
  Matrix jacobian(double t, const Vector& z) const override;
  std::size_t param_count() const override { return static_cast<std::size_t>(a_.size()); }
  Matrix param_jacobian(double t, const Vector& z) const override;

 private:
  Matrix a_;
  std::function<double(double)> schedule_;
};

/// A parameterised ODE right-hand side F(t, y; p) that can be differentiated
/// in reverse mode. Used by the adjoint and unrolled-backprop gradient routes.
class ParametricDynamics {
 public:
  virtual ~ParametricDynamics() = default;
  virtual std::size_t state_dim() const = 0;
  virtual std::size_t param_dim() const = 0;
  virtual void derivative(double t, const Vector& y, Vector& dydt) const = 0;
  /// y_bar = cot^T dF/dy (overwritten); p_bar += cot^T dF/dp.
  virtual void vjp(double t, const Vector& y, const Vector& cot, Vector& y_bar,
                   Vector& p_bar) const = 0;
  /// Both of the above at one point; overridden where a shared forward pass helps.
  virtual void derivative_and_vjp(double t, const Vector& y, const Vector& cot, Vector& dydt,
                                  Vector& y_bar, Vector& p_bar) const {
    derivative(t, y, dydt);
    vjp(t, y, cot, y_bar, p_bar);
  }
};

/// ParametricDynamics view of a single MlpField (autonomous or concat-time).
class FieldDynamics final : public ParametricDynamics {
 public:
  explicit FieldDynamics(MlpField field);
  std::size_t state_dim() const override { return field_.state_dim(); }
  std::size_t param_dim() const override { return field_.param_count(); }
  void derivative(double t, const Vector& y, Vector& dydt) const override;
  void vjp(double t, const Vector& y, const Vector& cot, Vector& y_bar,
           Vector& p_bar) const override;
  const MlpField& field() const { return field_; }

 private:
  MlpField field_;
};

}  // namespace affjord
