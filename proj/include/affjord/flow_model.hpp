#pragma once

#include "affjord/core_math.hpp"
#include "affjord/mlp.hpp"
#include "affjord/ode_solver.hpp"
#include "affjord/vector_field.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace affjord {

enum class Variant { ffjord_concat_time, affjord_concat, affjord_hypernet };
enum class TraceMode { exact, hutchinson };

Variant parse_variant(const std::string& name);
std::string to_string(Variant v);
TraceMode parse_trace_mode(const std::string& name);
std::string to_string(TraceMode t);

inline bool is_augmented(Variant v) { return v != Variant::ffjord_concat_time; }

struct FlowArchitecture {
  Variant variant = Variant::affjord_hypernet;
  std::size_t data_dim = 2;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t aug_dim = 20;       // augmented variants only
  std::size_t hyper_inputs = 10;  // hypernet only; leading coordinates of z*
  std::size_t g_hidden = 20;      // augmented variants only
  Activation activation = Activation::tanh;

  void validate() const;
  /// Augmented dimension carried in the ODE state (0 for FFJORD).
  std::size_t state_aug_dim() const { return is_augmented(variant) ? aug_dim : 0; }
  /// Layout of the network evaluated on the data dimensions.
  MlpLayout main_layout() const;
  MlpLayout g_layout() const;
  /// theta for concat variants, W (q x p) for the hypernet.
  std::size_t main_param_count() const;
  std::size_t aug_param_count() const;
  std::size_t param_count() const { return main_param_count() + aug_param_count(); }
};

/// A continuous normalizing flow on [0, horizon].
///
/// Parameters are stored flat as [main, phi]: main is theta (concat variants)
/// or the hypernet matrix W (hypernet variant); phi parameterises the
/// autonomous augmented field g and is empty for FFJORD.
class FlowModel {
 public:
  FlowModel(FlowArchitecture arch, Vector params, SolverConfig solver = SolverConfig::rk4(40),
            TraceMode trace = TraceMode::exact, double horizon = 1.0);

  static FlowModel initialize(const FlowArchitecture& arch, std::uint64_t seed,
                              SolverConfig solver = SolverConfig::rk4(40),
                              TraceMode trace = TraceMode::exact);
  static FlowModel zeros(const FlowArchitecture& arch, SolverConfig solver = SolverConfig::rk4(40),
                         TraceMode trace = TraceMode::exact);

  FlowModel with_params(Vector params) const;
  FlowModel with_solver(SolverConfig solver) const;
  FlowModel with_trace(TraceMode trace, std::size_t probes = 1) const;

  const FlowArchitecture& arch() const { return arch_; }
  const Vector& params() const { return params_; }
  const SolverConfig& solver() const { return solver_; }
  TraceMode trace_mode() const { return trace_; }
  std::size_t probes() const { return probes_; }
  double horizon() const { return horizon_; }
  std::size_t data_dim() const { return arch_.data_dim; }
  std::size_t aug_dim() const { return arch_.state_aug_dim(); }

  Vector main_params() const { return params_.head(arch_.main_param_count()); }
  Vector aug_params() const { return params_.tail(arch_.aug_param_count()); }

  /// The concat-variant main field with its learned theta.
  MlpField main_field() const;
  /// The augmented field g (augmented variants).
  MlpField g_field() const;
  /// The hypernet view (hypernet variant).
  HypernetField hypernet() const;
  /// Main-field parameters in effect at augmented state z*.
  Vector main_params_at(const Vector& zstar) const;

 private:
  FlowArchitecture arch_;
  Vector params_;
  SolverConfig solver_;
  TraceMode trace_;
  std::size_t probes_ = 1;
  double horizon_;
};

/// ParametricDynamics of a batch pushed through a FlowModel.
///
/// State layout: [z_1, ..., z_B (B*n), logdet_1..logdet_B (B, if tracked), z* (m)].
/// z* is shared by the whole batch; its dynamics do not see the data.
/// d logdet_b / dt is the divergence of f over the data dimensions only.
class FlowBatchDynamics final : public ParametricDynamics {
 public:
  FlowBatchDynamics(const FlowModel& model, std::size_t batch, bool track_logdet,
                    std::uint64_t probe_seed = 0);

  std::size_t state_dim() const override;
  std::size_t param_dim() const override { return model_->arch().param_count(); }
  void derivative(double t, const Vector& y, Vector& dydt) const override;
  void vjp(double t, const Vector& y, const Vector& cot, Vector& y_bar,
           Vector& p_bar) const override;
  void derivative_and_vjp(double t, const Vector& y, const Vector& cot, Vector& dydt,
                          Vector& y_bar, Vector& p_bar) const override;

  std::size_t batch() const { return batch_; }
  bool tracks_logdet() const { return track_logdet_; }
  std::size_t logdet_offset() const { return batch_ * model_->data_dim(); }
  std::size_t zstar_offset() const { return logdet_offset() + (track_logdet_ ? batch_ : 0); }

  /// Initial state for a batch (rows are samples); logdet and z* start at 0.
  Vector pack(const Matrix& z0) const;
  Vector pack(const Matrix& z, const Vector& zstar) const;
  Matrix unpack_z(const Vector& y) const;
  Vector unpack_logdet(const Vector& y) const;
  Vector unpack_zstar(const Vector& y) const;

 private:
  void evaluate(double t, const Vector& y, const Vector* cot, Vector* dydt, Vector* y_bar,
                Vector* p_bar) const;

  const FlowModel* model_;
  std::size_t batch_;
  bool track_logdet_;
  MlpLayout main_layout_;
  MlpLayout g_layout_;
  Eigen::MatrixXd probes_;  // n x (k*B), hutchinson only

  // Tapes reused across evaluations; a copied object starts with fresh ones
  // because a tape points at its owner's layout. Not safe for concurrent calls.
  struct TapeCache {
    std::optional<MlpTape> main;
    std::optional<MlpTape> g;
    TapeCache() = default;
    TapeCache(const TapeCache&) {}
    TapeCache& operator=(const TapeCache&) {
      main.reset();
      g.reset();
      return *this;
    }
  };
  mutable TapeCache tapes_;
};

/// The joint field h([z, z*]) = [f, g] of an augmented model (or f alone for
/// FFJORD) as a SmoothField on R^{n+m}.
class JointFlowField final : public SmoothField {
 public:
  explicit JointFlowField(const FlowModel& model);
  std::size_t dim() const override { return model_->data_dim() + model_->aug_dim(); }
  Vector eval(double t, const Vector& y) const override;
  Matrix jacobian(double t, const Vector& y) const override;

 private:
  const FlowModel* model_;
};

/// General augmented field where g also sees the data:
/// h([z, z*]) = [f([z, z*]), g([z*, z])]. Its joint Jacobian has no zero
/// block; it exists only as a contrast case for the block-triangular check.
class CoupledAugmentedField final : public SmoothField {
 public:
  CoupledAugmentedField(std::size_t data_dim, std::size_t aug_dim,
                        std::vector<std::size_t> hidden, std::uint64_t seed);
  std::size_t dim() const override { return n_ + m_; }
  Vector eval(double t, const Vector& y) const override;
  Matrix jacobian(double t, const Vector& y) const override;

 private:
  std::size_t n_, m_;
  MlpField f_;  // input [z, z*] -> n
  MlpField g_;  // input [z*, z] -> m
};

}  // namespace affjord
