#pragma once

#include "affjord/cnf_flow.hpp"
#include "affjord/core_math.hpp"
#include "affjord/ode_solver.hpp"
#include "affjord/toy_data.hpp"
#include "affjord/vector_field.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace affjord {

/// Scalar loss of the terminal state together with dL/dy(T).
struct TerminalLoss {
  double value = 0.0;
  Vector gradient;
};
using TerminalLossFn = std::function<TerminalLoss(const Vector& terminal)>;

struct GradientResult {
  double loss = 0.0;
  Vector param_gradient;  // dL/dp
  Vector state_gradient;  // dL/dy(t0)
  std::size_t forward_nfe = 0;
  std::size_t backward_nfe = 0;
};

/// Continuous adjoint: solves forward, then integrates [y, a, g] from t1 back
/// to t0 with da/dt = -a dF/dy and dg/dt = -a dF/dp, re-integrating y
/// alongside instead of storing the forward trajectory.
GradientResult adjoint_gradient(const ParametricDynamics& dyn, const Vector& y0, double t0,
                                double t1, const TerminalLossFn& loss,
                                const SolverConfig& config);

inline constexpr std::size_t kDefaultBackpropMemoryBytes = std::size_t{1} << 30;

/// Exact gradient of the rk4-discretised loss by reverse accumulation
/// through the unrolled steps. Stores one state per step and recomputes the
/// stages on the way back; throws ResourceError when steps * state size
/// exceeds `memory_limit_bytes`.
GradientResult discrete_backprop_gradient(const ParametricDynamics& dyn, const Vector& y0,
                                          double t0, double t1, const TerminalLossFn& loss,
                                          std::size_t steps,
                                          std::size_t memory_limit_bytes =
                                              kDefaultBackpropMemoryBytes);

struct PiecewiseGradient {
  double loss = 0.0;
  Vector first_gradient;   // parameters of the field on [0, T/2]
  Vector second_gradient;  // parameters of the field on [T/2, T]
  Vector state_gradient;
};

/// Two fields applied in sequence, `first` on [0, T/2] and `second` on
/// [T/2, T]. `config` applies to each half separately.
PiecewiseGradient piecewise_adjoint_gradient(const ParametricDynamics& first,
                                             const ParametricDynamics& second, const Vector& y0,
                                             double horizon, const TerminalLossFn& loss,
                                             const SolverConfig& config);

/// dz(T)/dtheta assembled as the integral over t of
/// (dz(T)/dz(t)) (df/dtheta)(t), with dz(T)/dz(t) = J(T) J(t)^{-1} from an rk4
/// Jacobian trajectory and trapezoidal quadrature over `grid_points` nodes.
Matrix total_derivative_decomposition(const SmoothField& field, const Vector& z0, double horizon,
                                      std::size_t grid_points = 1000);

/// Mean negative log-likelihood of the batch as a terminal loss on the
/// FlowBatchDynamics state.
TerminalLossFn flow_nll_loss(const FlowBatchDynamics& dyn);

enum class GradientMethod { adjoint, discrete };

struct FlowGradient {
  double nll = 0.0;  // mean over the batch
  Vector gradient;
  std::size_t forward_nfe = 0;
  std::size_t backward_nfe = 0;
};

/// Mean NLL of `batch` and its gradient with respect to all model parameters.
/// The discrete route requires an rk4 model.
FlowGradient flow_nll_gradient(const FlowModel& model, const Matrix& batch,
                               GradientMethod method = GradientMethod::adjoint,
                               std::uint64_t probe_seed = 0);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(std::size_t dim, AdamConfig config = {});
  void step(Vector& params, const Vector& grad);
  std::size_t iterations() const { return t_; }

 private:
  AdamConfig config_;
  Vector m_;
  Vector v_;
  std::size_t t_ = 0;
};

/// Rescales `grad` to global norm `max_norm` if larger; returns the original norm.
double clip_global_norm(Vector& grad, double max_norm);

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 512;
  std::size_t iterations = 2000;
  std::size_t eval_every = 100;
  std::size_t dataset_size = 20000;
  double validation_fraction = 0.1;
  double clip_norm = 10.0;
  std::uint64_t seed = 0;
  bool standardize = true;
  bool record_wallclock = true;

  void validate() const;
};

struct TrainLogRow {
  std::size_t iteration = 0;
  std::optional<double> train_nll;
  std::optional<double> val_nll;
  double nfe_mean = 0.0;
  double wallclock_s = 0.0;
};

struct TrainResult {
  FlowModel model;  // last parameters with a finite loss and gradient
  Standardization standardization;
  std::vector<TrainLogRow> log;
  bool diverged = false;
  std::string message;
  double final_val_nll = 0.0;
};

/// Splits `data` into training and validation parts (fixed by seed), fits the
/// standardisation on the training part and runs Adam on adjoint gradients of
/// the mean NLL. NLL values in the log are in raw data units.
/// Row 0 holds the initial validation NLL; row k the k-th step.
TrainResult train(const FlowModel& model, const Matrix& data, const TrainConfig& config,
                  const std::function<void(const TrainLogRow&)>& on_row = {});

/// Mean NLL of `data` (raw units) under a model trained in standardised space.
double validation_nll(const FlowModel& model, const Standardization& standardization,
                      const Matrix& data, std::size_t chunk = 1024);

std::string train_log_csv(const std::vector<TrainLogRow>& log);

}  // namespace affjord
