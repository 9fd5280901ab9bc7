#pragma once

#include "affjord/flow_model.hpp"

#include <cstdint>

namespace affjord {

struct ForwardOptions {
  /// Reject Hutchinson models (for callers that need an exact log-density).
  bool require_exact = false;
  std::uint64_t probe_seed = 0;
};

/// Result of pushing a batch (rows are samples) from data to base space.
struct FlowForward {
  Matrix z_terminal;     // B x n
  Vector delta_logdet;   // integral of div f, per sample
  Vector zstar_terminal; // m, shared by the batch (empty for FFJORD)
  std::size_t nfe = 0;
};

FlowForward forward_batch(const FlowModel& model, const Matrix& x,
                          const ForwardOptions& options = {});

struct SingleForward {
  Vector z_terminal;
  double delta_logdet = 0.0;
  std::size_t nfe = 0;
};

SingleForward forward_with_logdet(const FlowModel& model, const Vector& x,
                                  const ForwardOptions& options = {});

double standard_normal_log_density(const Vector& z);

struct Likelihood {
  Vector log_likelihood;  // per sample, natural log, base-measure constant included
  std::size_t nfe = 0;
};

/// log p(x) = log N(z(T); 0, I) + integral of div f.
Likelihood log_likelihood(const FlowModel& model, const Matrix& x,
                          const ForwardOptions& options = {});

/// -log p / (d ln 2).
double bits_per_dim(double log_likelihood, std::size_t dim);

/// Integrates base points z(T) back to data space. z* is carried backward
/// from the terminal value produced by g alone.
Matrix inverse_batch(const FlowModel& model, const Matrix& z_terminal, std::size_t* nfe = nullptr);
/// Same, starting from a given z*(T).
Matrix inverse_batch(const FlowModel& model, const Matrix& z_terminal,
                     const Vector& zstar_terminal, std::size_t* nfe = nullptr);

/// Standard normal draws (count x dim), deterministic in the seed.
Matrix draw_base(std::size_t count, std::size_t dim, std::uint64_t seed);

Matrix sample(const FlowModel& model, std::size_t count, std::uint64_t seed);

/// z*(T) from integrating g alone from z*(0) = 0 (empty for FFJORD).
Vector augmented_terminal(const FlowModel& model);

struct InjectivityReport {
  double zstar_spread = 0.0;        // max over samples of |z*_b(T) - z*_0(T)|_inf
  double min_input_separation = 0.0;
  double min_output_separation = 0.0;
  bool injective = false;           // distinct inputs stayed distinct
};

/// Solves every sample on its own and compares the resulting z*(T) values
/// and the pairwise separation of the outputs.
InjectivityReport verify_injectivity(const FlowModel& model, const Matrix& batch);

struct BlockTriangularReport {
  Matrix joint_jacobian;         // d[z, z*](T) / d[z, z*](0)
  double lower_left_max = 0.0;   // max |dz*(T)/dz(0)|
  double log_det_joint = 0.0;
  double log_det_data_block = 0.0;
  double log_det_aug_block = 0.0;
  double trace_integral = 0.0;   // exact integral of div f along the path
  /// |log det joint - (log det data + log det aug)|
  double block_identity_error() const;
  /// |trace integral - log det data block|
  double trace_identity_error() const;
};

BlockTriangularReport verify_block_triangular(const FlowModel& model, const Vector& z0);

/// The same report for any joint field on [z, z*] whose first `data_dim`
/// coordinates are the data; the trace integral covers the data block only.
BlockTriangularReport block_triangular_report(const SmoothField& joint, std::size_t data_dim,
                                              const Vector& y0, double horizon,
                                              const SolverConfig& solver);

}  // namespace affjord
