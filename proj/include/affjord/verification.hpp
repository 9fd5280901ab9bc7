#pragma once

#include "affjord/core_math.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace affjord {

/// Outcome of one identity check. `value` is the worst observed error for the
/// check's metric and passes when value <= tolerance (and, when a time limit
/// is set, the check finished within it).
struct CheckResult {
  std::string name;
  bool pass = false;
  double value = 0.0;
  double tolerance = 0.0;
  double seconds = 0.0;
  double time_limit = 0.0;  // 0 = unbounded
  std::string detail;
};

struct SuiteOptions {
  std::uint64_t seed = 0;
  /// Number of random fields for the field-based checks.
  std::size_t fields = 50;
};

/// J from the variational equation (dopri5, tol 1e-8) against central
/// differences of the flow map, fields of dimension 2 to 4.
CheckResult check_cable_rule(const SuiteOptions& options = {});
/// The solved trace integral against log|det| of the FD flow Jacobian,
/// dimensions 2 to 5, relative error.
CheckResult check_change_of_variables(const SuiteOptions& options = {});
/// Linear autonomous fields: higher Magnus terms vanish and exp(Omega_1) = J.
CheckResult check_magnus_linear(const SuiteOptions& options = {});
/// |tr Omega_2|, |tr Omega_3| on linear and tanh fields.
CheckResult check_magnus_trace(const SuiteOptions& options = {});
/// Order-2 Magnus is no worse than order 1 on non-commuting fields, T = 0.5.
/// The value is the worst ratio err2 / err1.
CheckResult check_magnus_order(const SuiteOptions& options = {});
/// Adjoint, unrolled backprop and FD gradients of the NLL for every variant.
CheckResult check_gradient_triangulation(const SuiteOptions& options = {});
/// Tied halves sum to the single-field adjoint gradient.
CheckResult check_piecewise_tied(const SuiteOptions& options = {});
/// Piecewise gradients of distinct halves against FD.
CheckResult check_piecewise_fd(const SuiteOptions& options = {});
/// z*(T) is the same for every sample of a 512 batch.
CheckResult check_augmented_spread(const SuiteOptions& options = {});
/// The data-to-augmented block of the joint Jacobian vanishes.
CheckResult check_block_lower_left(const SuiteOptions& options = {});
/// log det joint = log det data block + log det augmented block.
CheckResult check_block_determinant(const SuiteOptions& options = {});
/// 1e4-probe Hutchinson means within 3 standard errors on 20 Jacobians. The
/// value is the worst |mean - exact| / stderr.
CheckResult check_hutchinson(const SuiteOptions& options = {});
/// Forward then inverse on 512 points for every variant.
CheckResult check_flow_round_trip(const SuiteOptions& options = {});
/// Multiscale pipeline round trip on a [3, 8, 8] tensor.
CheckResult check_multiscale_round_trip(const SuiteOptions& options = {});
/// rk4 NFE equals 4 * steps for plain integrations and every flow variant.
CheckResult check_rk4_nfe(const SuiteOptions& options = {});

/// Every check above, in order.
std::vector<CheckResult> run_identity_suite(const SuiteOptions& options = {});

/// name,pass,value,tolerance,seconds,time_limit,detail
std::string checks_csv(const std::vector<CheckResult>& results);

}  // namespace affjord
