#pragma once

#include "config.hpp"

#include "affjord/checkpoint.hpp"

#include <exception>
#include <ostream>
#include <string>

namespace affjord::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitNumerical = 2;

/// Exit status for an exception escaping a command.
int exit_code_for(const std::exception& e);
/// One-line `error: <kind>: <message>` description.
std::string describe_error(const std::exception& e);

/// The model a command acts on: `model.checkpoint` when set, otherwise a fresh
/// (random or zero) model in unstandardised coordinates.
Checkpoint model_for(const RunConfig& config);

/// Raw-space log-density on the lattice; row 0 is y = ymax, column 0 x = xmin.
Matrix density_grid(const Checkpoint& model, const DensityGrid& grid);
std::string density_csv(const RunConfig& config, const Matrix& log_density);
/// Plain (P2) graymap, 255 at the highest finite log-density, 0 at the lowest.
std::string density_pgm(const RunConfig& config, const Matrix& log_density);

/// Points as `x,y` rows under the provenance line and header.
std::string points_csv(const RunConfig& config, const Matrix& points);

int run_train(const RunConfig& config, std::ostream& out);
int run_eval(const RunConfig& config, std::ostream& out);
int run_sample(const RunConfig& config, std::ostream& out);
int run_density(const RunConfig& config, std::ostream& out);
int run_verify(const RunConfig& config, std::ostream& out);
int run_benchmark(const RunConfig& config, std::ostream& out);
int run_data_dump(const RunConfig& config, std::ostream& out);

}  // namespace affjord::cli
