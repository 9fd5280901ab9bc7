#include "commands.hpp"

#include "affjord/cnf_flow.hpp"
#include "affjord/errors.hpp"
#include "affjord/verification.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>

namespace affjord::cli {
namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string output_path(const RunConfig& config, const std::string& name) {
  return (std::filesystem::path(config.output_dir) / name).string();
}

void emit(const RunConfig& config, const std::string& name, const std::string& content,
          std::ostream& out) {
  const std::string path = output_path(config, name);
  write_file_atomic(path, content);
  out << "wrote " << path << "\n";
}

double lattice(double lo, double hi, std::size_t i, std::size_t n) {
  return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
}

// Fresh evaluation points never overlap the training draw for the same seed.
constexpr std::uint64_t kEvalSeedOffset = 1000003;

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const DomainError*>(&e) != nullptr ||
      dynamic_cast<const StiffnessError*>(&e) != nullptr ||
      dynamic_cast<const ResourceError*>(&e) != nullptr) {
    return kExitNumerical;
  }
  return kExitValidation;
}

std::string describe_error(const std::exception& e) {
  if (const auto* p = dynamic_cast<const ParseError*>(&e)) {
    return "error: parse: " + std::string(p->what()) + " [key=" + p->key +
           " line=" + std::to_string(p->line) + "]";
  }
  if (const auto* s = dynamic_cast<const StiffnessError*>(&e)) {
    return "error: stiffness: " + std::string(s->what()) + " [t=" + fmt("%.6g", s->t_reached) +
           " nfe=" + std::to_string(s->nfe) + "]";
  }
  const char* kind = "runtime";
  if (dynamic_cast<const ConfigurationError*>(&e)) kind = "configuration";
  else if (dynamic_cast<const DimensionError*>(&e)) kind = "dimension";
  else if (dynamic_cast<const ArgumentError*>(&e)) kind = "argument";
  else if (dynamic_cast<const SpecError*>(&e)) kind = "dataset";
  else if (dynamic_cast<const StateError*>(&e)) kind = "state";
  else if (dynamic_cast<const DomainError*>(&e)) kind = "domain";
  else if (dynamic_cast<const ResourceError*>(&e)) kind = "resource";
  return std::string("error: ") + kind + ": " + e.what();
}

Checkpoint model_for(const RunConfig& config) {
  if (!config.checkpoint.empty()) return read_checkpoint(config.checkpoint);
  const Standardization id = Standardization::identity(config.arch.data_dim);
  if (config.zero_init) return {FlowModel::zeros(config.arch, config.solver), id};
  return {FlowModel::initialize(config.arch, config.require_seed(), config.solver), id};
}

Matrix density_grid(const Checkpoint& model, const DensityGrid& grid) {
  const std::size_t n = grid.resolution;
  Matrix pts(static_cast<Eigen::Index>(n * n), 2);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const auto i = static_cast<Eigen::Index>(r * n + c);
      pts(i, 0) = lattice(grid.xmin, grid.xmax, c, n);
      pts(i, 1) = lattice(grid.ymax, grid.ymin, r, n);
    }
  }
  const FlowModel exact = model.model.with_trace(TraceMode::exact);
  const Vector ll = log_likelihood(exact, model.standardization.apply(pts)).log_likelihood;
  const double shift = model.standardization.log_scale_sum();
  Matrix out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < ll.size(); ++i) out.data()[i] = ll(i) - shift;
  return out;
}

std::string density_csv(const RunConfig& config, const Matrix& log_density) {
  const DensityGrid& g = config.density;
  const std::size_t n = g.resolution;
  std::string out = provenance_line(config) + "x,y,log_density\n";
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      out += fmt("%.10g", lattice(g.xmin, g.xmax, c, n)) + "," +
             fmt("%.10g", lattice(g.ymax, g.ymin, r, n)) + "," +
             fmt("%.17g", log_density(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c))) +
             "\n";
    }
  }
  return out;
}

std::string density_pgm(const RunConfig& config, const Matrix& log_density) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (Eigen::Index i = 0; i < log_density.size(); ++i) {
    const double v = log_density.data()[i];
    if (!std::isfinite(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::string out = "P2\n" + provenance_line(config) + std::to_string(log_density.cols()) + " " +
                    std::to_string(log_density.rows()) + "\n255\n";
  for (Eigen::Index r = 0; r < log_density.rows(); ++r) {
    for (Eigen::Index c = 0; c < log_density.cols(); ++c) {
      const double v = log_density(r, c);
      int level = 0;
      if (std::isfinite(v)) {
        level = hi > lo ? static_cast<int>(std::lround(255.0 * (v - lo) / (hi - lo))) : 255;
      }
      out += std::to_string(level);
      out += c + 1 == log_density.cols() ? '\n' : ' ';
    }
  }
  return out;
}

std::string points_csv(const RunConfig& config, const Matrix& points) {
  std::string out = provenance_line(config) + "x,y\n";
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    out += fmt("%.17g", points(i, 0)) + "," + fmt("%.17g", points(i, 1)) + "\n";
  }
  return out;
}

int run_train(const RunConfig& config, std::ostream& out) {
  const std::uint64_t seed = config.require_seed();
  const FlowModel model = (config.zero_init ? FlowModel::zeros(config.arch, config.solver)
                                            : FlowModel::initialize(config.arch, seed, config.solver))
                              .with_trace(config.trace, config.probes);
  const Matrix data = sample_batch(config.dataset, config.dataset_size, seed);
  const TrainResult result = train(model, data, config.train, [&](const TrainLogRow& row) {
    if (row.val_nll) {
      out << "iteration " << row.iteration << " val_nll " << fmt("%.6f", *row.val_nll)
          << " nfe_mean " << fmt("%.1f", row.nfe_mean) << "\n";
    }
  });
  emit(config, "checkpoint.txt", serialize_checkpoint(result.model, result.standardization), out);
  emit(config, "train_log.csv", provenance_line(config) + train_log_csv(result.log), out);
  if (result.diverged) {
    out << "training diverged: " << result.message << " (checkpoint holds the last finite step)\n";
    return kExitNumerical;
  }
  out << "final val_nll " << fmt("%.6f", result.final_val_nll) << "\n";
  return kExitOk;
}

int run_eval(const RunConfig& config, std::ostream& out) {
  const std::uint64_t seed = config.require_seed();
  const Checkpoint ck = model_for(config);
  const Matrix data = sample_batch(config.dataset, config.eval_points, seed + kEvalSeedOffset);
  const FlowModel exact = ck.model.with_trace(TraceMode::exact);
  const Likelihood ll = log_likelihood(exact, ck.standardization.apply(data));
  const double nll = -ll.log_likelihood.mean() + ck.standardization.log_scale_sum();

  std::string csv = provenance_line(config) + "metric,value\n";
  csv += "nll," + fmt("%.10g", nll) + "\n";
  csv += "bits_per_dim," + fmt("%.10g", bits_per_dim(-nll, exact.data_dim())) + "\n";
  csv += "nfe," + std::to_string(ll.nfe) + "\n";
  csv += "points," + std::to_string(config.eval_points) + "\n";
  double true_nll = 0.0;
  bool have_true = true;
  for (Eigen::Index i = 0; i < data.rows() && have_true; ++i) {
    const auto lp = true_log_density(config.dataset, Eigen::Vector2d(data(i, 0), data(i, 1)));
    if (!lp) have_true = false;
    else true_nll -= *lp / static_cast<double>(data.rows());
  }
  if (have_true) csv += "true_nll," + fmt("%.10g", true_nll) + "\n";
  emit(config, "eval.csv", csv, out);
  out << "nll " << fmt("%.6f", nll) << (have_true ? " (data entropy " + fmt("%.6f", true_nll) + ")" : "")
      << " nfe " << ll.nfe << "\n";
  return kExitOk;
}

int run_sample(const RunConfig& config, std::ostream& out) {
  const std::uint64_t seed = config.require_seed();
  const Checkpoint ck = model_for(config);
  const Matrix z = sample(ck.model, config.sample_count, seed);
  emit(config, "samples.csv", points_csv(config, ck.standardization.invert(z)), out);
  return kExitOk;
}

int run_density(const RunConfig& config, std::ostream& out) {
  config.require_seed();
  const Matrix grid = density_grid(model_for(config), config.density);
  emit(config, "density.csv", density_csv(config, grid), out);
  emit(config, "density.pgm", density_pgm(config, grid), out);
  return kExitOk;
}

int run_verify(const RunConfig& config, std::ostream& out) {
  SuiteOptions options;
  options.seed = config.seed.value_or(0);
  options.fields = config.verify_fields;
  const std::vector<CheckResult> results = run_identity_suite(options);
  bool ok = true;
  for (const auto& r : results) {
    out << (r.pass ? "PASS " : "FAIL ") << r.name << " value=" << fmt("%.3e", r.value)
        << " tol=" << fmt("%.1e", r.tolerance) << " time=" << fmt("%.2f", r.seconds) << "s\n";
    ok = ok && r.pass;
  }
  emit(config, "verify.csv", provenance_line(config) + checks_csv(results), out);
  return ok ? kExitOk : kExitValidation;
}

int run_benchmark(const RunConfig& config, std::ostream& out) {
  config.require_seed();
  const BenchmarkConfig bc = config.benchmark_config();
  const BenchmarkResult result = run_benchmark(bc, [&](const BenchmarkRun& r) {
    out << to_string(r.variant) << " seed " << r.seed << " val_nll "
        << fmt("%.6f", r.final_val_nll) << " adaptive_nfe " << r.adaptive_nfe
        << (r.diverged ? " (diverged)" : "") << " " << fmt("%.0f", r.wallclock_s) << "s\n";
    out.flush();
  });
  emit(config, "benchmark_runs.csv", provenance_line(config) + benchmark_runs_csv(result), out);
  emit(config, "benchmark_summary.csv", provenance_line(config) + benchmark_summary_csv(result), out);
  for (const auto& s : result.summaries) {
    out << to_string(s.variant) << ": " << s.runs << " runs, val_nll " << fmt("%.4f", s.mean_val_nll)
        << " +- " << fmt("%.4f", s.std_val_nll) << ", train NFE " << fmt("%.0f", s.mean_train_nfe)
        << ", adaptive NFE " << fmt("%.1f", s.mean_adaptive_nfe) << "\n";
  }
  out << "total " << fmt("%.0f", result.wallclock_s) << "s\n";
  return kExitOk;
}

int run_data_dump(const RunConfig& config, std::ostream& out) {
  const Matrix data = sample_batch(config.dataset, config.dataset_size, config.require_seed());
  emit(config, "data.csv", points_csv(config, data), out);
  return kExitOk;
}

}  // namespace affjord::cli
