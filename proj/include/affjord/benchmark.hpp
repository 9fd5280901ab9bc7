#pragma once

#include "affjord/toy_data.hpp"
#include "affjord/training.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace affjord {

/// FFJORD against AFFJORD under identical training budgets on one toy dataset.
struct BenchmarkConfig {
  DatasetSpec dataset = hash_gaussian_spec();
  std::vector<std::size_t> hidden{32, 32};
  std::size_t aug_dim = 20;
  std::size_t hyper_inputs = 10;
  std::size_t g_hidden = 20;
  Activation activation = Activation::tanh;
  SolverConfig solver = SolverConfig::rk4(40);
  TraceMode train_trace = TraceMode::hutchinson;
  std::size_t probes = 1;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  /// Variants trained once per seed; their mean NLLs are compared.
  std::vector<Variant> variants{Variant::ffjord_concat_time, Variant::affjord_hypernet};
  /// Extra variants trained on the first `nfe_only_seeds` seeds, reported for NFE.
  std::vector<Variant> nfe_only_variants{Variant::affjord_concat};
  std::size_t nfe_only_seeds = 1;
  /// Tolerances of the dopri5 solve used to measure adaptive NFE after training.
  double eval_atol = 1e-5;
  double eval_rtol = 1e-5;
  std::size_t eval_points = 512;
  std::size_t threads = 1;

  void validate() const;
};

struct BenchmarkRun {
  Variant variant = Variant::ffjord_concat_time;
  std::uint64_t seed = 0;
  bool nfe_only = false;
  double final_val_nll = 0.0;
  bool diverged = false;
  std::size_t train_nfe = 0;     // forward NFE of one training solve
  std::size_t adaptive_nfe = 0;  // forward NFE of the dopri5 evaluation solve
  double wallclock_s = 0.0;
};

struct BenchmarkSummary {
  Variant variant = Variant::ffjord_concat_time;
  std::size_t runs = 0;
  double mean_val_nll = 0.0;
  double std_val_nll = 0.0;  // sample standard deviation, 0 for a single run
  double mean_train_nfe = 0.0;
  double mean_adaptive_nfe = 0.0;
};

struct BenchmarkResult {
  std::vector<BenchmarkRun> runs;
  std::vector<BenchmarkSummary> summaries;
  double wallclock_s = 0.0;

  const BenchmarkSummary* summary(Variant v) const;
};

/// Trains every (variant, seed) job, up to `threads` at a time. Each seed draws
/// its own dataset, shared by all variants. Results are ordered by job, not by
/// completion, so output is independent of the thread count.
BenchmarkResult run_benchmark(const BenchmarkConfig& config,
                              const std::function<void(const BenchmarkRun&)>& on_run = {});

/// One row per run: model,seed,role,final_val_nll,diverged,train_nfe,adaptive_nfe,wallclock_s
std::string benchmark_runs_csv(const BenchmarkResult& result);
/// One row per variant: model,runs,mean_val_nll,std_val_nll,mean_train_nfe,mean_adaptive_nfe
std::string benchmark_summary_csv(const BenchmarkResult& result);

}  // namespace affjord
