#include "affjord/benchmark.hpp"

#include "affjord/cnf_flow.hpp"
#include "affjord/errors.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <thread>

namespace affjord {
namespace {

struct Job {
  Variant variant;
  std::uint64_t seed;
  bool nfe_only;
};

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

BenchmarkRun run_job(const BenchmarkConfig& config, const Job& job) {
  const auto start = std::chrono::steady_clock::now();
  FlowArchitecture arch;
  arch.variant = job.variant;
  arch.data_dim = 2;
  arch.hidden = config.hidden;
  arch.aug_dim = config.aug_dim;
  arch.hyper_inputs = config.hyper_inputs;
  arch.g_hidden = config.g_hidden;
  arch.activation = config.activation;

  const FlowModel model =
      FlowModel::initialize(arch, job.seed, config.solver, TraceMode::exact)
          .with_trace(config.train_trace, config.probes);
  const Matrix data = sample_batch(config.dataset, config.train.dataset_size, job.seed);
  TrainConfig tc = config.train;
  tc.seed = job.seed;
  const TrainResult trained = train(model, data, tc);

  BenchmarkRun run;
  run.variant = job.variant;
  run.seed = job.seed;
  run.nfe_only = job.nfe_only;
  run.final_val_nll = trained.final_val_nll;
  run.diverged = trained.diverged;
  run.train_nfe = trained.log.size() > 1
                      ? static_cast<std::size_t>(std::lround(trained.log.back().nfe_mean))
                      : 0;

  const auto points = std::min<Eigen::Index>(static_cast<Eigen::Index>(config.eval_points),
                                             data.rows());
  const Matrix probe = trained.standardization.apply(data.topRows(points));
  const FlowModel adaptive = trained.model.with_trace(TraceMode::exact)
                                 .with_solver(SolverConfig::dopri5(config.eval_atol,
                                                                   config.eval_rtol));
  try {
    run.adaptive_nfe = forward_batch(adaptive, probe).nfe;
  } catch (const StiffnessError&) {
    run.adaptive_nfe = 0;
  }
  if (config.train.record_wallclock) {
    run.wallclock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return run;
}

}  // namespace

void BenchmarkConfig::validate() const {
  dataset.validate();
  train.validate();
  solver.validate();
  if (seeds.empty()) throw ConfigurationError("benchmark: at least one seed is required");
  if (variants.empty()) throw ConfigurationError("benchmark: at least one variant is required");
  if (threads == 0) throw ConfigurationError("benchmark: threads must be >= 1");
  if (eval_points == 0) throw ConfigurationError("benchmark: eval_points must be >= 1");
  if (!(eval_atol > 0.0) || !(eval_rtol > 0.0)) {
    throw ConfigurationError("benchmark: evaluation tolerances must be positive");
  }
  if (train_trace == TraceMode::hutchinson && probes == 0) {
    throw ConfigurationError("benchmark: hutchinson training needs at least one probe");
  }
}

const BenchmarkSummary* BenchmarkResult::summary(Variant v) const {
  for (const auto& s : summaries) {
    if (s.variant == v) return &s;
  }
  return nullptr;
}

BenchmarkResult run_benchmark(const BenchmarkConfig& config,
                              const std::function<void(const BenchmarkRun&)>& on_run) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();

  std::vector<Job> jobs;
  for (std::uint64_t seed : config.seeds) {
    for (Variant v : config.variants) jobs.push_back({v, seed, false});
  }
  const std::size_t extra = std::min(config.nfe_only_seeds, config.seeds.size());
  for (std::size_t i = 0; i < extra; ++i) {
    for (Variant v : config.nfe_only_variants) jobs.push_back({v, config.seeds[i], true});
  }

  BenchmarkResult result;
  result.runs.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex report;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        result.runs[i] = run_job(config, jobs[i]);
        if (on_run) {
          std::lock_guard lock(report);
          on_run(result.runs[i]);
        }
      } catch (...) {
        std::lock_guard lock(report);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  const std::size_t workers = std::min(config.threads, jobs.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<Variant> order = config.variants;
  for (Variant v : config.nfe_only_variants) {
    if (std::find(order.begin(), order.end(), v) == order.end()) order.push_back(v);
  }
  for (Variant v : order) {
    BenchmarkSummary s;
    s.variant = v;
    std::vector<double> nll;
    for (const auto& r : result.runs) {
      if (r.variant != v) continue;
      nll.push_back(r.final_val_nll);
      s.mean_train_nfe += static_cast<double>(r.train_nfe);
      s.mean_adaptive_nfe += static_cast<double>(r.adaptive_nfe);
    }
    if (nll.empty()) continue;
    s.runs = nll.size();
    const auto k = static_cast<double>(s.runs);
    for (double x : nll) s.mean_val_nll += x / k;
    if (s.runs > 1) {
      double ss = 0.0;
      for (double x : nll) ss += (x - s.mean_val_nll) * (x - s.mean_val_nll);
      s.std_val_nll = std::sqrt(ss / (k - 1.0));
    }
    s.mean_train_nfe /= k;
    s.mean_adaptive_nfe /= k;
    result.summaries.push_back(s);
  }
  result.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::string benchmark_runs_csv(const BenchmarkResult& result) {
  std::string out =
      "model,seed,role,final_val_nll,diverged,train_nfe,adaptive_nfe,wallclock_s\n";
  for (const auto& r : result.runs) {
    out += to_string(r.variant) + "," + std::to_string(r.seed) + "," +
           (r.nfe_only ? "nfe_only" : "compared") + "," + fmt("%.10g", r.final_val_nll) + "," +
           (r.diverged ? "1" : "0") + "," + std::to_string(r.train_nfe) + "," +
           std::to_string(r.adaptive_nfe) + "," + fmt("%.3f", r.wallclock_s) + "\n";
  }
  return out;
}

std::string benchmark_summary_csv(const BenchmarkResult& result) {
  std::string out = "model,runs,mean_val_nll,std_val_nll,mean_train_nfe,mean_adaptive_nfe\n";
  for (const auto& s : result.summaries) {
    out += to_string(s.variant) + "," + std::to_string(s.runs) + "," +
           fmt("%.10g", s.mean_val_nll) + "," + fmt("%.6g", s.std_val_nll) + "," +
           fmt("%.6g", s.mean_train_nfe) + "," + fmt("%.6g", s.mean_adaptive_nfe) + "\n";
  }
  return out;
}

}  // namespace affjord
