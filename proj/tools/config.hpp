#pragma once

#include "affjord/benchmark.hpp"
#include "affjord/flow_model.hpp"
#include "affjord/toy_data.hpp"
#include "affjord/training.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace affjord::cli {

enum class ValueType { integer, real, boolean, text, integer_list };

struct KeySpec {
  std::string key;
  ValueType type;
  std::string default_value;  // empty text means "unset"
  std::string help;
};

/// Every accepted key, sorted by name.
const std::vector<KeySpec>& config_keys();
const KeySpec* find_key(const std::string& key);

/// Where a raw value came from; line 0 means a command-line flag or the
/// environment.
struct RawValue {
  std::string value;
  int line = 0;
};

/// Key/value pairs as written, before type conversion.
class RawConfig {
 public:
  /// `key = value` lines; `#` starts a comment. Unknown keys, duplicate keys,
  /// lines without `=` and empty values throw ParseError with the line.
  static RawConfig parse(const std::string& text);
  static RawConfig load(const std::string& path);

  /// Flag or environment override (line 0). Unknown keys throw ParseError.
  void set(const std::string& key, const std::string& value);
  const std::map<std::string, RawValue>& values() const { return values_; }

 private:
  std::map<std::string, RawValue> values_;
};

/// Pairs `--section.key value` or `--section.key=value` from leftover
/// command-line arguments. Throws ParseError for anything else.
std::vector<std::pair<std::string, std::string>> parse_flag_overrides(
    const std::vector<std::string>& args);

struct DensityGrid {
  double xmin = -5.0;
  double xmax = 5.0;
  double ymin = -5.0;
  double ymax = 5.0;
  std::size_t resolution = 101;  // points per axis
};

/// A fully typed and validated configuration.
struct RunConfig {
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::string output_dir;

  DatasetSpec dataset;
  std::size_t dataset_size = 20000;

  FlowArchitecture arch;
  TraceMode trace = TraceMode::hutchinson;
  std::size_t probes = 1;
  bool zero_init = false;
  std::string checkpoint;

  SolverConfig solver;
  TrainConfig train;

  std::size_t sample_count = 1000;
  std::size_t eval_points = 2000;
  DensityGrid density;

  std::vector<std::uint64_t> benchmark_seeds;
  std::vector<Variant> benchmark_nfe_only;
  std::size_t benchmark_nfe_only_seeds = 1;
  double benchmark_eval_tol = 1e-5;

  std::size_t verify_fields = 50;

  /// FNV-1a of the canonical effective configuration, 16 hex digits.
  std::string config_hash;

  std::uint64_t require_seed() const;
  BenchmarkConfig benchmark_config() const;
};

/// Converts and validates. Type errors and out-of-range values throw
/// ParseError naming the key and its line. Referenced files must exist.
RunConfig resolve(const RawConfig& raw);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& text);

/// `# config_hash=<hex> seed=<n>` line that opens every emitted CSV.
std::string provenance_line(const RunConfig& config);

/// Documentation of every key, one per line.
std::string describe_keys();

}  // namespace affjord::cli
