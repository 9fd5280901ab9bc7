#include "config.hpp"

#include "affjord/checkpoint.hpp"
#include "affjord/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <sstream>

namespace affjord::cli {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<KeySpec> build_keys() {
  using T = ValueType;
  std::vector<KeySpec> keys = {
      {"seed", T::integer, "", "root seed for data, initialisation and probes (required)"},
      {"threads", T::integer, "1", "worker threads for benchmark jobs"},
      {"output.dir", T::text, "out", "artifact directory (AFFJORD_OUTPUT_DIR overrides the file)"},
      {"data.family", T::text, "hash-gaussian",
       "gaussian-grid | hash-gaussian | glyph-text | rings | checkerboard"},
      {"data.size", T::integer, "20000", "points generated for training and validation"},
      {"data.noise", T::real, "", "jitter for glyph-text and rings (family default when unset)"},
      {"data.glyph", T::text, "", "glyph raster file for glyph-text (built-in TY when unset)"},
      {"data.grid_size", T::integer, "3", "gaussian-grid: components per axis"},
      {"data.grid_spacing", T::real, "2", "gaussian-grid: distance between centres"},
      {"data.grid_scale", T::real, "0.3", "gaussian-grid: component standard deviation"},
      {"model.variant", T::text, "affjord-hypernet",
       "ffjord-concat-time | affjord-concat | affjord-hypernet"},
      {"model.hidden", T::integer_list, "32,32", "hidden widths of the main field"},
      {"model.aug_dim", T::integer, "20", "augmented dimension m"},
      {"model.hyper_inputs", T::integer, "10", "leading z* entries feeding the hypernetwork"},
      {"model.g_hidden", T::integer, "20", "hidden width of the augmented field g"},
      {"model.activation", T::text, "tanh", "tanh | softplus"},
      {"model.trace", T::text, "hutchinson", "divergence during training: exact | hutchinson"},
      {"model.probes", T::integer, "1", "Hutchinson probes per sample"},
      {"model.init", T::text, "random", "random | zeros (when no checkpoint is given)"},
      {"model.checkpoint", T::text, "", "checkpoint read by eval, sample and density"},
      {"solver.method", T::text, "rk4", "rk4 | dopri5"},
      {"solver.steps", T::integer, "40", "rk4 steps over the unit horizon"},
      {"solver.atol", T::real, "1e-8", "dopri5 absolute tolerance"},
      {"solver.rtol", T::real, "1e-6", "dopri5 relative tolerance"},
      {"solver.max_steps", T::integer, "100000", "dopri5 step budget"},
      {"train.lr", T::real, "0.001", "Adam learning rate"},
      {"train.beta1", T::real, "0.9", "Adam beta1"},
      {"train.beta2", T::real, "0.999", "Adam beta2"},
      {"train.eps", T::real, "1e-8", "Adam epsilon"},
      {"train.batch", T::integer, "512", "batch size"},
      {"train.iterations", T::integer, "2000", "optimiser steps"},
      {"train.eval_every", T::integer, "100", "validation cadence"},
      {"train.val_fraction", T::real, "0.1", "validation share of the generated data"},
      {"train.clip", T::real, "10", "global gradient-norm clip"},
      {"train.standardize", T::boolean, "true", "train on standardised data"},
      {"train.wallclock", T::boolean, "true", "record elapsed seconds (false writes 0)"},
      {"sample.count", T::integer, "1000", "points drawn by sample"},
      {"eval.points", T::integer, "2000", "fresh data points scored by eval"},
      {"density.xmin", T::real, "-5", "density lattice"},
      {"density.xmax", T::real, "5", "density lattice"},
      {"density.ymin", T::real, "-5", "density lattice"},
      {"density.ymax", T::real, "5", "density lattice"},
      {"density.resolution", T::integer, "101", "lattice points per axis"},
      {"benchmark.seeds", T::integer_list, "1,2,3,4,5", "seeds per compared variant"},
      {"benchmark.nfe_only", T::text, "affjord-concat",
       "comma-separated variants trained only for NFE reporting (or none)"},
      {"benchmark.nfe_only_seeds", T::integer, "1", "seeds for the NFE-only variants"},
      {"benchmark.eval_tol", T::real, "1e-5", "dopri5 tolerance of the adaptive NFE solve"},
      {"verify.fields", T::integer, "50", "random fields per field-based identity"},
  };
  std::sort(keys.begin(), keys.end(),
            [](const KeySpec& a, const KeySpec& b) { return a.key < b.key; });
  return keys;
}

[[noreturn]] void fail(const std::string& key, int line, const std::string& what) {
  const std::string where = line > 0 ? "line " + std::to_string(line) : "command line";
  throw ParseError(where + ": key '" + key + "': " + what, key, line);
}

class Reader {
 public:
  explicit Reader(const RawConfig& raw) : raw_(raw) {}

  int line(const std::string& key) const {
    const auto it = raw_.values().find(key);
    return it == raw_.values().end() ? 0 : it->second.line;
  }

  // Effective string value (explicit or default).
  std::string text(const std::string& key) const {
    const auto it = raw_.values().find(key);
    if (it != raw_.values().end()) return it->second.value;
    return find_key(key)->default_value;
  }

  bool is_set(const std::string& key) const { return !text(key).empty(); }

  long long integer(const std::string& key, long long min) const {
    const std::string s = text(key);
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) fail(key, line(key), "'" + s + "' is not an integer");
    if (v < min) fail(key, line(key), "must be >= " + std::to_string(min));
    return v;
  }

  std::size_t count(const std::string& key, long long min = 1) const {
    return static_cast<std::size_t>(integer(key, min));
  }

  double real(const std::string& key) const {
    const std::string s = text(key);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || s.empty()) fail(key, line(key), "'" + s + "' is not a number");
    if (!std::isfinite(v)) fail(key, line(key), "must be finite");
    return v;
  }

  double positive(const std::string& key) const {
    const double v = real(key);
    if (!(v > 0.0)) fail(key, line(key), "must be positive");
    return v;
  }

  bool boolean(const std::string& key) const {
    const std::string s = text(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    fail(key, line(key), "'" + s + "' is not a boolean");
  }

  std::vector<std::size_t> list(const std::string& key) const {
    std::vector<std::size_t> out;
    std::stringstream ss(text(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      std::size_t v = 0;
      const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
      if (ec != std::errc() || ptr != item.data() + item.size() || item.empty()) {
        fail(key, line(key), "'" + text(key) + "' is not a comma-separated list of integers");
      }
      out.push_back(v);
    }
    if (out.empty()) fail(key, line(key), "list is empty");
    return out;
  }

  template <typename F>
  auto parsed(const std::string& key, F&& parse) const {
    try {
      return parse(text(key));
    } catch (const Error& e) {
      fail(key, line(key), e.what());
    }
  }

  std::string existing_file(const std::string& key) const {
    const std::string path = text(key);
    if (!path.empty() && !std::filesystem::is_regular_file(path)) {
      fail(key, line(key), "file '" + path + "' does not exist");
    }
    return path;
  }

 private:
  const RawConfig& raw_;
};

std::string canonical(const RawConfig& raw) {
  // Keys that do not change results stay out of the hash.
  std::string out;
  const Reader r(raw);
  for (const auto& spec : config_keys()) {
    if (spec.key == "threads" || spec.key == "output.dir") continue;
    out += spec.key + "=" + r.text(spec.key) + "\n";
  }
  return out;
}

}  // namespace

const std::vector<KeySpec>& config_keys() {
  static const std::vector<KeySpec> keys = build_keys();
  return keys;
}

const KeySpec* find_key(const std::string& key) {
  const auto& keys = config_keys();
  const auto it = std::lower_bound(keys.begin(), keys.end(), key,
                                   [](const KeySpec& k, const std::string& s) { return k.key < s; });
  return it != keys.end() && it->key == key ? &*it : nullptr;
}

RawConfig RawConfig::parse(const std::string& text) {
  RawConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 'key = value'", line,
                       line_no);
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (find_key(key) == nullptr) fail(key, line_no, "unknown key");
    if (value.empty()) fail(key, line_no, "empty value");
    if (cfg.values_.count(key) != 0) {
      fail(key, line_no,
           "duplicate key (first set on line " + std::to_string(cfg.values_[key].line) + ")");
    }
    cfg.values_[key] = {value, line_no};
  }
  return cfg;
}

RawConfig RawConfig::load(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw ParseError("config file '" + path + "' does not exist", "config", 0);
  }
  return parse(read_file(path));
}

void RawConfig::set(const std::string& key, const std::string& value) {
  if (find_key(key) == nullptr) fail(key, 0, "unknown key");
  if (value.empty()) fail(key, 0, "empty value");
  values_[key] = {value, 0};
}

std::vector<std::pair<std::string, std::string>> parse_flag_overrides(
    const std::vector<std::string>& args) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0 || a.size() == 2) {
      throw ParseError("unexpected argument '" + a + "'", a, 0);
    }
    const std::string body = a.substr(2);
    const auto eq = body.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else {
      if (i + 1 >= args.size()) throw ParseError("flag '" + a + "' needs a value", body, 0);
      out.emplace_back(body, args[++i]);
    }
    if (find_key(out.back().first) == nullptr) fail(out.back().first, 0, "unknown key");
  }
  return out;
}

std::uint64_t RunConfig::require_seed() const {
  if (!seed) throw ParseError("key 'seed': required", "seed", 0);
  return *seed;
}

BenchmarkConfig RunConfig::benchmark_config() const {
  BenchmarkConfig b;
  b.dataset = dataset;
  b.hidden = arch.hidden;
  b.aug_dim = arch.aug_dim;
  b.hyper_inputs = arch.hyper_inputs;
  b.g_hidden = arch.g_hidden;
  b.activation = arch.activation;
  b.solver = solver;
  b.train_trace = trace;
  b.probes = probes;
  b.train = train;
  b.seeds = benchmark_seeds;
  b.nfe_only_variants = benchmark_nfe_only;
  b.nfe_only_seeds = benchmark_nfe_only_seeds;
  b.eval_atol = benchmark_eval_tol;
  b.eval_rtol = benchmark_eval_tol;
  b.threads = threads;
  return b;
}

RunConfig resolve(const RawConfig& raw) {
  const Reader r(raw);
  RunConfig c;
  if (r.is_set("seed")) c.seed = static_cast<std::uint64_t>(r.integer("seed", 0));
  c.threads = r.count("threads");
  c.output_dir = r.text("output.dir");

  const DatasetFamily family = r.parsed("data.family", parse_dataset_family);
  switch (family) {
    case DatasetFamily::gaussian_grid:
      c.dataset = gaussian_grid_spec(r.count("data.grid_size"), r.positive("data.grid_spacing"),
                                     r.positive("data.grid_scale"));
      break;
    case DatasetFamily::glyph_text: {
      const std::string path = r.existing_file("data.glyph");
      c.dataset = path.empty() ? glyph_text_spec()
                               : glyph_text_spec(r.parsed("data.glyph", load_glyph));
      break;
    }
    default:
      c.dataset = default_spec(family);
  }
  if (r.is_set("data.noise")) {
    c.dataset.noise = r.real("data.noise");
    if (c.dataset.noise < 0.0) fail("data.noise", r.line("data.noise"), "must be >= 0");
  }
  c.dataset_size = r.count("data.size", 2);
  r.parsed("data.family", [&](const std::string&) {
    c.dataset.validate();
    return 0;
  });

  c.arch.variant = r.parsed("model.variant", parse_variant);
  c.arch.data_dim = 2;
  c.arch.hidden = r.list("model.hidden");
  c.arch.aug_dim = r.count("model.aug_dim");
  c.arch.hyper_inputs = r.count("model.hyper_inputs");
  c.arch.g_hidden = r.count("model.g_hidden");
  c.arch.activation = r.parsed("model.activation", parse_activation);
  r.parsed("model.variant", [&](const std::string&) {
    c.arch.validate();
    return 0;
  });
  c.trace = r.parsed("model.trace", parse_trace_mode);
  c.probes = r.count("model.probes");
  const std::string init = r.text("model.init");
  if (init != "random" && init != "zeros") {
    fail("model.init", r.line("model.init"), "expected random or zeros");
  }
  c.zero_init = init == "zeros";
  c.checkpoint = r.existing_file("model.checkpoint");

  const std::string method = r.text("solver.method");
  if (method == "rk4") {
    c.solver = SolverConfig::rk4(r.count("solver.steps"));
  } else if (method == "dopri5") {
    c.solver = SolverConfig::dopri5(r.positive("solver.atol"), r.positive("solver.rtol"));
    c.solver.steps = r.count("solver.steps");
  } else {
    fail("solver.method", r.line("solver.method"), "expected rk4 or dopri5");
  }
  c.solver.max_steps = r.count("solver.max_steps");

  c.train.adam.learning_rate = r.real("train.lr");
  if (c.train.adam.learning_rate < 0.0) fail("train.lr", r.line("train.lr"), "must be >= 0");
  c.train.adam.beta1 = r.real("train.beta1");
  c.train.adam.beta2 = r.real("train.beta2");
  for (const char* k : {"train.beta1", "train.beta2"}) {
    const double b = r.real(k);
    if (b < 0.0 || b >= 1.0) fail(k, r.line(k), "must lie in [0, 1)");
  }
  c.train.adam.epsilon = r.positive("train.eps");
  c.train.batch_size = r.count("train.batch");
  c.train.iterations = r.count("train.iterations", 0);
  c.train.eval_every = r.count("train.eval_every");
  c.train.dataset_size = c.dataset_size;
  c.train.validation_fraction = r.real("train.val_fraction");
  if (!(c.train.validation_fraction > 0.0 && c.train.validation_fraction < 1.0)) {
    fail("train.val_fraction", r.line("train.val_fraction"), "must lie in (0, 1)");
  }
  c.train.clip_norm = r.positive("train.clip");
  c.train.standardize = r.boolean("train.standardize");
  c.train.record_wallclock = r.boolean("train.wallclock");
  if (c.seed) c.train.seed = *c.seed;

  c.sample_count = r.count("sample.count");
  c.eval_points = r.count("eval.points");
  c.density.xmin = r.real("density.xmin");
  c.density.xmax = r.real("density.xmax");
  c.density.ymin = r.real("density.ymin");
  c.density.ymax = r.real("density.ymax");
  if (!(c.density.xmax > c.density.xmin)) fail("density.xmax", r.line("density.xmax"), "must exceed density.xmin");
  if (!(c.density.ymax > c.density.ymin)) fail("density.ymax", r.line("density.ymax"), "must exceed density.ymin");
  c.density.resolution = r.count("density.resolution", 2);

  for (std::size_t s : r.list("benchmark.seeds")) c.benchmark_seeds.push_back(s);
  const std::string nfe_only = r.text("benchmark.nfe_only");
  if (nfe_only != "none") {
    std::stringstream ss(nfe_only);
    std::string item;
    while (std::getline(ss, item, ',')) {
      c.benchmark_nfe_only.push_back(r.parsed("benchmark.nfe_only", [&](const std::string&) {
        return parse_variant(trim(item));
      }));
    }
  }
  c.benchmark_nfe_only_seeds = r.count("benchmark.nfe_only_seeds", 0);
  c.benchmark_eval_tol = r.positive("benchmark.eval_tol");
  c.verify_fields = r.count("verify.fields");

  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(canonical(raw))));
  c.config_hash = hex;
  return c;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string provenance_line(const RunConfig& config) {
  return "# config_hash=" + config.config_hash +
         " seed=" + (config.seed ? std::to_string(*config.seed) : std::string("none")) + "\n";
}

std::string describe_keys() {
  std::string out;
  for (const auto& k : config_keys()) {
    std::string d = k.default_value.empty() ? "(unset)" : k.default_value;
    out += "  " + k.key + std::string(k.key.size() < 26 ? 26 - k.key.size() : 1, ' ') + d +
           std::string(d.size() < 16 ? 16 - d.size() : 1, ' ') + k.help + "\n";
  }
  return out;
}

}  // namespace affjord::cli
