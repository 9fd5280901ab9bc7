#include "commands.hpp"
#include "config.hpp"

#include "affjord/errors.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

using namespace affjord;
using namespace affjord::cli;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("affjord_cli_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

RunConfig config_from(const std::string& text, const std::vector<std::string>& flags = {}) {
  RawConfig raw = RawConfig::parse(text);
  for (const auto& [k, v] : parse_flag_overrides(flags)) raw.set(k, v);
  return resolve(raw);
}

}  // namespace

TEST_CASE("unknown keys are parse errors naming line and key") {
  try {
    RawConfig::parse("seed = 1\nsovler.steps = 10\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line == 2);
    CHECK(e.key == "sovler.steps");
    CHECK(std::string(e.what()).find("sovler.steps") != std::string::npos);
  }
  CHECK_THROWS_AS(RawConfig::parse("seed = 1\nseed = 2\n"), ParseError);
  CHECK_THROWS_AS(RawConfig::parse("seed 1\n"), ParseError);
  CHECK_THROWS_AS(RawConfig::parse("seed =\n"), ParseError);
}

TEST_CASE("comments and blank lines are ignored") {
  const RawConfig raw = RawConfig::parse("# header\n\nseed = 3  # trailing\n");
  REQUIRE(raw.values().count("seed") == 1);
  CHECK(raw.values().at("seed").value == "3");
  CHECK(raw.values().at("seed").line == 3);
}

TEST_CASE("flags override the file") {
  const RunConfig c = config_from("seed = 1\nsolver.steps = 10\n", {"--solver.steps", "40"});
  CHECK(c.solver.steps == 40);
  const RunConfig d = config_from("seed = 1\n", {"--model.variant=ffjord"});
  CHECK(d.arch.variant == Variant::ffjord_concat_time);
  CHECK_THROWS_AS(parse_flag_overrides({"--solver.steps"}), ParseError);
  CHECK_THROWS_AS(parse_flag_overrides({"solver.steps", "4"}), ParseError);
}

TEST_CASE("typed values are validated") {
  CHECK_THROWS_AS(config_from("solver.steps = ten\n"), ParseError);
  CHECK_THROWS_AS(config_from("solver.method = euler\n"), ParseError);
  CHECK_THROWS_AS(config_from("train.standardize = maybe\n"), ParseError);
  CHECK_THROWS_AS(config_from("model.hidden = 32,,4\n"), ParseError);
  const RunConfig c = config_from("model.hidden = 8, 4\ntrain.lr = 0.01\n");
  CHECK(c.arch.hidden == std::vector<std::size_t>{8, 4});
  CHECK(c.train.adam.learning_rate == 0.01);
  CHECK_FALSE(c.seed.has_value());
  CHECK_THROWS_AS(c.require_seed(), ParseError);
}

TEST_CASE("config hash tracks effective settings only") {
  const RunConfig a = config_from("seed = 1\n");
  const RunConfig b = config_from("seed = 1\nsolver.steps = 40\n");
  const RunConfig c = config_from("seed = 1\nsolver.steps = 41\n");
  const RunConfig d = config_from("seed = 1\noutput.dir = elsewhere\nthreads = 3\n");
  CHECK(a.config_hash.size() == 16);
  CHECK(a.config_hash == b.config_hash);
  CHECK(a.config_hash != c.config_hash);
  CHECK(a.config_hash == d.config_hash);
  CHECK(provenance_line(a) == "# config_hash=" + a.config_hash + " seed=1\n");
  CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("every key is documented") {
  const std::string doc = describe_keys();
  for (const auto& k : config_keys()) CHECK(doc.find(k.key) != std::string::npos);
  CHECK(find_key("solver.steps") != nullptr);
  CHECK(find_key("solver.stepz") == nullptr);
}

TEST_CASE("zero-model density is the standard normal") {
  const auto dir = scratch("density");
  RunConfig c = config_from("seed = 1\nmodel.init = zeros\ndensity.resolution = 11\n");
  c.output_dir = dir.string();
  std::ostringstream out;
  CHECK(run_density(c, out) == kExitOk);
  const Matrix grid = density_grid(model_for(c), c.density);
  for (Eigen::Index r = 0; r < grid.rows(); ++r)
    for (Eigen::Index col = 0; col < grid.cols(); ++col) {
      const double x = -5.0 + col, y = 5.0 - r;
      const double expect = -std::log(2.0 * std::numbers::pi) - 0.5 * (x * x + y * y);
      CHECK(std::abs(grid(r, col) - expect) < 1e-10);
    }
  const std::string csv = read_file((dir / "density.csv").string());
  CHECK(csv.rfind("# config_hash=" + c.config_hash, 0) == 0);
  CHECK(csv.find("\nx,y,log_density\n") != std::string::npos);
  const std::string pgm = read_file((dir / "density.pgm").string());
  CHECK(pgm.rfind("P2\n# config_hash=", 0) == 0);
}

TEST_CASE("sample is deterministic and carries provenance") {
  const auto dir = scratch("sample");
  RunConfig c = config_from("seed = 4\nsample.count = 20\nmodel.hidden = 8\n");
  c.output_dir = dir.string();
  std::ostringstream out;
  CHECK(run_sample(c, out) == kExitOk);
  const std::string first = read_file((dir / "samples.csv").string());
  CHECK(run_sample(c, out) == kExitOk);
  CHECK(read_file((dir / "samples.csv").string()) == first);
  CHECK(first.find("\nx,y\n") != std::string::npos);
}

TEST_CASE("train, eval and sample from a checkpoint") {
  const auto dir = scratch("train");
  RunConfig c = config_from(
      "seed = 2\nmodel.hidden = 8\nmodel.aug_dim = 4\nmodel.hyper_inputs = 2\nmodel.g_hidden = 4\n"
      "solver.steps = 8\ntrain.iterations = 3\ntrain.batch = 32\ntrain.eval_every = 3\n"
      "data.size = 400\neval.points = 50\ntrain.wallclock = false\n");
  c.output_dir = dir.string();
  std::ostringstream out;
  REQUIRE(run_train(c, out) == kExitOk);
  const std::string log = read_file((dir / "train_log.csv").string());
  CHECK(log.find("iteration,train_nll,val_nll,nfe_mean,wallclock_s\n") != std::string::npos);

  c.checkpoint = (dir / "checkpoint.txt").string();
  CHECK(run_eval(c, out) == kExitOk);
  const std::string eval = read_file((dir / "eval.csv").string());
  CHECK(eval.find("\nmetric,value\nnll,") != std::string::npos);
  CHECK(eval.find("true_nll,") != std::string::npos);
  CHECK(run_sample(c, out) == kExitOk);
}

TEST_CASE("exit codes") {
  CHECK(exit_code_for(ParseError("x", "k", 1)) == kExitValidation);
  CHECK(exit_code_for(ConfigurationError("x")) == kExitValidation);
  CHECK(exit_code_for(DomainError("x")) == kExitNumerical);
  CHECK(exit_code_for(StiffnessError("x", 0.5, 1, 2, 3)) == kExitNumerical);
  CHECK(describe_error(ParseError("line 2: bad", "k", 2)).find("[key=k line=2]") != std::string::npos);
}

TEST_CASE("data dump") {
  const auto dir = scratch("data");
  RunConfig c = config_from("seed = 1\ndata.family = rings\ndata.size = 30\n");
  c.output_dir = dir.string();
  std::ostringstream out;
  CHECK(run_data_dump(c, out) == kExitOk);
  const std::string csv = read_file((dir / "data.csv").string());
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 32);
}

TEST_CASE("the shipped benchmark config resolves") {
  const RunConfig c = resolve(RawConfig::load(std::string(AFFJORD_DATA_DIR) + "/hash_benchmark.conf"));
  const BenchmarkConfig b = c.benchmark_config();
  CHECK(b.seeds.size() == 5);
  CHECK(b.train.iterations == 2000);
  CHECK(b.train.batch_size == 512);
  CHECK(b.solver.steps == 40);
  CHECK(b.hidden == std::vector<std::size_t>{32, 32});
}
