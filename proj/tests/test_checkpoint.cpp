#include "support.hpp"

#include "affjord/checkpoint.hpp"
#include "affjord/errors.hpp"

#include <doctest.h>

#include <filesystem>

using namespace affjord;

namespace {

FlowArchitecture arch() {
  FlowArchitecture a;
  a.variant = Variant::affjord_hypernet;
  a.hidden = {6, 5};
  a.aug_dim = 4;
  a.hyper_inputs = 2;
  a.g_hidden = 3;
  return a;
}

}  // namespace

TEST_CASE("checkpoint round trip is exact and byte-stable") {
  const FlowModel m = FlowModel::initialize(arch(), 4, SolverConfig::dopri5(1e-6, 1e-5))
                          .with_trace(TraceMode::hutchinson, 3);
  Standardization st;
  st.mean = affjord::test::random_vector(2, 1);
  st.scale = Vector::Constant(2, 0.37);
  const std::string text = serialize_checkpoint(m, st);
  CHECK(text.rfind("affjord-checkpoint 1\n", 0) == 0);
  const Checkpoint back = parse_checkpoint(text);
  CHECK(back.model.params() == m.params());
  CHECK(back.model.arch().variant == m.arch().variant);
  CHECK(back.model.arch().hidden == m.arch().hidden);
  CHECK(back.model.solver().method == SolverMethod::dopri5);
  CHECK(back.model.solver().rtol == 1e-5);
  CHECK(back.model.trace_mode() == TraceMode::hutchinson);
  CHECK(back.model.probes() == 3);
  CHECK(back.standardization.mean == st.mean);
  CHECK(back.standardization.scale == st.scale);
  CHECK(serialize_checkpoint(back.model, back.standardization) == text);
}

TEST_CASE("checkpoint files") {
  const auto dir = std::filesystem::temp_directory_path() / "affjord_checkpoint_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "model.txt").string();
  const FlowModel m = FlowModel::initialize(arch(), 5);
  write_checkpoint(path, m, Standardization::identity(2));
  CHECK(read_checkpoint(path).model.params() == m.params());
  CHECK_FALSE(std::filesystem::exists(path + ".tmp"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("malformed checkpoints are rejected") {
  const std::string good = serialize_checkpoint(FlowModel::zeros(arch()), Standardization::identity(2));
  CHECK_THROWS_AS(parse_checkpoint("affjord-checkpoint 2\n"), ParseError);
  CHECK_THROWS_AS(parse_checkpoint("something else\n"), ParseError);
  CHECK_THROWS_AS(parse_checkpoint(good.substr(0, good.size() / 2)), ParseError);
  std::string bad = good;
  bad.replace(bad.find("affjord-hypernet"), 16, "realnvp-coupling");
  CHECK_THROWS(parse_checkpoint(bad));
}
