#include "support.hpp"

#include "affjord/errors.hpp"
#include "affjord/multiscale.hpp"

#include <doctest.h>

#include <algorithm>

using namespace affjord;

namespace {

ImageTensor ramp(std::size_t c, std::size_t s) {
  ImageTensor t(c, s);
  for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data(i) = static_cast<double>(i);
  return t;
}

MultiscaleArchitecture arch(std::size_t c, std::size_t s, std::size_t levels, Variant v) {
  MultiscaleArchitecture a;
  a.channels = c;
  a.size = s;
  a.levels = levels;
  a.variant = v;
  a.hidden = {32};
  a.g_hidden = 16;
  return a;
}

MultiscaleStack seeded_stack(const MultiscaleArchitecture& a, std::uint64_t seed) {
  MultiscaleStack s = MultiscaleStack::initialize(a, seed);
  for (auto& b : s.blocks) b = b.with_params(1.5 * b.params());
  return s;
}

}  // namespace

TEST_CASE("squeeze moves 2x2 blocks into channels") {
  const ImageTensor t = ramp(1, 4);
  const ImageTensor s = squeeze(t);
  CHECK(s.channels == 4);
  CHECK(s.size == 2);
  // Channel 2dy + dx at (i, j) holds input (2i + dy, 2j + dx).
  CHECK(s.at(0, 0, 0) == 0.0);
  CHECK(s.at(1, 0, 0) == 1.0);
  CHECK(s.at(2, 0, 0) == 4.0);
  CHECK(s.at(3, 0, 0) == 5.0);
  CHECK(s.at(0, 0, 1) == 2.0);
  CHECK(s.at(0, 1, 0) == 8.0);
  CHECK(s.at(3, 1, 1) == 15.0);
  CHECK(unsqueeze(s).data == t.data);

  const ImageTensor single = squeeze(ramp(1, 2));
  CHECK(single.channels == 4);
  CHECK(single.size == 1);
}

TEST_CASE("squeeze and unsqueeze are exact inverses") {
  const ImageTensor t(3, 8, affjord::test::random_vector(3 * 64, 1));
  CHECK(unsqueeze(squeeze(t)).data == t.data);
  CHECK(squeeze(unsqueeze(squeeze(t))).data == squeeze(t).data);
}

TEST_CASE("shape errors") {
  CHECK_THROWS_AS(squeeze(ramp(1, 3)), DimensionError);
  CHECK_THROWS_AS(unsqueeze(ramp(3, 2)), DimensionError);
  CHECK_THROWS_AS(arch(1, 4, 3, Variant::affjord_concat).validate(), DimensionError);
}

TEST_CASE("level arithmetic for one augmented channel") {
  const MultiscaleArchitecture a = arch(1, 4, 1, Variant::affjord_concat);
  CHECK(a.level_channels(0) == 1);
  CHECK(a.level_size(0) == 4);
  CHECK(a.level_aug_channels() == 1);
  const MultiscaleStack s = MultiscaleStack::zeros(a);
  const MultiscaleForward f = pipeline_forward(s, ramp(1, 4));
  // [1+1, 4, 4] -> [8, 2, 2]; 4 augmented channels to Array A; 4 data channels split 2 + 2.
  REQUIRE(f.state.array_a.size() == 1);
  CHECK(f.state.array_a[0].channels == 4);
  CHECK(f.state.array_a[0].size == 2);
  REQUIRE(f.state.array_b.size() == 1);
  CHECK(f.state.array_b[0].channels == 2);
  CHECK(f.state.array_b[0].size == 2);
  CHECK(f.output.size() == 16);
}

TEST_CASE("zero stack is a fixed permutation") {
  for (Variant v : {Variant::ffjord_concat_time, Variant::affjord_concat, Variant::affjord_hypernet}) {
    const MultiscaleStack s = MultiscaleStack::zeros(arch(1, 8, 2, v));
    const ImageTensor x = ramp(1, 8);
    const MultiscaleForward f = pipeline_forward(s, x);
    CHECK(f.delta_logdet == 0.0);
    std::vector<double> sorted(f.output.data(), f.output.data() + f.output.size());
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == static_cast<double>(i));
    CHECK(pipeline_inverse(s, f.output, f.state).data == x.data);
  }
}

TEST_CASE("seeded pipelines invert") {
  for (Variant v : {Variant::ffjord_concat_time, Variant::affjord_concat, Variant::affjord_hypernet}) {
    for (std::size_t c : {1, 3}) {
      const MultiscaleStack s = seeded_stack(arch(c, 8, 2, v), 5 + c);
      const ImageTensor x(c, 8, affjord::test::random_vector(static_cast<Eigen::Index>(c * 64), 6));
      const MultiscaleForward f = pipeline_forward(s, x);
      const ImageTensor back = pipeline_inverse(s, f.output, f.state);
      CHECK((back.data - x.data).cwiseAbs().maxCoeff() < 1e-5);
      double sum = 0.0;
      for (double d : f.state.block_logdet) sum += d;
      CHECK(std::abs(sum - f.delta_logdet) <= 1e-10);
      CHECK(f.output.size() == x.data.size());
    }
  }
  const MultiscaleStack one = seeded_stack(arch(1, 4, 1, Variant::affjord_hypernet), 9);
  const ImageTensor x(1, 4, affjord::test::random_vector(16, 10));
  const MultiscaleForward f = pipeline_forward(one, x);
  CHECK((pipeline_inverse(one, f.output, f.state).data - x.data).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("Array A is model-determined and required for inversion") {
  const MultiscaleStack s = seeded_stack(arch(1, 8, 2, Variant::affjord_concat), 11);
  const ImageTensor x(1, 8, affjord::test::random_vector(64, 12));
  const MultiscaleForward f = pipeline_forward(s, x);
  const std::vector<ImageTensor> regen = regenerate_array_a(s);
  REQUIRE(regen.size() == f.state.array_a.size());
  for (std::size_t l = 0; l < regen.size(); ++l) {
    CHECK((regen[l].data - f.state.array_a[l].data).cwiseAbs().maxCoeff() < 1e-12);
  }
  MultiscaleState truncated = f.state;
  truncated.array_a.pop_back();
  CHECK_THROWS_AS(pipeline_inverse(s, f.output, truncated), StateError);
}
