#include "support.hpp"

#include "affjord/cnf_flow.hpp"
#include "affjord/errors.hpp"
#include "affjord/sensitivity.hpp"
#include "affjord/training.hpp"

#include <doctest.h>

#include <cmath>

using namespace affjord;
using affjord::test::dev;
using affjord::test::random_vector;
using affjord::test::rel_err;

namespace {

const SolverConfig kTight = SolverConfig::dopri5(1e-10, 1e-10);

TerminalLossFn half_square() {
  return [](const Vector& y) { return TerminalLoss{0.5 * y.squaredNorm(), y}; };
}

TerminalLossFn weighted_sum(Vector w) {
  return [w](const Vector& y) { return TerminalLoss{w.dot(y), w}; };
}

// Batch of B points of dimension n flowing through one field, as one ODE state.
class BatchFieldDynamics final : public ParametricDynamics {
 public:
  BatchFieldDynamics(MlpField f, std::size_t batch) : f_(std::move(f)), batch_(batch) {}
  std::size_t state_dim() const override { return batch_ * f_.state_dim(); }
  std::size_t param_dim() const override { return f_.param_count(); }
  void derivative(double t, const Vector& y, Vector& dy) const override {
    const auto n = static_cast<Eigen::Index>(f_.state_dim());
    dy.resize(y.size());
    for (std::size_t b = 0; b < batch_; ++b) {
      const auto o = static_cast<Eigen::Index>(b) * n;
      dy.segment(o, n) = f_.eval(y.segment(o, n), aux(t));
    }
  }
  void vjp(double t, const Vector& y, const Vector& cot, Vector& y_bar, Vector& p_bar) const override {
    const auto n = static_cast<Eigen::Index>(f_.state_dim());
    y_bar.resize(y.size());
    for (std::size_t b = 0; b < batch_; ++b) {
      const auto o = static_cast<Eigen::Index>(b) * n;
      y_bar.segment(o, n) = f_.state_vjp(y.segment(o, n), aux(t), cot.segment(o, n));
      p_bar += f_.param_gradient(y.segment(o, n), aux(t), cot.segment(o, n));
    }
  }

 private:
  std::span<const double> aux(double t) const {
    if (f_.mode() != InputMode::concat_time) return {};
    t_ = t;
    return {&t_, 1};
  }
  MlpField f_;
  std::size_t batch_;
  mutable double t_ = 0.0;
};

MlpField seeded_field(std::uint64_t seed, std::size_t n, InputMode mode = InputMode::concat_time) {
  const std::size_t aux = mode == InputMode::concat_time ? 1 : 0;
  MlpField f = MlpField::initialize({n + aux, 8, 8, n}, mode, n, seed);
  return f.with_params(2.0 * f.params());
}

double loss_at(const ParametricDynamics& dyn, const Vector& y0, const TerminalLossFn& loss,
               const SolverConfig& c) {
  const OdeFunction rhs = [&](double t, const Vector& y, Vector& dy) { dyn.derivative(t, y, dy); };
  return loss(integrate(rhs, y0, 0.0, 1.0, c).state).value;
}

double max_rel(const Vector& a, const Vector& b) {
  const double floor = 1e-3 * std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff());
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a(i), b(i), floor));
  return worst;
}

FlowArchitecture small_arch(Variant v) {
  FlowArchitecture a;
  a.variant = v;
  a.data_dim = 2;
  a.hidden = {8, 8};
  a.aug_dim = 4;
  a.hyper_inputs = 3;
  a.g_hidden = 8;
  return a;
}

}  // namespace

TEST_CASE("adjoint: output-bias-only field at the zero point") {
  // f = b (constant); z(T) = z0 + bT, L = |z(T)|^2 / 2, dL/db = z0 + bT = z0 at b = 0.
  const MlpField f = MlpField::zeros({2, 4, 2}, InputMode::autonomous, 2);
  const Vector z0 = random_vector(2, 1);
  const GradientResult g = adjoint_gradient(FieldDynamics(f), z0, 0.0, 1.0, half_square(), kTight);
  const Vector bias_grad = g.param_gradient.tail(2);
  CHECK((bias_grad - z0).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(g.param_gradient.head(g.param_gradient.size() - 2).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((g.state_gradient - z0).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("adjoint: symmetric batch under an odd field") {
  // Odd autonomous field (biases zeroed) on the batch {z0, -z0}. The terminal
  // states are +-z(T), so a loss even in the batch has zero bias gradient and
  // a loss odd in the batch (identically zero) has zero weight gradient.
  MlpField f = seeded_field(3, 2, InputMode::autonomous);
  Vector p = f.params();
  const MlpLayout& layout = f.layout();
  std::vector<bool> is_bias(static_cast<std::size_t>(p.size()), false);
  for (std::size_t l = 0; l < layout.layer_count(); ++l) {
    for (std::size_t k = 0; k < layout.widths()[l + 1]; ++k) {
      p(static_cast<Eigen::Index>(layout.bias_offset(l) + k)) = 0.0;
      is_bias[layout.bias_offset(l) + k] = true;
    }
  }
  const BatchFieldDynamics dyn(f.with_params(p), 2);
  const Vector z0 = random_vector(2, 4);
  Vector y0(4);
  y0 << z0, -z0;

  const GradientResult even = adjoint_gradient(dyn, y0, 0.0, 1.0, half_square(), kTight);
  Vector w(4);
  w << 1.0, 0.5, 1.0, 0.5;
  const GradientResult odd = adjoint_gradient(dyn, y0, 0.0, 1.0, weighted_sum(w), kTight);
  CHECK(std::abs(odd.loss) < 1e-12);
  double bias_max = 0.0, weight_max = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (is_bias[static_cast<std::size_t>(i)]) bias_max = std::max(bias_max, std::abs(even.param_gradient(i)));
    else weight_max = std::max(weight_max, std::abs(odd.param_gradient(i)));
  }
  CHECK(bias_max < 1e-9);
  CHECK(weight_max < 1e-9);
  CHECK(even.param_gradient.cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("scalar theta z: discrete and adjoint gradients match the closed form") {
  const double theta = 0.6, z0 = 1.2;
  const FieldDynamics dyn(MlpField({1, 1}, InputMode::autonomous, 1, Vector::Constant(2, 0.0))
                              .with_params((Vector(2) << theta, 0.0).finished()));
  const Vector y0 = Vector::Constant(1, z0);
  const TerminalLossFn loss = weighted_sum(Vector::Ones(1));
  const double expect = z0 * std::exp(theta);
  const GradientResult d = discrete_backprop_gradient(dyn, y0, 0.0, 1.0, loss, 400);
  CHECK(d.param_gradient(0) == doctest::Approx(expect).epsilon(1e-9));
  const GradientResult a = adjoint_gradient(dyn, y0, 0.0, 1.0, loss, kTight);
  CHECK(a.param_gradient(0) == doctest::Approx(expect).epsilon(1e-8));
  CHECK(a.param_gradient(1) == doctest::Approx((std::exp(theta) - 1.0) / theta).epsilon(1e-8));
}

TEST_CASE("discrete backprop is the exact gradient of the discretised loss") {
  const BatchFieldDynamics dyn(seeded_field(5, 3), 2);
  const Vector y0 = random_vector(6, 6);
  const TerminalLossFn loss = half_square();
  const GradientResult d = discrete_backprop_gradient(dyn, y0, 0.0, 1.0, loss, 20);
  CHECK(d.forward_nfe == 80);
  const MlpField base = seeded_field(5, 3);
  const Vector fd = affjord::test::fd_gradient(
      [&](const Vector& p) {
        return loss_at(BatchFieldDynamics(base.with_params(p), 2), y0, loss, SolverConfig::rk4(20));
      },
      base.params());
  CHECK(max_rel(d.param_gradient, fd) < 1e-4);
}

TEST_CASE("discrete backprop memory guard") {
  const FieldDynamics dyn(seeded_field(5, 3));
  CHECK_THROWS_AS(discrete_backprop_gradient(dyn, Vector::Ones(3), 0.0, 1.0, half_square(), 1000, 1024),
                  ResourceError);
}

TEST_CASE("flow NLL gradients: adjoint, discrete and FD agree") {
  for (Variant v : {Variant::ffjord_concat_time, Variant::affjord_concat, Variant::affjord_hypernet}) {
    const FlowModel m0 = FlowModel::initialize(small_arch(v), 9, SolverConfig::rk4(100));
    const FlowModel m = m0.with_params(1.5 * m0.params());
    const Matrix batch = affjord::test::random_matrix(8, 2, 10);
    const FlowGradient adj = flow_nll_gradient(m.with_solver(kTight), batch, GradientMethod::adjoint);
    const FlowGradient disc = flow_nll_gradient(m, batch, GradientMethod::discrete);
    CHECK(max_rel(adj.gradient, disc.gradient) < 1e-3);

    // FD on 20 sampled coordinates of the discretised loss.
    std::mt19937_64 engine(11);
    std::uniform_int_distribution<Eigen::Index> pick(0, m.params().size() - 1);
    Vector fd(20), sub(20);
    for (int k = 0; k < 20; ++k) {
      const Eigen::Index i = pick(engine);
      const double h = 1e-6;
      Vector a = m.params(), b = m.params();
      a(i) += h;
      b(i) -= h;
      const double la = -log_likelihood(m.with_params(a), batch).log_likelihood.mean();
      const double lb = -log_likelihood(m.with_params(b), batch).log_likelihood.mean();
      fd(k) = (la - lb) / (2 * h);
      sub(k) = disc.gradient(i);
    }
    CHECK(max_rel(sub, fd) < 1e-4);
  }
}

TEST_CASE("discrete route needs rk4") {
  const FlowModel m = FlowModel::zeros(small_arch(Variant::affjord_concat), kTight);
  CHECK_THROWS_AS(flow_nll_gradient(m, Matrix::Zero(2, 2), GradientMethod::discrete),
                  ConfigurationError);
}

TEST_CASE("piecewise adjoint") {
  const Vector y0 = random_vector(4, 20);
  const TerminalLossFn loss = half_square();
  SUBCASE("tied fields sum to the single-field gradient") {
    const BatchFieldDynamics f(seeded_field(21, 2), 2);
    const PiecewiseGradient pw = piecewise_adjoint_gradient(f, f, y0, 1.0, loss, SolverConfig::rk4(100));
    const GradientResult whole = adjoint_gradient(f, y0, 0.0, 1.0, loss, SolverConfig::rk4(200));
    CHECK((pw.first_gradient + pw.second_gradient - whole.param_gradient).cwiseAbs().maxCoeff() < 1e-6);
  }
  SUBCASE("a zero second field only picks up output-layer terms") {
    const BatchFieldDynamics f(seeded_field(22, 2), 2);
    const MlpField zero = MlpField::zeros({3, 8, 8, 2}, InputMode::concat_time, 2);
    const BatchFieldDynamics g(zero, 2);
    const PiecewiseGradient pw = piecewise_adjoint_gradient(f, g, y0, 1.0, loss, kTight);
    const std::size_t out_begin = zero.layout().weight_offset(zero.layout().layer_count() - 1);
    CHECK(pw.second_gradient.head(static_cast<Eigen::Index>(out_begin)).cwiseAbs().maxCoeff() == 0.0);
    // Hidden activations are tanh(0) = 0, so only the output bias carries gradient.
    CHECK(pw.second_gradient.tail(2).cwiseAbs().maxCoeff() > 0.0);
  }
  SUBCASE("distinct fields against FD") {
    const MlpField fa = seeded_field(23, 2), fb = seeded_field(24, 2);
    const BatchFieldDynamics a(fa, 2), b(fb, 2);
    const SolverConfig c = SolverConfig::rk4(100);
    const PiecewiseGradient pw = piecewise_adjoint_gradient(a, b, y0, 1.0, loss, kTight);
    auto run = [&](const MlpField& first, const MlpField& second) {
      const BatchFieldDynamics d1(first, 2), d2(second, 2);
      const OdeFunction r1 = [&](double t, const Vector& y, Vector& dy) { d1.derivative(t, y, dy); };
      const OdeFunction r2 = [&](double t, const Vector& y, Vector& dy) { d2.derivative(t, y, dy); };
      const Vector mid = integrate(r1, y0, 0.0, 0.5, c).state;
      return loss(integrate(r2, mid, 0.5, 1.0, c).state).value;
    };
    const Vector fd_a = affjord::test::fd_gradient(
        [&](const Vector& p) { return run(fa.with_params(p), fb); }, fa.params());
    const Vector fd_b = affjord::test::fd_gradient(
        [&](const Vector& p) { return run(fa, fb.with_params(p)); }, fb.params());
    CHECK(max_rel(pw.first_gradient, fd_a) < 1e-3);
    CHECK(max_rel(pw.second_gradient, fd_b) < 1e-3);
  }
}

TEST_CASE("total-derivative decomposition matches the adjoint") {
  const MlpTimeField field(seeded_field(30, 2));
  const Vector z0 = random_vector(2, 31);
  const Matrix dzdp = total_derivative_decomposition(field, z0, 1.0, 1000);
  const Vector w = random_vector(2, 32);
  const GradientResult adj = adjoint_gradient(FieldDynamics(field.field()), z0, 0.0, 1.0, weighted_sum(w), kTight);
  CHECK(max_rel(Vector(dzdp.transpose() * w), adj.param_gradient) < 1e-3);
  CHECK(dev(Matrix(dzdp - forward_sensitivity_params(field, z0, 1.0, kTight))) < 1e-3);
}

TEST_CASE("Adam") {
  SUBCASE("first step moves by the learning rate against the gradient sign") {
    Adam adam(2, AdamConfig{0.01, 0.9, 0.999, 1e-8});
    Vector p = Vector::Zero(2);
    adam.step(p, (Vector(2) << 1.0, -2.0).finished());
    CHECK(p(0) == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(p(1) == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(adam.iterations() == 1);
  }
  SUBCASE("zero learning rate leaves parameters unchanged") {
    Adam adam(3, AdamConfig{0.0});
    Vector p = random_vector(3, 1);
    const Vector before = p;
    for (int i = 0; i < 10; ++i) adam.step(p, random_vector(3, 2 + i));
    CHECK(p == before);
  }
  SUBCASE("global-norm clipping") {
    Vector g(2);
    g << 3.0, 4.0;
    CHECK(clip_global_norm(g, 1.0) == doctest::Approx(5.0));
    CHECK(g.norm() == doctest::Approx(1.0));
  }
}

TEST_CASE("train: zero learning rate keeps the model and logs a row per step") {
  const FlowModel m = FlowModel::initialize(small_arch(Variant::affjord_hypernet), 1, SolverConfig::rk4(10));
  TrainConfig c;
  c.adam.learning_rate = 0.0;
  c.iterations = 3;
  c.batch_size = 16;
  c.eval_every = 2;
  c.record_wallclock = false;
  const Matrix data = sample_batch(gaussian_grid_spec(), 200, 1);
  const TrainResult r = train(m, data, c);
  CHECK(r.model.params() == m.params());
  REQUIRE(r.log.size() == 4);
  CHECK(r.log[0].val_nll.has_value());
  CHECK(r.log[2].val_nll.has_value());
  CHECK_FALSE(r.log[1].val_nll.has_value());
  CHECK(r.log[3].val_nll.has_value());
  CHECK_FALSE(r.diverged);
}

TEST_CASE("train is deterministic") {
  const FlowModel m = FlowModel::initialize(small_arch(Variant::affjord_hypernet), 2, SolverConfig::rk4(10))
                          .with_trace(TraceMode::hutchinson);
  TrainConfig c;
  c.iterations = 5;
  c.batch_size = 32;
  c.eval_every = 5;
  c.seed = 3;
  c.record_wallclock = false;
  const Matrix data = sample_batch(hash_gaussian_spec(), 500, 3);
  const std::string a = train_log_csv(train(m, data, c).log);
  const std::string b = train_log_csv(train(m, data, c).log);
  CHECK(a == b);
  CHECK(a.rfind("iteration,train_nll,val_nll,nfe_mean,wallclock_s\n", 0) == 0);
}

TEST_CASE("train configuration errors") {
  TrainConfig c;
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigurationError);
  c = TrainConfig{};
  c.adam.learning_rate = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigurationError);
}

TEST_CASE("two-gaussian regression: validation NLL drops by 30%" * doctest::timeout(1500)) {
  GaussianComponent left, right;
  left.weight = right.weight = 0.5;
  left.mean << -2.0, 0.0;
  right.mean << 2.0, 0.0;
  left.cov = right.cov = 0.09 * Eigen::Matrix2d::Identity();
  const DatasetSpec spec = gaussian_mixture_spec({left, right});
  FlowArchitecture arch;
  arch.variant = Variant::ffjord_concat_time;
  arch.hidden = {16, 16};
  const FlowModel m = FlowModel::initialize(arch, 7, SolverConfig::rk4(20)).with_trace(TraceMode::hutchinson);
  TrainConfig c;
  c.iterations = 2000;
  c.batch_size = 128;
  c.eval_every = 500;
  c.dataset_size = 5000;
  c.seed = 7;
  c.adam.learning_rate = 3e-3;
  const TrainResult r = train(m, sample_batch(spec, 5000, 7), c);
  REQUIRE_FALSE(r.diverged);
  const double start = *r.log.front().val_nll;
  MESSAGE("val nll " << start << " -> " << r.final_val_nll);
  CHECK(r.final_val_nll <= 0.7 * start);
}
