#include <doctest.h>

#include <cmath>
#include <limits>

#include "hidden_ode/benchmarks.hpp"
#include "hidden_ode/fd_jacobian.hpp"
#include "hidden_ode/hybrid_model.hpp"
#include "../support.hpp"

using namespace hidden_ode;
using namespace hidden_ode::testing;

namespace {

HybridModel ho_model(double dt, bool with_slot = false) {
  Matrix a(2, 2);
  a << 0, 1, -4, 0;
  Matrix b(2, 1);
  b << 0, 1;
  auto known = std::make_shared<LinearField>(a, b);
  std::optional<HiddenSlot> slot;
  if (with_slot) slot = make_hidden_slot(MlpSpec{{2, 4, 1}, {Activation::kTanh, Activation::kLinear}}, {1}, 2);
  return HybridModel(known, slot, identity_measurement(2), dt);
}

HybridModel zero_model(double dt) {
  auto known = std::make_shared<LinearField>(Matrix::Zero(3, 3), Matrix::Zero(3, 1));
  return HybridModel(known, std::nullopt, identity_measurement(3), dt);
}

// y = x1^2 on a one-state model.
struct Square {
  template <class T>
  void operator()(std::span<const T> x, std::span<T> y) const { y[0] = x[0] * x[0]; }
};

}  // namespace

TEST_CASE("harmonic oscillator field and Euler step") {
  const HybridModel m = ho_model(1e-3);
  const Vector none;
  const Vector f = m.eval_field(Vector{{1.0, 0.0}}, Vector{{0.0}}, none);
  CHECK(f[0] == 0.0);
  CHECK(f[1] == -4.0);
  const Vector next = m.discrete_step(Vector{{1.0, 0.0}}, Vector{{0.0}}, none);
  CHECK(next[0] == 1.0);
  CHECK(next[1] == doctest::Approx(-0.004).epsilon(1e-15));
  CHECK(ho_field(Vector{{1.0, 0.0}}, Vector{{0.0}}, 2.0) == Vector{{0.0, -4.0}});
}

TEST_CASE("fixed points, zero fields and zero steps leave the state unchanged") {
  const Vector x{{0.3, -1.2, 4.0}};
  const Vector none;
  const Vector u{{2.0}};
  CHECK(zero_model(0.1).eval_field(x, u, none).isZero(0.0));
  CHECK(zero_model(0.1).discrete_step(x, u, none) == x);
  CHECK(zero_model(0.1).jacobian_state(x, u, none) == Matrix::Identity(3, 3));
  CHECK(ho_model(0.0).discrete_step(Vector{{1.0, 2.0}}, Vector{{0.0}}, none) == Vector{{1.0, 2.0}});
  CHECK(ho_model(0.1).eval_field(Vector::Zero(2), Vector{{0.0}}, none).isZero(0.0));
}

TEST_CASE("HH resting state is an approximate equilibrium") {
  const Vector rest = hh::steady_state(-65.0);
  const Vector f = hh_field(rest, 0.0);
  for (Index k = 0; k < 4; ++k) CHECK(std::abs(f[k]) < 1e-2);
}

TEST_CASE("measurement maps") {
  SelectionMap sel(3, {0, 1});
  CHECK(sel.evaluate(Vector{{3.0, 5.0, 7.0}}) == Vector{{3.0, 5.0}});
  Matrix h(2, 3);
  h << 1, 0, 0, 0, 1, 0;
  CHECK(sel.jacobian(Vector{{3.0, 5.0, 7.0}}) == h);

  const BenchmarkSpec hh_spec = make_benchmark("hh");
  const HybridModel hh_model = make_learner(hh_spec);
  CHECK(hh_model.measure(Vector{{-65.0, 0.3, 0.05, 0.6}}) == Vector{{-65.0, 0.3, 0.05}});

  const auto id = identity_measurement(4);
  const Vector x{{1.0, -2.0, 3.0, 0.5}};
  CHECK(id->evaluate(x) == x);
  CHECK(id->jacobian(x) == Matrix::Identity(4, 4));

  const auto sq = make_measurement(1, 1, Square{});
  CHECK(sq->jacobian(Vector{{3.0}})(0, 0) == 6.0);

  CHECK_THROWS_AS(hh_model.measure(Vector{{std::nan(""), 0.3, 0.05, 0.6}}), NumericalError);
}

TEST_CASE("jacobian_state of a linear field is I + dt A") {
  const HybridModel m = ho_model(1e-3);
  Matrix expected(2, 2);
  expected << 1, 1e-3, -4e-3, 1;
  CHECK((m.jacobian_state(Vector{{0.2, 0.7}}, Vector{{0.0}}, Vector()) - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("jacobian_params vanishes outside the hidden rows and at dt = 0") {
  const HybridModel m = three_state_model();
  Rng rng(5);
  const Vector theta = random_vector(rng, m.param_dim());
  const Vector x{{0.5, -0.2, 1.3}};
  const Matrix ft = m.jacobian_params(x, Vector{{0.0}}, theta);
  CHECK(ft.row(0).isZero(0.0));
  CHECK(ft.row(1).isZero(0.0));
  CHECK(!ft.row(2).isZero(0.0));
  CHECK(m.with_dt(0.0).jacobian_params(x, Vector{{0.0}}, theta).isZero(0.0));

  const Matrix reduced = m.hidden_param_jacobian(x, Vector{{0.0}}, theta);
  CHECK(reduced == ft.row(2));
  const auto lin = m.linearize_step(x, Vector{{0.0}}, theta);
  CHECK(lin.next == m.discrete_step(x, Vector{{0.0}}, theta));
  CHECK(lin.F_x == m.jacobian_state(x, Vector{{0.0}}, theta));
  CHECK(lin.F_theta_hidden == reduced);
}

TEST_CASE("hybrid model Jacobians match central differences") {
  const HybridModel m = ho_model(0.05, true);
  Rng rng(11);
  for (int k = 0; k < 100; ++k) {
    const Vector x = random_vector(rng, 2, 2.0);
    const Vector u = random_vector(rng, 1);
    const Vector theta = random_vector(rng, m.param_dim());
    const Matrix fx = fd_jacobian([&](const Vector& z) { return m.discrete_step(z, u, theta); }, x, 1e-6);
    const Matrix ft = fd_jacobian([&](const Vector& p) { return m.discrete_step(x, u, p); }, theta, 1e-6);
    CHECK(max_relative_error(m.jacobian_state(x, u, theta), fx) <= 1e-4);
    CHECK(max_relative_error(m.jacobian_params(x, u, theta), ft) <= 1e-4);
  }
}

TEST_CASE("discrete_step is affine in dt") {
  const HybridModel m = ho_model(0.0, true);
  Rng rng(2);
  const Vector theta = random_vector(rng, m.param_dim());
  const Vector x{{0.4, -0.9}};
  const Vector u{{0.3}};
  const Vector a = m.with_dt(0.013).discrete_step(x, u, theta) - x;
  const Vector b = m.with_dt(0.029).discrete_step(x, u, theta) - x;
  const Vector c = m.with_dt(0.042).discrete_step(x, u, theta) - x;
  CHECK((a + b - c).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("dimension mismatches and non-finite fields are reported") {
  const HybridModel m = ho_model(1e-3);
  CHECK_THROWS_AS(m.eval_field(Vector{{1.0}}, Vector{{0.0}}, Vector()), ConfigError);
  CHECK_THROWS_AS(m.eval_field(Vector{{1.0, 2.0}}, Vector{{0.0, 1.0}}, Vector()), ConfigError);
  CHECK_THROWS_AS(m.eval_field(Vector{{1.0, 2.0}}, Vector{{0.0}}, Vector{{1.0}}), ConfigError);
  const double inf = std::numeric_limits<double>::infinity();
  try {
    m.eval_field(Vector{{inf, 0.0}}, Vector{{0.0}}, Vector());
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("component") != std::string::npos);
  }
  auto known = std::make_shared<LinearField>(Matrix::Zero(2, 2), Matrix::Zero(2, 1));
  CHECK_THROWS_AS(HybridModel(known, std::nullopt, identity_measurement(2), -1.0), ConfigError);
  CHECK_THROWS_AS(HybridModel(known, make_hidden_slot(MlpSpec{{2, 1}, {Activation::kLinear}}, {1, 1}, 2),
                              identity_measurement(2), 0.1),
                  ConfigError);
  CHECK_THROWS_AS(HybridModel(known, make_hidden_slot(MlpSpec{{2, 1}, {Activation::kLinear}}, {2}, 2),
                              identity_measurement(2), 0.1),
                  ConfigError);
}

TEST_CASE("finite-difference oracle sanity") {
  const auto id = [](const Vector& v) { return v; };
  CHECK((fd_jacobian(id, Vector{{0.5, 0.25, 0.125}}, 0x1.0p-20) - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-10);
  const auto sq = [](const Vector& v) { return Vector{{v[0] * v[0]}}; };
  CHECK(std::abs(fd_jacobian(sq, Vector{{3.0}}, 1e-6)(0, 0) - 6.0) <= 1e-5);
  Matrix A(2, 3);
  A << 1, -2, 3, 0.5, 4, -1;
  const auto lin = [&](const Vector& v) -> Vector { return A * v; };
  CHECK((fd_jacobian(lin, Vector{{0.1, 0.2, 0.3}}, 1e-6) - A).cwiseAbs().maxCoeff() <= 1e-8);
}
