#include "nekhlab/autonomize_check.hpp"
#include "nekhlab/serialize.hpp"
#include "oracles.hpp"

#include <catch_amalgamated.hpp>

#include <fstream>

using namespace nekhlab;
using Catch::Approx;

namespace {

json load(const std::string& rel) {
  std::ifstream in(std::string(NEKHLAB_CONFIG_DIR) + "/" + rel);
  REQUIRE(in.good());
  return json::parse(in);
}

Vec vec(std::initializer_list<double> v) { return Eigen::Map<const Vec>(v.begin(), static_cast<Eigen::Index>(v.size())); }

}  // namespace

TEST_CASE("extended Hamiltonian adds eps^c y", "[autonomize]") {
  const auto h = IntegrableH::power_law(2, 2, 1.0);
  const SlowSystem sys(h, Perturbation::zero(2), 0.01, 0.5);
  const auto ext = autonomize_slow(sys);
  CHECK(std::string(ext.form_name()) == "slow_time");
  CHECK(ext.base().h().variant().index() == h.variant().index());
  for (double x : {-3.0, 0.0, 12.5}) {
    const ExtendedState st{vec({0.2, 0.4}), vec({0.3, -0.1}), x, 3.0};
    CHECK(extended_hamiltonian(ext, st) - h.value(st.action) == Approx(0.3).epsilon(1e-14));
    CHECK(extended_perturbation(ext, st) == Approx(0.3).epsilon(1e-14));
  }
}

TEST_CASE("extended vector field components", "[autonomize]") {
  SECTION("f = 0") {
    const auto h = IntegrableH::power_law(3, 2, 1.0);
    const auto ext = autonomize_slow(SlowSystem(h, Perturbation::zero(2), 0.2, 0.75));
    const ExtendedState st{vec({0.1, 0.9}), vec({0.5, -0.5}), 1.0, 2.0};
    const auto v = extended_vector_field(ext, st);
    CHECK(v.d_theta == h.gradient(st.action));
    CHECK(v.d_action.cwiseAbs().maxCoeff() == 0.0);
    CHECK(v.dx == std::pow(0.2, 0.75));
    CHECK(v.dy == 0.0);
  }

  SECTION("matches the closed forms at random points") {
    const auto h = IntegrableH::power_law(2, 2, 1.0);
    const Perturbation f(2, {Mode{{1, -2}, {{{1, 0}, 0.8}}, 0.3, Envelope::cosine(0.5)}});
    const SlowSystem sys(h, f, 0.04, 1.0);
    const auto ext = autonomize_slow(sys);
    CounterRng rng(3);
    for (int i = 0; i < 20; ++i) {
      const ExtendedState st{vec({rng.uniform(), rng.uniform()}), rng.in_ball(2, 1.0), rng.uniform(-5, 5), rng.uniform(-1, 1)};
      const auto v = extended_vector_field(ext, st);
      FEval e;
      f.evaluate(st.theta, st.action, st.x, e);
      const Vec want_th = h.gradient(st.action) + 0.04 * e.d_action;
      const Vec want_I = -0.04 * e.d_theta;
      REQUIRE(max_norm(v.d_theta - want_th) <= 1e-15);
      REQUIRE(max_norm(v.d_action - want_I) <= 1e-15);
      REQUIRE(v.dx == 0.04);
      REQUIRE(v.dy == -0.04 * e.d_tau);
    }
  }

  SECTION("dy against a finite difference in x") {
    const SlowSystem sys = slow_system_from_json(load("systems/demo_n2_p3.json")).with_epsilon(0.05);
    const auto ext = autonomize_slow(sys);
    CounterRng rng(4);
    for (int i = 0; i < 50; ++i) {
      const ExtendedState st{vec({rng.uniform(), rng.uniform()}), rng.in_ball(2, 1.0), rng.uniform(-2, 2), 0.0};
      auto fx = [&](const Vec& x) { return oracle::f_value(sys.f(), st.theta, st.action, x[0]); };
      const double want = -0.05 * oracle::central_diff(fx, vec({st.x}), 0);
      REQUIRE(oracle::rel_err(extended_vector_field(ext, st).dy, want) < 1e-6);
    }
  }

  SECTION("wrong form is rejected") {
    const auto h = IntegrableH::power_law(2, 1, 1.0);
    const auto per = autonomize_periodic(h, Perturbation(2, 1, {make_mode({1, 1}, 1.0)}), 0.1);
    CHECK_THROWS_AS(extended_vector_field(per, ExtendedState{vec({0.0}), vec({0.0}), 0.0, 0.0}), UsageError);
  }
}

TEST_CASE("x advances linearly along the extended flow", "[autonomize]") {
  const SlowSystem sys = slow_system_from_json(load("systems/demo_n2_p2.json"));
  const auto ext = autonomize_slow(sys);
  const ExtendedState s0{vec({0.1, 0.2}), vec({0.3, 0.1}), 0.0, 0.0};
  for (Method m : {Method::SplitYoshida4, Method::ImplicitMidpoint}) {
    const auto tr = integrate(ext, s0, 50.0, StepperSpec{m, 1e-2}, {.stride = 100});
    for (const auto& s : tr.samples) REQUIRE(std::fabs(s.x - sys.slow_rate() * s.t) < 1e-12 * (1.0 + s.t));
  }
}

TEST_CASE("verify_autonomization", "[autonomize]") {
  const SlowSystem sys = slow_system_from_json(load("systems/demo_n2_p3.json"));
  const State s0({0.1, 0.7}, {0.2, -0.3}, 0.0);

  SECTION("eps = 0 gives exactly zero deviation") {
    const auto rep = verify_autonomization(sys.with_epsilon(0.0), s0, 10.0, StepperSpec{});
    CHECK(rep.deviation == 0.0);
    CHECK(rep.steps == 1000);
  }
  SECTION("deviation and energy at T = 1000") {
    const auto rep = verify_autonomization(sys.with_epsilon(0.01), State({0.1, 0.7}, {0.2, -0.3}, 2.5), 1e3, StepperSpec{});
    CHECK(rep.steps == 100000);
    CHECK(rep.deviation < 1e-9);
    CHECK(rep.x_linearity < 1e-10);
    CHECK(rep.energy_drift < 1e-6);
    CHECK(std::fabs(rep.energy_slope) < 1e-10);
  }
  SECTION("splitting is rejected") {
    CHECK_THROWS_AS(verify_autonomization(sys, s0, 1.0, StepperSpec{Method::SplitYoshida4}), UsageError);
  }
}

TEST_CASE("diophantine_estimate", "[autonomize]") {
  SECTION("m = 1") {
    for (int K : {1, 5, 40}) CHECK(diophantine_estimate(vec({1.0}), 0.0, K).gamma == 1.0);
  }
  SECTION("resonant pair") {
    const auto est = diophantine_estimate(vec({1.0, 1.0}), 1.0, 1);
    CHECK(est.gamma == 0.0);
    CHECK(est.k_min == std::vector<int>{1, -1});
    CHECK(est.norm == "max");
  }
  SECTION("golden mean against brute force") {
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    const auto est = diophantine_estimate(vec({1.0, phi}), 1.0, 50);
    // independent scan over the half-lattice k2 > 0 (k2 = 0 gives |k1| >= 1)
    double best = 1.0;
    for (int k2 = 1; k2 <= 50; ++k2)
      for (int k1 = -50; k1 <= 50; ++k1)
        best = std::min(best, std::fabs(k1 + k2 * phi) * std::max(std::abs(k1), k2));
    CHECK(est.gamma == Approx(best).epsilon(1e-12));
    CHECK(est.gamma == Approx(phi - 1.0).epsilon(1e-12));
  }
  SECTION("monotone non-increasing in K") {
    const Vec w = vec({1.0, std::sqrt(2.0), std::cbrt(5.0)});
    double prev = std::numeric_limits<double>::infinity();
    for (int K = 1; K <= 12; ++K) {
      const double g = diophantine_estimate(w, 2.0, K).gamma;
      REQUIRE(g <= prev);
      prev = g;
    }
  }
  SECTION("errors") {
    CHECK_THROWS_AS(diophantine_estimate(vec({0.0, 0.0}), 1.0, 3), UsageError);
    CHECK_THROWS_AS(diophantine_estimate(vec({1.0}), 0.0, 0), UsageError);
  }
}

TEST_CASE("periodic and quasi-periodic forms", "[autonomize]") {
  const auto h = IntegrableH::power_law(2, 2, 1.0);

  SECTION("periodic field is the canonical field of h + J + eps f") {
    const Perturbation f(3, 2,
                         {Mode{{1, 0, 1}, {{{0, 1}, 0.5}}, 0.1, Envelope::constant()},
                          Mode{{0, 1, -2}, {{{0, 0}, 0.3}}, 0.0, Envelope::constant()}});
    const auto ext = autonomize_periodic(h, f, 0.05);
    CHECK(ext.time_angles() == 1);
    CHECK(std::string(ext.form_name()) == "periodic");
    CHECK(extended_integrable(ext, vec({1.0, 2.0}), vec({0.5})) == 5.5);
    CounterRng rng(8);
    for (int i = 0; i < 20; ++i) {
      const Vec ang = vec({rng.uniform(), rng.uniform(), rng.uniform()});
      Vec act(3);
      act << rng.in_ball(2, 1.0), rng.uniform(-1, 1);
      const auto v = periodic_vector_field(ext, ang, act);
      auto H_ang = [&](const Vec& a) { return periodic_hamiltonian(ext, a, act); };
      auto H_act = [&](const Vec& a) { return periodic_hamiltonian(ext, ang, a); };
      REQUIRE(oracle::rel_err(v.d_angles, oracle::gradient(H_act, act)) < 1e-6);
      REQUIRE(oracle::rel_err(v.d_actions, Vec(-oracle::gradient(H_ang, ang))) < 1e-6);
      REQUIRE(v.d_angles[2] == 1.0);
    }
  }

  SECTION("quasi-periodic construction") {
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    const Perturbation f(4, 2, {make_mode({1, 0, 1, -1}, 1.0)});
    const auto ext = autonomize_quasi_periodic(h, vec({1.0, phi}), f, 0.01, 1.0, 30);
    const auto& q = std::get<QuasiPeriodicForm>(ext.form());
    CHECK(q.gamma == Approx(phi - 1.0));
    CHECK(extended_integrable(ext, vec({1.0, 0.0}), vec({1.0, 1.0})) == Approx(2.0 + phi));
    CHECK_THROWS_AS(autonomize_quasi_periodic(h, vec({1.0, phi}), f, 0.01, 0.5), UsageError);
    CHECK_THROWS_AS(autonomize_quasi_periodic(h, vec({1.0, 2.0}), f, 0.01, 1.0), UsageError);
    CHECK_THROWS_AS(autonomize_quasi_periodic(h, vec({1.0, phi, 3.0}), f, 0.01, 2.0), UsageError);
  }
}
