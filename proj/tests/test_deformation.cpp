#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pohoflow/deformation.hpp"
#include "pohoflow/system.hpp"

using namespace pohoflow;

namespace {

const GridPtr& test_grid() {
  static GridPtr g = make_grid(3, 14.0, 2048, 1.0);
  return g;
}

PowerNonlinearity cubic() { return {3, {{1.0, 4.0}}}; }

const ScalarProblem& scal() {
  static ScalarProblem p(test_grid(), cubic(), SphereConstraint(2.0));
  return p;
}

RadialFunction sphere_gaussian(double width = 1.0) {
  auto u = sample_function(test_grid(),
                           [&](double r) { return std::exp(-r * r / (2 * width * width)); });
  renormalize_mass(u, 2.0);
  return u;
}

}  // namespace

TEST_CASE("metric norm: theta = 0 is the H1 norm, theta scales the gradient part") {
  auto v = sphere_gaussian(1.3);
  const double kappa = 0.7;
  const double n0 = metric_norm(scal(), kappa, v, AugmentedPoint<ScalarProblem>{0.0, v});
  CHECK(n0 == doctest::Approx(std::sqrt(kappa * kappa + h1_norm_sq(v))).epsilon(1e-13));

  const double nln2 =
      metric_norm(scal(), 0.0, v, AugmentedPoint<ScalarProblem>{std::log(2.0), v});
  CHECK(nln2 == doctest::Approx(std::sqrt(4.0 * grad_norm_sq(v) + mass(v))).epsilon(1e-13));

  double prev = 0.0;
  for (double theta : {-1.0, 0.0, 1.0, 2.0}) {
    const double n = metric_norm(scal(), 0.0, v, AugmentedPoint<ScalarProblem>{theta, v});
    CHECK(n > prev);
    prev = n;
  }
}

TEST_CASE("dJ_norm dominates |P| and is dilation covariant") {
  auto u = sphere_gaussian();
  AugmentedPoint<ScalarProblem> at{0.3, u};
  const double n = dJ_norm(scal(), at);
  CHECK(n >= std::abs(scal().P_dilated(0.3, u)));

  // covariance: (theta + a, u) vs (theta, Phi_a u), resampling tolerance
  const double a = 0.4;
  AugmentedPoint<ScalarProblem> shifted{0.3 + a, u};
  RadialFunction moved = renormalized(scale(u, std::exp(a)), 2.0);
  AugmentedPoint<ScalarProblem> pushed{0.3, moved};
  CHECK(dJ_norm(scal(), shifted) == doctest::Approx(dJ_norm(scal(), pushed)).epsilon(1e-3));
}

TEST_CASE("dJ_norm is small at the settled ground state on a fine grid") {
  auto grid = make_grid(3, 12.0, 131072, 1.0);
  auto gs = ground_state_omega(grid);
  ScalarProblem prob(grid, cubic(), SphereConstraint(gs.mass));
  AugmentedPoint<ScalarProblem> at{0.0, gs.omega};
  CHECK(dJ_norm(prob, at) <= 1e-6);
}

TEST_CASE("pseudo-gradient satisfies the descent pairing and norm bounds") {
  Rng rng(3);
  SphereConstraint c(2.0);
  for (int k = 0; k < 5; ++k) {
    AugmentedPoint<ScalarProblem> at{rng.uniform(-0.3, 0.3),
                                     random_sphere_function(test_grid(), c, rng)};
    const auto W = pseudo_gradient(scal(), at);
    const double djn = dJ_norm(scal(), at);
    CHECK(W.norm / djn > 0.99);
    CHECK(W.norm / djn < 2.0);

    // finite-difference pairing: DJ(W) should equal ||DJ||^2
    const double h = 1e-6 / std::max(W.norm, 1.0);
    AugmentedPoint<ScalarProblem> plus{at.theta + h * W.kappa,
                                       renormalized(axpy(at.u, h, W.v), c.m)};
    AugmentedPoint<ScalarProblem> minus{at.theta - h * W.kappa,
                                        renormalized(axpy(at.u, -h, W.v), c.m)};
    const double fd =
        (scal().J(plus.theta, plus.u) - scal().J(minus.theta, minus.u)) / (2 * h);
    CHECK(fd / (djn * djn) > 0.99);
    CHECK(fd / (djn * djn) < 1.01);
  }
}

TEST_CASE("pseudo-gradient is odd-equivariant and rejects critical points") {
  Rng rng(5);
  SphereConstraint c(2.0);
  auto u = random_sphere_function(test_grid(), c, rng);
  AugmentedPoint<ScalarProblem> at{0.2, u};
  AugmentedPoint<ScalarProblem> atn{0.2, negated(u)};
  const auto W = pseudo_gradient(scal(), at);
  const auto Wn = pseudo_gradient(scal(), atn);
  CHECK(Wn.kappa == doctest::Approx(W.kappa).epsilon(1e-12));
  for (std::size_t i = 0; i < W.v.size(); ++i)
    CHECK(std::abs(Wn.v[i] + W.v[i]) <= 1e-10 * (1.0 + std::abs(W.v[i])));

  // at a critical point of the discrete problem the call must reject
  auto gs = ground_state_omega(test_grid());
  ScalarProblem natural(test_grid(), cubic(), SphereConstraint(gs.mass));
  AugmentedPoint<ScalarProblem> crit{0.0, gs.omega};
  CHECK_THROWS_AS(pseudo_gradient(natural, crit, /*tol_grad=*/1e-1), std::invalid_argument);
}

TEST_CASE("cutoff bands") {
  FlowConfig fc;
  fc.level_b = 5.0;
  fc.eps_bar = 1.0;
  CHECK(cutoff_psi(5.0, fc.level_b, fc.eps_bar) == 1.0);
  CHECK(cutoff_psi(5.4, fc.level_b, fc.eps_bar) == 1.0);
  CHECK(cutoff_psi(3.0, fc.level_b, fc.eps_bar) == 0.0);  // b - 2 eps
  CHECK(cutoff_psi(4.25, fc.level_b, fc.eps_bar) == doctest::Approx(0.5));
  CHECK(cutoff_psi(7.0, fc.level_b, fc.eps_bar) == 0.0);

  // phi vanishes near a supplied critical point
  auto u = sphere_gaussian();
  AugmentedPoint<ScalarProblem> crit{0.0, u};
  std::vector<AugmentedPoint<ScalarProblem>> critical{crit};
  CHECK(cutoff_phi<ScalarProblem>(scal(), crit, 0.5, critical) == 0.0);
  AugmentedPoint<ScalarProblem> far{2.0, u};
  CHECK(cutoff_phi<ScalarProblem>(scal(), far, 0.5, critical) == 1.0);
  // product at level b away from the critical set
  AugmentedPoint<ScalarProblem> at{1.5, u};
  const double J = scal().J(1.5, u);
  fc.level_b = J;
  fc.eps_bar = 0.5;
  CHECK(cutoffs(scal(), at, J, fc, std::span<const AugmentedPoint<ScalarProblem>>(critical)) ==
        1.0);
}

TEST_CASE("flow: identity record, monotone J, frozen sublevel") {
  Rng rng(11);
  SphereConstraint c(2.0);
  auto u0 = random_sphere_function(test_grid(), c, rng);
  const double J0 = scal().J(0.0, u0);

  FlowConfig fc;
  fc.level_b = J0;
  fc.eps_bar = 0.2 * std::abs(J0) + 0.1;
  AugmentedPoint<ScalarProblem> at{0.0, u0};
  auto trace = flow_integrate(scal(), at, fc, 40);
  REQUIRE(trace.records.size() >= 2);
  CHECK(trace.records.front().time == 0.0);
  CHECK(trace.records.front().J == J0);
  CHECK(trace.records.front().theta == 0.0);
  for (std::size_t i = 1; i < trace.records.size(); ++i)
    CHECK(trace.records[i].J <= trace.records[i - 1].J);

  // a start below b - eps_bar is frozen: single record, point unchanged
  FlowConfig fz = fc;
  fz.level_b = J0 + 10.0;
  fz.eps_bar = 1.0;
  AugmentedPoint<ScalarProblem> frozen{0.0, u0};
  auto ftrace = flow_integrate(scal(), frozen, fz, 40);
  CHECK(ftrace.records.size() == 1);
  CHECK(l2_distance(frozen.u, u0) == 0.0);
  CHECK(frozen.theta == 0.0);

  // budget exhaustion is flagged
  AugmentedPoint<ScalarProblem> at2{0.0, u0};
  auto t2 = flow_integrate(scal(), at2, fc, 1);
  CHECK((t2.exhausted || t2.records.size() <= 2));
}

TEST_CASE("flow is odd-equivariant for odd nonlinearities") {
  Rng rng(13);
  SphereConstraint c(2.0);
  auto u0 = random_sphere_function(test_grid(), c, rng);
  for (std::size_t i = 0; i < u0.size(); i += 11) u0[i] = -u0[i];
  renormalize_mass(u0, c.m);
  const double J0 = scal().J(0.0, u0);
  FlowConfig fc;
  fc.level_b = J0;
  fc.eps_bar = 0.2 * std::abs(J0) + 0.1;

  AugmentedPoint<ScalarProblem> a{0.0, u0};
  AugmentedPoint<ScalarProblem> b{0.0, negated(u0)};
  auto ta = flow_integrate(scal(), a, fc, 25);
  auto tb = flow_integrate(scal(), b, fc, 25);
  REQUIRE(ta.records.size() == tb.records.size());
  CHECK(a.theta == b.theta);
  for (std::size_t i = 0; i < a.u.size(); ++i)
    CHECK(std::abs(a.u[i] + b.u[i]) <= 1e-8 * (1.0 + std::abs(a.u[i])));
}

TEST_CASE("flow traces are dilation covariant under the pi projection") {
  auto u = sphere_gaussian(1.2);
  const double a = 0.35;
  FlowConfig fc;
  fc.level_b = scal().J(a, u);
  fc.eps_bar = 0.3;

  AugmentedPoint<ScalarProblem> lifted{a, u};
  auto t1 = flow_integrate(scal(), lifted, fc, 15);

  RadialFunction pushed = renormalized(scale(u, std::exp(a)), 2.0);
  FlowConfig fc2 = fc;
  fc2.level_b = scal().J(0.0, pushed);
  AugmentedPoint<ScalarProblem> base{0.0, pushed};
  auto t2 = flow_integrate(scal(), base, fc2, 15);

  const std::size_t nrec = std::min(t1.records.size(), t2.records.size());
  for (std::size_t i = 0; i < nrec; ++i)
    CHECK(t1.records[i].J == doctest::Approx(t2.records[i].J).epsilon(2e-3));
}

TEST_CASE("project_pi: identity at theta = 0, energy consistency, pi after iota") {
  auto u = sphere_gaussian();
  AugmentedPoint<ScalarProblem> at0{0.0, u};
  auto p0 = project_pi(scal(), at0);
  CHECK(l2_distance(p0, u) == 0.0);  // iota then pi is the identity

  AugmentedPoint<ScalarProblem> at{0.45, u};
  auto p = project_pi(scal(), at);
  CHECK(mass(p) == doctest::Approx(mass(u)).epsilon(1e-4));
  CHECK(energy_I(p, cubic()) == doctest::Approx(scal().J(0.45, u)).epsilon(1e-3));
}

TEST_CASE("psp_monitor status semantics") {
  FlowConfig fc;
  fc.level_b = 5.0;

  FlowTrace conv;
  conv.records.push_back({1.0, 5.0 + 1e-8, 1e-8, 1e-8, 0.0, 0.1, 1.0});
  CHECK(psp_monitor(conv, fc) == SolveStatus::Converged);

  FlowTrace flowing;  // energy pinned but P far from zero: not converged
  flowing.records.push_back({1.0, 5.0, 0.5, 1e-8, 0.0, 0.1, 1.0});
  CHECK(psp_monitor(flowing, fc) == SolveStatus::Flowing);

  FlowTrace stalled = flowing;
  stalled.records.back().grad_norm = 3.0;
  stalled.stalled = true;
  CHECK(psp_monitor(stalled, fc) == SolveStatus::Stalled);

  FlowTrace empty;
  CHECK_THROWS_AS(psp_monitor(empty, fc), std::invalid_argument);
}

TEST_CASE("psp_monitor converges at the fine-grid ground state with b = b1") {
  auto grid = make_grid(3, 12.0, 131072, 1.0);
  auto gs = ground_state_omega(grid);
  ScalarProblem prob(grid, cubic(), SphereConstraint(gs.mass));
  FlowConfig fc;
  fc.level_b = 0.5 * gs.mass;
  AugmentedPoint<ScalarProblem> at{0.0, gs.omega};
  auto trace = flow_integrate(prob, at, fc, 5);
  CHECK(psp_monitor(trace, fc) == SolveStatus::Converged);
}

TEST_CASE("system flow decreases J_star and freezes low starts") {
  auto grid = make_grid(3, 14.0, 1024, 1.0);
  SystemParams p{1.0, 1.0, -0.5, 2.0, 2.0};
  SystemProblem prob(grid, p);
  Rng rng(17);
  SphereConstraint c1(p.m1), c2(p.m2);
  SystemState s(random_sphere_function(grid, c1, rng), random_sphere_function(grid, c2, rng), p);
  const double J0 = prob.J(0.0, s);
  FlowConfig fc;
  fc.level_b = J0;
  fc.eps_bar = 0.2 * std::abs(J0) + 0.1;
  AugmentedPoint<SystemProblem> at{0.0, s};
  auto trace = flow_integrate(prob, at, fc, 20);
  for (std::size_t i = 1; i < trace.records.size(); ++i)
    CHECK(trace.records[i].J <= trace.records[i - 1].J);
}
