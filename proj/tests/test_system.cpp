#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pohoflow/system.hpp"

using namespace pohoflow;

namespace {

const GridPtr& test_grid() {
  static GridPtr g = make_grid(3, 14.0, 2048, 1.0);
  return g;
}

const GroundState& gs() {
  static GroundState g = ground_state_omega(test_grid());
  return g;
}

SystemState random_state(const SystemParams& p, Rng& rng) {
  SphereConstraint c1(p.m1), c2(p.m2);
  return SystemState(random_sphere_function(test_grid(), c1, rng),
                     random_sphere_function(test_grid(), c2, rng), p);
}

}  // namespace

TEST_CASE("ground state identities and profile shape") {
  const auto& g = gs();
  CHECK(std::abs(g.identities[0] - 3.0) < 1e-3);
  CHECK(std::abs(g.identities[1] - 4.0) < 1e-3);
  // regression window for the computed center value
  CHECK(g.center_value > 4.33);
  CHECK(g.center_value < 4.35);
  CHECK(g.mass > 18.0);
  CHECK(g.mass < 19.5);
  // positive, monotone decreasing, no interior zeros
  bool positive = true, monotone = true;
  for (std::size_t i = 0; i + 1 < g.omega.size(); ++i) {
    positive = positive && g.omega[i] > 0.0;
    if (i > 0) monotone = monotone && g.omega[i] <= g.omega[i - 1] * (1 + 1e-12);
  }
  CHECK(positive);
  CHECK(monotone);
}

TEST_CASE("ground state identities converge at second order") {
  double prev = 0.0;
  for (int k = 0; k < 3; ++k) {
    auto grid = make_grid(3, 14.0, 2048 << k, 1.0);
    auto g = ground_state_omega(grid);
    const double err =
        std::abs(g.identities[0] - 3.0) + std::abs(g.identities[1] - 4.0);
    if (k > 0) CHECK(prev / err > 3.5);
    prev = err;
  }
}

TEST_CASE("ground_state_omega requires dimension 3") {
  auto g2 = make_grid(2, 14.0, 256, 1.0);
  CHECK_THROWS_AS(ground_state_omega(g2), std::invalid_argument);
}

TEST_CASE("system energy decouples at beta = 0 and dominates the split otherwise") {
  Rng rng(7);
  SystemParams p0{1.2, 0.8, 0.0, 2.0, 3.0};
  for (int k = 0; k < 5; ++k) {
    auto s = random_state(p0, rng);
    const auto [I1, P1] = component_IP(s.u1, p0.mu1);
    const auto [I2, P2] = component_IP(s.u2, p0.mu2);
    (void)P1;
    (void)P2;
    CHECK(energy_Istar(s) == doctest::Approx(I1 + I2).epsilon(1e-14));
    // beta < 0 raises the energy above the split
    SystemState sn(s.u1, s.u2, SystemParams{1.2, 0.8, -0.7, 2.0, 3.0});
    CHECK(energy_Istar(sn) >= I1 + I2);
  }
}

TEST_CASE("disjoint supports kill the cross term") {
  SystemParams p{1.0, 1.0, -0.5, 1.0, 1.0};
  auto u1 = sample_function(test_grid(), [](double r) { return r < 3.0 ? (3.0 - r) * r : 0.0; });
  auto u2 = sample_function(test_grid(), [](double r) {
    return (r > 5.0 && r < 8.0) ? (r - 5.0) * (8.0 - r) : 0.0;
  });
  renormalize_mass(u1, p.m1);
  renormalize_mass(u2, p.m2);
  SystemState s(u1, u2, p);
  CHECK(cross_integral(u1, u2) == 0.0);
  const auto [I1, P1] = component_IP(u1, p.mu1);
  const auto [I2, P2] = component_IP(u2, p.mu2);
  CHECK(energy_Istar(s) == doctest::Approx(I1 + I2).epsilon(1e-14));
  CHECK(pohozaev_Pstar(s) == doctest::Approx(P1 + P2).epsilon(1e-14));
}

TEST_CASE("joint Pohozaev value is the fiber derivative") {
  Rng rng(9);
  SystemParams p{1.0, 1.5, -0.4, 1.5, 2.5};
  SystemProblem prob(test_grid(), p);
  for (int k = 0; k < 5; ++k) {
    auto s = random_state(p, rng);
    const double h = 1e-5;
    const double fd = (prob.J(h, s) - prob.J(-h, s)) / (2 * h);
    CHECK(pohozaev_Pstar(s) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("component functionals: ground state and negative input") {
  const auto& g = gs();
  const auto [I1, P1] = component_IP(g.omega, 1.0);
  CHECK(I1 == doctest::Approx(0.5 * g.mass).epsilon(1e-3));
  CHECK(std::abs(P1) < 2e-3 * grad_norm_sq(g.omega));

  auto neg = negated(g.omega);
  const auto [In, Pn] = component_IP(neg, 2.0);
  CHECK(In == doctest::Approx(0.5 * grad_norm_sq(neg)).epsilon(1e-14));
  CHECK(Pn == doctest::Approx(grad_norm_sq(neg)).epsilon(1e-14));
  CHECK_THROWS_AS(component_IP(g.omega, -1.0), std::invalid_argument);
}

TEST_CASE("component scaling law for the positive-part quartic") {
  auto u = gs().omega;
  const double A = grad_norm_sq(u);
  const double Q = lp_pow_pos(u, 4.0);
  const double mu = 1.4;
  for (double t : {0.5, 2.0}) {
    const auto [It, Pt] = component_IP(renormalized(scale(u, t), mass(u)), mu);
    (void)It;
    CHECK(Pt == doctest::Approx(t * t * A - 0.75 * mu * t * t * t * Q).epsilon(2e-3));
  }
}

TEST_CASE("scalar_b_i closed forms") {
  const auto& g = gs();
  {
    const auto [lam, b] = scalar_b_i(g.mass, 1.0, g);
    CHECK(lam == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(b == doctest::Approx(0.5 * g.mass).epsilon(1e-12));
  }
  const auto [lam0, b0] = scalar_b_i(2.0, 1.5, g);
  const auto [lam1, b1] = scalar_b_i(4.0, 1.5, g);  // doubled mass halves b
  CHECK(b1 == doctest::Approx(0.5 * b0).epsilon(1e-12));
  const auto [lam2, b2] = scalar_b_i(2.0, 3.0, g);  // doubled mu quarters b
  CHECK(b2 == doctest::Approx(0.25 * b0).epsilon(1e-12));
  (void)lam0;
  (void)lam1;
  (void)lam2;
  CHECK_THROWS_AS(scalar_b_i(-1.0, 1.0, g), std::invalid_argument);
}

TEST_CASE("system gradient vanishes at the decoupled pair (beta = 0 test mode)") {
  const auto& g = gs();
  SystemParams p{1.0, 2.0, 0.0, g.mass, 0.7 * g.mass};
  SystemState s(omega_rescaled(g, p.m1, p.mu1), omega_rescaled(g, p.m2, p.mu2), p);
  // settle each component onto the discrete constrained equation
  SystemProblem prob(test_grid(), p, /*allow_beta_zero=*/true);
  auto crit = refine_system_critical(prob, s);
  CHECK(crit.converged);
  const auto sg = system_gradient(crit.state);
  CHECK(std::sqrt(h1_norm_sq(sg.grad1) + h1_norm_sq(sg.grad2)) < 2e-3);
  CHECK(crit.slice_dual < 1e-8);
  const auto [lam1, b1] = scalar_b_i(p.m1, p.mu1, g);
  const auto [lam2, b2] = scalar_b_i(p.m2, p.mu2, g);
  CHECK(crit.lambda1 == doctest::Approx(lam1).epsilon(1e-3));
  CHECK(crit.lambda2 == doctest::Approx(lam2).epsilon(1e-3));
  CHECK(crit.energy == doctest::Approx(b1 + b2).epsilon(1e-3));
}

TEST_CASE("system gradient matches finite differences on random tangent pairs") {
  Rng rng(13);
  SystemParams p{1.0, 1.0, -0.5, 2.0, 2.5};
  auto s = random_state(p, rng);
  const auto sg = system_gradient(s);
  CHECK(std::abs(inner_l2(sg.grad1, s.u1)) < 1e-10 * std::sqrt(mass(sg.grad1) * p.m1 + 1e-300));
  CHECK(std::abs(inner_l2(sg.grad2, s.u2)) < 1e-10 * std::sqrt(mass(sg.grad2) * p.m2 + 1e-300));
  const double h = 1e-5;
  for (int k = 0; k < 10; ++k) {
    // random tangent pair via bump fields projected per component
    auto mk = [&](const RadialFunction& u, double m) {
      RadialFunction v(test_grid());
      for (int b = 0; b < 3; ++b) {
        const double c0 = rng.uniform(0.0, 5.0), w = rng.uniform(0.5, 2.0), a = rng.gaussian();
        for (std::size_t i = 0; i + 1 < v.size(); ++i) {
          const double r = v.grid->nodes[i];
          v[i] += a * (std::exp(-(r - c0) * (r - c0) / (w * w)) +
                       std::exp(-(r + c0) * (r + c0) / (w * w)));
        }
      }
      const double c = inner_l2(v, u) / m;
      return axpy(v, -c, u);
    };
    auto v1 = mk(s.u1, p.m1), v2 = mk(s.u2, p.m2);
    const double pairing = inner_h1(sg.grad1, v1) + inner_h1(sg.grad2, v2);
    SystemState sp(renormalized(axpy(s.u1, h, v1), p.m1),
                   renormalized(axpy(s.u2, h, v2), p.m2), p);
    SystemState sm(renormalized(axpy(s.u1, -h, v1), p.m1),
                   renormalized(axpy(s.u2, -h, v2), p.m2), p);
    const double fd = (energy_Istar(sp) - energy_Istar(sm)) / (2 * h);
    CHECK(pairing == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("validate_solution reports identities at a converged point") {
  const auto& g = gs();
  SystemParams p{1.0, 1.0, -0.5, g.mass, g.mass};
  SystemProblem prob(test_grid(), p);
  auto u1 = omega_rescaled(g, p.m1, p.mu1);
  auto u2 = u1;
  for (std::size_t i = 0; i < u2.size(); ++i)
    u2[i] *= 1.0 + 0.03 * std::sin(0.4 * test_grid()->nodes[i]);
  renormalize_mass(u2, p.m2);
  auto crit = refine_system_critical(prob, SystemState(u1, u2, p));
  REQUIRE(crit.converged);
  auto rep = validate_solution(crit.state, crit.lambda1, crit.lambda2, crit.energy);
  CHECK(rep.identity_residuals[0] < 1e-3);
  CHECK(rep.identity_residuals[1] < 1e-3);
  CHECK(rep.identity_residuals[2] < 1e-3);
  CHECK(crit.lambda1 > 0.0);
  CHECK(crit.lambda2 > 0.0);
  CHECK(rep.positivity[0]);
  CHECK(rep.positivity[1]);
  CHECK(rep.decay_matches_lambda[0]);
  CHECK(rep.decay_matches_lambda[1]);
  CHECK(std::abs(rep.pohozaev_residual) <
        1e-6 * (grad_norm_sq(crit.state.u1) + grad_norm_sq(crit.state.u2)));
}

TEST_CASE("validate_solution never throws on junk input") {
  Rng rng(19);
  SystemParams p{1.0, 1.0, -0.5, 1.0, 1.0};
  auto s = random_state(p, rng);
  auto rep = validate_solution(s, -0.3, 0.2, energy_Istar(s));
  CHECK(rep.identity_residuals[0] > 1e-2);
  CHECK_FALSE(rep.decay_matches_lambda[0]);
}

TEST_CASE("cross-module agreement: b_i equals the scalar estimate") {
  const auto& g = gs();
  const double mu = 1.0, m = g.mass;
  const auto [lam, bi] = scalar_b_i(m, mu, g);
  (void)lam;
  PowerNonlinearity pos_cubic{3, {{mu, 4.0}}, true};
  const double b0 = b0_estimate(test_grid(), SphereConstraint(m), pos_cubic, 2, 77);
  CHECK(b0 == doctest::Approx(bi).epsilon(1e-3));
}

TEST_CASE("replacing u2 by -u2 changes exactly the positive-part quartic term") {
  Rng rng(29);
  SystemParams p{1.3, 0.9, -0.6, 1.0, 2.0};
  auto s = random_state(p, rng);
  SystemState flipped(s.u1, negated(s.u2), p);
  const double direct = energy_Istar(flipped);
  const double predicted = energy_Istar(s) +
                           0.25 * p.mu2 * (lp_pow_pos(s.u2, 4.0) - lp_pow_pos(negated(s.u2), 4.0));
  CHECK(direct == doctest::Approx(predicted).epsilon(1e-12));
}

TEST_CASE("SystemParams validation enforces the repulsive regime") {
  SystemParams bad{1.0, 1.0, 0.1, 1.0, 1.0};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  SystemParams zero{1.0, 1.0, 0.0, 1.0, 1.0};
  CHECK_THROWS_AS(zero.validate(), std::invalid_argument);
  CHECK_THROWS_AS(SystemProblem(test_grid(), zero), std::invalid_argument);
  CHECK_NOTHROW(SystemProblem(test_grid(), zero, /*allow_beta_zero=*/true));
  SystemParams good{1.0, 1.0, -0.5, 1.0, 1.0};
  CHECK_NOTHROW(good.validate());
}
