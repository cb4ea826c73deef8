#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pohoflow/minimax.hpp"

using namespace pohoflow;

namespace {

const GridPtr& scalar_grid() {
  static GridPtr g = make_grid(3, 14.0, 2048, 1.0);
  return g;
}

const GridPtr& surface_grid() {
  static GridPtr g = make_grid(3, 18.0, 4096, 50.0);
  return g;
}

PowerNonlinearity cubic() { return {3, {{1.0, 4.0}}}; }

const GroundState& surface_gs() {
  static GroundState g = ground_state_omega(surface_grid());
  return g;
}

}  // namespace

TEST_CASE("the extreme dilation path is admissible on a graded grid") {
  // nu (1 - nu) + L t with nu = 1e-2, L = 1e2 spans four orders of magnitude:
  // a strongly graded grid resolves both the squeezed and the spread ends.
  auto grid = make_grid(3, 40.0, 4096, 1e5);
  const double sigma = 0.1;
  auto seed = sample_function(grid, [&](double r) { return std::exp(-r * r / (2 * sigma * sigma)); });
  SphereConstraint c(1.0);
  renormalize_mass(seed, c.m);

  const double nu = 1e-2, L = 1e2;
  PathOnSphere path;
  const int K = 17;
  for (int j = 0; j < K; ++j) {
    const double t = double(j) / (K - 1);
    path.nodes.push_back(renormalized(scale(seed, nu * (1.0 - nu) + L * t), c.m));
  }
  // cubic closed-form reference level for this mass
  auto base_gs = ground_state_omega(scalar_grid());
  const double b0 = 0.5 * base_gs.mass * base_gs.mass / c.m;
  CHECK(admissible_path_check(path, cubic(), b0));

  // a constant path has equal endpoint signs
  PathOnSphere constant;
  constant.nodes.assign(K, path.nodes[K / 2]);
  CHECK_FALSE(admissible_path_check(constant, cubic(), b0));

  // endpoints with I >= b0/2 are inadmissible
  CHECK_FALSE(admissible_path_check(path, cubic(), 1e-9));
  CHECK_THROWS_AS(admissible_path_check(path, cubic(), -1.0), std::invalid_argument);
}

TEST_CASE("path crossing maps to the closed-form fiber maximum") {
  SphereConstraint c(19.0);  // mass chosen so the crossing sits at a resolvable dilation
  auto seed = sample_function(scalar_grid(), [](double r) { return std::exp(-r * r / 2.0); });
  renormalize_mass(seed, c.m);
  const auto [t0, value] = fiber_maximize(seed, cubic());
  (void)value;
  const double nu = 0.5 * t0, L = 2.0 * t0;
  PathOnSphere path = build_dilation_path(seed, c, nu, L, 65);
  const auto crossing = path_pohozaev_crossing(path, cubic());
  const double dil = nu + (L - nu) * crossing.param;
  CHECK(dil == doctest::Approx(t0).epsilon(2e-3));

  // all-positive P: inadmissible input
  PathOnSphere positive = build_dilation_path(seed, c, 0.3 * t0, 0.9 * t0, 17);
  CHECK_THROWS_AS(path_pohozaev_crossing(positive, cubic()), std::invalid_argument);
}

TEST_CASE("reparametrization pins endpoints and preserves node count") {
  SphereConstraint c(1.0);
  auto seed = sample_function(scalar_grid(), [](double r) { return std::exp(-r * r / 2.0); });
  renormalize_mass(seed, c.m);
  PathOnSphere path = build_dilation_path(seed, c, 0.4, 3.0, 17);
  const auto first = path.nodes.front(), last = path.nodes.back();
  reparametrize_path(path, c.m);
  CHECK(path.size() == 17);
  CHECK(l2_distance(path.nodes.front(), first) == 0.0);
  CHECK(l2_distance(path.nodes.back(), last) == 0.0);
  // chords are near-uniform after reparametrization
  std::vector<double> d;
  for (std::size_t i = 1; i < path.size(); ++i)
    d.push_back(l2_distance(path.nodes[i - 1], path.nodes[i]));
  const auto [mn, mx] = std::minmax_element(d.begin(), d.end());
  CHECK(*mx / *mn < 1.6);
}

TEST_CASE("mountain pass converges to the cubic closed form") {
  auto gs = ground_state_omega(scalar_grid());
  SphereConstraint c(gs.mass);
  MinimaxOptions opt;
  opt.max_sweeps = 60;
  opt.seed = 3;
  auto rep = mountain_pass_single(scalar_grid(), c, cubic(), opt);
  CHECK(rep.status == SolveStatus::Converged);
  const double target = 0.5 * gs.mass;
  CHECK(std::abs(rep.level - target) / target < 1e-3);
  CHECK(std::abs(rep.level - rep.reference_level) / rep.reference_level < 1e-2);

  REQUIRE(rep.scalar_critical.has_value());
  const auto& cr = *rep.scalar_critical;
  CHECK(std::abs(cr.pohozaev_residual) <= 1e-6 * grad_norm_sq(cr.solution));
  CHECK(cr.lambda == doctest::Approx(1.0).epsilon(2e-3));
  CHECK(cr.decay_rate == doctest::Approx(std::sqrt(cr.lambda)).epsilon(0.1));

  // level history is non-increasing
  for (std::size_t i = 1; i < rep.history.size(); ++i)
    CHECK(rep.history[i].second <= rep.history[i - 1].second + 1e-12);

  // the solution matches the dilated ground state in L2
  double best = std::numeric_limits<double>::infinity();
  for (double t = 0.9; t <= 1.1; t += 0.002)
    best = std::min(best, l2_distance(cr.solution, renormalized(scale(gs.omega, t), c.m)));
  CHECK(best < 1e-3 * std::sqrt(c.m));
}

TEST_CASE("initial surface satisfies the admissibility inequalities") {
  const auto& gs = surface_gs();
  SystemParams params{1.0, 1.0, -0.5, gs.mass, gs.mass};
  const auto [l1, b1] = scalar_b_i(params.m1, params.mu1, gs);
  const auto [l2, b2] = scalar_b_i(params.m2, params.mu2, gs);
  (void)l1;
  (void)l2;
  auto surf = initial_surface(surface_grid(), params, gs, 0.02 * std::min(b1, b2), 17);

  const double bbar = 0.5 * (std::max(b1, b2) + b1 + b2);
  CHECK(admissible_surface_check(surf, b1, b2, bbar));
  CHECK_THROWS_AS(admissible_surface_check(surf, b1, b2, 3.0 * (b1 + b2)),
                  std::invalid_argument);

  // far corners are strictly negative in energy
  const int K = surf.side;
  CHECK(energy_Istar(surf.at(K - 1, 0)) < 0.0);
  CHECK(energy_Istar(surf.at(0, K - 1)) < 0.0);
  CHECK(energy_Istar(surf.at(K - 1, K - 1)) < 0.0);

  // boundary energy cap at the midpoint bbar
  double bmax = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < K; ++i)
    for (int j : {0, K - 1}) {
      bmax = std::max(bmax, energy_Istar(surf.at(i, j)));
      bmax = std::max(bmax, energy_Istar(surf.at(j, i)));
    }
  CHECK(bmax < bbar);

  // flipping one boundary sign breaks admissibility
  auto broken = surf;
  broken.at(0, 8) = broken.at(K - 1, 8);
  CHECK_FALSE(admissible_surface_check(broken, b1, b2, bbar));
}

TEST_CASE("capped edges realize the first-negative-dilation time") {
  const auto& gs = surface_gs();
  SystemParams params{1.0, 1.0, -0.5, gs.mass, gs.mass};
  const auto [l1, b1] = scalar_b_i(params.m1, params.mu1, gs);
  (void)l1;
  auto surf = initial_surface(surface_grid(), params, gs, 0.02 * b1, 9);

  // Recompute the cap along the top edge from its definition:
  // T = inf { t >= 1 : I_*(c_t) < 0 } for the normalized segment c(s), and
  // compare with the explicit formula 2 (|grad c1|^2 + |grad c2|^2) / G4,
  // G4 = int (mu1 c1+^4 + mu2 c2+^4 + 2 beta c1^2 c2^2).
  const int K = surf.side;
  for (int i = 1; i + 1 < K; ++i) {
    const auto& node = surf.at(i, K - 1);
    // the stored node is c(s)_{T(s)}; at the stored node the energy is <= 0
    CHECK(energy_Istar(node) <= 1e-8);
    // its own formula-T must be 1 (already past the zero-energy dilation)
    const double A = grad_norm_sq(node.u1) + grad_norm_sq(node.u2);
    const double G4 = 4.0 * interaction_G(node);
    REQUIRE(G4 > 0.0);
    const double T_formula = std::max(1.0, 2.0 * A / G4);
    // bisect the definition on the stored node
    double lo = 1.0, hi = 8.0;
    SystemProblem prob(surface_grid(), params);
    auto Ist = [&](double t) { return prob.J(std::log(t), node); };
    if (Ist(1.0) < 0.0) {
      CHECK(T_formula == doctest::Approx(1.0).epsilon(1e-8));
    } else {
      while (Ist(hi) >= 0.0 && hi < 1e6) hi *= 2.0;
      for (int it = 0; it < 200 && (hi - lo) > 1e-12 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (Ist(mid) < 0.0 ? hi : lo) = mid;
      }
      CHECK(T_formula == doctest::Approx(0.5 * (lo + hi)).epsilon(1e-8));
    }
  }
}

TEST_CASE("winding and zero finding on a synthetic plane map") {
  PlaneMap f = [](double s, double t) -> std::array<double, 2> {
    return {s - 0.5, t - 0.5};
  };
  CHECK(winding_number(f, 0, 1, 0, 1) == 1);
  const auto z = find_plane_zero(f, 1e-12);
  CHECK(z.s == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(z.t == doctest::Approx(0.5).epsilon(1e-9));

  PlaneMap g = [](double s, double t) -> std::array<double, 2> {
    return {s + 0.5, t + 0.5};  // no zero inside
  };
  CHECK(winding_number(g, 0, 1, 0, 1) == 0);
  CHECK_THROWS_AS(find_plane_zero(g, 1e-12), std::invalid_argument);
}

TEST_CASE("degree intersection on the initial surface") {
  const auto& gs = surface_gs();
  SystemParams params{1.0, 1.0, -0.5, gs.mass, gs.mass};
  const auto [l1, b1] = scalar_b_i(params.m1, params.mu1, gs);
  const auto [l2, b2] = scalar_b_i(params.m2, params.mu2, gs);
  (void)l1;
  (void)l2;
  auto surf = initial_surface(surface_grid(), params, gs, 0.02 * b1, 9);
  const auto di = degree_intersection(surf);
  CHECK(std::abs(di.winding) == 1);
  const auto center = surface_point(surf, 0.5, 0.5);
  const double scale_ref = grad_norm_sq(center.u1) + grad_norm_sq(center.u2);
  CHECK(std::max(std::abs(di.P1), std::abs(di.P2)) <= 1e-6 * scale_ref);
  CHECK(di.energy >= b1 + b2 - 1e-3);
}

TEST_CASE("surface minimax converges with the exact identities") {
  const auto& gs = surface_gs();
  SystemParams params{1.0, 1.0, -0.5, gs.mass, gs.mass};
  MinimaxOptions opt;
  opt.nodes = 9;
  opt.max_sweeps = 25;
  opt.steps_per_sweep = 5;
  auto rep = surface_minimax(surface_grid(), params, opt);
  CHECK(rep.status == SolveStatus::Converged);
  CHECK(rep.level >= rep.reference_level - 1e-3);
  for (std::size_t i = 1; i < rep.history.size(); ++i)
    CHECK(rep.history[i].second <= rep.history[i - 1].second + 1e-12);

  REQUIRE(rep.system_report.has_value());
  const auto& sr = *rep.system_report;
  CHECK(sr.identity_residuals[0] < 1e-3);
  CHECK(sr.identity_residuals[1] < 1e-3);
  CHECK(sr.identity_residuals[2] < 1e-3);
  CHECK(sr.lambda1 > 0.0);
  CHECK(sr.lambda2 > 0.0);
  CHECK(sr.positivity[0]);
  CHECK(sr.positivity[1]);
  const double grad_scale = grad_norm_sq(sr.state.u1) + grad_norm_sq(sr.state.u2);
  CHECK(std::abs(sr.pohozaev_residual) <= 1e-6 * grad_scale);
}
