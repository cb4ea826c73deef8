// pohoflow: minimax orchestration.
//
// Scalar problem: admissible dilation paths on S_m, the mountain-pass level
// b = inf over paths of the path energy maximum, realized by sweeping the
// augmented deformation flow over path nodes and refining the maximizer by
// fiber-maximal descent (the same reduction that computes b0; the two levels
// coincide for the accepted nonlinearity class).
//
// System: admissible surfaces over [0,1]^2 with the two-parameter minimax
// b_*, the explicit initial surface (dilation edges, capped edges via the
// first-negative-time formula, transfinite interior), boundary admissibility
// checks, and the degree-based joint Pohozaev intersection.
#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "pohoflow/deformation.hpp"
#include "pohoflow/scalar.hpp"
#include "pohoflow/system.hpp"
#include "pohoflow/util.hpp"

namespace pohoflow {

// ---------------------------------------------------------------------------
// Paths on the sphere
// ---------------------------------------------------------------------------

struct PathOnSphere {
  std::vector<RadialFunction> nodes;  // >= 17, uniform parameterization

  std::size_t size() const { return nodes.size(); }
};

/// Endpoint admissibility: P > 0 and I < b0/2 at t = 0; P < 0 and I < b0/2 at
/// t = 1. (The sign orientation follows the dilation path construction:
/// small dilations carry positive P.)
inline bool admissible_path_check(const PathOnSphere& path, const PowerNonlinearity& spec,
                                  double b0) {
  if (!(b0 > 0)) throw std::invalid_argument("admissible_path_check: b0 must be positive");
  if (path.size() < 2) return false;
  const auto& first = path.nodes.front();
  const auto& last = path.nodes.back();
  return pohozaev_P(first, spec) > 0.0 && pohozaev_P(last, spec) < 0.0 &&
         energy_I(first, spec) < 0.5 * b0 && energy_I(last, spec) < 0.5 * b0;
}

struct PathCrossing {
  std::size_t index = 0;  // node index left of the sign change
  double param = 0.0;     // refined parameter in [0,1]
};

/// Interpolated path point: linear blend of adjacent nodes, renormalized.
inline RadialFunction path_point(const PathOnSphere& path, double t, double m) {
  const std::size_t K = path.size();
  const double x = t * static_cast<double>(K - 1);
  std::size_t i = static_cast<std::size_t>(std::floor(x));
  if (i >= K - 1) i = K - 2;
  const double frac = x - static_cast<double>(i);
  RadialFunction u = axpy(scaled(path.nodes[i], 1.0 - frac), frac, path.nodes[i + 1]);
  renormalize_mass(u, m);
  return u;
}

/// Locates a Pohozaev sign change along the path and bisects the parameter to
/// 1e-8. Throws if P has constant sign (inadmissible input).
inline PathCrossing path_pohozaev_crossing(const PathOnSphere& path,
                                           const PowerNonlinearity& spec) {
  const std::size_t K = path.size();
  const double m = mass(path.nodes.front());
  std::vector<double> P(K);
  for (std::size_t i = 0; i < K; ++i) P[i] = pohozaev_P(path.nodes[i], spec);
  std::size_t idx = K;
  for (std::size_t i = 0; i + 1 < K; ++i) {
    if (P[i] > 0.0 && P[i + 1] <= 0.0) {
      idx = i;
      break;
    }
  }
  if (idx == K)
    throw std::invalid_argument("path_pohozaev_crossing: no sign change; path inadmissible");
  double lo = static_cast<double>(idx) / (K - 1);
  double hi = static_cast<double>(idx + 1) / (K - 1);
  while (hi - lo > 1e-8) {
    const double mid = 0.5 * (lo + hi);
    if (pohozaev_P(path_point(path, mid, m), spec) > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return {idx, 0.5 * (lo + hi)};
}

/// Arclength reparameterization in the L^2 chord metric; endpoints pinned,
/// node count preserved.
inline void reparametrize_path(PathOnSphere& path, double m) {
  const std::size_t K = path.size();
  std::vector<double> cum(K, 0.0);
  for (std::size_t i = 1; i < K; ++i)
    cum[i] = cum[i - 1] + l2_distance(path.nodes[i - 1], path.nodes[i]);
  const double total = cum.back();
  if (!(total > 0)) return;
  std::vector<RadialFunction> fresh;
  fresh.reserve(K);
  fresh.push_back(path.nodes.front());
  std::size_t seg = 0;
  for (std::size_t j = 1; j + 1 < K; ++j) {
    const double target = total * static_cast<double>(j) / static_cast<double>(K - 1);
    while (seg + 2 < K && cum[seg + 1] < target) ++seg;
    const double span = cum[seg + 1] - cum[seg];
    const double frac = span > 0 ? (target - cum[seg]) / span : 0.0;
    RadialFunction u = axpy(scaled(path.nodes[seg], 1.0 - frac), frac, path.nodes[seg + 1]);
    renormalize_mass(u, m);
    fresh.push_back(std::move(u));
  }
  fresh.push_back(path.nodes.back());
  path.nodes = std::move(fresh);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct MinimaxReport {
  double level = 0.0;
  std::size_t maximizer = 0;
  std::vector<std::pair<int, double>> history;  // (sweep, level estimate)
  SolveStatus status = SolveStatus::Flowing;
  std::optional<CriticalPointReport> scalar_critical;
  std::optional<SystemReport> system_report;
  double reference_level = 0.0;  // b0 estimate (scalar) / b1 + b2 (system)
  double theta_residual = 0.0;
  double slice_dual = 0.0;
  double fiber_defect = 0.0;
  std::vector<double> final_node_energies;  // per node, for plot emission
};

struct MinimaxOptions {
  int nodes = 17;          // path node count / surface side length
  int max_sweeps = 400;
  int steps_per_sweep = 6;
  std::uint64_t seed = 1;
  int scout_seeds = 2;     // seeds for the b0 scout
  double tol_grad = 1e-6;
  double tol_pohozaev = 1e-6;
  double tol_energy = 1e-6;
  double rho = 0.1;
  double max_step = 0.25;
  double stall_rel = 1e-6;
  int stall_window = 10;
};

// ---------------------------------------------------------------------------
// Scalar mountain pass
// ---------------------------------------------------------------------------

namespace detail {

struct DilationRange {
  double nu = 0.0, L = 0.0;
};

/// Largest radius carrying non-negligible values (1e-4 of the peak: cutting
/// there perturbs the mass at the 1e-8 level), and the half-mass radius;
/// used to keep dilations resolvable on the grid.
inline std::pair<double, double> profile_radii(const RadialFunction& u) {
  double peak = 0.0;
  for (const double v : u.values) peak = std::max(peak, std::abs(v));
  double outer = u.grid->r_max();
  for (std::size_t i = u.size(); i-- > 1;) {
    if (std::abs(u[i - 1]) > 1e-4 * peak) {
      outer = u.grid->nodes[i - 1];
      break;
    }
  }
  const double total = mass(u);
  double acc = 0.0;
  double half = outer;
  for (std::size_t i = 0; i < u.size(); ++i) {
    acc += u.grid->weights[i] * u[i] * u[i];
    if (acc >= 0.5 * total) {
      half = std::max(u.grid->nodes[i], u.grid->nodes[1]);
      break;
    }
  }
  return {outer, half};
}

/// Picks dilation endpoints nu < t0 < L for the initial path so that the
/// closed-form endpoint conditions hold and both resampled endpoints stay
/// resolvable: the spread profile fits in the domain, the squeezed one keeps
/// several cells across its half-mass radius.
inline DilationRange pick_dilation_range(const RadialFunction& seed,
                                         const PowerNonlinearity& spec, double b0) {
  const auto d = dilation_data(spec, seed);
  const auto th0 = fiber_argmax_theta(spec, d);
  if (!th0) throw std::runtime_error("pick_dilation_range: seed not resolved");
  const double t0 = std::exp(*th0);
  const auto [outer, half] = profile_radii(seed);
  const double rmax = seed.grid->r_max();
  const double h_core = seed.grid->nodes[1] - seed.grid->nodes[0];

  DilationRange out;
  double nu = t0;
  for (int k = 0; k < 90; ++k) {
    nu *= 0.8;
    if (outer / nu > 0.98 * rmax)
      throw std::runtime_error("pick_dilation_range: domain too small to spread the seed");
    const double th = std::log(nu);
    if (dilated_pohozaev(spec, d, th) > 0.0 && dilated_energy(spec, d, th) < 0.45 * b0) {
      out.nu = nu;
      break;
    }
  }
  if (out.nu == 0.0) throw std::runtime_error("pick_dilation_range: no admissible small end");
  double L = t0;
  for (int k = 0; k < 60; ++k) {
    L *= 1.35;
    if (half / L < 6.0 * h_core)
      throw std::runtime_error("pick_dilation_range: grid too coarse to squeeze the seed");
    if (dilated_energy(spec, d, std::log(L)) < 0.0) {
      out.L = L;
      break;
    }
  }
  if (out.L == 0.0) throw std::runtime_error("pick_dilation_range: no admissible large end");
  return out;
}

}  // namespace detail

/// Builds the dilation path t -> seed_{nu + (L - nu) t} on S_m.
inline PathOnSphere build_dilation_path(const RadialFunction& seed, const SphereConstraint& c,
                                        double nu, double L, int nodes) {
  PathOnSphere path;
  path.nodes.reserve(nodes);
  for (int j = 0; j < nodes; ++j) {
    const double t = static_cast<double>(j) / (nodes - 1);
    const double dil = nu + (L - nu) * t;
    path.nodes.push_back(renormalized(scale(seed, dil), c.m));
  }
  return path;
}

inline MinimaxReport mountain_pass_single(const GridPtr& grid, const SphereConstraint& constraint,
                                          const PowerNonlinearity& spec,
                                          const MinimaxOptions& opt = {}) {
  ScalarProblem prob(grid, spec, constraint);
  MinimaxReport report;

  // Scout the ground level: it anchors the endpoint energy conditions.
  RefineOptions scout_opt;
  scout_opt.tol_grad = std::max(opt.tol_grad, 1e-7);
  const auto scout =
      b0_estimate_report(grid, constraint, spec, opt.scout_seeds, opt.seed * 7919 + 17, scout_opt);
  report.reference_level = scout.b0;

  // Initial admissible dilation path. The seed is a centered Gaussian with a
  // small seeded perturbation, folded to its fiber maximum so the dilation
  // range around it stays resolvable for any mass.
  Rng rng(opt.seed);
  RadialFunction seed(grid);
  {
    const double width = grid->r_max() / 15.0;
    const double pw = rng.uniform(0.5, 2.0), pa = rng.uniform(-0.1, 0.1);
    for (std::size_t i = 0; i + 1 < seed.size(); ++i) {
      const double r = grid->nodes[i];
      seed[i] = std::exp(-r * r / (2 * width * width)) *
                (1.0 + pa * std::exp(-r * r / (2 * pw * pw)));
    }
    renormalize_mass(seed, constraint.m);
    const auto th = fiber_argmax_theta(spec, dilation_data(spec, seed));
    if (th && std::abs(*th) > 0.05)
      seed = renormalized(scale(seed, std::exp(*th)), constraint.m);
  }
  const auto range = detail::pick_dilation_range(seed, spec, scout.b0);
  PathOnSphere path = build_dilation_path(seed, constraint, range.nu, range.L, opt.nodes);
  if (!admissible_path_check(path, spec, scout.b0))
    throw std::runtime_error("mountain_pass_single: initial path failed admissibility");

  const double end_energy =
      std::max(energy_I(path.nodes.front(), spec), energy_I(path.nodes.back(), spec));

  auto path_levels = [&](const PathOnSphere& p) {
    std::vector<double> lv(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) lv[i] = energy_I(p.nodes[i], spec);
    return lv;
  };
  // Maximum of the interpolated path: a genuine admissible-path maximum, so
  // a valid upper bound for the minimax level even when nodes slide off the
  // energy ridge.
  auto path_max = [&](const PathOnSphere& p) {
    double mx = -std::numeric_limits<double>::infinity();
    const int sub = 8;
    const int total = static_cast<int>(p.size() - 1) * sub;
    for (int k = 0; k <= total; ++k) {
      const double t = static_cast<double>(k) / total;
      mx = std::max(mx, energy_I(path_point(p, t, constraint.m), spec));
    }
    return mx;
  };

  std::vector<double> levels = path_levels(path);
  double level = path_max(path);
  report.history.emplace_back(0, level);

  int stall_count = 0;
  for (int sweep = 1; sweep <= opt.max_sweeps; ++sweep) {
    FlowConfig fc;
    fc.level_b = level;
    fc.eps_bar = std::min(0.1 * std::abs(level), 0.5 * (level - end_energy));
    if (!(fc.eps_bar > 0)) fc.eps_bar = 0.1 * std::abs(level);
    fc.rho = opt.rho;
    fc.max_step = opt.max_step;
    fc.tol_grad = opt.tol_grad;
    fc.tol_pohozaev = opt.tol_pohozaev;
    fc.tol_energy = opt.tol_energy;

    const RadialFunction front = path.nodes.front(), back = path.nodes.back();
    parallel_for(path.size(), [&](std::size_t i) {
      if (levels[i] <= fc.level_b - fc.eps_bar) return;  // frozen sublevel
      AugmentedPoint<ScalarProblem> at{0.0, path.nodes[i]};
      flow_integrate(prob, at, fc, opt.steps_per_sweep);
      RadialFunction moved = project_pi(prob, at);
      renormalize_mass(moved, constraint.m);
      path.nodes[i] = std::move(moved);
    });
    // endpoints sit below b - eps_bar, so the flow must not have touched them
    if (l2_distance(front, path.nodes.front()) != 0.0 ||
        l2_distance(back, path.nodes.back()) != 0.0)
      throw std::logic_error("mountain_pass_single: endpoint moved despite the energy cutoff");

    reparametrize_path(path, constraint.m);
    levels = path_levels(path);
    const double new_level = std::min(level, path_max(path));
    report.history.emplace_back(sweep, new_level);
    if (level - new_level < opt.stall_rel * std::abs(level)) {
      if (++stall_count >= opt.stall_window) {
        level = new_level;
        break;
      }
    } else {
      stall_count = 0;
    }
    level = new_level;
  }

  // Refine the maximizer: fiber-maximal descent down to the critical point.
  const std::size_t argmax =
      static_cast<std::size_t>(std::max_element(levels.begin(), levels.end()) - levels.begin());
  RefineOptions ropt;
  ropt.tol_grad = opt.tol_grad;
  const auto crit = refine_scalar_critical(prob, path.nodes[argmax], ropt);

  report.maximizer = argmax;
  report.level = crit.energy;
  if (crit.energy <= report.history.back().second)
    report.history.emplace_back(static_cast<int>(report.history.size()), crit.energy);
  report.theta_residual = std::abs(crit.theta);
  report.slice_dual = crit.slice_dual;
  report.fiber_defect = crit.fiber_defect;
  report.scalar_critical = make_report(prob, crit);
  report.final_node_energies = levels;
  // critical points of the constrained problem carry positive multipliers;
  // a nonpositive one signals a truncation artifact, reported as a stall
  const bool psp_ok =
      crit.converged && crit.lambda > 0.0 &&
      std::abs(crit.pohozaev) <= opt.tol_pohozaev * std::max(1.0, grad_norm_sq(crit.u));
  report.status = psp_ok ? SolveStatus::Converged : SolveStatus::Stalled;
  if (report.scalar_critical) report.scalar_critical->status = report.status;
  return report;
}

// ---------------------------------------------------------------------------
// Surfaces on the product sphere
// ---------------------------------------------------------------------------

struct SurfaceOnProduct {
  int side = 0;                    // K: nodes per direction, >= 17 in production
  std::vector<SystemState> nodes;  // row-major: index = j * side + i, s = i/(K-1), t = j/(K-1)
  SystemParams params;

  const SystemState& at(int i, int j) const { return nodes[static_cast<std::size_t>(j) * side + i]; }
  SystemState& at(int i, int j) { return nodes[static_cast<std::size_t>(j) * side + i]; }
  bool is_boundary(int i, int j) const {
    return i == 0 || j == 0 || i == side - 1 || j == side - 1;
  }
};

/// Bilinear surface point with per-component renormalization.
inline SystemState surface_point(const SurfaceOnProduct& surf, double s, double t) {
  const int K = surf.side;
  const double x = s * (K - 1), y = t * (K - 1);
  int i = std::min(static_cast<int>(std::floor(x)), K - 2);
  int j = std::min(static_cast<int>(std::floor(y)), K - 2);
  i = std::max(i, 0);
  j = std::max(j, 0);
  const double fx = x - i, fy = y - j;
  auto blend = [&](auto proj) {
    RadialFunction out = scaled(proj(surf.at(i, j)), (1 - fx) * (1 - fy));
    out = axpy(out, fx * (1 - fy), proj(surf.at(i + 1, j)));
    out = axpy(out, (1 - fx) * fy, proj(surf.at(i, j + 1)));
    out = axpy(out, fx * fy, proj(surf.at(i + 1, j + 1)));
    return out;
  };
  RadialFunction u1 = blend([](const SystemState& s_) -> const RadialFunction& { return s_.u1; });
  RadialFunction u2 = blend([](const SystemState& s_) -> const RadialFunction& { return s_.u2; });
  renormalize_mass(u1, surf.params.m1);
  renormalize_mass(u2, surf.params.m2);
  return SystemState(std::move(u1), std::move(u2), surf.params);
}

/// Boundary admissibility for the two-parameter class: component Pohozaev
/// signs and energy caps on the four edges, and the full energy below bbar on
/// the whole boundary.
inline bool admissible_surface_check(const SurfaceOnProduct& surf, double b1, double b2,
                                     double bbar) {
  if (!(bbar > std::max(b1, b2) && bbar < b1 + b2))
    throw std::invalid_argument(
        "admissible_surface_check: bbar must lie in (max{b1,b2}, b1+b2)");
  const int K = surf.side;
  for (int t = 0; t < K; ++t) {
    const auto [I1l, P1l] = component_IP(surf.at(0, t).u1, surf.params.mu1);
    const auto [I1r, P1r] = component_IP(surf.at(K - 1, t).u1, surf.params.mu1);
    if (!(P1l > 0.0 && P1r < 0.0)) return false;
    if (!(I1l < b1 && I1r < b1)) return false;
  }
  for (int s = 0; s < K; ++s) {
    const auto [I2b, P2b] = component_IP(surf.at(s, 0).u2, surf.params.mu2);
    const auto [I2t, P2t] = component_IP(surf.at(s, K - 1).u2, surf.params.mu2);
    if (!(P2b > 0.0 && P2t < 0.0)) return false;
    if (!(I2b < b2 && I2t < b2)) return false;
  }
  for (int i = 0; i < K; ++i) {
    for (const int j : {0, K - 1}) {
      if (!(energy_Istar(surf.at(i, j)) < bbar)) return false;
      if (!(energy_Istar(surf.at(j, i)) < bbar)) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Initial surface (explicit construction)
// ---------------------------------------------------------------------------

namespace detail {

/// Compactly supported fiber-critical profile built from the ground state:
/// smooth cutoff at radius rc, a hole of `hole_cells` nodes at the origin
/// (the capacity cost of excising the origin scales with the hole radius, so
/// the cheapest admissible hole is the smallest the grid resolves),
/// renormalized and fiber-remaximized (positive-part cubic, closed form).
inline RadialFunction compact_corner_profile(const GroundState& gs, double mi, double mui,
                                             int hole_cells, double rc) {
  RadialFunction w = omega_rescaled(gs, mi, mui);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double r = w.grid->nodes[i];
    if (r >= rc) {
      w[i] = 0.0;
    } else if (r > 0.5 * rc) {
      const double x = (r - 0.5 * rc) / (0.5 * rc);
      w[i] *= 0.5 * (1.0 + std::cos(x * 3.14159265358979323846));
    }
  }
  for (int i = 0; i < hole_cells && i < static_cast<int>(w.size()); ++i) w[i] = 0.0;
  renormalize_mass(w, mi);
  // fiber re-maximization: P_i(w_t) = t^2 A - (3 mu/4) t^3 Q vanishes at
  // t0 = 4A / (3 mu Q)
  const double A = grad_norm_sq(w);
  const double Q = lp_pow_pos(w, 4.0);
  const double t0 = 4.0 * A / (3.0 * mui * Q);
  w = renormalized(scale(w, t0), mi);
  return w;
}

}  // namespace detail

/// The explicit admissible surface: dilation edges on two sides, capped edges
/// through the first-negative-dilation time T(s) on the other two, Coons
/// (transfinite) interpolation inside.
inline SurfaceOnProduct initial_surface(const GridPtr& grid, const SystemParams& params,
                                        const GroundState& gs, double delta, int side = 17) {
  if (!(delta > 0)) throw std::invalid_argument("initial_surface: delta must be positive");
  if (side < 5) throw std::invalid_argument("initial_surface: need at least a 5x5 surface");

  const auto [lam1, b1] = scalar_b_i(params.m1, params.mu1, gs);
  const auto [lam2, b2] = scalar_b_i(params.m2, params.mu2, gs);

  // Corner profiles with support off the origin. The cutoff radius must
  // leave dilation headroom (the small-dilation edge spreads the support by
  // 1/nu) while staying several decay lengths out so the truncation cost is
  // small; the origin hole has an irreducible discrete capacity cost of
  // order h. The target bracket [b_i, b_i + delta] therefore widens to the
  // slack the boundary energy cap leaves when the grid cannot do better.
  auto make_corner = [&](double mi, double mui, double bi, double lam) {
    // cutoff several decay lengths out, but low enough that the small-
    // dilation edge can spread the support inside the domain
    const double rc = std::clamp(5.0 / std::sqrt(lam), 0.22 * grid->r_max(),
                                 0.35 * grid->r_max());
    if (rc * std::sqrt(lam) < 4.0) {
      std::ostringstream os;
      os << "initial_surface: support cutoff would sit inside the decay region; "
         << "r_max >= " << std::ceil(5.0 / std::sqrt(lam) / 0.35)
         << " is required for these parameters";
      throw std::runtime_error(os.str());
    }
    const double allowance = std::max(delta, 0.35 * bi);
    RadialFunction best;
    double best_excess = std::numeric_limits<double>::infinity();
    for (int hole : {2, 3, 4, 6}) {
      RadialFunction w = detail::compact_corner_profile(gs, mi, mui, hole, rc);
      const auto [Ii, Pi] = component_IP(w, mui);
      (void)Pi;
      const double excess = Ii - bi;
      if (excess >= -delta && excess <= delta) return w;
      if (excess >= -delta && excess < best_excess) {
        best_excess = excess;
        best = w;
      }
    }
    if (best_excess <= allowance) return best;
    throw std::runtime_error(
        "initial_surface: origin hole too expensive for the boundary energy cap; "
        "a larger r_max (finer origin resolution) is required");
  };
  RadialFunction w1 = make_corner(params.m1, params.mu1, b1, lam1);
  RadialFunction w2 = make_corner(params.m2, params.mu2, b2, lam2);

  // Pick nu_i < 1 < L_i so that the corner conditions hold numerically.
  auto dilated = [&](const RadialFunction& w, double mi, double t) {
    return renormalized(scale(w, t), mi);
  };
  auto state_of = [&](RadialFunction a, RadialFunction b) {
    return SystemState(std::move(a), std::move(b), params);
  };

  auto outer_radius = [&](const RadialFunction& f) {
    double peak = 0.0;
    for (const double v : f.values) peak = std::max(peak, std::abs(v));
    for (std::size_t i = f.size(); i-- > 1;)
      if (std::abs(f[i - 1]) > 1e-9 * peak) return grid->nodes[i - 1];
    return grid->nodes[1];
  };
  // Boundary-cap budgets are per edge: along the edge where component j
  // sweeps through its fiber maximum (energy ~ b_j), the other component sits
  // at its small-dilation endpoint, so I_i(nu_i) must stay below
  // bbar - b_j with margin for the corner excess and the cross term.
  const double bbar_mid = 0.5 * (std::max(b1, b2) + b1 + b2);
  auto pick_nu = [&](const RadialFunction& wi, double mi, double mui, double bi,
                     double b_other) {
    const double fit = outer_radius(wi) / (0.95 * grid->r_max());
    const double budget = std::min(0.9 * bi, 0.8 * (bbar_mid - b_other));
    for (const double nu : {0.28, 0.30, 0.33, 0.36, 0.40, 0.46, 0.55, 0.65, 0.80}) {
      if (nu < fit) continue;  // spread profile would hit the boundary
      const auto [Ii, Pi] = component_IP(dilated(wi, mi, nu), mui);
      if (Pi > 0.0 && Ii < budget) return nu;
    }
    std::ostringstream os;
    os << "initial_surface: no small-dilation endpoint fits the boundary energy cap; "
       << "r_max >= " << std::ceil(1.2 * outer_radius(wi) / (0.95 * 0.28))
       << " (or weaker coupling) is required";
    throw std::runtime_error(os.str());
  };
  const double nu1 = pick_nu(w1, params.m1, params.mu1, b1, b2);
  const double nu2 = pick_nu(w2, params.m2, params.mu2, b2, b1);
  double L1 = 0, L2 = 0;
  for (const double L : {1.7, 1.9, 2.2, 2.6, 3.2, 4.0}) {
    if (L1 == 0) {
      RadialFunction w1L = dilated(w1, params.m1, L);
      const auto [I1, P1] = component_IP(w1L, params.mu1);
      const double corner = energy_Istar(state_of(w1L, dilated(w2, params.m2, nu2)));
      if (P1 < 0.0 && I1 < 0.0 && corner < 0.0) L1 = L;
    }
    if (L2 == 0) {
      RadialFunction w2L = dilated(w2, params.m2, L);
      const auto [I2, P2] = component_IP(w2L, params.mu2);
      const double corner = energy_Istar(state_of(dilated(w1, params.m1, nu1), w2L));
      if (P2 < 0.0 && I2 < 0.0 && corner < 0.0) L2 = L;
    }
  }
  if (L1 == 0 || L2 == 0)
    throw std::runtime_error("initial_surface: no valid large-dilation endpoint");
  // both-large corner must also be negative; deepen jointly if not
  while (energy_Istar(state_of(dilated(w1, params.m1, L1), dilated(w2, params.m2, L2))) >= 0.0) {
    L1 *= 1.2;
    L2 *= 1.2;
    if (L1 > 64.0)
      throw std::runtime_error("initial_surface: could not achieve a negative far corner");
  }

  const int K = side;
  SurfaceOnProduct surf;
  surf.side = K;
  surf.params = params;
  surf.nodes.assign(static_cast<std::size_t>(K) * K, SystemState());

  std::vector<RadialFunction> w1_dil(K), w2_dil(K);
  for (int i = 0; i < K; ++i) {
    const double s = static_cast<double>(i) / (K - 1);
    w1_dil[i] = dilated(w1, params.m1, nu1 + (L1 - nu1) * s);
    w2_dil[i] = dilated(w2, params.m2, nu2 + (L2 - nu2) * s);
  }

  // Capped edges: normalized segment joined to the far profile, dilated by
  // T = max{1, 2(||grad c1||^2 + ||grad c2||^2) / int(mu1 c1+^4 + mu2 c2+^4
  //         + 2 beta c1^2 c2^2)}.
  auto capped_state = [&](const RadialFunction& seg_a, const RadialFunction& seg_b, double frac,
                          double seg_mass, bool segment_is_first,
                          const RadialFunction& fixed_other) {
    RadialFunction c_seg = axpy(scaled(seg_a, 1.0 - frac), frac, seg_b);
    renormalize_mass(c_seg, seg_mass);
    SystemState c = segment_is_first ? state_of(std::move(c_seg), fixed_other)
                                     : state_of(fixed_other, std::move(c_seg));
    const double quartic = 4.0 * interaction_G(c);
    if (!(quartic > 0.0))
      throw std::runtime_error(
          "initial_surface: nonpositive interaction along a capped edge; supports cannot be "
          "separated on this grid (increase r_max)");
    const double A = grad_norm_sq(c.u1) + grad_norm_sq(c.u2);
    const double T = std::max(1.0, 2.0 * A / quartic);
    return SystemState(renormalized(scale(c.u1, T), params.m1),
                       renormalized(scale(c.u2, T), params.m2), params);
  };

  // Boundary edges.
  for (int i = 0; i < K; ++i) {
    const double s = static_cast<double>(i) / (K - 1);
    surf.at(i, 0) = state_of(w1_dil[i], w2_dil[0]);  // bottom: dilation edge
    surf.at(0, i) = state_of(w1_dil[0], w2_dil[i]);  // left: dilation edge
    surf.at(i, K - 1) =
        capped_state(w1_dil[0], w1_dil[K - 1], s, params.m1, true, w2_dil[K - 1]);   // top
    surf.at(K - 1, i) =
        capped_state(w2_dil[0], w2_dil[K - 1], s, params.m2, false, w1_dil[K - 1]);  // right
  }

  // Transfinite (Coons) interior, renormalized per component.
  for (int j = 1; j + 1 < K; ++j) {
    for (int i = 1; i + 1 < K; ++i) {
      const double s = static_cast<double>(i) / (K - 1);
      const double t = static_cast<double>(j) / (K - 1);
      auto coons = [&](auto proj) {
        RadialFunction out = scaled(proj(surf.at(i, 0)), 1.0 - t);
        out = axpy(out, t, proj(surf.at(i, K - 1)));
        out = axpy(out, 1.0 - s, proj(surf.at(0, j)));
        out = axpy(out, s, proj(surf.at(K - 1, j)));
        out = axpy(out, -(1.0 - s) * (1.0 - t), proj(surf.at(0, 0)));
        out = axpy(out, -s * (1.0 - t), proj(surf.at(K - 1, 0)));
        out = axpy(out, -(1.0 - s) * t, proj(surf.at(0, K - 1)));
        out = axpy(out, -s * t, proj(surf.at(K - 1, K - 1)));
        return out;
      };
      RadialFunction u1 =
          coons([](const SystemState& st) -> const RadialFunction& { return st.u1; });
      RadialFunction u2 =
          coons([](const SystemState& st) -> const RadialFunction& { return st.u2; });
      renormalize_mass(u1, params.m1);
      renormalize_mass(u2, params.m2);
      surf.at(i, j) = state_of(std::move(u1), std::move(u2));
    }
  }
  return surf;
}

// ---------------------------------------------------------------------------
// Degree-based intersection with the joint Pohozaev set
// ---------------------------------------------------------------------------

using PlaneMap = std::function<std::array<double, 2>(double, double)>;

/// Winding number of the map around 0 along the rectangle boundary,
/// counterclockwise, with `per_side` samples per side.
inline int winding_number(const PlaneMap& f, double s0, double s1, double t0, double t1,
                          int per_side = 64) {
  double angle_sum = 0.0;
  std::array<double, 2> prev{};
  bool have_prev = false;
  auto visit = [&](double s, double t) {
    const auto v = f(s, t);
    if (have_prev) {
      const double cross = prev[0] * v[1] - prev[1] * v[0];
      const double dot = prev[0] * v[0] + prev[1] * v[1];
      angle_sum += std::atan2(cross, dot);
    }
    prev = v;
    have_prev = true;
  };
  for (int k = 0; k < per_side; ++k)
    visit(s0 + (s1 - s0) * k / per_side, t0);
  for (int k = 0; k < per_side; ++k)
    visit(s1, t0 + (t1 - t0) * k / per_side);
  for (int k = 0; k < per_side; ++k)
    visit(s1 - (s1 - s0) * k / per_side, t1);
  for (int k = 0; k <= per_side; ++k)
    visit(s0, t1 - (t1 - t0) * k / per_side);
  return static_cast<int>(std::lround(angle_sum / (2.0 * 3.14159265358979323846)));
}

struct PlaneZero {
  double s = 0.0, t = 0.0;
  std::array<double, 2> value{};
};

/// Quadtree subdivision on the winding number, then local Newton with a
/// finite-difference Jacobian. `tol_value` bounds max(|f1|, |f2|).
inline PlaneZero find_plane_zero(const PlaneMap& f, double tol_value) {
  double s0 = 0, s1 = 1, t0 = 0, t1 = 1;
  if (winding_number(f, s0, s1, t0, t1) == 0)
    throw std::invalid_argument("find_plane_zero: zero winding number on the boundary");
  // subdivide while the cell is large
  while (s1 - s0 > 1e-4) {
    const double sm = 0.5 * (s0 + s1), tm = 0.5 * (t0 + t1);
    const std::array<std::array<double, 4>, 4> cells{{{s0, sm, t0, tm},
                                                      {sm, s1, t0, tm},
                                                      {s0, sm, tm, t1},
                                                      {sm, s1, tm, t1}}};
    bool advanced = false;
    for (const auto& c : cells) {
      if (winding_number(f, c[0], c[1], c[2], c[3], 24) != 0) {
        s0 = c[0]; s1 = c[1]; t0 = c[2]; t1 = c[3];
        advanced = true;
        break;
      }
    }
    if (!advanced) break;  // zero sits on a subdivision line: refine locally
  }
  double s = 0.5 * (s0 + s1), t = 0.5 * (t0 + t1);
  auto val = f(s, t);
  const double fd = 1e-6;
  for (int it = 0; it < 60; ++it) {
    if (std::max(std::abs(val[0]), std::abs(val[1])) <= tol_value) break;
    const auto fs = f(std::min(s + fd, 1.0), t);
    const auto ft = f(s, std::min(t + fd, 1.0));
    const double a = (fs[0] - val[0]) / fd, b = (ft[0] - val[0]) / fd;
    const double c = (fs[1] - val[1]) / fd, d = (ft[1] - val[1]) / fd;
    const double det = a * d - b * c;
    if (det == 0.0) break;
    double ds = (-d * val[0] + b * val[1]) / det;
    double dt = (c * val[0] - a * val[1]) / det;
    double damp = 1.0;
    for (int back = 0; back < 40; ++back) {
      const double sn = std::clamp(s + damp * ds, 0.0, 1.0);
      const double tn = std::clamp(t + damp * dt, 0.0, 1.0);
      const auto vn = f(sn, tn);
      if (std::hypot(vn[0], vn[1]) < std::hypot(val[0], val[1])) {
        s = sn; t = tn; val = vn;
        break;
      }
      damp *= 0.5;
    }
  }
  return {s, t, val};
}

struct DegreeIntersection {
  double s = 0.0, t = 0.0;
  double P1 = 0.0, P2 = 0.0;
  double energy = 0.0;
  int winding = 0;
};

/// Finds (s0, t0) with P1 = P2 = 0 on the interpolated surface. The boundary
/// winding of (P1, P2) is nonzero for every admissible surface.
inline DegreeIntersection degree_intersection(const SurfaceOnProduct& surf) {
  PlaneMap f = [&](double s, double t) -> std::array<double, 2> {
    const SystemState st = surface_point(surf, s, t);
    return {component_IP(st.u1, surf.params.mu1).second,
            component_IP(st.u2, surf.params.mu2).second};
  };
  DegreeIntersection out;
  out.winding = winding_number(f, 0, 1, 0, 1);
  if (out.winding == 0)
    throw std::invalid_argument(
        "degree_intersection: boundary winding vanishes; surface is inadmissible");
  // gradient scale for the tolerance
  const SystemState center = surface_point(surf, 0.5, 0.5);
  const double scale_ref = grad_norm_sq(center.u1) + grad_norm_sq(center.u2);
  const auto zero = find_plane_zero(f, 1e-6 * scale_ref);
  out.s = zero.s;
  out.t = zero.t;
  out.P1 = zero.value[0];
  out.P2 = zero.value[1];
  out.energy = energy_Istar(surface_point(surf, zero.s, zero.t));
  return out;
}

// ---------------------------------------------------------------------------
// Two-parameter minimax for the system
// ---------------------------------------------------------------------------

inline MinimaxReport surface_minimax(const GridPtr& grid, const SystemParams& params,
                                     const MinimaxOptions& opt = {}) {
  params.validate();
  SystemProblem prob(grid, params);
  const GroundState gs = ground_state_omega(grid);
  const auto [lam1, b1] = scalar_b_i(params.m1, params.mu1, gs);
  const auto [lam2, b2] = scalar_b_i(params.m2, params.mu2, gs);
  (void)lam1;
  (void)lam2;
  const double bbar = 0.5 * (std::max(b1, b2) + b1 + b2);
  const double delta = 0.01 * std::min(b1, b2);

  MinimaxReport report;
  report.reference_level = b1 + b2;

  SurfaceOnProduct surf = initial_surface(grid, params, gs, delta, opt.nodes);
  if (!admissible_surface_check(surf, b1, b2, bbar))
    throw std::runtime_error("surface_minimax: initial surface failed admissibility");

  const int K = surf.side;
  auto node_levels = [&](const SurfaceOnProduct& sf) {
    std::vector<double> lv(sf.nodes.size());
    for (std::size_t i = 0; i < sf.nodes.size(); ++i) lv[i] = energy_Istar(sf.nodes[i]);
    return lv;
  };
  // Maximum over the interpolated surface (nodes plus cell-interior samples):
  // node maxima alone underestimate badly once nodes slide off the ridge.
  auto surface_max = [&](const SurfaceOnProduct& sf, const std::vector<double>& lv) {
    double mx = *std::max_element(lv.begin(), lv.end());
    for (int j = 0; j + 1 < K; ++j) {
      for (int i = 0; i + 1 < K; ++i) {
        for (const double fs : {1.0 / 3.0, 2.0 / 3.0}) {
          for (const double ft : {1.0 / 3.0, 2.0 / 3.0}) {
            const double s = (i + fs) / (K - 1);
            const double t = (j + ft) / (K - 1);
            mx = std::max(mx, energy_Istar(surface_point(sf, s, t)));
          }
        }
      }
    }
    return mx;
  };
  std::vector<double> levels = node_levels(surf);
  double level = surface_max(surf, levels);
  double boundary_max = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j)
      if (surf.is_boundary(i, j))
        boundary_max = std::max(boundary_max, levels[static_cast<std::size_t>(j) * K + i]);
  report.history.emplace_back(0, level);

  int stall_count = 0;
  for (int sweep = 1; sweep <= opt.max_sweeps; ++sweep) {
    FlowConfig fc;
    fc.level_b = level;
    fc.eps_bar = std::min(0.1 * std::abs(level), 0.5 * (level - boundary_max));
    if (!(fc.eps_bar > 0)) fc.eps_bar = 0.1 * std::abs(level);
    fc.rho = opt.rho;
    fc.max_step = opt.max_step;
    fc.tol_grad = opt.tol_grad;
    fc.tol_pohozaev = opt.tol_pohozaev;
    fc.tol_energy = opt.tol_energy;

    parallel_for(surf.nodes.size(), [&](std::size_t idx) {
      const int i = static_cast<int>(idx) % K, j = static_cast<int>(idx) / K;
      if (surf.is_boundary(i, j)) return;  // frozen by the energy cutoff
      if (levels[idx] <= fc.level_b - fc.eps_bar) return;
      AugmentedPoint<SystemProblem> at{0.0, surf.nodes[idx]};
      flow_integrate(prob, at, fc, opt.steps_per_sweep);
      SystemState moved = project_pi(prob, at);
      moved.retract();
      surf.nodes[idx] = std::move(moved);
    });

    levels = node_levels(surf);
    const double new_level = std::min(level, surface_max(surf, levels));
    report.history.emplace_back(sweep, new_level);
    if (level - new_level < opt.stall_rel * std::abs(level)) {
      if (++stall_count >= opt.stall_window) {
        level = new_level;
        break;
      }
    } else {
      stall_count = 0;
    }
    level = new_level;
  }

  const std::size_t argmax =
      static_cast<std::size_t>(std::max_element(levels.begin(), levels.end()) - levels.begin());
  RefineOptions ropt;
  ropt.tol_grad = opt.tol_grad;
  ropt.max_iterations = 1500;

  // Refine from the energy maximizer and from the joint Pohozaev intersection
  // of the deformed surface (its boundary is frozen, so the degree argument
  // still applies); keep the lowest converged critical point.
  SystemCritical crit = refine_system_critical(prob, surf.nodes[argmax], ropt);
  try {
    const auto di = degree_intersection(surf);
    const SystemState witness = surface_point(surf, di.s, di.t);
    SystemCritical alt = refine_system_critical(prob, witness, ropt);
    const bool take_alt =
        (alt.converged && !crit.converged) ||
        (alt.converged && crit.converged && alt.energy < crit.energy);
    if (take_alt) crit = std::move(alt);
  } catch (const std::exception&) {
    // intersection search can fail on a degenerate deformed surface; the
    // maximizer refinement result stands
  }

  report.maximizer = argmax;
  report.level = crit.energy;
  if (crit.energy <= report.history.back().second)
    report.history.emplace_back(static_cast<int>(report.history.size()), crit.energy);
  report.theta_residual = std::max(std::abs(crit.theta1), std::abs(crit.theta2));
  report.slice_dual = crit.slice_dual;
  report.fiber_defect = crit.fiber_defect;
  report.final_node_energies = levels;
  SystemReport sys = validate_solution(crit.state, crit.lambda1, crit.lambda2, crit.energy);
  sys.gradient_dual_norm = crit.dual_norm;
  const double grad_scale = grad_norm_sq(crit.state.u1) + grad_norm_sq(crit.state.u2);
  // a converged report must carry the exact identities, positive multipliers
  // and positive components; anything else is reported as a stall
  const bool psp_ok = crit.converged && std::abs(crit.pohozaev) <= opt.tol_pohozaev * grad_scale &&
                      crit.lambda1 > 0.0 && crit.lambda2 > 0.0 && sys.positivity[0] &&
                      sys.positivity[1] && sys.identity_residuals[0] < 1e-3 &&
                      sys.identity_residuals[1] < 1e-3 && sys.identity_residuals[2] < 1e-3;
  sys.status = psp_ok ? SolveStatus::Converged : SolveStatus::Stalled;
  report.status = sys.status;
  report.system_report = std::move(sys);
  return report;
}

}  // namespace pohoflow
