// pohoflow: the 3D cubic Schroedinger system on S_{m1} x S_{m2} in the
// focusing-repulsive regime (mu_i > 0, beta < 0), its component functionals,
// the scalar ground state omega from radial shooting, and post-hoc validation
// of computed solutions.
#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "pohoflow/radial.hpp"
#include "pohoflow/scalar.hpp"
#include "pohoflow/util.hpp"

namespace pohoflow {

struct SystemParams {
  double mu1 = 1.0, mu2 = 1.0;
  double beta = -1.0;
  double m1 = 1.0, m2 = 1.0;

  /// Public-interface validation: the repulsive coupling sign is enforced.
  /// Tests may construct beta == 0 aggregates directly to exploit decoupling.
  void validate() const {
    if (!(mu1 > 0.0) || !(mu2 > 0.0))
      throw std::invalid_argument("SystemParams: mu1, mu2 must be positive");
    if (!(beta < 0.0))
      throw std::invalid_argument("SystemParams: beta must be negative (repulsive coupling)");
    if (!(m1 > 0.0) || !(m2 > 0.0))
      throw std::invalid_argument("SystemParams: masses must be positive");
  }
};

struct SystemState {
  RadialFunction u1, u2;
  SystemParams params;

  SystemState() = default;
  SystemState(RadialFunction a, RadialFunction b, SystemParams p)
      : u1(std::move(a)), u2(std::move(b)), params(p) {
    if (u1.grid.get() != u2.grid.get())
      throw std::invalid_argument("SystemState: components must share a grid");
  }

  const GridPtr& grid() const { return u1.grid; }
  void check_on_spheres(double tol = 1e-8) const {
    check_on_sphere(u1, params.m1, tol);
    check_on_sphere(u2, params.m2, tol);
  }
  void retract() {
    renormalize_mass(u1, params.m1);
    renormalize_mass(u2, params.m2);
  }
};

// ---------------------------------------------------------------------------
// Functionals. G(u1,u2) = mu1/4 u1+^4 + mu2/4 u2+^4 + beta/2 u1^2 u2^2.
// ---------------------------------------------------------------------------

inline double cross_integral(const RadialFunction& u1, const RadialFunction& u2) {
  double s = 0.0;
  for (std::size_t i = 0; i < u1.size(); ++i)
    s += u1.grid->weights[i] * u1[i] * u1[i] * u2[i] * u2[i];
  return s;
}

inline double interaction_G(const SystemState& s) {
  return 0.25 * s.params.mu1 * lp_pow_pos(s.u1, 4.0) +
         0.25 * s.params.mu2 * lp_pow_pos(s.u2, 4.0) +
         0.5 * s.params.beta * cross_integral(s.u1, s.u2);
}

inline double energy_Istar(const SystemState& s) {
  return 0.5 * (grad_norm_sq(s.u1) + grad_norm_sq(s.u2)) - interaction_G(s);
}

inline double pohozaev_Pstar(const SystemState& s) {
  return grad_norm_sq(s.u1) + grad_norm_sq(s.u2) - 3.0 * interaction_G(s);
}

/// Component functionals I_i(u) = 1/2 ||grad u||^2 - mu_i/4 ||u_+||_4^4 and
/// P_i(u) = ||grad u||^2 - 3 mu_i/4 ||u_+||_4^4.
inline std::pair<double, double> component_IP(const RadialFunction& u, double mu) {
  if (!(mu > 0.0)) throw std::invalid_argument("component_IP: mu must be positive");
  const double a = grad_norm_sq(u);
  const double q = lp_pow_pos(u, 4.0);
  return {0.5 * a - 0.25 * mu * q, a - 0.75 * mu * q};
}

// ---------------------------------------------------------------------------
// Ground state of -Laplace(omega) + omega = omega_+^3 on R^3 (radial):
// bisection shooting on omega(0) followed by a discrete Newton settle so the
// stored profile solves the grid equation to roundoff.
// ---------------------------------------------------------------------------

struct GroundState {
  RadialFunction omega;
  double mass = 0.0;
  double center_value = 0.0;
  std::array<double, 2> identities{0.0, 0.0};  // (||grad||^2/||.||^2, ||.||_4^4/||.||^2)
};

namespace detail {

enum class ShotOutcome { Crossed, TurnedUp, Reached };

/// RK4 integration of w'' + (2/r) w' = w - w_+^3 across the grid nodes.
/// Returns the outcome and fills values (trimmed after a failure event).
inline ShotOutcome shoot_cubic(const RadialGrid& grid, double s, std::vector<double>& values) {
  const std::size_t n = grid.size();
  values.assign(n, 0.0);
  values[0] = s;
  // Series start: w(r) = s + s2 r^2 + O(r^4), s2 = (s - s_+^3)/6.
  const double s2 = (s - (s > 0 ? s * s * s : 0.0)) / 6.0;
  double r = grid.nodes[1] * 0.5;
  double y = s + s2 * r * r;
  double v = 2.0 * s2 * r;
  auto f = [](double rr, double yy, double vv) {
    const double yp = yy > 0 ? yy * yy * yy : 0.0;
    return std::pair<double, double>{vv, yy - yp - 2.0 / rr * vv};
  };
  auto rk4_to = [&](double target) {
    const int sub = 2;
    const double h = (target - r) / sub;
    for (int ss = 0; ss < sub; ++ss) {
      const auto [k1y, k1v] = f(r, y, v);
      const auto [k2y, k2v] = f(r + 0.5 * h, y + 0.5 * h * k1y, v + 0.5 * h * k1v);
      const auto [k3y, k3v] = f(r + 0.5 * h, y + 0.5 * h * k2y, v + 0.5 * h * k2v);
      const auto [k4y, k4v] = f(r + h, y + h * k3y, v + h * k3v);
      y += h / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y);
      v += h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v);
      r += h;
    }
    r = target;
  };
  for (std::size_t i = 1; i < n; ++i) {
    rk4_to(grid.nodes[i]);
    values[i] = y;
    if (y < 0.0) return ShotOutcome::Crossed;
    if (v > 0.0 && y < 0.5 * s) return ShotOutcome::TurnedUp;
  }
  return ShotOutcome::Reached;
}

/// Newton iteration for the discrete problem A w + M w = M w_+^3 (Dirichlet at
/// r_max). The linearization is indefinite, so the pivoted tridiagonal solver
/// is used. Converges quadratically from the shooting profile.
inline void newton_settle_cubic(RadialFunction& w, double lambda, double mu, int max_iter = 40) {
  const auto& grid = *w.grid;
  const std::size_t n = grid.size();
  const std::size_t m = n - 1;
  for (int it = 0; it < max_iter; ++it) {
    const auto Aw = apply_stiffness(w);
    std::vector<double> rhs(m), lower(m > 0 ? m - 1 : 0), diag(m), upper(m > 0 ? m - 1 : 0);
    double res_norm = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double wi = w[i];
      const double gp = wi > 0 ? mu * wi * wi * wi : 0.0;
      const double gpp = wi > 0 ? 3.0 * mu * wi * wi : 0.0;
      const double res = Aw[i] + grid.weights[i] * (lambda * wi - gp);
      rhs[i] = -res;
      res_norm += res * res / grid.weights[i];
      double d = grid.weights[i] * (lambda - gpp) + grid.stiff_cell[i];
      if (i > 0) d += grid.stiff_cell[i - 1];
      diag[i] = d;
      if (i + 1 < m) {
        upper[i] = -grid.stiff_cell[i];
        lower[i] = -grid.stiff_cell[i];
      }
    }
    if (std::sqrt(res_norm) < 1e-13 * std::max(1.0, std::abs(w[0]))) return;
    solve_tridiag_pivot(lower, diag, upper, rhs);
    double step = 1.0;
    double max_rel = 0.0;
    for (std::size_t i = 0; i < m; ++i) max_rel = std::max(max_rel, std::abs(rhs[i]));
    if (max_rel > 0.5 * std::abs(w[0])) step = 0.5 * std::abs(w[0]) / max_rel;
    for (std::size_t i = 0; i < m; ++i) w[i] += step * rhs[i];
    w.values.back() = 0.0;
  }
}

}  // namespace detail

inline GroundState ground_state_omega(const GridPtr& grid) {
  if (grid->dimension != 3)
    throw std::invalid_argument("ground_state_omega: the cubic system lives in dimension 3");

  // Bracket the shooting parameter: crossing <=> omega(0) too large.
  std::vector<double> values;
  double lo = 1.0, hi = 0.0;
  for (double s = 2.0; s <= 64.0; s *= 2.0) {
    if (detail::shoot_cubic(*grid, s, values) == detail::ShotOutcome::Crossed) {
      hi = s;
      break;
    }
    lo = s;
  }
  if (hi == 0.0)
    throw std::runtime_error("ground_state_omega: no crossing bracket found in [1, 64]");
  for (int it = 0; it < 200 && (hi - lo) > 1e-13 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (detail::shoot_cubic(*grid, mid, values) == detail::ShotOutcome::Crossed)
      hi = mid;
    else
      lo = mid;
  }
  detail::shoot_cubic(*grid, lo, values);

  // Patch any turned-up or truncated tail with the matched e^{-r}/r decay,
  // then settle onto the discrete equation.
  RadialFunction omega(grid, values);
  {
    std::size_t cut = omega.size() - 1;
    double prev = std::abs(omega[0]);
    for (std::size_t i = 1; i < omega.size(); ++i) {
      const double cur = std::abs(omega[i]);
      if (omega[i] <= 0.0 || (cur > prev && cur < 0.05 * omega[0])) {
        cut = i;
        break;
      }
      prev = cur;
    }
    if (cut + 1 < omega.size()) {
      const double rc = grid->nodes[cut - 1];
      const double yc = omega[cut - 1];
      for (std::size_t i = cut; i + 1 < omega.size(); ++i) {
        const double r = grid->nodes[i];
        omega[i] = yc * (rc / r) * std::exp(-(r - rc));
      }
      omega.values.back() = 0.0;
    }
  }
  detail::newton_settle_cubic(omega, 1.0, 1.0);

  GroundState gs;
  gs.mass = mass(omega);
  gs.center_value = omega[0];
  gs.identities = {grad_norm_sq(omega) / gs.mass, lp_pow(omega, 4.0) / gs.mass};
  gs.omega = std::move(omega);
  if (std::abs(gs.identities[0] - 3.0) > 1e-3 || std::abs(gs.identities[1] - 4.0) > 1e-3)
    throw std::runtime_error(
        "ground_state_omega: identity ratios off (3,4) beyond 1e-3; refine the grid");
  return gs;
}

/// Closed forms from the dilated ground state u(lambda; x): the multiplier
/// lambda and the component critical level b_i for given (m_i, mu_i).
inline std::pair<double, double> scalar_b_i(double mi, double mui, const GroundState& gs) {
  if (!(mi > 0.0) || !(mui > 0.0))
    throw std::invalid_argument("scalar_b_i: mass and coupling must be positive");
  const double lam_sqrt = gs.mass / (mui * mi);
  const double lambda = lam_sqrt * lam_sqrt;
  const double bi = 0.5 * gs.mass * gs.mass / (mui * mui * mi);
  return {lambda, bi};
}

/// The dilated ground state u(lambda; x) = (sqrt(lambda)/sqrt(mu)) ... on the
/// grid, renormalized to mass m: the unique critical point of I_i on S_m.
inline RadialFunction omega_rescaled(const GroundState& gs, double mi, double mui) {
  const auto [lambda, bi] = scalar_b_i(mi, mui, gs);
  (void)bi;
  const double t = std::sqrt(lambda);
  RadialFunction u = scale(gs.omega, t);  // t^{3/2} omega(t x): mass-preserving dilation
  // amplitude factor: u(lambda;x) = sqrt(lambda/mu) omega(sqrt(lambda) x)
  //                               = lambda^{-1/4} mu^{-1/2} * [t^{3/2} omega(t x)]
  for (double& v : u.values) v *= std::pow(lambda, -0.25) / std::sqrt(mui);
  renormalize_mass(u, mi);
  return u;
}

// ---------------------------------------------------------------------------
// Constrained gradient on the product sphere.
// ---------------------------------------------------------------------------

struct SystemGradient {
  RadialFunction grad1, grad2;
  double lambda1 = 0.0, lambda2 = 0.0;
};

inline SystemGradient system_gradient(const SystemState& s) {
  s.check_on_spheres();
  const auto& grid = s.grid();
  const std::size_t n = grid->size();
  const auto& w = grid->weights;
  const double X = cross_integral(s.u1, s.u2);

  SystemGradient out;
  auto component = [&](const RadialFunction& ui, const RadialFunction& uj, double mu, double mi,
                       RadialFunction& grad, double& lambda) {
    const auto Au = apply_stiffness(ui);
    const double gpair = mu * lp_pow_pos(ui, 4.0) + s.params.beta * X;
    lambda = (gpair - grad_norm_sq(ui)) / mi;
    std::vector<double> rhs(n, 0.0), rhs_u(n, 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const double up = ui[i] > 0 ? ui[i] : 0.0;
      const double gi = mu * up * up * up + s.params.beta * ui[i] * uj[i] * uj[i];
      rhs[i] = Au[i] + w[i] * (lambda * ui[i] - gi);
      rhs_u[i] = w[i] * ui[i];
    }
    RadialFunction z = detail::solve_h1_assembled(grid, std::move(rhs), 1.0);
    RadialFunction y = detail::solve_h1_assembled(grid, std::move(rhs_u), 1.0);
    const double sigma = inner_l2(z, ui) / inner_l2(y, ui);
    grad = axpy(z, -sigma, y);
  };
  component(s.u1, s.u2, s.params.mu1, s.params.m1, out.grad1, out.lambda1);
  component(s.u2, s.u1, s.params.mu2, s.params.m2, out.grad2, out.lambda2);
  return out;
}

// ---------------------------------------------------------------------------
// Validation of computed solutions: the exact identities, multiplier signs,
// positivity and exponential decay. Reports, never throws.
// ---------------------------------------------------------------------------

struct SystemReport {
  SystemState state;
  double lambda1 = 0.0, lambda2 = 0.0;
  double energy = 0.0;
  double pohozaev_residual = 0.0;
  std::array<double, 3> identity_residuals{0.0, 0.0, 0.0};
  std::array<bool, 2> positivity{false, false};
  std::array<double, 2> decay_rates{0.0, 0.0};
  std::array<bool, 2> decay_matches_lambda{false, false};
  double gradient_dual_norm = 0.0;
  SolveStatus status = SolveStatus::Flowing;
};

inline SystemReport validate_solution(const SystemState& s, double lambda1, double lambda2,
                                      double c) {
  SystemReport rep;
  rep.state = s;
  rep.lambda1 = lambda1;
  rep.lambda2 = lambda2;
  rep.energy = c;
  rep.pohozaev_residual = pohozaev_Pstar(s);

  const double K = grad_norm_sq(s.u1) + grad_norm_sq(s.u2);
  const double G = interaction_G(s);
  const double scale_c = std::max(std::abs(c), 1e-30);
  rep.identity_residuals[0] = std::abs(K - 6.0 * c) / (6.0 * scale_c);
  rep.identity_residuals[1] = std::abs(G - 2.0 * c) / (2.0 * scale_c);
  rep.identity_residuals[2] =
      std::abs(lambda1 * s.params.m1 + lambda2 * s.params.m2 - 2.0 * c) / (2.0 * scale_c);

  auto check_pos = [](const RadialFunction& u) {
    double mn = 0.0, mx = 0.0;
    for (const double v : u.values) {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    return mn > -1e-8 * std::max(mx, 1e-300);
  };
  rep.positivity = {check_pos(s.u1), check_pos(s.u2)};
  rep.decay_rates = {fit_decay_rate(s.u1), fit_decay_rate(s.u2)};
  for (int i = 0; i < 2; ++i) {
    const double lam = i == 0 ? lambda1 : lambda2;
    if (lam > 0.0) {
      const double target = std::sqrt(lam);
      rep.decay_matches_lambda[i] = std::abs(rep.decay_rates[i] - target) <= 0.10 * target;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// SystemProblem: the product-sphere functional presented to the deformation
// engine. The augmented coordinate dilates both components jointly; all
// quartic terms scale as e^{3 theta}, so no resampling is needed.
// ---------------------------------------------------------------------------

class SystemProblem {
 public:
  using State = SystemState;

  SystemProblem(GridPtr grid, SystemParams params, bool allow_beta_zero = false)
      : grid_(std::move(grid)), params_(params) {
    if (!allow_beta_zero) params_.validate();
    if (grid_->dimension != 3)
      throw std::invalid_argument("SystemProblem: the system lives in dimension 3");
  }

  const GridPtr& grid() const { return grid_; }
  const SystemParams& params() const { return params_; }

  struct Split {
    double A = 0.0;  // ||grad u1||^2 + ||grad u2||^2
    double G = 0.0;  // int G(u1, u2)
  };
  Split split(const State& s) const {
    return {grad_norm_sq(s.u1) + grad_norm_sq(s.u2), interaction_G(s)};
  }

  double J(double theta, const State& s) const {
    const auto sp = split(s);
    return 0.5 * std::exp(2.0 * theta) * sp.A - std::exp(3.0 * theta) * sp.G;
  }
  double P_dilated(double theta, const State& s) const {
    const auto sp = split(s);
    return std::exp(2.0 * theta) * sp.A - 3.0 * std::exp(3.0 * theta) * sp.G;
  }
  double energy(const State& s) const { return energy_Istar(s); }
  double pohozaev(const State& s) const { return pohozaev_Pstar(s); }

  void check_state(const State& s) const { s.check_on_spheres(); }
  void retract(State& s) const { s.retract(); }

  State dilate(const State& s, double t) const {
    return State(scale(s.u1, t), scale(s.u2, t), s.params);
  }
  State axpy_state(const State& s, double a, const State& v) const {
    return State(axpy(s.u1, a, v.u1), axpy(s.u2, a, v.u2), s.params);
  }
  double l2_dist(const State& a, const State& b) const {
    return std::hypot(l2_distance(a.u1, b.u1), l2_distance(a.u2, b.u2));
  }

  struct MetricGradient {
    double kappa = 0.0;
    State v;
    double v_norm_sq = 0.0;
    double lambda1 = 0.0, lambda2 = 0.0;
  };

  MetricGradient metric_gradient(double theta, const State& s) const {
    const std::size_t n = grid_->size();
    const auto& w = grid_->weights;
    const double e2 = std::exp(2.0 * theta);
    const double e3 = std::exp(3.0 * theta);
    const double X = cross_integral(s.u1, s.u2);

    MetricGradient out;
    out.kappa = P_dilated(theta, s);
    RadialFunction v1(grid_), v2(grid_);
    auto component = [&](const RadialFunction& ui, const RadialFunction& uj, double mu, double mi,
                         RadialFunction& v, double& lambda) {
      const auto Au = apply_stiffness(ui);
      const double gpair = e3 * (mu * lp_pow_pos(ui, 4.0) + params_.beta * X);
      lambda = (gpair - e2 * grad_norm_sq(ui)) / mi;
      std::vector<double> rhs(n, 0.0), rhs_u(n, 0.0);
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const double up = ui[i] > 0 ? ui[i] : 0.0;
        const double gi = e3 * (mu * up * up * up + params_.beta * ui[i] * uj[i] * uj[i]);
        rhs[i] = e2 * Au[i] + w[i] * (lambda * ui[i] - gi);
        rhs_u[i] = w[i] * ui[i];
      }
      RadialFunction z = solve_theta_metric(std::move(rhs), e2);
      RadialFunction y = solve_theta_metric(std::move(rhs_u), e2);
      const double sigma = inner_l2(z, ui) / inner_l2(y, ui);
      v = axpy(z, -sigma, y);
    };
    component(s.u1, s.u2, params_.mu1, params_.m1, v1, out.lambda1);
    component(s.u2, s.u1, params_.mu2, params_.m2, v2, out.lambda2);
    out.v_norm_sq = e2 * (grad_norm_sq(v1) + grad_norm_sq(v2)) + mass(v1) + mass(v2);
    out.v = State(std::move(v1), std::move(v2), s.params);
    return out;
  }

  double metric_norm_sq(double theta, double kappa, const State& v) const {
    const double e2 = std::exp(2.0 * theta);
    return kappa * kappa + e2 * (grad_norm_sq(v.u1) + grad_norm_sq(v.u2)) + mass(v.u1) +
           mass(v.u2);
  }

  double metric_dist(double theta_a, const State& a, double theta_b, const State& b) const {
    const double tmid = 0.5 * (theta_a + theta_b);
    const double dth = theta_a - theta_b;
    RadialFunction d1 = axpy(a.u1, -1.0, b.u1);
    RadialFunction d2 = axpy(a.u2, -1.0, b.u2);
    return std::sqrt(dth * dth +
                     std::exp(2.0 * tmid) * (grad_norm_sq(d1) + grad_norm_sq(d2)) + mass(d1) +
                     mass(d2));
  }

 private:
  RadialFunction solve_theta_metric(std::vector<double> rhs, double e2) const {
    const std::size_t n = grid_->size();
    const std::size_t m = n - 1;
    std::vector<double> diag(m), off(m > 0 ? m - 1 : 0);
    const auto& cells = grid_->stiff_cell;
    const auto& w = grid_->weights;
    for (std::size_t i = 0; i < m; ++i) {
      double d = w[i] + e2 * cells[i];
      if (i > 0) d += e2 * cells[i - 1];
      diag[i] = d;
      if (i + 1 < m) off[i] = -e2 * cells[i];
    }
    rhs.resize(m);
    solve_tridiag_spd(std::move(diag), off, rhs);
    RadialFunction out(grid_);
    for (std::size_t i = 0; i < m; ++i) out[i] = rhs[i];
    out.values.back() = 0.0;
    return out;
  }

  GridPtr grid_;
  SystemParams params_;
};

// ---------------------------------------------------------------------------
// Critical-point refinement for the system.
//
// The reduced functional is R2(u1, u2) = max over independent component
// dilations (t1, t2) of I_*((u1)_{t1}, (u2)_{t2}). Writing t_i = e^{theta_i},
// theta_1 = sigma, theta_2 = sigma + delta, all self-interaction terms are
// closed forms and the cross term needs one overlap integral
// X(delta) = int u1(y)^2 u2(e^delta y)^2 dy per delta:
//   F = 1/2 e^{2 sigma} Atil(delta) - e^{3 sigma} Btil(delta),
//   Atil = A1 + e^{2 delta} A2,
//   Btil = B1 + e^{3 delta} (B2 + beta/2 X(delta)),  B_i = mu_i/4 ||u_i+||_4^4.
// For fixed delta the sigma-maximum is explicit; the outer 1D maximization in
// delta is a bracketed golden-section search. At the (sigma, delta) maximum
// the joint Pohozaev value vanishes identically, and preconditioned
// tangential descent of the reduced value converges to the vector critical
// point. Dilations are periodically folded back into the profiles so the
// reported state itself carries the residuals.
// ---------------------------------------------------------------------------

struct SystemCritical {
  SystemState state;
  double lambda1 = 0.0, lambda2 = 0.0;
  double energy = 0.0;
  double pohozaev = 0.0;
  double dual_norm = 0.0;    // full product-space dual norm
  double slice_dual = 0.0;   // dual norm orthogonal to both fiber generators
  double fiber_defect = 0.0; // measured discretization defect along the fibers
  double theta1 = 0.0, theta2 = 0.0;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

struct SystemFiber {
  double sigma = 0.0, delta = 0.0;
  double value = 0.0;
  bool valid = false;
};

/// Closed-form sigma maximum for fixed delta; value = Atil^3 / (54 Btil^2).
inline SystemFiber system_fiber_at(double A1, double A2, double B1, double B2, double beta,
                                   double X, double delta) {
  SystemFiber out;
  out.delta = delta;
  const double e2 = std::exp(2.0 * delta), e3 = std::exp(3.0 * delta);
  const double At = A1 + e2 * A2;
  const double Bt = B1 + e3 * (B2 + 0.5 * beta * X);
  if (!(Bt > 0.0) || !(At > 0.0)) return out;
  out.sigma = std::log(At / (3.0 * Bt));
  out.value = At * At * At / (54.0 * Bt * Bt);
  out.valid = true;
  return out;
}

/// Maximizes the reduced fiber value over delta by golden-section on an
/// adaptively expanded bracket centered at `center`.
template <class XFun>
inline SystemFiber system_fiber_max(double A1, double A2, double B1, double B2, double beta,
                                    const XFun& X, double center) {
  auto probe = [&](double d) {
    return system_fiber_at(A1, A2, B1, B2, beta, X(d), d);
  };
  double lo = center - 0.6, hi = center + 0.6;
  SystemFiber flo = probe(lo), fhi = probe(hi), fc = probe(center);
  if (!fc.valid) return fc;
  // expand until the center beats both ends (or give up at a wide bracket)
  for (int k = 0; k < 12 && ((flo.valid && flo.value >= fc.value) ||
                             (fhi.valid && fhi.value >= fc.value));
       ++k) {
    if (flo.valid && flo.value >= fc.value) {
      if (flo.value > fc.value) { fc = flo; center = lo; }
      lo -= 0.8;
      flo = probe(lo);
    }
    if (fhi.valid && fhi.value >= fc.value) {
      if (fhi.value > fc.value) { fc = fhi; center = hi; }
      hi += 0.8;
      fhi = probe(hi);
    }
  }
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = lo, b = hi;
  double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
  SystemFiber f1 = probe(x1), f2 = probe(x2);
  for (int it = 0; it < 90 && (b - a) > 1e-13; ++it) {
    const double v1 = f1.valid ? f1.value : -std::numeric_limits<double>::infinity();
    const double v2 = f2.valid ? f2.value : -std::numeric_limits<double>::infinity();
    if (v1 < v2) {
      a = x1; x1 = x2; f1 = f2;
      x2 = a + gr * (b - a); f2 = probe(x2);
    } else {
      b = x2; x2 = x1; f2 = f1;
      x1 = b - gr * (b - a); f1 = probe(x1);
    }
  }
  SystemFiber best = probe(0.5 * (a + b));
  return best;
}

/// Bordered Newton for the anchored vector critical point: plain
/// Euler-Lagrange residuals with per-component fiber multipliers nu_i, the
/// two mass constraints, the plain joint Pohozaev value pinned to zero, and
/// the relative fiber derivative pinned to zero. The converged state carries
/// P_* = 0 identically; the whole gradient lies in the span of the two fiber
/// duals (the second-order discretization defect).
inline bool newton_system_anchored(const SystemProblem& prob, SystemState& s, double& lambda1,
                                   double& lambda2, double& nu1, double& nu2,
                                   int max_iter = 40) {
  const auto& grid = *prob.grid();
  const auto& pr = prob.params();
  const std::size_t n = grid.size();
  const std::size_t dim = n - 1;
  const auto& w = grid.weights;

  auto residual_norm = [&](const SystemState& ss, double l1, double l2, double n1, double n2) {
    const auto Au1 = apply_stiffness(ss.u1);
    const auto Au2 = apply_stiffness(ss.u2);
    RadialFunction f1 = fiber_generator(ss.u1);
    RadialFunction f2 = fiber_generator(ss.u2);
    const auto Af1 = apply_stiffness(f1);
    const auto Af2 = apply_stiffness(f2);
    double fn = 0.0, rrel = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double u1p = ss.u1[i] > 0 ? ss.u1[i] : 0.0;
      const double u2p = ss.u2[i] > 0 ? ss.u2[i] : 0.0;
      const double g1 = pr.mu1 * u1p * u1p * u1p + pr.beta * ss.u1[i] * ss.u2[i] * ss.u2[i];
      const double g2 = pr.mu2 * u2p * u2p * u2p + pr.beta * ss.u2[i] * ss.u1[i] * ss.u1[i];
      const double F1 = Au1[i] + w[i] * (l1 * ss.u1[i] - g1) - n1 * (Af1[i] + w[i] * f1[i]);
      const double F2 = Au2[i] + w[i] * (l2 * ss.u2[i] - g2) - n2 * (Af2[i] + w[i] * f2[i]);
      fn += (F1 * F1 + F2 * F2) / w[i];
      rrel += (Au1[i] - w[i] * g1) * f1[i] - (Au2[i] - w[i] * g2) * f2[i];
    }
    const double rm1 = 0.5 * (mass(ss.u1) - pr.m1);
    const double rm2 = 0.5 * (mass(ss.u2) - pr.m2);
    const double rp = pohozaev_Pstar(ss);
    return std::sqrt(fn + rm1 * rm1 + rm2 * rm2 + rp * rp + rrel * rrel);
  };

  for (int it = 0; it < max_iter; ++it) {
    const auto Au1 = apply_stiffness(s.u1);
    const auto Au2 = apply_stiffness(s.u2);
    RadialFunction f1 = fiber_generator(s.u1);
    RadialFunction f2 = fiber_generator(s.u2);
    const auto Af1 = apply_stiffness(f1);
    const auto Af2 = apply_stiffness(f2);

    auto g1 = [&](std::size_t i) {
      const double up = s.u1[i] > 0 ? s.u1[i] : 0.0;
      return pr.mu1 * up * up * up + pr.beta * s.u1[i] * s.u2[i] * s.u2[i];
    };
    auto g2 = [&](std::size_t i) {
      const double up = s.u2[i] > 0 ? s.u2[i] : 0.0;
      return pr.mu2 * up * up * up + pr.beta * s.u2[i] * s.u1[i] * s.u1[i];
    };

    std::vector<double> F1(dim), F2(dim);
    double fnorm = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double pen1 = Af1[i] + w[i] * f1[i];
      const double pen2 = Af2[i] + w[i] * f2[i];
      F1[i] = Au1[i] + w[i] * (lambda1 * s.u1[i] - g1(i)) - nu1 * pen1;
      F2[i] = Au2[i] + w[i] * (lambda2 * s.u2[i] - g2(i)) - nu2 * pen2;
      fnorm += (F1[i] * F1[i] + F2[i] * F2[i]) / w[i];
    }
    fnorm = std::sqrt(fnorm);
    const double r_m1 = 0.5 * (mass(s.u1) - pr.m1);
    const double r_m2 = 0.5 * (mass(s.u2) - pr.m2);
    const double r_P = pohozaev_Pstar(s);
    // relative fiber derivative <rho1, f1> - <rho2, f2>
    double r_rel = 0.0;
    for (std::size_t i = 0; i < dim; ++i)
      r_rel += (Au1[i] - w[i] * g1(i)) * f1[i] - (Au2[i] - w[i] * g2(i)) * f2[i];
    const double gscale = std::max(1.0, grad_norm_sq(s.u1) + grad_norm_sq(s.u2));
    if (fnorm < 1e-12 * gscale && std::abs(r_m1) < 1e-13 * pr.m1 &&
        std::abs(r_m2) < 1e-13 * pr.m2 && std::abs(r_P) < 1e-13 * gscale &&
        std::abs(r_rel) < 1e-12 * gscale)
      return true;

    // interleaved banded core: index 2i <-> u1 node i, 2i+1 <-> u2 node i
    BandedMatrix core(2 * dim, 2, 2);
    for (std::size_t i = 0; i < dim; ++i) {
      const double u1p = s.u1[i] > 0 ? s.u1[i] : 0.0;
      const double u2p = s.u2[i] > 0 ? s.u2[i] : 0.0;
      const double dg1_du1 = 3.0 * pr.mu1 * u1p * u1p + pr.beta * s.u2[i] * s.u2[i];
      const double dg2_du2 = 3.0 * pr.mu2 * u2p * u2p + pr.beta * s.u1[i] * s.u1[i];
      const double cross = 2.0 * pr.beta * s.u1[i] * s.u2[i];
      double d1 = w[i] * (lambda1 - dg1_du1) + grid.stiff_cell[i];
      double d2 = w[i] * (lambda2 - dg2_du2) + grid.stiff_cell[i];
      if (i > 0) {
        d1 += grid.stiff_cell[i - 1];
        d2 += grid.stiff_cell[i - 1];
      }
      core.at(2 * i, 2 * i) = d1;
      core.at(2 * i + 1, 2 * i + 1) = d2;
      core.at(2 * i, 2 * i + 1) = -w[i] * cross;
      core.at(2 * i + 1, 2 * i) = -w[i] * cross;
      if (i + 1 < dim) {
        core.at(2 * i, 2 * (i + 1)) = -grid.stiff_cell[i];
        core.at(2 * (i + 1), 2 * i) = -grid.stiff_cell[i];
        core.at(2 * i + 1, 2 * (i + 1) + 1) = -grid.stiff_cell[i];
        core.at(2 * (i + 1) + 1, 2 * i + 1) = -grid.stiff_cell[i];
      }
    }

    // five right-hand sides: -F, and the four border columns
    std::vector<std::vector<double>> rhs(5, std::vector<double>(2 * dim, 0.0));
    for (std::size_t i = 0; i < dim; ++i) {
      rhs[0][2 * i] = -F1[i];
      rhs[0][2 * i + 1] = -F2[i];
      rhs[1][2 * i] = w[i] * s.u1[i];
      rhs[2][2 * i + 1] = w[i] * s.u2[i];
      rhs[3][2 * i] = Af1[i] + w[i] * f1[i];
      rhs[4][2 * i + 1] = Af2[i] + w[i] * f2[i];
    }
    core.factor();
    for (auto& b : rhs) core.solve(b);

    // border rows: mass1, mass2, joint Pohozaev, relative fiber derivative
    std::vector<std::vector<double>> rows(4, std::vector<double>(2 * dim, 0.0));
    for (std::size_t i = 0; i < dim; ++i) {
      const double u1p = s.u1[i] > 0 ? s.u1[i] : 0.0;
      const double u2p = s.u2[i] > 0 ? s.u2[i] : 0.0;
      rows[0][2 * i] = w[i] * s.u1[i];
      rows[1][2 * i + 1] = w[i] * s.u2[i];
      rows[2][2 * i] = 2.0 * Au1[i] - 3.0 * w[i] * g1(i);
      rows[2][2 * i + 1] = 2.0 * Au2[i] - 3.0 * w[i] * g2(i);
      const double dg1_du1 = 3.0 * pr.mu1 * u1p * u1p + pr.beta * s.u2[i] * s.u2[i];
      const double dg2_du2 = 3.0 * pr.mu2 * u2p * u2p + pr.beta * s.u1[i] * s.u1[i];
      const double cross = 2.0 * pr.beta * s.u1[i] * s.u2[i];
      // d r_rel / du1 = A f1 - M (dg1/du1) f1 + M (dg2/du1) f2-side sign
      rows[3][2 * i] = Af1[i] - w[i] * dg1_du1 * f1[i] + w[i] * cross * f2[i];
      rows[3][2 * i + 1] = -(Af2[i] - w[i] * dg2_du2 * f2[i]) - w[i] * cross * f1[i];
    }
    const std::array<double, 4> neg_res{-r_m1, -r_m2, -r_P, -r_rel};

    // Schur complement on (dlambda1, dlambda2, dnu1, dnu2): columns of the
    // border in delta-u are (-x1, -x2, +x3, +x4) by the sign of F's partials.
    double Smat[4][4];
    double Srhs[4];
    auto dot = [&](const std::vector<double>& a, const std::vector<double>& b) {
      double acc = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
      return acc;
    };
    for (int r = 0; r < 4; ++r) {
      Smat[r][0] = -dot(rows[r], rhs[1]);
      Smat[r][1] = -dot(rows[r], rhs[2]);
      Smat[r][2] = dot(rows[r], rhs[3]);
      Smat[r][3] = dot(rows[r], rhs[4]);
      Srhs[r] = neg_res[r] - dot(rows[r], rhs[0]);
    }
    // tiny Gaussian elimination with partial pivoting
    std::array<int, 4> piv{0, 1, 2, 3};
    std::array<double, 4> sol{};
    {
      double a[4][5];
      for (int r = 0; r < 4; ++r) {
        for (int c2 = 0; c2 < 4; ++c2) a[r][c2] = Smat[r][c2];
        a[r][4] = Srhs[r];
      }
      for (int k = 0; k < 4; ++k) {
        int p = k;
        for (int r = k + 1; r < 4; ++r)
          if (std::abs(a[r][k]) > std::abs(a[p][k])) p = r;
        if (a[p][k] == 0.0) return false;
        if (p != k)
          for (int c2 = k; c2 < 5; ++c2) std::swap(a[k][c2], a[p][c2]);
        for (int r = k + 1; r < 4; ++r) {
          const double mfac = a[r][k] / a[k][k];
          for (int c2 = k; c2 < 5; ++c2) a[r][c2] -= mfac * a[k][c2];
        }
      }
      for (int k = 4; k-- > 0;) {
        double acc = a[k][4];
        for (int c2 = k + 1; c2 < 4; ++c2) acc -= a[k][c2] * sol[c2];
        sol[k] = acc / a[k][k];
      }
      (void)piv;
    }
    const double dl1 = sol[0], dl2 = sol[1], dn1 = sol[2], dn2 = sol[3];

    double umax = 0.0, dmax = 0.0;
    std::vector<double> du(2 * dim);
    for (std::size_t i = 0; i < 2 * dim; ++i) {
      du[i] = rhs[0][i] - dl1 * rhs[1][i] - dl2 * rhs[2][i] + dn1 * rhs[3][i] + dn2 * rhs[4][i];
      dmax = std::max(dmax, std::abs(du[i]));
    }
    for (std::size_t i = 0; i < dim; ++i)
      umax = std::max({umax, std::abs(s.u1[i]), std::abs(s.u2[i])});
    double damp = dmax > 0.4 * umax ? 0.4 * umax / dmax : 1.0;
    // backtrack on the residual norm, tolerating near-singular plateaus
    const double base = residual_norm(s, lambda1, lambda2, nu1, nu2);
    bool moved = false;
    for (int back = 0; back < 24; ++back) {
      SystemState trial = s;
      for (std::size_t i = 0; i < dim; ++i) {
        trial.u1[i] += damp * du[2 * i];
        trial.u2[i] += damp * du[2 * i + 1];
      }
      trial.u1.values.back() = 0.0;
      trial.u2.values.back() = 0.0;
      const double l1t = lambda1 + damp * dl1, l2t = lambda2 + damp * dl2;
      const double n1t = nu1 + damp * dn1, n2t = nu2 + damp * dn2;
      const double res = residual_norm(trial, l1t, l2t, n1t, n2t);
      if (res < base || (back >= 8 && res <= base * 1.02)) {
        s = std::move(trial);
        lambda1 = l1t;
        lambda2 = l2t;
        nu1 = n1t;
        nu2 = n2t;
        moved = true;
        break;
      }
      damp *= 0.5;
    }
    if (!moved) return false;
    // quadratic phase over: the update is at roundoff level
    if (damp == 1.0 && dmax <= 1e-12 * std::max(1.0, umax)) return true;
  }
  return false;
}

}  // namespace detail

inline SystemCritical refine_system_critical(const SystemProblem& prob, SystemState state,
                                             const RefineOptions& opt = {}) {
  prob.retract(state);
  const auto& grid = *prob.grid();
  const auto& params = prob.params();
  SystemCritical res;
  double step = 1.0;
  int it = 0;
  bool stalled = false;

  struct Fiber {
    detail::SystemFiber fb;
    double A1, A2;
  };

  auto fiber_of = [&](const SystemState& s, double center) -> Fiber {
    const double A1 = grad_norm_sq(s.u1), A2 = grad_norm_sq(s.u2);
    const double B1 = 0.25 * params.mu1 * lp_pow_pos(s.u1, 4.0);
    const double B2 = 0.25 * params.mu2 * lp_pow_pos(s.u2, 4.0);
    PchipInterpolant u2i(grid.nodes, s.u2.values);
    auto X = [&](double d) {
      const double ed = std::exp(d);
      double acc = 0.0;
      for (std::size_t i = 0; i < grid.size(); ++i) {
        const double rq = ed * grid.nodes[i];
        const double v2 = rq >= grid.r_max() ? 0.0 : u2i(rq);
        acc += grid.weights[i] * s.u1[i] * s.u1[i] * v2 * v2;
      }
      return acc;
    };
    return {detail::system_fiber_max(A1, A2, B1, B2, params.beta, X, center), A1, A2};
  };

  double delta_center = 0.0;
  Fiber cur = fiber_of(state, delta_center);
  if (!cur.fb.valid) {
    res.state = std::move(state);
    res.converged = false;
    return res;
  }

  auto gradient_at = [&](const SystemState& s, double th1, double th2, RadialFunction& v1,
                         RadialFunction& v2, double& l1, double& l2) -> double {
    const std::size_t n = grid.size();
    const auto& w = grid.weights;
    const double d = th2 - th1;
    PchipInterpolant u2i(grid.nodes, s.u2.values);
    PchipInterpolant u1i(grid.nodes, s.u1.values);
    std::vector<double> u2d(n, 0.0), u1d(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double r2 = std::exp(d) * grid.nodes[i];
      u2d[i] = r2 >= grid.r_max() ? 0.0 : u2i(r2);
      const double r1 = std::exp(-d) * grid.nodes[i];
      u1d[i] = r1 >= grid.r_max() ? 0.0 : u1i(r1);
    }
    double Xd = 0.0;  // int w1^2 w2^2 at the dilated pair
    for (std::size_t i = 0; i < n; ++i)
      Xd += w[i] * s.u1[i] * s.u1[i] * u2d[i] * u2d[i];
    Xd *= std::exp(3.0 * th2);

    auto component = [&](const RadialFunction& ui, const std::vector<double>& other_sq_src,
                         double mu, double mi, double thi, double thj, RadialFunction& v,
                         double& lambda) -> double {
      const double e2 = std::exp(2.0 * thi), e3i = std::exp(3.0 * thi),
                   e3j = std::exp(3.0 * thj);
      const auto Au = apply_stiffness(ui);
      lambda = (e3i * mu * lp_pow_pos(ui, 4.0) + params.beta * Xd - e2 * grad_norm_sq(ui)) / mi;
      std::vector<double> rhs(n, 0.0), rhs_u(n, 0.0);
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const double up = ui[i] > 0 ? ui[i] : 0.0;
        const double gi = e3i * mu * up * up * up +
                          params.beta * e3j * ui[i] * other_sq_src[i] * other_sq_src[i];
        rhs[i] = e2 * Au[i] + w[i] * (lambda * ui[i] - gi);
        rhs_u[i] = w[i] * ui[i];
      }
      // theta-weighted preconditioner (e^{2 theta_i} A + M)
      const std::size_t m = n - 1;
      std::vector<double> diag(m), off(m - 1);
      for (std::size_t i = 0; i < m; ++i) {
        double dd = w[i] + e2 * grid.stiff_cell[i];
        if (i > 0) dd += e2 * grid.stiff_cell[i - 1];
        diag[i] = dd;
        if (i + 1 < m) off[i] = -e2 * grid.stiff_cell[i];
      }
      std::vector<double> z = rhs; z.resize(m);
      std::vector<double> y = rhs_u; y.resize(m);
      {
        auto dcopy = diag;
        solve_tridiag_spd(std::move(dcopy), off, z);
        solve_tridiag_spd(std::move(diag), off, y);
      }
      RadialFunction zf(ui.grid), yf(ui.grid);
      for (std::size_t i = 0; i < m; ++i) { zf[i] = z[i]; yf[i] = y[i]; }
      const double sigma = inner_l2(zf, ui) / inner_l2(yf, ui);
      v = axpy(zf, -sigma, yf);
      return e2 * grad_norm_sq(v) + mass(v);
    };

    double l1_ = 0, l2_ = 0;
    const double n1 = component(s.u1, u2d, params.mu1, params.m1, th1, th2, v1, l1_);
    const double n2 = component(s.u2, u1d, params.mu2, params.m2, th2, th1, v2, l2_);
    l1 = l1_; l2 = l2_;
    return n1 + n2;
  };

  auto theta_inner = [](double theta, const RadialFunction& a, const RadialFunction& b) {
    return std::exp(2.0 * theta) * grad_inner(a, b) + inner_l2(a, b);
  };

  bool newton_done = false;
  double slice_dual = std::numeric_limits<double>::infinity();
  double last_attempt_slice = std::numeric_limits<double>::infinity();
  const double newton_handoff = std::max(
      opt.tol_grad,
      3e-2 * std::sqrt(std::max(1.0, grad_norm_sq(state.u1) + grad_norm_sq(state.u2))));

  auto try_newton = [&](SystemState folded) -> bool {
    const auto sg0 = system_gradient(folded);
    double l1 = sg0.lambda1, l2 = sg0.lambda2, n1 = 0.0, n2 = 0.0;
    if (detail::newton_system_anchored(prob, folded, l1, l2, n1, n2)) {
      state = std::move(folded);
      return true;
    }
    return false;
  };

  for (; it < opt.max_iterations; ++it) {
    const double th1 = cur.fb.sigma, th2 = cur.fb.sigma + cur.fb.delta;
    if (std::max(std::abs(th1), std::abs(th2)) > opt.anchor_threshold) {
      state = SystemState(renormalized(scale(state.u1, std::exp(th1)), params.m1),
                          renormalized(scale(state.u2, std::exp(th2)), params.m2), state.params);
      delta_center = 0.0;
      cur = fiber_of(state, delta_center);
      if (!cur.fb.valid) { stalled = true; break; }
      continue;
    }
    RadialFunction v1, v2;
    double l1 = 0, l2 = 0;
    gradient_at(state, th1, th2, v1, v2, l1, l2);
    // project out both discrete fiber generators
    RadialFunction f1 = fiber_generator(state.u1);
    RadialFunction f2 = fiber_generator(state.u2);
    const double c1 = theta_inner(th1, v1, f1) / theta_inner(th1, f1, f1);
    const double c2 = theta_inner(th2, v2, f2) / theta_inner(th2, f2, f2);
    RadialFunction vs1 = axpy(v1, -c1, f1);
    RadialFunction vs2 = axpy(v2, -c2, f2);
    const double vs_sq = theta_inner(th1, vs1, vs1) + theta_inner(th2, vs2, vs2);
    slice_dual = std::sqrt(std::max(vs_sq, 0.0));
    static const bool debug_refine = std::getenv("POHOFLOW_DEBUG_REFINE") != nullptr;
    if (debug_refine && it % 10 == 0)
      std::fprintf(stderr, "refine it %4d: value %.8f slice %.4e th=(%.3f,%.3f)\n", it,
                   cur.fb.value, slice_dual, th1, th2);
    if (slice_dual <= opt.tol_grad) break;

    if (slice_dual <= newton_handoff && slice_dual <= 0.5 * last_attempt_slice && it >= 4) {
      last_attempt_slice = slice_dual;
      SystemState folded(renormalized(scale(state.u1, std::exp(th1)), params.m1),
                         renormalized(scale(state.u2, std::exp(th2)), params.m2), state.params);
      if (try_newton(std::move(folded))) {
        newton_done = true;
        break;
      }
    }

    bool accepted = false;
    double s = std::min(step * 2.0, 4.0);
    for (int back = 0; back < 60; ++back) {
      SystemState trial(renormalized(axpy(state.u1, -s, vs1), params.m1),
                        renormalized(axpy(state.u2, -s, vs2), params.m2), state.params);
      Fiber ft = fiber_of(trial, cur.fb.delta);
      if (ft.fb.valid && ft.fb.value <= cur.fb.value - 0.25 * s * vs_sq) {
        state = std::move(trial);
        cur = ft;
        delta_center = ft.fb.delta;
        step = s;
        accepted = true;
        break;
      }
      s *= 0.5;
    }
    if (!accepted) { stalled = true; break; }
  }

  if (!newton_done) {
    // fold the dilations in, then one last Newton settle
    for (int pass = 0; pass < 12; ++pass) {
      if (!cur.fb.valid) break;
      const double th1 = cur.fb.sigma, th2 = cur.fb.sigma + cur.fb.delta;
      if (std::max(std::abs(th1), std::abs(th2)) <= 1e-12) break;
      state = SystemState(renormalized(scale(state.u1, std::exp(th1)), params.m1),
                          renormalized(scale(state.u2, std::exp(th2)), params.m2), state.params);
      cur = fiber_of(state, 0.0);
    }
    if (try_newton(state)) {
      newton_done = true;
      stalled = false;
    }
  }

  // Residual measurements at the final anchored state.
  const auto sg = system_gradient(state);
  res.lambda1 = sg.lambda1;
  res.lambda2 = sg.lambda2;
  res.dual_norm = std::sqrt(h1_norm_sq(sg.grad1) + h1_norm_sq(sg.grad2));
  {
    RadialFunction f1 = fiber_generator(state.u1);
    RadialFunction f2 = fiber_generator(state.u2);
    const double c1 = inner_h1(sg.grad1, f1) / h1_norm_sq(f1);
    const double c2 = inner_h1(sg.grad2, f2) / h1_norm_sq(f2);
    RadialFunction s1 = axpy(sg.grad1, -c1, f1);
    RadialFunction s2 = axpy(sg.grad2, -c2, f2);
    res.slice_dual = std::sqrt(h1_norm_sq(s1) + h1_norm_sq(s2));
    res.fiber_defect =
        std::sqrt(c1 * c1 * h1_norm_sq(f1) + c2 * c2 * h1_norm_sq(f2));
  }
  res.energy = energy_Istar(state);
  res.pohozaev = pohozaev_Pstar(state);
  const auto fb_final = fiber_of(state, 0.0);
  res.theta1 = fb_final.fb.valid ? fb_final.fb.sigma : 0.0;
  res.theta2 = fb_final.fb.valid ? fb_final.fb.sigma + fb_final.fb.delta : 0.0;
  res.state = std::move(state);
  res.iterations = it;
  res.converged = newton_done || (!stalled && slice_dual <= opt.tol_grad * 4.0);
  return res;
}

}  // namespace pohoflow
