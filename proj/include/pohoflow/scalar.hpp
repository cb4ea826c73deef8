// pohoflow: the single-equation variational model on the mass sphere
// S_m = { u : ||u||_2^2 = m }.
//
// Central objects: the energy I(u) = 1/2 ||grad u||^2 - int G(u), the
// Pohozaev functional P(u) = ||grad u||^2 - N int (g(u)u/2 - G(u)), the
// mass-preserving dilation fiber u_t(x) = t^{N/2} u(tx), and the augmented
// functional J(theta, u) = I(u_{e^theta}).
//
// For sum-of-powers nonlinearities every dilation-dependent quantity is an
// explicit function of theta and the power integrals Q_k = ||u||_{p_k}^{p_k},
// so fiber maximization and the augmented flow never resample the profile.
#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "pohoflow/nonlinearity.hpp"
#include "pohoflow/radial.hpp"
#include "pohoflow/util.hpp"

namespace pohoflow {

struct SphereConstraint {
  double m;  // prescribed mass ||u||_2^2
  explicit SphereConstraint(double mass_) : m(mass_) {
    if (!(m > 0.0)) throw std::invalid_argument("SphereConstraint: mass must be positive");
  }
};

enum class SolveStatus { Converged, Flowing, Stalled };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::Flowing: return "flowing";
    default: return "stalled";
  }
}

struct CriticalPointReport {
  RadialFunction solution;
  double lambda = 0.0;
  double energy = 0.0;
  double pohozaev_residual = 0.0;
  double gradient_dual_norm = 0.0;
  double decay_rate = 0.0;
  double mass = 0.0;
  SolveStatus status = SolveStatus::Flowing;
};

// ---------------------------------------------------------------------------
// Dilation coefficients: everything the fiber calculus needs about u.
// ---------------------------------------------------------------------------

struct DilationData {
  double A = 0.0;          // ||grad u||_2^2
  std::vector<double> Q;   // ||u||_{p_k}^{p_k} (positive part if configured)
};

inline DilationData dilation_data(const PowerNonlinearity& spec, const RadialFunction& u) {
  return {grad_norm_sq(u), power_integrals(spec, u)};
}

/// J(theta, u) = 1/2 e^{2 theta} A - sum_k (a_k/p_k) e^{q_k theta} Q_k,
/// q_k = (p_k - 2) N / 2.
inline double dilated_energy(const PowerNonlinearity& spec, const DilationData& d, double theta) {
  const int N = spec.dimension;
  double s = 0.5 * std::exp(2.0 * theta) * d.A;
  for (std::size_t k = 0; k < spec.terms.size(); ++k) {
    const auto& t = spec.terms[k];
    s -= t.a / t.p * std::exp(0.5 * (t.p - 2.0) * N * theta) * d.Q[k];
  }
  return s;
}

/// P(u_{e^theta}) = d/dtheta J(theta, u).
inline double dilated_pohozaev(const PowerNonlinearity& spec, const DilationData& d, double theta) {
  const int N = spec.dimension;
  double s = std::exp(2.0 * theta) * d.A;
  for (std::size_t k = 0; k < spec.terms.size(); ++k) {
    const auto& t = spec.terms[k];
    s -= N * t.a * (0.5 - 1.0 / t.p) * std::exp(0.5 * (t.p - 2.0) * N * theta) * d.Q[k];
  }
  return s;
}

inline double energy_I(const RadialFunction& u, const PowerNonlinearity& spec) {
  return dilated_energy(spec, dilation_data(spec, u), 0.0);
}

inline double pohozaev_P(const RadialFunction& u, const PowerNonlinearity& spec) {
  return dilated_pohozaev(spec, dilation_data(spec, u), 0.0);
}

/// value = J(theta, u) in closed form, dtheta = P(u_{e^theta}).
inline std::pair<double, double> augmented_J(double theta, const RadialFunction& u,
                                             const PowerNonlinearity& spec) {
  const auto d = dilation_data(spec, u);
  return {dilated_energy(spec, d, theta), dilated_pohozaev(spec, d, theta)};
}

// ---------------------------------------------------------------------------
// Fiber maximization: the unique root of K(t) = P(u_t) / (N t^2) along the
// dilation fiber. P(theta) = e^{2 theta} (A - sum c_k e^{(q_k - 2) theta})
// with c_k > 0 and q_k > 2, so the bracket term is strictly decreasing:
// bisection plus Newton converges unconditionally.
// ---------------------------------------------------------------------------

inline std::optional<double> fiber_argmax_theta(const PowerNonlinearity& spec,
                                                const DilationData& d) {
  const int N = spec.dimension;
  double csum = 0.0;
  for (std::size_t k = 0; k < spec.terms.size(); ++k)
    csum += N * spec.terms[k].a * (0.5 - 1.0 / spec.terms[k].p) * d.Q[k];
  if (!(csum > 0.0) || !(d.A > 0.0)) return std::nullopt;

  // Solve A = sum c_k e^{(q_k - 2) theta}; the right side is increasing in theta.
  const double theta_min = std::log(1e-6), theta_max = std::log(1e6);
  auto rhs = [&](double th) {
    double s = 0.0;
    for (std::size_t k = 0; k < spec.terms.size(); ++k) {
      const auto& t = spec.terms[k];
      const double q = 0.5 * (t.p - 2.0) * N;
      s += N * t.a * (0.5 - 1.0 / t.p) * d.Q[k] * std::exp((q - 2.0) * th);
    }
    return s;
  };
  double lo = theta_min, hi = theta_max;
  if (rhs(lo) > d.A || rhs(hi) < d.A) return std::nullopt;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (rhs(mid) < d.A) lo = mid; else hi = mid;
    if (hi - lo < 1e-15) break;
  }
  return 0.5 * (lo + hi);
}

/// Returns (t0, I(u_{t0})) for the unique fiber maximum.
inline std::pair<double, double> fiber_maximize(const RadialFunction& u,
                                                const PowerNonlinearity& spec) {
  const auto d = dilation_data(spec, u);
  if (!(mass(u) > 0.0)) throw std::invalid_argument("fiber_maximize: u must be nonzero");
  const auto theta = fiber_argmax_theta(spec, d);
  if (!theta)
    throw std::runtime_error(
        "fiber_maximize: no sign change of the fiber derivative on [1e-6, 1e6]; "
        "the grid does not resolve this profile");
  return {std::exp(*theta), dilated_energy(spec, d, *theta)};
}

// ---------------------------------------------------------------------------
// Sphere geometry
// ---------------------------------------------------------------------------

inline void renormalize_mass(RadialFunction& u, double m) {
  const double cur = mass(u);
  if (!(cur > 0.0)) throw std::invalid_argument("renormalize_mass: zero function");
  const double c = std::sqrt(m / cur);
  for (double& v : u.values) v *= c;
}

inline RadialFunction renormalized(RadialFunction u, double m) {
  renormalize_mass(u, m);
  return u;
}

inline void check_on_sphere(const RadialFunction& u, double m, double tol = 1e-8) {
  if (std::abs(mass(u) - m) > tol * m)
    throw std::invalid_argument("state is off the mass sphere beyond tolerance");
}

/// The normalization map h0(u) = sqrt(m) u_{t(u)} / ||u_{t(u)}||_2 with
/// t(u) = ||u||_2; continuous and odd, lands exactly on S_m.
inline RadialFunction normalize_h0(const RadialFunction& u, const SphereConstraint& constraint) {
  const double m2 = mass(u);
  if (!(m2 > 0.0)) throw std::invalid_argument("normalize_h0: u must be nonzero");
  RadialFunction v = scale(u, std::sqrt(m2));
  renormalize_mass(v, constraint.m);
  return v;
}

// ---------------------------------------------------------------------------
// Riemannian gradient on S_m in the H^1 metric.
//
// lambda = (<g(u), u> - ||grad u||^2) / m is the L^2-optimal multiplier; the
// preconditioned residual z = K(M rho), K = (A + M)^{-1}, is then made
// L^2-orthogonal to u by subtracting a multiple of K(M u). The result is the
// exact H^1-metric representer of dI restricted to the tangent space, so its
// H^1 norm realizes the dual norm and its pairing with tangent directions
// reproduces directional derivatives to roundoff.
// ---------------------------------------------------------------------------

struct RiemannianGradient {
  RadialFunction grad;
  double lambda = 0.0;
};

namespace detail {

/// Solves (A + c M) x = rhs with the Dirichlet node pinned; rhs given in
/// assembled (already M-weighted) form.
inline RadialFunction solve_h1_assembled(const GridPtr& grid, std::vector<double> rhs, double c) {
  const std::size_t n = grid->size();
  const std::size_t m = n - 1;
  std::vector<double> diag(m), off(m > 0 ? m - 1 : 0);
  const auto& cells = grid->stiff_cell;
  const auto& w = grid->weights;
  for (std::size_t i = 0; i < m; ++i) {
    double d = c * w[i] + cells[i];
    if (i > 0) d += cells[i - 1];
    diag[i] = d;
    if (i + 1 < m) off[i] = -cells[i];
  }
  rhs.resize(m);
  solve_tridiag_spd(std::move(diag), off, rhs);
  RadialFunction out(grid);
  for (std::size_t i = 0; i < m; ++i) out[i] = rhs[i];
  out.values.back() = 0.0;
  return out;
}

}  // namespace detail

inline RiemannianGradient riemannian_gradient(const RadialFunction& u,
                                              const PowerNonlinearity& spec,
                                              const SphereConstraint& constraint) {
  check_on_sphere(u, constraint.m);
  const std::size_t n = u.size();
  const auto Au = apply_stiffness(u);
  const auto gu = g_apply(spec, u);
  const double gn = grad_norm_sq(u);
  const double gpair = inner_l2(gu, u);
  const double lambda = (gpair - gn) / constraint.m;

  std::vector<double> rhs(n, 0.0), rhs_u(n, 0.0);
  const auto& w = u.grid->weights;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    rhs[i] = Au[i] + w[i] * (lambda * u[i] - gu[i]);
    rhs_u[i] = w[i] * u[i];
  }
  RadialFunction z = detail::solve_h1_assembled(u.grid, std::move(rhs), 1.0);
  RadialFunction y = detail::solve_h1_assembled(u.grid, std::move(rhs_u), 1.0);
  const double sigma = inner_l2(z, u) / inner_l2(y, u);
  RadialFunction grad = axpy(z, -sigma, y);
  return {std::move(grad), lambda};
}

/// || dI(u) ||_{T_u^* S_m} in the H^1 metric.
inline double dual_norm_dI(const RadialFunction& u, const PowerNonlinearity& spec,
                           const SphereConstraint& constraint) {
  const auto rg = riemannian_gradient(u, spec, constraint);
  return std::sqrt(h1_norm_sq(rg.grad));
}

// ---------------------------------------------------------------------------
// ScalarProblem: the scalar functional presented to the deformation engine.
// State lives on S_m; the augmented coordinate theta is handled analytically.
// ---------------------------------------------------------------------------

class ScalarProblem {
 public:
  using State = RadialFunction;

  ScalarProblem(GridPtr grid, PowerNonlinearity spec, SphereConstraint constraint)
      : grid_(std::move(grid)), spec_(std::move(spec)), constraint_(constraint) {
    validate_growth(spec_);
    if (spec_.dimension != grid_->dimension)
      throw std::invalid_argument("ScalarProblem: grid/nonlinearity dimension mismatch");
  }

  const GridPtr& grid() const { return grid_; }
  const PowerNonlinearity& spec() const { return spec_; }
  const SphereConstraint& constraint() const { return constraint_; }

  double J(double theta, const State& u) const {
    return dilated_energy(spec_, dilation_data(spec_, u), theta);
  }
  double P_dilated(double theta, const State& u) const {
    return dilated_pohozaev(spec_, dilation_data(spec_, u), theta);
  }
  double energy(const State& u) const { return J(0.0, u); }
  double pohozaev(const State& u) const { return P_dilated(0.0, u); }

  void check_state(const State& u) const { check_on_sphere(u, constraint_.m); }
  void retract(State& u) const { renormalize_mass(u, constraint_.m); }
  double mass_of(const State& u) const { return mass(u); }

  State dilate(const State& u, double t) const { return scale(u, t); }
  State axpy_state(const State& u, double a, const State& v) const { return axpy(u, a, v); }
  State negate(const State& u) const { return negated(u); }
  double l2_dist(const State& a, const State& b) const { return l2_distance(a, b); }

  /// Tangent-part of the metric gradient of J at (theta, u): the representer
  /// of v -> d_u J(theta, u) v in the theta-weighted inner product
  /// <a, b>_theta = e^{2 theta} <grad a, grad b> + <a, b>_2, kept
  /// L^2-orthogonal to u. kappa is the theta-derivative P(u_{e^theta}).
  struct MetricGradient {
    double kappa = 0.0;
    State v;
    double v_norm_sq = 0.0;  // ||v||_theta^2
    double lambda = 0.0;
  };

  MetricGradient metric_gradient(double theta, const State& u) const {
    const std::size_t n = u.size();
    const double e2 = std::exp(2.0 * theta);
    const int N = spec_.dimension;
    const auto Au = apply_stiffness(u);
    const double gn = grad_norm_sq(u);

    // lambda at the dilated state w = Phi_theta u, all in closed form:
    // <g(w), w> = sum a_k e^{q_k theta} Q_k, ||grad w||^2 = e^{2 theta} A.
    double gpair = 0.0;
    std::vector<double> shift(spec_.terms.size());
    const auto q = power_integrals(spec_, u);
    for (std::size_t k = 0; k < spec_.terms.size(); ++k) {
      const auto& t = spec_.terms[k];
      shift[k] = std::exp(0.5 * (t.p - 2.0) * N * theta);
      gpair += t.a * shift[k] * q[k];
    }
    const double lambda = (gpair - e2 * gn) / constraint_.m;

    // Pulled-back residual rho = e^{2 theta} M^{-1} A u + lambda u
    //                            - sum a_k e^{q_k theta} phi_{p_k}(u)
    const auto& w = grid_->weights;
    std::vector<double> rhs(n, 0.0), rhs_u(n, 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      double gshift = 0.0;
      const double ui = u[i];
      if (!spec_.positive_part || ui > 0.0) {
        const double base = spec_.positive_part ? ui : std::abs(ui);
        if (base != 0.0) {
          for (std::size_t k = 0; k < spec_.terms.size(); ++k) {
            const auto& t = spec_.terms[k];
            gshift += t.a * shift[k] * std::pow(base, t.p - 2.0) * ui;
          }
        }
      }
      rhs[i] = e2 * Au[i] + w[i] * (lambda * ui - gshift);
      rhs_u[i] = w[i] * ui;
    }

    // Representer in the theta metric: (e^{2 theta} A + M) v = M rho,
    // then the oblique projection that zeroes <v, u>_2.
    State z = solve_theta_metric(std::move(rhs), e2);
    State y = solve_theta_metric(std::move(rhs_u), e2);
    const double sigma = inner_l2(z, u) / inner_l2(y, u);
    State v = axpy(z, -sigma, y);

    MetricGradient out;
    out.kappa = dilated_pohozaev(spec_, {gn, q}, theta);
    out.v_norm_sq = e2 * grad_norm_sq(v) + mass(v);
    out.v = std::move(v);
    out.lambda = lambda;
    return out;
  }

  double metric_norm_sq(double theta, double kappa, const State& v) const {
    return kappa * kappa + std::exp(2.0 * theta) * grad_norm_sq(v) + mass(v);
  }

  /// Midpoint-frozen segment length standing in for the geodesic distance.
  double metric_dist(double theta_a, const State& a, double theta_b, const State& b) const {
    const double tmid = 0.5 * (theta_a + theta_b);
    const double dth = theta_a - theta_b;
    RadialFunction d = axpy(a, -1.0, b);
    return std::sqrt(dth * dth + std::exp(2.0 * tmid) * grad_norm_sq(d) + mass(d));
  }

 private:
  State solve_theta_metric(std::vector<double> rhs, double e2) const {
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
    State out(grid_);
    for (std::size_t i = 0; i < m; ++i) out[i] = rhs[i];
    out.values.back() = 0.0;
    return out;
  }

  GridPtr grid_;
  PowerNonlinearity spec_;
  SphereConstraint constraint_;
};

// ---------------------------------------------------------------------------
// Critical-point refinement: alternate exact fiber maximization (closed-form
// theta) with preconditioned tangential descent of the fiber-maximal energy
// R(u) = max_theta J(theta, u).
//
// On a second-order grid the dilation fiber is an almost-flat valley of R
// whose residual tilt is pure discretization error: the continuum derivative
// of I along the fiber generator is P(u) = 0 at fiber-maximal points, but its
// grid realization is O(h^2). Descending along that tilt wanders without
// converging, so the descent direction is projected onto the complement of
// the discrete fiber generator. At the fixed point the slice gradient
// vanishes to the requested tolerance, the Pohozaev value vanishes
// identically (fiber maximization), and the leftover fiber component of the
// full gradient — the irreducible second-order defect — is measured and
// reported as `fiber_defect`.
// ---------------------------------------------------------------------------

struct RefineOptions {
  double tol_grad = 1e-8;         // slice gradient target
  int max_iterations = 4000;
  double anchor_threshold = 0.4;  // fold theta into the profile beyond this
};

struct ScalarCritical {
  RadialFunction u;
  double lambda = 0.0;
  double energy = 0.0;
  double pohozaev = 0.0;
  double dual_norm = 0.0;    // full tangential dual norm (floor: fiber_defect)
  double slice_dual = 0.0;   // dual norm orthogonal to the discrete fiber
  double fiber_defect = 0.0; // measured second-order defect along the fiber
  double theta = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Discrete generator of the dilation fiber at u: (N/2) u + r u'(r),
/// projected L^2-orthogonally onto the tangent space of the sphere.
inline RadialFunction fiber_generator(const RadialFunction& u) {
  const int N = u.grid->dimension;
  PchipInterpolant interp(u.grid->nodes, u.values);
  RadialFunction w(u.grid);
  for (std::size_t i = 0; i + 1 < u.size(); ++i) {
    const double r = u.grid->nodes[i];
    w[i] = 0.5 * N * u[i] + r * interp.derivative(r);
  }
  w.values.back() = 0.0;
  const double c = inner_l2(w, u) / mass(u);
  return axpy(w, -c, u);
}

namespace detail {

/// Pointwise derivative of wG: sum a_k (p_k/2 - 1) |u|^{p_k - 2} u.
inline double wG_prime(const PowerNonlinearity& spec, double xi) {
  const double base = spec.positive_part ? std::max(xi, 0.0) : std::abs(xi);
  if (base == 0.0) return 0.0;
  double s = 0.0;
  for (const auto& t : spec.terms)
    s += t.a * (0.5 * t.p - 1.0) * std::pow(base, t.p - 2.0) * xi;
  return s;
}

/// Bordered Newton for the anchored critical point: solves
///   A u + lambda M u - M g(u) - mu (A + M) f(u) = 0,
///   ||u||_2^2 = m,   P(u) = 0,
/// with f the (frozen per iteration) discrete fiber generator. The solution
/// is the exact slice-stationary representative: its Pohozaev value vanishes
/// identically and the whole gradient is the single fiber-dual component of
/// size |mu| * ||f|| (the second-order discretization defect).
inline bool newton_scalar_anchored(const ScalarProblem& prob, RadialFunction& u, double& lambda,
                                   double& mu, int max_iter = 40) {
  const auto& grid = *u.grid;
  const auto& spec = prob.spec();
  const double m = prob.constraint().m;
  const int N = spec.dimension;
  const std::size_t n = grid.size();
  const std::size_t dim = n - 1;
  const auto& w = grid.weights;

  auto residual_norm = [&](const RadialFunction& uu, double lam, double nu) {
    const auto Auu = apply_stiffness(uu);
    RadialFunction ff = fiber_generator(uu);
    const auto Aff = apply_stiffness(ff);
    double fn = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double pen = Aff[i] + w[i] * ff[i];
      const double F = Auu[i] + w[i] * (lam * uu[i] - g_eval(spec, uu[i])) - nu * pen;
      fn += F * F / w[i];
    }
    const double rm = 0.5 * (mass(uu) - m);
    const double rp = prob.pohozaev(uu);
    return std::sqrt(fn + rm * rm + rp * rp);
  };

  for (int it = 0; it < max_iter; ++it) {
    const auto Au = apply_stiffness(u);
    const auto gu = g_apply(spec, u);
    RadialFunction f = fiber_generator(u);
    const auto Af = apply_stiffness(f);

    // residuals
    std::vector<double> Fu(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      const double pen = Af[i] + w[i] * f[i];  // (A + M) f
      Fu[i] = Au[i] + w[i] * (lambda * u[i] - gu[i]) - mu * pen;
    }
    const double r_m = 0.5 * (mass(u) - m);
    const double r_P = prob.pohozaev(u);
    double fnorm = 0.0;
    for (std::size_t i = 0; i < dim; ++i) fnorm += Fu[i] * Fu[i] / w[i];
    fnorm = std::sqrt(fnorm);
    if (fnorm < 1e-12 * std::max(1.0, grad_norm_sq(u)) && std::abs(r_m) < 1e-13 * m &&
        std::abs(r_P) < 1e-13 * std::max(1.0, grad_norm_sq(u)))
      return true;

    // core tridiagonal T = A + lambda M - M g'(u)
    std::vector<double> lower(dim - 1), diag(dim), upper(dim - 1);
    for (std::size_t i = 0; i < dim; ++i) {
      double d = w[i] * (lambda - g_prime(spec, u[i])) + grid.stiff_cell[i];
      if (i > 0) d += grid.stiff_cell[i - 1];
      diag[i] = d;
      if (i + 1 < dim) {
        upper[i] = -grid.stiff_cell[i];
        lower[i] = -grid.stiff_cell[i];
      }
    }
    // three solves: T x0 = -Fu, T x1 = M u, T x2 = (A + M) f
    std::vector<double> x0(dim), x1(dim), x2(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      x0[i] = -Fu[i];
      x1[i] = w[i] * u[i];
      x2[i] = Af[i] + w[i] * f[i];
    }
    solve_tridiag_pivot(lower, diag, upper, x0);
    solve_tridiag_pivot(lower, diag, upper, x1);
    solve_tridiag_pivot(lower, diag, upper, x2);

    // border rows: mass gradient (M u) and Pohozaev gradient 2 A u - N M wG'(u)
    std::vector<double> rm_row(dim), rp_row(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      rm_row[i] = w[i] * u[i];
      rp_row[i] = 2.0 * Au[i] - N * w[i] * wG_prime(spec, u[i]);
    }
    auto dot = [&](const std::vector<double>& a, const std::vector<double>& b) {
      double s = 0.0;
      for (std::size_t i = 0; i < dim; ++i) s += a[i] * b[i];
      return s;
    };
    // [a11 a12; a21 a22] (dlambda, dmu) = (b1, b2)
    const double a11 = -dot(rm_row, x1), a12 = dot(rm_row, x2);
    const double a21 = -dot(rp_row, x1), a22 = dot(rp_row, x2);
    const double b1 = -r_m - dot(rm_row, x0);
    const double b2 = -r_P - dot(rp_row, x0);
    const double det = a11 * a22 - a12 * a21;
    if (det == 0.0) return false;
    const double dlambda = (b1 * a22 - b2 * a12) / det;
    const double dmu = (a11 * b2 - a21 * b1) / det;

    double umax = 0.0, dmax = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double du = x0[i] - dlambda * x1[i] + dmu * x2[i];
      x0[i] = du;
      umax = std::max(umax, std::abs(u[i]));
      dmax = std::max(dmax, std::abs(du));
    }
    double damp = dmax > 0.4 * umax ? 0.4 * umax / dmax : 1.0;
    // backtrack on the residual norm: keeps the iteration from running away
    // from a bad start (steep nonlinearities), while tolerating the residual
    // plateaus of nearly singular Jacobians
    const double base = residual_norm(u, lambda, mu);
    bool moved = false;
    for (int back = 0; back < 24; ++back) {
      RadialFunction trial = u;
      for (std::size_t i = 0; i < dim; ++i) trial[i] += damp * x0[i];
      trial.values.back() = 0.0;
      const double lam_t = lambda + damp * dlambda;
      const double mu_t = mu + damp * dmu;
      const double res = residual_norm(trial, lam_t, mu_t);
      if (res < base || (back >= 8 && res <= base * 1.02)) {
        u = std::move(trial);
        lambda = lam_t;
        mu = mu_t;
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

inline ScalarCritical refine_scalar_critical(const ScalarProblem& prob, RadialFunction start,
                                             const RefineOptions& opt = {}) {
  prob.retract(start);
  ScalarCritical res;
  RadialFunction u = std::move(start);
  double step = 1.0;
  int it = 0;
  bool stalled = false;

  auto argmax_theta = [&](const RadialFunction& f) -> double {
    const auto th = fiber_argmax_theta(prob.spec(), dilation_data(prob.spec(), f));
    if (!th)
      throw std::runtime_error(
          "refine_scalar_critical: fiber maximization failed (profile unresolved)");
    return *th;
  };

  auto theta_inner = [&](double theta, const RadialFunction& a, const RadialFunction& b) {
    return std::exp(2.0 * theta) * grad_inner(a, b) + inner_l2(a, b);
  };

  double theta = argmax_theta(u);
  double value = prob.J(theta, u);
  double slice_dual = std::numeric_limits<double>::infinity();
  bool newton_done = false;
  double last_attempt_slice = std::numeric_limits<double>::infinity();

  // Phase 1: globalizing slice descent. Newton is attempted whenever the
  // slice gradient halves since the last attempt, which catches the dual-norm
  // minima the trajectory passes through; descent continues if it fails.
  const double newton_handoff =
      std::max(opt.tol_grad, 3e-2 * std::sqrt(std::max(1.0, grad_norm_sq(u))));
  for (; it < opt.max_iterations; ++it) {
    if (std::abs(theta) > opt.anchor_threshold) {
      u = renormalized(scale(u, std::exp(theta)), prob.constraint().m);
      theta = argmax_theta(u);
      value = prob.J(theta, u);
    }
    auto mg = prob.metric_gradient(theta, u);
    RadialFunction fib = fiber_generator(u);
    const double fib_sq = theta_inner(theta, fib, fib);
    const double overlap = theta_inner(theta, mg.v, fib);
    RadialFunction vs = axpy(mg.v, -overlap / fib_sq, fib);
    const double vs_sq = prob.metric_norm_sq(theta, 0.0, vs);
    slice_dual = std::sqrt(std::max(vs_sq, 0.0));
    if (slice_dual <= opt.tol_grad) break;

    if (slice_dual <= newton_handoff && slice_dual <= 0.5 * last_attempt_slice && it >= 4) {
      last_attempt_slice = slice_dual;
      // fold theta in and try the anchored Newton
      RadialFunction cand = renormalized(scale(u, std::exp(theta)), prob.constraint().m);
      double lam = prob.metric_gradient(0.0, cand).lambda;
      double mu = 0.0;
      if (detail::newton_scalar_anchored(prob, cand, lam, mu)) {
        u = std::move(cand);
        theta = 0.0;
        newton_done = true;
        break;
      }
    }

    bool accepted = false;
    double s = std::min(step * 2.0, 4.0);
    for (int back = 0; back < 60; ++back) {
      RadialFunction trial = axpy(u, -s, vs);
      prob.retract(trial);
      const auto th_t = fiber_argmax_theta(prob.spec(), dilation_data(prob.spec(), trial));
      if (th_t) {
        const double val_t = prob.J(*th_t, trial);
        if (val_t <= value - 0.25 * s * vs_sq) {
          u = std::move(trial);
          theta = *th_t;
          value = val_t;
          step = s;
          accepted = true;
          break;
        }
      }
      s *= 0.5;
    }
    if (!accepted) {
      stalled = true;
      break;
    }
  }

  if (!newton_done) {
    // Fold theta into the profile so the reported function itself carries
    // the residuals, then try one last Newton settle.
    for (int pass = 0; pass < 12 && std::abs(theta) > 1e-13; ++pass) {
      u = renormalized(scale(u, std::exp(theta)), prob.constraint().m);
      theta = argmax_theta(u);
    }
    double lam = prob.metric_gradient(0.0, u).lambda;
    double mu = 0.0;
    RadialFunction cand = u;
    if (detail::newton_scalar_anchored(prob, cand, lam, mu)) {
      u = std::move(cand);
      theta = 0.0;
      newton_done = true;
      stalled = false;
    }
  }
  theta = argmax_theta(u);

  auto mg = prob.metric_gradient(theta, u);
  {
    RadialFunction fib = fiber_generator(u);
    const double fib_sq = theta_inner(theta, fib, fib);
    const double overlap = theta_inner(theta, mg.v, fib);
    RadialFunction vs = axpy(mg.v, -overlap / fib_sq, fib);
    res.slice_dual = std::sqrt(std::max(prob.metric_norm_sq(theta, 0.0, vs), 0.0));
    res.fiber_defect = std::abs(overlap) / std::sqrt(fib_sq);
  }
  res.u = std::move(u);
  res.theta = theta;
  res.lambda = mg.lambda;
  res.energy = prob.J(theta, res.u);
  res.pohozaev = prob.P_dilated(theta, res.u);
  res.dual_norm = std::sqrt(mg.v_norm_sq);
  res.iterations = it;
  res.converged = newton_done || (!stalled && res.slice_dual <= opt.tol_grad * 4.0);
  return res;
}

// ---------------------------------------------------------------------------
// Random smooth seeds and the ground-level estimate b0.
// ---------------------------------------------------------------------------

/// Smooth, decaying random profile on S_m: a few positive Gaussian bumps.
inline RadialFunction random_sphere_function(const GridPtr& grid,
                                             const SphereConstraint& constraint, Rng& rng) {
  const double R = grid->r_max();
  RadialFunction u(grid);
  const int bumps = 2 + static_cast<int>(rng.next_u64() % 3);
  for (int b = 0; b < bumps; ++b) {
    const double center = rng.uniform(0.0, 0.25 * R);
    const double width = rng.uniform(0.05 * R, 0.15 * R);
    const double amp = rng.uniform(0.3, 1.0);
    for (std::size_t i = 0; i + 1 < u.size(); ++i) {
      const double r = grid->nodes[i];
      const double d = (r - center) / width;
      const double dm = (r + center) / width;  // even reflection keeps u'(0) = 0
      u[i] += amp * (std::exp(-d * d) + std::exp(-dm * dm));
    }
  }
  renormalize_mass(u, constraint.m);
  return u;
}

struct B0Report {
  double b0 = 0.0;
  std::vector<double> per_seed;
};

/// Descending estimate of b0 = inf over the Pohozaev set of I, computed as
/// inf over seeds of the fiber-maximal descent limit.
inline B0Report b0_estimate_report(const GridPtr& grid, const SphereConstraint& constraint,
                                   const PowerNonlinearity& spec, int seeds,
                                   std::uint64_t rng_seed = 12345,
                                   const RefineOptions& opt = {}) {
  validate_growth(spec);
  Rng rng(rng_seed);
  B0Report report;
  report.b0 = std::numeric_limits<double>::infinity();
  ScalarProblem prob(grid, spec, constraint);
  for (int s = 0; s < std::max(1, seeds); ++s) {
    RadialFunction u0 = random_sphere_function(grid, constraint, rng);
    const auto crit = refine_scalar_critical(prob, u0, opt);
    report.per_seed.push_back(crit.energy);
    report.b0 = std::min(report.b0, crit.energy);
  }
  return report;
}

inline double b0_estimate(const GridPtr& grid, const SphereConstraint& constraint,
                          const PowerNonlinearity& spec, int seeds,
                          std::uint64_t rng_seed = 12345) {
  return b0_estimate_report(grid, constraint, spec, seeds, rng_seed).b0;
}

/// Builds the full critical-point report from a refined state.
inline CriticalPointReport make_report(const ScalarProblem& prob, const ScalarCritical& crit) {
  CriticalPointReport rep;
  rep.solution = crit.u;
  rep.lambda = crit.lambda;
  rep.energy = crit.energy;
  rep.pohozaev_residual = crit.pohozaev;
  rep.gradient_dual_norm = crit.dual_norm;
  rep.decay_rate = fit_decay_rate(crit.u);
  rep.mass = mass(crit.u);
  rep.status = crit.converged ? SolveStatus::Converged : SolveStatus::Stalled;
  return rep;
}

}  // namespace pohoflow
