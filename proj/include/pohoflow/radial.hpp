// pohoflow: radial grids and radially symmetric H^1 functions on R^N, N in {2,3}.
//
// Discretization: piecewise-linear (hat) functions on [0, r_max] with a
// Dirichlet node at r_max and a natural (u'(0)=0) closure at the origin.
// All quadratures integrate against the surface measure |S^{N-1}| r^{N-1} dr.
// Energies, the stiffness form and the H^1 solve are built from the same hat
// basis, so discrete differentiation and quadrature are variationally
// consistent: gradients of discrete energies pair exactly with the discrete
// inner products.
#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "pohoflow/util.hpp"

namespace pohoflow {

struct RadialGrid {
  int dimension = 3;                  // N
  std::vector<double> nodes;          // r_0 = 0 < ... < r_{n-1} = r_max
  std::vector<double> weights;        // hat quadrature incl. |S^{N-1}| r^{N-1}
  std::vector<double> stiff_cell;     // per-cell Dirichlet coefficients c_i
  double surface = 0.0;               // |S^{N-1}|

  std::size_t size() const { return nodes.size(); }
  double r_max() const { return nodes.back(); }

  double ball_volume() const {
    const int N = dimension;
    return surface * std::pow(r_max(), N) / N;
  }
};

using GridPtr = std::shared_ptr<const RadialGrid>;

namespace detail {

// \int_a^b (r - a) r^{N-1} dr and \int_a^b (b - r) r^{N-1} dr
inline double hat_rise(double a, double b, int N) {
  if (N == 3) {
    return (std::pow(b, 4) - std::pow(a, 4)) / 4.0 - a * (std::pow(b, 3) - std::pow(a, 3)) / 3.0;
  }
  return (std::pow(b, 3) - std::pow(a, 3)) / 3.0 - a * (b * b - a * a) / 2.0;
}
inline double hat_fall(double a, double b, int N) {
  if (N == 3) {
    return b * (std::pow(b, 3) - std::pow(a, 3)) / 3.0 - (std::pow(b, 4) - std::pow(a, 4)) / 4.0;
  }
  return b * (b * b - a * a) / 2.0 - (std::pow(b, 3) - std::pow(a, 3)) / 3.0;
}

}  // namespace detail

/// Assembles quadrature weights and the Dirichlet form for given nodes.
inline GridPtr grid_from_nodes(int dimension, std::vector<double> nodes) {
  if (dimension != 2 && dimension != 3)
    throw std::invalid_argument("grid_from_nodes: dimension must be 2 or 3");
  if (nodes.size() < 64) throw std::invalid_argument("grid_from_nodes: need at least 64 nodes");
  if (nodes.front() != 0.0) throw std::invalid_argument("grid_from_nodes: first node must be 0");
  for (std::size_t i = 1; i < nodes.size(); ++i)
    if (!(nodes[i] > nodes[i - 1]))
      throw std::invalid_argument("grid_from_nodes: nodes must be strictly increasing");

  auto grid = std::make_shared<RadialGrid>();
  grid->dimension = dimension;
  grid->surface = dimension == 3 ? 4.0 * std::numbers::pi : 2.0 * std::numbers::pi;
  grid->nodes = std::move(nodes);
  const std::size_t n = grid->size();
  const int N = dimension;
  grid->weights.assign(n, 0.0);
  grid->stiff_cell.assign(n - 1, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double a = grid->nodes[i], b = grid->nodes[i + 1];
    const double h = b - a;
    grid->weights[i] += grid->surface * detail::hat_fall(a, b, N) / h;
    grid->weights[i + 1] += grid->surface * detail::hat_rise(a, b, N) / h;
    grid->stiff_cell[i] = grid->surface * (std::pow(b, N) - std::pow(a, N)) / (N * h * h);
  }
  return grid;
}

/// Builds a radial grid. grading == 1 gives uniform spacing; grading > 1
/// clusters cells geometrically towards the origin: spacings grow by the
/// constant factor grading^{1/(n-2)}, so `grading` is the ratio of the
/// outermost to the innermost cell.
inline GridPtr make_grid(int dimension, double r_max, std::size_t n, double grading = 1.0) {
  if (!(r_max > 0.0)) throw std::invalid_argument("make_grid: r_max must be positive");
  if (n < 64) throw std::invalid_argument("make_grid: need at least 64 nodes");
  if (!(grading >= 1.0)) throw std::invalid_argument("make_grid: grading must be >= 1");

  std::vector<double> nodes(n);
  if (grading == 1.0) {
    for (std::size_t i = 0; i < n; ++i)
      nodes[i] = r_max * static_cast<double>(i) / static_cast<double>(n - 1);
  } else {
    // r_i = r_max (q^i - 1)/(q^{n-1} - 1) with the per-cell ratio q
    const double logq = std::log(grading) / static_cast<double>(n - 2);
    const double denom = std::expm1(static_cast<double>(n - 1) * logq);
    for (std::size_t i = 0; i < n; ++i)
      nodes[i] = r_max * std::expm1(static_cast<double>(i) * logq) / denom;
  }
  nodes.front() = 0.0;
  nodes.back() = r_max;
  return grid_from_nodes(dimension, std::move(nodes));
}

// ---------------------------------------------------------------------------
// RadialFunction: samples u(r_i) with the Dirichlet convention u(r_max) = 0.
// ---------------------------------------------------------------------------

struct RadialFunction {
  GridPtr grid;
  std::vector<double> values;

  RadialFunction() = default;
  explicit RadialFunction(GridPtr g) : grid(std::move(g)), values(grid->size(), 0.0) {}
  RadialFunction(GridPtr g, std::vector<double> v) : grid(std::move(g)), values(std::move(v)) {
    if (values.size() != grid->size())
      throw std::invalid_argument("RadialFunction: value/node count mismatch");
    values.back() = 0.0;
  }

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
};

template <class F>
inline RadialFunction sample_function(GridPtr grid, F&& f) {
  RadialFunction u(std::move(grid));
  for (std::size_t i = 0; i + 1 < u.size(); ++i) u[i] = f(u.grid->nodes[i]);
  u.values.back() = 0.0;
  return u;
}

// ---------------------------------------------------------------------------
// Quadrature and norms
// ---------------------------------------------------------------------------

inline double integrate(const RadialFunction& u) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u.grid->weights[i] * u[i];
  return s;
}

template <class F>
inline double integrate_pointwise(const RadialFunction& u, F&& f) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u.grid->weights[i] * f(u[i]);
  return s;
}

inline double inner_l2(const RadialFunction& u, const RadialFunction& v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u.grid->weights[i] * u[i] * v[i];
  return s;
}

inline double mass(const RadialFunction& u) { return inner_l2(u, u); }

/// ||u||_p^p
inline double lp_pow(const RadialFunction& u, double p) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i)
    s += u.grid->weights[i] * std::pow(std::abs(u[i]), p);
  return s;
}

/// ||u_+||_p^p
inline double lp_pow_pos(const RadialFunction& u, double p) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i)
    if (u[i] > 0.0) s += u.grid->weights[i] * std::pow(u[i], p);
  return s;
}

inline double lp_norm(const RadialFunction& u, double p) {
  if (!(p >= 1.0)) throw std::invalid_argument("lp_norm: p must be >= 1");
  return std::pow(lp_pow(u, p), 1.0 / p);
}

/// ||grad u||_2^2 from the cell-difference (hat basis) Dirichlet form.
inline double grad_norm_sq(const RadialFunction& u) {
  double s = 0.0;
  const auto& c = u.grid->stiff_cell;
  for (std::size_t i = 0; i + 1 < u.size(); ++i) {
    const double d = u[i + 1] - u[i];
    s += c[i] * d * d;
  }
  return s;
}

inline double grad_inner(const RadialFunction& u, const RadialFunction& v) {
  double s = 0.0;
  const auto& c = u.grid->stiff_cell;
  for (std::size_t i = 0; i + 1 < u.size(); ++i)
    s += c[i] * (u[i + 1] - u[i]) * (v[i + 1] - v[i]);
  return s;
}

inline double inner_h1(const RadialFunction& u, const RadialFunction& v) {
  return grad_inner(u, v) + inner_l2(u, v);
}

inline double h1_norm_sq(const RadialFunction& u) { return grad_norm_sq(u) + mass(u); }

/// (A u)_i, the stiffness form action. Row n-1 is Dirichlet and returns 0.
inline std::vector<double> apply_stiffness(const RadialFunction& u) {
  const std::size_t n = u.size();
  std::vector<double> out(n, 0.0);
  const auto& c = u.grid->stiff_cell;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double flux = c[i] * (u[i + 1] - u[i]);
    out[i] -= flux;
    out[i + 1] += flux;
  }
  out[n - 1] = 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Vector-space helpers
// ---------------------------------------------------------------------------

inline RadialFunction axpy(const RadialFunction& u, double a, const RadialFunction& v) {
  RadialFunction out = u;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += a * v[i];
  out.values.back() = 0.0;
  return out;
}

inline RadialFunction scaled(const RadialFunction& u, double a) {
  RadialFunction out = u;
  for (double& x : out.values) x *= a;
  return out;
}

inline RadialFunction negated(const RadialFunction& u) {
  RadialFunction out = u;
  for (double& x : out.values) x = -x;
  return out;
}

inline double l2_distance(const RadialFunction& u, const RadialFunction& v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = u[i] - v[i];
    s += u.grid->weights[i] * d * d;
  }
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Dilation u_t(x) = t^{N/2} u(t x): mass-preserving up to resampling error.
// Monotone cubic resampling, zero past r_max.
// ---------------------------------------------------------------------------

inline RadialFunction scale(const RadialFunction& u, double t) {
  if (!(t > 0.0)) throw std::invalid_argument("scale: dilation factor must be positive");
  if (t == 1.0) return u;
  const int N = u.grid->dimension;
  const double amp = std::pow(t, 0.5 * N);
  PchipInterpolant interp(u.grid->nodes, u.values);
  RadialFunction out(u.grid);
  const double rmax = u.grid->r_max();
  for (std::size_t i = 0; i + 1 < out.size(); ++i) {
    const double rq = t * u.grid->nodes[i];
    out[i] = rq >= rmax ? 0.0 : amp * interp(rq);
  }
  out.values.back() = 0.0;
  return out;
}

/// Resamples u at an offset radius: out(r) = u(r - a) for r >= a, else 0.
/// Used to move compact supports off the origin.
inline RadialFunction shift_support(const RadialFunction& u, double a) {
  if (!(a >= 0.0)) throw std::invalid_argument("shift_support: offset must be >= 0");
  if (a == 0.0) return u;
  PchipInterpolant interp(u.grid->nodes, u.values);
  RadialFunction out(u.grid);
  for (std::size_t i = 0; i + 1 < out.size(); ++i) {
    const double rq = u.grid->nodes[i] - a;
    out[i] = rq <= 0.0 ? 0.0 : interp(rq);
  }
  out.values.back() = 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// H^1 preconditioner: solves (-Laplace + c) w = f radially with w'(0) = 0,
// w(r_max) = 0, in the weak (hat basis) sense: (A + c M) w = M f.
// ---------------------------------------------------------------------------

inline RadialFunction h1_precondition(const RadialFunction& f, double c) {
  if (!(c > 0.0)) throw std::invalid_argument("h1_precondition: c must be positive");
  const std::size_t n = f.size();
  const std::size_t m = n - 1;  // unknowns: nodes 0..n-2 (r_max pinned to 0)
  std::vector<double> diag(m), off(m > 0 ? m - 1 : 0), rhs(m);
  const auto& cells = f.grid->stiff_cell;
  const auto& w = f.grid->weights;
  for (std::size_t i = 0; i < m; ++i) {
    double d = c * w[i];
    if (i > 0) d += cells[i - 1];
    d += cells[i];  // cell to the right always exists for i <= n-2
    diag[i] = d;
    rhs[i] = w[i] * f[i];
    if (i + 1 < m) off[i] = -cells[i];
  }
  solve_tridiag_spd(std::move(diag), off, rhs);
  RadialFunction out(f.grid);
  for (std::size_t i = 0; i < m; ++i) out[i] = rhs[i];
  out.values.back() = 0.0;
  return out;
}

/// Weak-form forward operator matching h1_precondition: f = M^{-1} (A + c M) v.
inline RadialFunction h1_apply(const RadialFunction& v, double c) {
  auto av = apply_stiffness(v);
  RadialFunction out(v.grid);
  for (std::size_t i = 0; i + 1 < v.size(); ++i)
    out[i] = av[i] / v.grid->weights[i] + c * v[i];
  out.values.back() = 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Gagliardo–Nirenberg ratio ||u||_p^p / (||grad u||_2^{p'} ||u||_2^{p-p'}),
// p' = (p-2)N/2. Invariant under both dilation and amplitude scaling.
// ---------------------------------------------------------------------------

inline double sobolev_critical(int N) {
  return N == 3 ? 6.0 : std::numeric_limits<double>::infinity();
}

inline double gn_ratio(const RadialFunction& u, double p) {
  const int N = u.grid->dimension;
  if (!(p > 2.0) || !(p < sobolev_critical(N)))
    throw std::invalid_argument("gn_ratio: p must lie in (2, 2*)");
  const double m2 = mass(u);
  if (m2 == 0.0) throw std::invalid_argument("gn_ratio: u must be nonzero");
  const double pprime = 0.5 * (p - 2.0) * N;
  const double gn = grad_norm_sq(u);
  return lp_pow(u, p) /
         (std::pow(std::sqrt(gn), pprime) * std::pow(std::sqrt(m2), p - pprime));
}

/// Least-squares slope of log(r^{(N-1)/2} |u|) over r in [0.5, 0.8] r_max;
/// the radial prefactor removes the geometric decay of radial waves so the
/// fitted rate compares directly against sqrt(lambda).
inline double fit_decay_rate(const RadialFunction& u) {
  const double lo = 0.5 * u.grid->r_max(), hi = 0.8 * u.grid->r_max();
  const double half_nm1 = 0.5 * (u.grid->dimension - 1);
  double peak = 0.0;
  for (const double v : u.values) peak = std::max(peak, std::abs(v));
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double r = u.grid->nodes[i];
    const double av = std::abs(u[i]);
    if (r < lo || r > hi || av < 1e-14 * peak) continue;
    const double y = std::log(av) + half_nm1 * std::log(r);
    sx += r; sy += y; sxx += r * r; sxy += r * y;
    ++count;
  }
  if (count < 8) return 0.0;
  const double denom = count * sxx - sx * sx;
  if (denom == 0.0) return 0.0;
  return -(count * sxy - sx * sy) / denom;
}

}  // namespace pohoflow
