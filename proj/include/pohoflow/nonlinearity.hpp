// pohoflow: sum-of-powers nonlinearities g(xi) = sum_k a_k |xi|^{p_k - 2} xi
// with mass-supercritical / Sobolev-subcritical growth validation.
#pragma once

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "pohoflow/radial.hpp"

namespace pohoflow {

struct PowerTerm {
  double a;  // coefficient, > 0
  double p;  // exponent, in (2 + 4/N, 2*)
};

struct PowerNonlinearity {
  int dimension = 3;
  std::vector<PowerTerm> terms;
  // Positive-part variant g(u) = sum a_k (u_+)^{p_k - 1}, used by the cubic
  // system components; one-sided derivative at 0.
  bool positive_part = false;
};

struct GrowthExponents {
  double alpha;        // min p_k
  double beta_growth;  // max p_k (growth "beta", renamed: beta is the coupling)
};

/// Pointwise g(xi).
inline double g_eval(const PowerNonlinearity& spec, double xi) {
  double s = 0.0;
  if (spec.positive_part) {
    if (xi <= 0.0) return 0.0;
    for (const auto& t : spec.terms) s += t.a * std::pow(xi, t.p - 1.0);
    return s;
  }
  for (const auto& t : spec.terms) s += t.a * std::pow(std::abs(xi), t.p - 2.0) * xi;
  return s;
}

/// Pointwise primitive G(xi) = int_0^xi g.
inline double G_eval(const PowerNonlinearity& spec, double xi) {
  double s = 0.0;
  const double base = spec.positive_part ? std::max(xi, 0.0) : std::abs(xi);
  if (base == 0.0) return 0.0;
  for (const auto& t : spec.terms) s += t.a / t.p * std::pow(base, t.p);
  return s;
}

/// Pointwise g'(xi) (one-sided at 0 for the positive-part variant).
inline double g_prime(const PowerNonlinearity& spec, double xi) {
  double s = 0.0;
  const double base = spec.positive_part ? std::max(xi, 0.0) : std::abs(xi);
  if (base == 0.0) return 0.0;
  for (const auto& t : spec.terms) s += t.a * (t.p - 1.0) * std::pow(base, t.p - 2.0);
  return s;
}

/// wG(xi) = g(xi) xi / 2 - G(xi) = sum a_k (1/2 - 1/p_k) |xi|^{p_k}.
inline double wG_eval(const PowerNonlinearity& spec, double xi) {
  double s = 0.0;
  const double base = spec.positive_part ? std::max(xi, 0.0) : std::abs(xi);
  if (base == 0.0) return 0.0;
  for (const auto& t : spec.terms) s += t.a * (0.5 - 1.0 / t.p) * std::pow(base, t.p);
  return s;
}

/// Validates the growth window 2 + 4/N < p_k < 2* for every term, positive
/// coefficients, and spot-checks the superquadraticity of wG used by the
/// fiber-map monotonicity. Returns (alpha, beta_growth) = (min p, max p).
inline GrowthExponents validate_growth(const PowerNonlinearity& spec) {
  if (spec.dimension != 2 && spec.dimension != 3)
    throw std::invalid_argument("validate_growth: dimension must be 2 or 3");
  if (spec.terms.empty()) throw std::invalid_argument("validate_growth: no terms");
  const int N = spec.dimension;
  const double lower = 2.0 + 4.0 / N;
  const double upper = sobolev_critical(N);
  double alpha = spec.terms.front().p, beta = spec.terms.front().p;
  for (std::size_t k = 0; k < spec.terms.size(); ++k) {
    const auto& t = spec.terms[k];
    if (!(t.a > 0.0)) {
      std::ostringstream os;
      os << "validate_growth: term " << k << " has coefficient " << t.a
         << "; coefficients must be positive";
      throw std::invalid_argument(os.str());
    }
    if (!(t.p > lower) || !(t.p < upper)) {
      std::ostringstream os;
      os << "validate_growth: term " << k << " has exponent " << t.p
         << " outside the open mass-supercritical window (" << lower << ", " << upper << ")";
      throw std::invalid_argument(os.str());
    }
    alpha = std::min(alpha, t.p);
    beta = std::max(beta, t.p);
  }

  // Spot-check the quadratic growth bracket alpha*G <= g*xi <= beta*G and the
  // strict superquadraticity wG'(xi) xi > (2 + 4/N) wG(xi) on a sample of xi.
  for (int i = 1; i <= 24; ++i) {
    const double xi = std::pow(10.0, -3.0 + 0.25 * i);
    const double G = G_eval(spec, xi);
    const double gxi = g_eval(spec, xi) * xi;
    if (!(alpha * G <= gxi * (1 + 1e-12) && gxi <= beta * G * (1 + 1e-12)))
      throw std::logic_error("validate_growth: growth bracket violated");
    // wG'(xi) xi = sum a_k (1/2 - 1/p_k) p_k |xi|^{p_k}
    double wgp = 0.0;
    for (const auto& t : spec.terms) wgp += t.a * (0.5 - 1.0 / t.p) * t.p * std::pow(xi, t.p);
    if (!(wgp > lower * wG_eval(spec, xi)))
      throw std::logic_error("validate_growth: wG superquadraticity violated");
  }
  return {alpha, beta};
}

// ---------------------------------------------------------------------------
// Per-function power integrals Q_k = ||u||_{p_k}^{p_k} (positive part when the
// spec says so). These feed every closed-form dilation formula.
// ---------------------------------------------------------------------------

inline std::vector<double> power_integrals(const PowerNonlinearity& spec,
                                           const RadialFunction& u) {
  std::vector<double> q(spec.terms.size());
  for (std::size_t k = 0; k < spec.terms.size(); ++k)
    q[k] = spec.positive_part ? lp_pow_pos(u, spec.terms[k].p) : lp_pow(u, spec.terms[k].p);
  return q;
}

/// Pointwise g(u) as a grid function.
inline RadialFunction g_apply(const PowerNonlinearity& spec, const RadialFunction& u) {
  RadialFunction out(u.grid);
  for (std::size_t i = 0; i + 1 < u.size(); ++i) out[i] = g_eval(spec, u[i]);
  return out;
}

}  // namespace pohoflow
