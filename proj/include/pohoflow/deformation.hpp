// pohoflow: deformation machinery on the augmented space M = R x S.
//
// The flow integrates d(eta)/dt = -phi(eta) psi(J(eta)) W(eta)/||W(eta)||
// with W the metric gradient of J(theta, u) = I(Phi_theta u). In this Hilbert
// setting the metric gradient itself satisfies the pseudo-gradient bounds
// ||W|| <= 2 ||DJ|| and DJ(W) >= ||DJ||^2 (with near-equality), so no
// separate locally-Lipschitz construction is needed. Discretization is
// adaptive explicit Euler with Armijo backtracking, which preserves the
// monotonicity contract of the continuous flow.
#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "pohoflow/scalar.hpp"

namespace pohoflow {

template <class Problem>
struct AugmentedPoint {
  double theta = 0.0;
  typename Problem::State u;
};

struct FlowConfig {
  double eps_bar = 0.1;       // energy cutoff half-width
  double rho = 0.1;           // neighborhood radius for the phi cutoff
  double level_b = 0.0;       // target level b
  double max_step = 0.25;     // displacement cap per accepted step
  double tol_grad = 1e-6;
  double tol_pohozaev = 1e-6;
  double tol_energy = 1e-6;

  void validate() const {
    if (!(eps_bar > 0) || !(rho > 0) || !(max_step > 0) || !(tol_grad > 0) ||
        !(tol_pohozaev > 0) || !(tol_energy > 0))
      throw std::invalid_argument("FlowConfig: all widths, steps and tolerances must be positive");
  }
};

struct FlowRecord {
  double time = 0.0;
  double J = 0.0;
  double P = 0.0;
  double grad_norm = 0.0;  // ||DJ|| at the point
  double theta = 0.0;
  double step = 0.0;
  double cutoff = 0.0;     // phi * psi
};

struct FlowTrace {
  std::vector<FlowRecord> records;
  bool stalled = false;
  bool exhausted = false;  // budget ran out before the cutoffs froze the point

  const FlowRecord& tail() const { return records.back(); }
};

// ---------------------------------------------------------------------------
// Cutoffs. psi is 1 on [b - eps/2, b + eps/2], 0 outside [b - eps, b + eps];
// phi vanishes within rho/3 of the supplied critical set and is 1 beyond
// 2 rho/3, both piecewise linear.
// ---------------------------------------------------------------------------

inline double cutoff_psi(double J, double b, double eps_bar) {
  const double d = std::abs(J - b);
  if (d <= 0.5 * eps_bar) return 1.0;
  if (d >= eps_bar) return 0.0;
  return (eps_bar - d) / (0.5 * eps_bar);
}

template <class Problem>
double cutoff_phi(const Problem& prob, const AugmentedPoint<Problem>& at, double rho,
                  std::span<const AugmentedPoint<Problem>> critical_set) {
  if (critical_set.empty()) return 1.0;
  double dist = std::numeric_limits<double>::infinity();
  for (const auto& c : critical_set)
    dist = std::min(dist, prob.metric_dist(at.theta, at.u, c.theta, c.u));
  if (dist <= rho / 3.0) return 0.0;
  if (dist >= 2.0 * rho / 3.0) return 1.0;
  return (dist - rho / 3.0) / (rho / 3.0);
}

template <class Problem>
double cutoffs(const Problem& prob, const AugmentedPoint<Problem>& at, double J_value,
               const FlowConfig& config,
               std::span<const AugmentedPoint<Problem>> critical_set = {}) {
  config.validate();
  return cutoff_phi(prob, at, config.rho, critical_set) *
         cutoff_psi(J_value, config.level_b, config.eps_bar);
}

// ---------------------------------------------------------------------------
// Derivative norm (P^2 + ||dI||^2)^{1/2} and the pseudo-gradient.
// ---------------------------------------------------------------------------

template <class Problem>
double dJ_norm(const Problem& prob, const AugmentedPoint<Problem>& at) {
  const auto mg = prob.metric_gradient(at.theta, at.u);
  return std::sqrt(mg.kappa * mg.kappa + mg.v_norm_sq);
}

template <class Problem>
struct PseudoGradient {
  double kappa = 0.0;
  typename Problem::State v;
  double norm = 0.0;  // metric norm of (kappa, v)
};

template <class Problem>
PseudoGradient<Problem> pseudo_gradient(const Problem& prob, const AugmentedPoint<Problem>& at,
                                        double tol_grad = 1e-12) {
  auto mg = prob.metric_gradient(at.theta, at.u);
  PseudoGradient<Problem> out;
  out.norm = std::sqrt(mg.kappa * mg.kappa + mg.v_norm_sq);
  if (out.norm <= tol_grad)
    throw std::invalid_argument("pseudo_gradient: point is critical to tolerance");
  out.kappa = mg.kappa;
  out.v = std::move(mg.v);
  return out;
}

template <class Problem>
typename Problem::State project_pi(const Problem& prob, const AugmentedPoint<Problem>& at) {
  return prob.dilate(at.u, std::exp(at.theta));
}

template <class Problem>
double metric_norm(const Problem& prob, double kappa,
                   const typename Problem::State& v, const AugmentedPoint<Problem>& at) {
  return std::sqrt(prob.metric_norm_sq(at.theta, kappa, v));
}

// ---------------------------------------------------------------------------
// The flow.
// ---------------------------------------------------------------------------

/// Integrates the cutoff flow from `at`, which is advanced in place to the
/// final point of the trajectory.
template <class Problem>
FlowTrace flow_integrate(const Problem& prob, AugmentedPoint<Problem>& at,
                         const FlowConfig& config, int budget,
                         std::span<const AugmentedPoint<Problem>> critical_set = {}) {
  config.validate();
  if (budget < 1) throw std::invalid_argument("flow_integrate: budget must be >= 1");
  prob.check_state(at.u);

  FlowTrace trace;
  double time = 0.0;

  auto record = [&](double J, double P, double gn, double step, double cut) {
    trace.records.push_back({time, J, P, gn, at.theta, step, cut});
  };

  double J = prob.J(at.theta, at.u);
  auto mg = prob.metric_gradient(at.theta, at.u);
  {
    const double gn = std::sqrt(mg.kappa * mg.kappa + mg.v_norm_sq);
    const double cut = cutoffs(prob, at, J, config, critical_set);
    record(J, mg.kappa, gn, 0.0, cut);
  }

  // Starts at or below b - eps_bar never move.
  if (J <= config.level_b - config.eps_bar) return trace;

  for (int it = 0; it < budget; ++it) {
    const double wnorm = std::sqrt(mg.kappa * mg.kappa + mg.v_norm_sq);
    const double cut = cutoffs(prob, at, J, config, critical_set);
    if (cut == 0.0 || wnorm <= config.tol_grad) {
      // frozen by the cutoffs (or critical): the trajectory stops here
      return trace;
    }

    // Unit-speed direction with the near-critical step cap.
    const double cap = config.max_step * std::min(1.0, wnorm / config.tol_grad);
    const double dk = -mg.kappa / wnorm;
    bool accepted = false;
    double alpha = cap;
    for (int back = 0; back < 50; ++back) {
      AugmentedPoint<Problem> trial;
      trial.theta = at.theta + alpha * cut * dk;
      trial.u = prob.axpy_state(at.u, -alpha * cut / wnorm, mg.v);
      prob.retract(trial.u);
      const double Jt = prob.J(trial.theta, trial.u);
      if (Jt <= J - 0.25 * alpha * cut * wnorm) {
        at = std::move(trial);
        J = Jt;
        time += alpha * cut;
        mg = prob.metric_gradient(at.theta, at.u);
        const double gn = std::sqrt(mg.kappa * mg.kappa + mg.v_norm_sq);
        record(J, mg.kappa, gn, alpha, cutoffs(prob, at, J, config, critical_set));
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      trace.stalled = true;
      return trace;
    }
    if (J <= config.level_b - config.eps_bar) return trace;  // left the active band
  }
  trace.exhausted = true;
  return trace;
}

/// Palais-Smale-type convergence monitor with the extra Pohozaev condition:
/// the trace tail must have its energy pinned to the level and both the
/// derivative norm and the Pohozaev value simultaneously small.
inline SolveStatus psp_monitor(const FlowTrace& trace, const FlowConfig& config) {
  if (trace.records.empty()) throw std::invalid_argument("psp_monitor: empty trace");
  const auto& tail = trace.tail();
  const bool converged = std::abs(tail.J - config.level_b) <= config.tol_energy &&
                         tail.grad_norm <= config.tol_grad &&
                         std::abs(tail.P) <= config.tol_pohozaev;
  if (converged) return SolveStatus::Converged;
  if (trace.stalled) return SolveStatus::Stalled;
  return SolveStatus::Flowing;
}

}  // namespace pohoflow
