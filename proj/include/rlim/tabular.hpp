#pragma once

#include <Eigen/Dense>
#include <limits>

#include "rlim/rng.hpp"

namespace rlim::tabular {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kInf = std::numeric_limits<double>::infinity();

/**
 * Exact finite MDP. Transition and reward tensors are stored as
 * (S*A) x S matrices with flat row index k = s * n_actions + a, matching
 * the state-action to state operator view used throughout this module.
 */
struct TabularMdp {
  int n_states = 0;
  int n_actions = 0;
  MatrixXd trans;   // (S*A, S), each row a probability distribution
  MatrixXd reward;  // (S*A, S)
  double gamma = 0.0;

  int sa() const { return n_states * n_actions; }
  int idx(int s, int a) const { return s * n_actions + a; }

  /// Throws std::invalid_argument if shapes, row sums, probability ranges
  /// or the discount are out of contract.
  void validate() const;

  /// Expected one-step reward r(s,a) = sum_s' P(s'|s,a) R(s,a,s').
  VectorXd expected_reward() const;
};

/// Action values, one row per state.
struct QTable {
  MatrixXd values;  // (S, A)

  VectorXd flat() const;
  static QTable from_flat(const VectorXd& v, int n_states, int n_actions);
};

/// Stochastic policy, rows sum to one.
struct TabularPolicy {
  MatrixXd probs;  // (S, A)
};

/// Nonnegative weights over states; normalized when used as a probability
/// measure.
struct StateMeasure {
  VectorXd weights;  // (S)
};

/// Outcome of a bound verification (componentwise and weighted).
struct BoundReport {
  double max_violation = 0.0;    // max over entries of LHS - RHS
  double weighted_violation = 0.0;
  double min_slack = kInf;       // min over entries of RHS - LHS
  double mean_slack = 0.0;
  double identity_error = 0.0;   // proof identity residual, when applicable
  double concentration = std::numeric_limits<double>::quiet_NaN();
  bool vacuous = false;          // infinite concentration coefficient
};

/// Outcome of the squared-TD-error decomposition check.
struct IdentityReport {
  double expected_delta_sq = 0.0;
  double bellman_error_sq = 0.0;
  double variance_term = 0.0;
  double identity_error = 0.0;   // |E[d^2] - (BE^2 + Var)|
};

/// Block-diagonal policy matrix (S, S*A): row s holds pi(.|s) in the
/// columns of state s.
MatrixXd policy_matrix(const TabularPolicy& pi, int n_states, int n_actions);

/// Bellman optimality operator applied once.
QTable bellman_optimality(const TabularMdp& mdp, const QTable& q);

/// Policy Bellman operator r + gamma P Pi^pi Q applied once.
QTable bellman_policy(const TabularMdp& mdp, const QTable& q,
                      const TabularPolicy& pi);

/**
 * Value iteration to sup-norm accuracy `tol`: sweeps stop once the change
 * falls below tol * (1 - gamma) / gamma, which bounds the distance to the
 * fixed point by tol.
 */
QTable solve_q_star(const TabularMdp& mdp, double tol);

/// Policy iteration with direct linear solves; exact up to solver rounding.
QTable solve_q_star_exact(const TabularMdp& mdp);

/// Exact policy evaluation: solves (I - gamma P Pi^pi) Q = r. Reports a
/// numerical failure if the residual exceeds 1e-8.
QTable solve_q_pi(const TabularMdp& mdp, const TabularPolicy& pi);

/// Deterministic greedy policy; ties broken toward the lowest action index.
TabularPolicy greedy_policy(const QTable& q);

/**
 * The matrix A = (I - gamma P Pi^{pi*})^-1 + (I - gamma P Pi^pi)^-1.
 * Asserts that (1-gamma)/2 * A is stochastic (rows nonnegative, summing to
 * one within 1e-10) and that the inversion residual is below 1e-8.
 */
MatrixXd residual_bound_matrix(const TabularMdp& mdp, const TabularPolicy& pi,
                       const TabularPolicy& pi_star);

/**
 * Checks the componentwise and d-weighted bound
 *   Q* - Q^pi <= A |TQ - Q|   for pi greedy w.r.t. Q,
 * together with the intermediate identity
 *   (I - gamma P Pi^pi)(Q^pi - Q) = TQ - Q.
 * `d` is a weight vector over flat state-action indices.
 */
BoundReport verify_residual_bound(const TabularMdp& mdp, const QTable& q,
                          const VectorXd& d);

/**
 * m-step concentration coefficient
 *   c(m) = sup over policy sequences and (s,a) of
 *          (nu Pi^{pi_1} P ... P Pi^{pi_m})(s,a) / (mu Pi^b)(s,a),
 * with c(0) = 1. The supremum is attained by deterministic non-stationary
 * policies and computed by backward dynamic programming on reach
 * probabilities. Returns +inf when absolute continuity fails. Requires b
 * to have full support over actions.
 */
double concentration_c(const TabularMdp& mdp, const StateMeasure& nu,
                       const StateMeasure& mu, const TabularPolicy& b, int m);

/**
 * Discounted concentration coefficient C = (1-gamma) sum_m gamma^m c(m),
 * truncated once the tail bound gamma^m / (1-gamma) * c_max drops below
 * `tol`. Returns +inf if any term is infinite.
 */
double concentration_C(const TabularMdp& mdp, const StateMeasure& nu,
                       const StateMeasure& mu, const TabularPolicy& b,
                       double tol);

/**
 * Checks
 *   sum_{s,a} d(s,a) |Q* - Q^pi|^p
 *     <= [2/(1-gamma)]^p C(nu,mu,b) sum_{s,a} mu(s) b(a|s) |TQ - Q|^p
 * for d(s,a) = nu(s)/|A| and pi greedy w.r.t. Q.
 */
BoundReport verify_concentration_bound(const TabularMdp& mdp, const QTable& q,
                            const StateMeasure& nu, const StateMeasure& mu,
                            const TabularPolicy& b, double p);

/**
 * Certifies, with exact expectations over the transition tensor,
 *   E[delta^2] = E[|TQ - Q|^2] + E[(r + gamma max_a' Q(s',a') - TQ(s,a))^2]
 * under the weighting `d` over flat state-action indices.
 */
IdentityReport verify_bias_variance(const TabularMdp& mdp, const QTable& q,
                                    const VectorXd& d);

/// Random MDP: transition rows from a flat Dirichlet, rewards U[-1, 1].
TabularMdp random_mdp(int n_states, int n_actions, double gamma, Rng& rng);

/// Q-table with entries U[lo, hi].
QTable random_q(const TabularMdp& mdp, Rng& rng, double lo = -1.0,
                double hi = 1.0);

/// Deterministic MDP variant of random_mdp: each (s,a) moves to a single
/// uniformly drawn successor.
TabularMdp random_deterministic_mdp(int n_states, int n_actions, double gamma,
                                    Rng& rng);

/// Uniform state-action weighting d(s,a) = nu(s) / n_actions flattened to
/// length S*A.
VectorXd state_action_weights(const StateMeasure& nu, int n_actions);

/// Random probability measure over states (flat Dirichlet), optionally
/// mixed with the uniform measure for a floor on every state.
StateMeasure random_measure(int n_states, Rng& rng, double uniform_mix = 0.0);

}  // namespace rlim::tabular
