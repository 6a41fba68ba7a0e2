#include "rlim/tabular.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace rlim::tabular {

namespace {

void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

void check_q_shape(const TabularMdp& mdp, const QTable& q) {
  require(q.values.rows() == mdp.n_states && q.values.cols() == mdp.n_actions,
          "Q-table dimensions do not match the MDP");
}

void check_policy_shape(const TabularMdp& mdp, const TabularPolicy& pi) {
  require(pi.probs.rows() == mdp.n_states && pi.probs.cols() == mdp.n_actions,
          "policy dimensions do not match the MDP");
}

/// Per-state maximum of the action values.
VectorXd row_max(const MatrixXd& values) { return values.rowwise().maxCoeff(); }

/// Per-state expectation of the action values under pi.
VectorXd row_expectation(const MatrixXd& values, const MatrixXd& probs) {
  return (values.array() * probs.array()).rowwise().sum().matrix();
}

}  // namespace

void TabularMdp::validate() const {
  require(n_states > 0 && n_actions > 0, "MDP sizes must be positive");
  require(trans.rows() == sa() && trans.cols() == n_states,
          "transition tensor shape mismatch");
  require(reward.rows() == sa() && reward.cols() == n_states,
          "reward tensor shape mismatch");
  require(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
  for (int k = 0; k < sa(); ++k) {
    double row_sum = 0.0;
    for (int s2 = 0; s2 < n_states; ++s2) {
      const double p = trans(k, s2);
      require(p >= 0.0 && p <= 1.0, "transition probability outside [0, 1]");
      row_sum += p;
    }
    require(std::abs(row_sum - 1.0) <= 1e-12,
            "transition row does not sum to one");
  }
}

VectorXd TabularMdp::expected_reward() const {
  return (trans.array() * reward.array()).rowwise().sum().matrix();
}

VectorXd QTable::flat() const {
  const int n_states = int(values.rows());
  const int n_actions = int(values.cols());
  VectorXd v(n_states * n_actions);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) v(s * n_actions + a) = values(s, a);
  return v;
}

QTable QTable::from_flat(const VectorXd& v, int n_states, int n_actions) {
  QTable q;
  q.values.resize(n_states, n_actions);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) q.values(s, a) = v(s * n_actions + a);
  return q;
}

MatrixXd policy_matrix(const TabularPolicy& pi, int n_states, int n_actions) {
  MatrixXd m = MatrixXd::Zero(n_states, n_states * n_actions);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) m(s, s * n_actions + a) = pi.probs(s, a);
  return m;
}

QTable bellman_optimality(const TabularMdp& mdp, const QTable& q) {
  check_q_shape(mdp, q);
  const VectorXd maxq = row_max(q.values);
  const VectorXd flat = mdp.expected_reward() + mdp.gamma * (mdp.trans * maxq);
  return QTable::from_flat(flat, mdp.n_states, mdp.n_actions);
}

QTable bellman_policy(const TabularMdp& mdp, const QTable& q,
                      const TabularPolicy& pi) {
  check_q_shape(mdp, q);
  check_policy_shape(mdp, pi);
  const VectorXd vpi = row_expectation(q.values, pi.probs);
  const VectorXd flat = mdp.expected_reward() + mdp.gamma * (mdp.trans * vpi);
  return QTable::from_flat(flat, mdp.n_states, mdp.n_actions);
}

QTable solve_q_star(const TabularMdp& mdp, double tol) {
  require(tol > 0.0, "tolerance must be positive");
  // Stop once the sweep-to-sweep change guarantees ||Q - Q*||_inf < tol.
  const double threshold = mdp.gamma > 0.0
                               ? tol * (1.0 - mdp.gamma) / mdp.gamma
                               : std::numeric_limits<double>::infinity();
  QTable q;
  q.values = MatrixXd::Zero(mdp.n_states, mdp.n_actions);
  for (long iter = 0; iter < 100000000L; ++iter) {
    QTable next = bellman_optimality(mdp, q);
    const double change = (next.values - q.values).cwiseAbs().maxCoeff();
    q = std::move(next);
    if (change < threshold) break;
  }
  return q;
}

QTable solve_q_pi(const TabularMdp& mdp, const TabularPolicy& pi) {
  check_policy_shape(mdp, pi);
  const int n = mdp.sa();
  const MatrixXd pim = policy_matrix(pi, mdp.n_states, mdp.n_actions);
  const MatrixXd system =
      MatrixXd::Identity(n, n) - mdp.gamma * (mdp.trans * pim);
  const VectorXd r = mdp.expected_reward();
  const VectorXd sol = system.partialPivLu().solve(r);
  const double residual = (system * sol - r).cwiseAbs().maxCoeff();
  if (residual > 1e-8) {
    std::ostringstream msg;
    msg << "policy evaluation solve residual " << residual << " exceeds 1e-8";
    throw std::runtime_error(msg.str());
  }
  return QTable::from_flat(sol, mdp.n_states, mdp.n_actions);
}

QTable solve_q_star_exact(const TabularMdp& mdp) {
  QTable q = solve_q_star(mdp, 1e-8);
  for (int round = 0; round < 500; ++round) {
    const TabularPolicy pi = greedy_policy(q);
    q = solve_q_pi(mdp, pi);
    const QTable tq = bellman_optimality(mdp, q);
    if ((tq.values - q.values).cwiseAbs().maxCoeff() < 1e-12) break;
  }
  return q;
}

TabularPolicy greedy_policy(const QTable& q) {
  const int n_states = int(q.values.rows());
  const int n_actions = int(q.values.cols());
  TabularPolicy pi;
  pi.probs = MatrixXd::Zero(n_states, n_actions);
  for (int s = 0; s < n_states; ++s) {
    int best = 0;
    for (int a = 1; a < n_actions; ++a)
      if (q.values(s, a) > q.values(s, best)) best = a;
    pi.probs(s, best) = 1.0;
  }
  return pi;
}

MatrixXd residual_bound_matrix(const TabularMdp& mdp, const TabularPolicy& pi,
                       const TabularPolicy& pi_star) {
  check_policy_shape(mdp, pi);
  check_policy_shape(mdp, pi_star);
  const int n = mdp.sa();
  const MatrixXd eye = MatrixXd::Identity(n, n);
  const MatrixXd m_star =
      eye - mdp.gamma * (mdp.trans *
                         policy_matrix(pi_star, mdp.n_states, mdp.n_actions));
  const MatrixXd m_pi =
      eye -
      mdp.gamma * (mdp.trans * policy_matrix(pi, mdp.n_states, mdp.n_actions));

  const MatrixXd inv_star = m_star.partialPivLu().solve(eye);
  const MatrixXd inv_pi = m_pi.partialPivLu().solve(eye);
  const double residual =
      std::max((m_star * inv_star - eye).cwiseAbs().maxCoeff(),
               (m_pi * inv_pi - eye).cwiseAbs().maxCoeff());
  if (residual > 1e-8) {
    std::ostringstream msg;
    msg << "bound matrix inversion residual " << residual << " exceeds 1e-8";
    throw std::runtime_error(msg.str());
  }

  MatrixXd a = inv_star + inv_pi;

  // (1-gamma)/2 * A must be a stochastic matrix.
  const MatrixXd scaled = 0.5 * (1.0 - mdp.gamma) * a;
  const double min_entry = scaled.minCoeff();
  const double row_sum_err =
      (scaled.rowwise().sum().array() - 1.0).abs().maxCoeff();
  if (min_entry < -1e-10 || row_sum_err > 1e-10) {
    std::ostringstream msg;
    msg << "bound matrix failed stochasticity check: min entry " << min_entry
        << ", row-sum error " << row_sum_err;
    throw std::runtime_error(msg.str());
  }
  return a;
}

BoundReport verify_residual_bound(const TabularMdp& mdp, const QTable& q,
                          const VectorXd& d) {
  check_q_shape(mdp, q);
  require(d.size() == mdp.sa(), "weight vector length mismatch");

  const TabularPolicy pi = greedy_policy(q);
  const QTable q_star = solve_q_star_exact(mdp);
  const TabularPolicy pi_star = greedy_policy(q_star);
  const QTable q_pi = solve_q_pi(mdp, pi);
  const MatrixXd a = residual_bound_matrix(mdp, pi, pi_star);

  const VectorXd lhs = q_star.flat() - q_pi.flat();
  const VectorXd bellman_residual =
      (bellman_optimality(mdp, q).flat() - q.flat()).cwiseAbs();
  const VectorXd rhs = a * bellman_residual;

  BoundReport report;
  const VectorXd slack = rhs - lhs;
  report.max_violation = (-slack).maxCoeff();
  report.min_slack = slack.minCoeff();
  report.mean_slack = slack.mean();
  report.weighted_violation = d.dot(lhs) - d.dot(rhs);

  // Proof identity: (I - gamma P Pi^pi)(Q^pi - Q) = TQ - Q for greedy pi.
  const int n = mdp.sa();
  const MatrixXd system =
      MatrixXd::Identity(n, n) -
      mdp.gamma * (mdp.trans * policy_matrix(pi, mdp.n_states, mdp.n_actions));
  const VectorXd lhs_id = system * (q_pi.flat() - q.flat());
  const VectorXd rhs_id = bellman_optimality(mdp, q).flat() - q.flat();
  report.identity_error = (lhs_id - rhs_id).cwiseAbs().maxCoeff();
  return report;
}

namespace {

/// Denominator measure (mu Pi^b)(s,a) as a flat vector.
VectorXd behavior_measure(const TabularMdp& mdp, const StateMeasure& mu,
                          const TabularPolicy& b) {
  VectorXd den(mdp.sa());
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a)
      den(mdp.idx(s, a)) = mu.weights(s) * b.probs(s, a);
  return den;
}

void check_full_support(const TabularPolicy& b) {
  require(b.probs.minCoeff() > 0.0,
          "behavior policy must have full support over actions");
}

/**
 * Incremental maximum-reach-probability table. After j calls to advance(),
 * reach(s, t) is the largest probability of occupying state t after j
 * transitions from s, over deterministic action choices.
 */
class ReachTable {
 public:
  explicit ReachTable(const TabularMdp& mdp) : mdp_(&mdp) {
    reach_ = MatrixXd::Identity(mdp.n_states, mdp.n_states);
    per_action_.reserve(mdp.n_actions);
    for (int a = 0; a < mdp.n_actions; ++a) {
      MatrixXd pa(mdp.n_states, mdp.n_states);
      for (int s = 0; s < mdp.n_states; ++s)
        pa.row(s) = mdp.trans.row(mdp.idx(s, a));
      per_action_.push_back(std::move(pa));
    }
  }

  void advance() {
    MatrixXd next = per_action_[0] * reach_;
    for (size_t a = 1; a < per_action_.size(); ++a)
      next = next.cwiseMax(per_action_[a] * reach_);
    reach_ = std::move(next);
  }

  const MatrixXd& reach() const { return reach_; }

 private:
  const TabularMdp* mdp_;
  MatrixXd reach_;
  std::vector<MatrixXd> per_action_;
};

/// c(m) given the reach table already advanced m-1 steps.
double c_from_reach(const TabularMdp& mdp, const StateMeasure& nu,
                    const VectorXd& den, const MatrixXd& reach) {
  const VectorXd num = reach.transpose() * nu.weights;  // num(t) = nu^T reach
  double c = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) {
    if (num(s) <= 0.0) continue;
    for (int a = 0; a < mdp.n_actions; ++a) {
      const double dk = den(mdp.idx(s, a));
      if (dk <= 0.0) return kInf;
      c = std::max(c, num(s) / dk);
    }
  }
  return c;
}

}  // namespace

double concentration_c(const TabularMdp& mdp, const StateMeasure& nu,
                       const StateMeasure& mu, const TabularPolicy& b, int m) {
  require(m >= 0, "m must be nonnegative");
  check_full_support(b);
  if (m == 0) return 1.0;
  const VectorXd den = behavior_measure(mdp, mu, b);
  ReachTable reach(mdp);
  for (int j = 1; j < m; ++j) reach.advance();
  return c_from_reach(mdp, nu, den, reach.reach());
}

double concentration_C(const TabularMdp& mdp, const StateMeasure& nu,
                       const StateMeasure& mu, const TabularPolicy& b,
                       double tol) {
  require(tol > 0.0, "tolerance must be positive");
  check_full_support(b);
  const VectorXd den = behavior_measure(mdp, mu, b);

  double den_min_positive = kInf;
  for (int k = 0; k < den.size(); ++k)
    if (den(k) > 0.0) den_min_positive = std::min(den_min_positive, den(k));
  if (!std::isfinite(den_min_positive)) return kInf;
  const double c_max = 1.0 / den_min_positive;

  double total = (1.0 - mdp.gamma);  // m = 0 term, c(0) = 1
  double gamma_pow = 1.0;
  ReachTable reach(mdp);
  for (long m = 1; m < 2000000L; ++m) {
    gamma_pow *= mdp.gamma;
    if (gamma_pow / (1.0 - mdp.gamma) * c_max < tol) break;
    const double cm = c_from_reach(mdp, nu, den, reach.reach());
    if (!std::isfinite(cm)) return kInf;
    total += (1.0 - mdp.gamma) * gamma_pow * cm;
    reach.advance();
  }
  return total;
}

BoundReport verify_concentration_bound(const TabularMdp& mdp, const QTable& q,
                            const StateMeasure& nu, const StateMeasure& mu,
                            const TabularPolicy& b, double p) {
  check_q_shape(mdp, q);
  require(p >= 1.0, "p must be at least 1");

  const TabularPolicy pi = greedy_policy(q);
  const QTable q_star = solve_q_star_exact(mdp);
  const QTable q_pi = solve_q_pi(mdp, pi);
  const VectorXd d = state_action_weights(nu, mdp.n_actions);
  const VectorXd gap = (q_star.flat() - q_pi.flat()).cwiseAbs();
  const VectorXd bellman_residual =
      (bellman_optimality(mdp, q).flat() - q.flat()).cwiseAbs();
  const VectorXd den = behavior_measure(mdp, mu, b);

  BoundReport report;
  report.concentration = concentration_C(mdp, nu, mu, b, 1e-6);

  double lhs = 0.0, weighted_residual = 0.0;
  for (int k = 0; k < mdp.sa(); ++k) {
    lhs += d(k) * std::pow(gap(k), p);
    weighted_residual += den(k) * std::pow(bellman_residual(k), p);
  }

  if (!std::isfinite(report.concentration)) {
    report.vacuous = true;
    report.max_violation = -kInf;
    report.min_slack = kInf;
    report.mean_slack = kInf;
    return report;
  }

  const double rhs = std::pow(2.0 / (1.0 - mdp.gamma), p) *
                     report.concentration * weighted_residual;
  report.max_violation = lhs - rhs;
  report.weighted_violation = lhs - rhs;
  report.min_slack = rhs - lhs;
  report.mean_slack = rhs - lhs;
  return report;
}

IdentityReport verify_bias_variance(const TabularMdp& mdp, const QTable& q,
                                    const VectorXd& d) {
  check_q_shape(mdp, q);
  require(d.size() == mdp.sa(), "weight vector length mismatch");

  const VectorXd maxq = row_max(q.values);
  IdentityReport report;
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      const int k = mdp.idx(s, a);
      if (d(k) == 0.0) continue;
      const double q_sa = q.values(s, a);
      double mean_target = 0.0;
      for (int s2 = 0; s2 < mdp.n_states; ++s2)
        mean_target +=
            mdp.trans(k, s2) * (mdp.reward(k, s2) + mdp.gamma * maxq(s2));
      double e_delta_sq = 0.0, variance = 0.0;
      for (int s2 = 0; s2 < mdp.n_states; ++s2) {
        const double target = mdp.reward(k, s2) + mdp.gamma * maxq(s2);
        e_delta_sq += mdp.trans(k, s2) * (target - q_sa) * (target - q_sa);
        variance += mdp.trans(k, s2) * (target - mean_target) *
                    (target - mean_target);
      }
      report.expected_delta_sq += d(k) * e_delta_sq;
      report.bellman_error_sq += d(k) * (mean_target - q_sa) * (mean_target - q_sa);
      report.variance_term += d(k) * variance;
    }
  }
  report.identity_error =
      std::abs(report.expected_delta_sq -
               (report.bellman_error_sq + report.variance_term));
  return report;
}

TabularMdp random_mdp(int n_states, int n_actions, double gamma, Rng& rng) {
  TabularMdp mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.gamma = gamma;
  mdp.trans.resize(mdp.sa(), n_states);
  mdp.reward.resize(mdp.sa(), n_states);
  for (int k = 0; k < mdp.sa(); ++k) {
    double sum = 0.0;
    for (int s2 = 0; s2 < n_states; ++s2) {
      const double e = rng.exponential();  // flat Dirichlet via normalized exps
      mdp.trans(k, s2) = e;
      sum += e;
    }
    mdp.trans.row(k) /= sum;
    for (int s2 = 0; s2 < n_states; ++s2)
      mdp.reward(k, s2) = rng.uniform(-1.0, 1.0);
  }
  return mdp;
}

TabularMdp random_deterministic_mdp(int n_states, int n_actions, double gamma,
                                    Rng& rng) {
  TabularMdp mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.gamma = gamma;
  mdp.trans = MatrixXd::Zero(mdp.sa(), n_states);
  mdp.reward = MatrixXd::Zero(mdp.sa(), n_states);
  for (int k = 0; k < mdp.sa(); ++k) {
    const int s2 = rng.uniform_int(n_states);
    mdp.trans(k, s2) = 1.0;
    mdp.reward(k, s2) = rng.uniform(-1.0, 1.0);
  }
  return mdp;
}

QTable random_q(const TabularMdp& mdp, Rng& rng, double lo, double hi) {
  QTable q;
  q.values.resize(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a)
      q.values(s, a) = rng.uniform(lo, hi);
  return q;
}

VectorXd state_action_weights(const StateMeasure& nu, int n_actions) {
  const int n_states = int(nu.weights.size());
  VectorXd d(n_states * n_actions);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a)
      d(s * n_actions + a) = nu.weights(s) / double(n_actions);
  return d;
}

StateMeasure random_measure(int n_states, Rng& rng, double uniform_mix) {
  StateMeasure nu;
  nu.weights.resize(n_states);
  double sum = 0.0;
  for (int s = 0; s < n_states; ++s) {
    nu.weights(s) = rng.exponential();
    sum += nu.weights(s);
  }
  nu.weights /= sum;
  nu.weights = (1.0 - uniform_mix) * nu.weights +
               uniform_mix * VectorXd::Constant(n_states, 1.0 / n_states);
  return nu;
}

}  // namespace rlim::tabular
