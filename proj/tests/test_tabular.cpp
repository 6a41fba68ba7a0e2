#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "rlim/rng.hpp"
#include "rlim/tabular.hpp"

using namespace rlim;
using namespace rlim::tabular;

namespace {

TabularMdp single_state_mdp(double reward, double gamma, int n_actions = 1) {
  TabularMdp mdp;
  mdp.n_states = 1;
  mdp.n_actions = n_actions;
  mdp.gamma = gamma;
  mdp.trans = MatrixXd::Ones(n_actions, 1);
  mdp.reward = MatrixXd::Constant(n_actions, 1, reward);
  return mdp;
}

QTable zero_q(const TabularMdp& mdp) {
  QTable q;
  q.values = MatrixXd::Zero(mdp.n_states, mdp.n_actions);
  return q;
}

/// Brute-force per-entry evaluation of the optimality operator.
QTable bellman_oracle(const TabularMdp& mdp, const QTable& q) {
  QTable out = zero_q(mdp);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      double acc = 0.0;
      for (int s2 = 0; s2 < mdp.n_states; ++s2) {
        double best = q.values(s2, 0);
        for (int a2 = 1; a2 < mdp.n_actions; ++a2)
          best = std::max(best, q.values(s2, a2));
        acc += mdp.trans(mdp.idx(s, a), s2) *
               (mdp.reward(mdp.idx(s, a), s2) + mdp.gamma * best);
      }
      out.values(s, a) = acc;
    }
  }
  return out;
}

/// Iterative policy evaluation, independent of the linear-solve path.
QTable policy_eval_oracle(const TabularMdp& mdp, const TabularPolicy& pi,
                          int sweeps) {
  QTable q = zero_q(mdp);
  for (int i = 0; i < sweeps; ++i) q = bellman_policy(mdp, q, pi);
  return q;
}

TabularPolicy uniform_policy(const TabularMdp& mdp) {
  TabularPolicy pi;
  pi.probs = MatrixXd::Constant(mdp.n_states, mdp.n_actions,
                                1.0 / mdp.n_actions);
  return pi;
}

TabularPolicy random_policy(const TabularMdp& mdp, Rng& rng) {
  TabularPolicy pi;
  pi.probs.resize(mdp.n_states, mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s) {
    double sum = 0.0;
    for (int a = 0; a < mdp.n_actions; ++a) {
      pi.probs(s, a) = rng.exponential();
      sum += pi.probs(s, a);
    }
    pi.probs.row(s) /= sum;
  }
  return pi;
}

/// All deterministic policies of a small MDP, as indicator matrices.
std::vector<TabularPolicy> all_deterministic_policies(const TabularMdp& mdp) {
  std::vector<TabularPolicy> out;
  long count = 1;
  for (int s = 0; s < mdp.n_states; ++s) count *= mdp.n_actions;
  for (long code = 0; code < count; ++code) {
    TabularPolicy pi;
    pi.probs = MatrixXd::Zero(mdp.n_states, mdp.n_actions);
    long rem = code;
    for (int s = 0; s < mdp.n_states; ++s) {
      pi.probs(s, int(rem % mdp.n_actions)) = 1.0;
      rem /= mdp.n_actions;
    }
    out.push_back(pi);
  }
  return out;
}

VectorXd policy_flat_measure(const TabularMdp& mdp, const VectorXd& state_m,
                             const TabularPolicy& pi) {
  VectorXd out(mdp.sa());
  for (int s = 0; s < mdp.n_states; ++s)
    for (int a = 0; a < mdp.n_actions; ++a)
      out(mdp.idx(s, a)) = state_m(s) * pi.probs(s, a);
  return out;
}

}  // namespace

TEST_CASE("bellman optimality on single-state MDP") {
  const TabularMdp mdp = single_state_mdp(1.0, 0.99);
  const QTable tq = bellman_optimality(mdp, zero_q(mdp));
  CHECK(tq.values(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("bellman optimality fixed point at Q*") {
  Rng rng(11);
  const TabularMdp mdp = random_mdp(6, 3, 0.9, rng);
  const QTable q_star = solve_q_star_exact(mdp);
  const QTable tq = bellman_optimality(mdp, q_star);
  CHECK((tq.values - q_star.values).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("bellman optimality matches triple-loop oracle") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const TabularMdp mdp = random_mdp(5, 3, 0.95, rng);
    const QTable q = trial == 0 ? zero_q(mdp) : random_q(mdp, rng);
    const QTable fast = bellman_optimality(mdp, q);
    const QTable slow = bellman_oracle(mdp, q);
    CHECK((fast.values - slow.values).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("bellman policy with greedy policy equals optimality operator") {
  Rng rng(13);
  const TabularMdp mdp = random_mdp(7, 4, 0.9, rng);
  const QTable q = random_q(mdp, rng);
  const QTable via_pi = bellman_policy(mdp, q, greedy_policy(q));
  const QTable via_max = bellman_optimality(mdp, q);
  CHECK((via_pi.values - via_max.values).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("bellman policy on single-state MDP is r + gamma Q") {
  const TabularMdp mdp = single_state_mdp(0.5, 0.8);
  QTable q = zero_q(mdp);
  q.values(0, 0) = 2.0;
  const QTable tq = bellman_policy(mdp, q, uniform_policy(mdp));
  CHECK(tq.values(0, 0) == doctest::Approx(0.5 + 0.8 * 2.0));
}

TEST_CASE("bellman policy matches dense matrix-form oracle") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const TabularMdp mdp = random_mdp(6, 3, 0.92, rng);
    const QTable q = random_q(mdp, rng);
    const TabularPolicy pi = random_policy(mdp, rng);
    const QTable fast = bellman_policy(mdp, q, pi);
    const MatrixXd pim = policy_matrix(pi, mdp.n_states, mdp.n_actions);
    const VectorXd oracle =
        mdp.expected_reward() + mdp.gamma * mdp.trans * pim * q.flat();
    CHECK((fast.flat() - oracle).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("solve_q_star geometric series") {
  const TabularMdp mdp = single_state_mdp(1.0, 0.99);
  const QTable q = solve_q_star(mdp, 1e-6);
  CHECK(q.values(0, 0) == doctest::Approx(100.0).epsilon(1e-6));
}

TEST_CASE("solve_q_star on two-state chain with absorbing goal") {
  // State 0 start, state 1 absorbing goal. Action 0 stays, action 1 moves
  // to the goal; every step from the start costs -1, the goal is free.
  TabularMdp mdp;
  mdp.n_states = 2;
  mdp.n_actions = 2;
  mdp.gamma = 0.9;
  mdp.trans = MatrixXd::Zero(4, 2);
  mdp.reward = MatrixXd::Zero(4, 2);
  mdp.trans(mdp.idx(0, 0), 0) = 1.0;
  mdp.reward(mdp.idx(0, 0), 0) = -1.0;
  mdp.trans(mdp.idx(0, 1), 1) = 1.0;
  mdp.reward(mdp.idx(0, 1), 1) = -1.0;
  mdp.trans(mdp.idx(1, 0), 1) = 1.0;
  mdp.trans(mdp.idx(1, 1), 1) = 1.0;
  mdp.validate();

  const QTable q = solve_q_star(mdp, 1e-9);
  CHECK(q.values(0, 1) == doctest::Approx(-1.0).epsilon(1e-7));
  CHECK(q.values(0, 0) == doctest::Approx(-1.9).epsilon(1e-7));
  CHECK(q.values(1, 0) == doctest::Approx(0.0).epsilon(1e-7));
}

TEST_CASE("solve_q_star fixed-point residual") {
  Rng rng(23);
  const double tol = 1e-7;
  for (int trial = 0; trial < 10; ++trial) {
    const TabularMdp mdp = random_mdp(8, 3, 0.95, rng);
    const QTable q = solve_q_star(mdp, tol);
    const QTable tq = bellman_optimality(mdp, q);
    CHECK((tq.values - q.values).cwiseAbs().maxCoeff() < 2 * tol);
  }
}

TEST_CASE("solve_q_pi uniform policy single state") {
  const TabularMdp mdp = single_state_mdp(1.0, 0.5);
  const QTable q = solve_q_pi(mdp, uniform_policy(mdp));
  CHECK(q.values(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("solve_q_pi of optimal greedy policy recovers Q*") {
  Rng rng(29);
  const TabularMdp mdp = random_mdp(6, 4, 0.9, rng);
  const QTable q_star = solve_q_star_exact(mdp);
  const QTable q_pi = solve_q_pi(mdp, greedy_policy(q_star));
  CHECK((q_pi.values - q_star.values).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("solve_q_pi agrees with iterative policy evaluation") {
  Rng rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    const TabularMdp mdp = random_mdp(6, 3, 0.8, rng);
    const TabularPolicy pi = random_policy(mdp, rng);
    const QTable direct = solve_q_pi(mdp, pi);
    const QTable iterated = policy_eval_oracle(mdp, pi, 400);
    CHECK((direct.values - iterated.values).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("solve_q_pi satisfies its own Bellman equation") {
  Rng rng(37);
  for (int trial = 0; trial < 10; ++trial) {
    const TabularMdp mdp = random_mdp(7, 3, 0.97, rng);
    const TabularPolicy pi = random_policy(mdp, rng);
    const QTable q_pi = solve_q_pi(mdp, pi);
    const QTable tq = bellman_policy(mdp, q_pi, pi);
    CHECK((tq.values - q_pi.values).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("greedy policy basics") {
  QTable q;
  q.values.resize(2, 3);
  q.values << 0.1, 0.9, 0.2, 0.5, 0.5, 0.5;
  const TabularPolicy pi = greedy_policy(q);
  CHECK(pi.probs(0, 1) == 1.0);
  CHECK(pi.probs(1, 0) == 1.0);  // all-equal row breaks to action 0
  CHECK(pi.probs.row(0).sum() == doctest::Approx(1.0));
}

TEST_CASE("greedy policy matches per-row scan oracle") {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    QTable q;
    q.values.resize(5, 4);
    for (int s = 0; s < 5; ++s)
      for (int a = 0; a < 4; ++a) q.values(s, a) = rng.uniform(-1, 1);
    const TabularPolicy pi = greedy_policy(q);
    for (int s = 0; s < 5; ++s) {
      int best = 0;
      for (int a = 1; a < 4; ++a)
        if (q.values(s, a) > q.values(s, best)) best = a;
      CHECK(pi.probs(s, best) == 1.0);
    }
  }
}

TEST_CASE("greedy policy invariant under constant shift") {
  Rng rng(43);
  const TabularMdp mdp = random_mdp(6, 4, 0.9, rng);
  const QTable q = random_q(mdp, rng);
  QTable shifted = q;
  shifted.values.array() += 17.25;
  CHECK(greedy_policy(q).probs == greedy_policy(shifted).probs);
}

TEST_CASE("optimality operator is a gamma-contraction") {
  Rng rng(47);
  for (int trial = 0; trial < 20; ++trial) {
    const TabularMdp mdp = random_mdp(6, 3, 0.9, rng);
    const QTable q1 = random_q(mdp, rng, -5, 5);
    const QTable q2 = random_q(mdp, rng, -5, 5);
    const double lhs = (bellman_optimality(mdp, q1).values -
                        bellman_optimality(mdp, q2).values)
                           .cwiseAbs()
                           .maxCoeff();
    const double rhs =
        mdp.gamma * (q1.values - q2.values).cwiseAbs().maxCoeff();
    CHECK(lhs <= rhs + 1e-12);
  }
}

TEST_CASE("optimality operator dominates every policy operator") {
  Rng rng(53);
  for (int trial = 0; trial < 20; ++trial) {
    const TabularMdp mdp = random_mdp(5, 3, 0.9, rng);
    const QTable q = random_q(mdp, rng);
    const TabularPolicy pi = random_policy(mdp, rng);
    const MatrixXd diff =
        bellman_optimality(mdp, q).values - bellman_policy(mdp, q, pi).values;
    CHECK(diff.minCoeff() >= -1e-12);
  }
}

TEST_CASE("residual bound matrix scalar case") {
  const TabularMdp mdp = single_state_mdp(1.0, 0.9);
  const TabularPolicy pi = uniform_policy(mdp);
  const MatrixXd a = residual_bound_matrix(mdp, pi, pi);
  CHECK(a(0, 0) == doctest::Approx(2.0 / (1.0 - 0.9)));
}

TEST_CASE("bound matrix with pi = pi* doubles a single inverse") {
  Rng rng(59);
  const TabularMdp mdp = random_mdp(5, 3, 0.9, rng);
  const TabularPolicy pi_star = greedy_policy(solve_q_star_exact(mdp));
  const MatrixXd a = residual_bound_matrix(mdp, pi_star, pi_star);
  const int n = mdp.sa();
  const MatrixXd system =
      MatrixXd::Identity(n, n) -
      mdp.gamma * mdp.trans * policy_matrix(pi_star, mdp.n_states,
                                            mdp.n_actions);
  const MatrixXd expected =
      2.0 * system.partialPivLu().solve(MatrixXd::Identity(n, n));
  CHECK((a - expected).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("bound matrix rows sum to 2/(1-gamma)") {
  Rng rng(61);
  for (int trial = 0; trial < 10; ++trial) {
    const TabularMdp mdp = random_mdp(6, 3, 0.95, rng);
    const TabularPolicy pi = random_policy(mdp, rng);
    const TabularPolicy pi_star = greedy_policy(solve_q_star_exact(mdp));
    const MatrixXd a = residual_bound_matrix(mdp, pi, pi_star);
    const double expected = 2.0 / (1.0 - mdp.gamma);
    CHECK((a.rowwise().sum().array() - expected).abs().maxCoeff() <
          1e-8 * expected);
  }
}

TEST_CASE("residual bound is tight at Q*") {
  Rng rng(67);
  const TabularMdp mdp = random_mdp(6, 3, 0.9, rng);
  const QTable q_star = solve_q_star_exact(mdp);
  const VectorXd d =
      VectorXd::Constant(mdp.sa(), 1.0 / mdp.sa());
  const BoundReport report = verify_residual_bound(mdp, q_star, d);
  CHECK(report.max_violation <= 1e-8);
  CHECK(report.identity_error <= 1e-8);
  CHECK(report.min_slack <= 1e-6);  // bound is tight at the fixed point
}

TEST_CASE("residual bound under constant shift of Q*") {
  Rng rng(71);
  const TabularMdp mdp = random_mdp(5, 3, 0.9, rng);
  const QTable q_star = solve_q_star_exact(mdp);
  QTable q = q_star;
  const double c = 0.75;
  q.values.array() += c;
  const VectorXd d = VectorXd::Constant(mdp.sa(), 1.0 / mdp.sa());
  const BoundReport report = verify_residual_bound(mdp, q, d);
  CHECK(report.max_violation <= 1e-8);
  // LHS stays zero while the residual grows to (1-gamma)c, so each slack
  // entry approaches A * (1-gamma) c = 2c.
  CHECK(report.min_slack == doctest::Approx(2.0 * c).epsilon(1e-6));
}

TEST_CASE("residual bound randomized sweep has no violations") {
  Rng rng(73);
  for (int trial = 0; trial < 30; ++trial) {
    const int n_states = 2 + rng.uniform_int(9);
    const int n_actions = 2 + rng.uniform_int(3);
    const double gamma = trial % 2 == 0 ? 0.9 : 0.99;
    const TabularMdp mdp = random_mdp(n_states, n_actions, gamma, rng);
    const QTable q = random_q(mdp, rng);
    const StateMeasure nu = random_measure(n_states, rng);
    const VectorXd d = state_action_weights(nu, n_actions);
    const BoundReport report = verify_residual_bound(mdp, q, d);
    CHECK(report.max_violation <= 1e-8);
    CHECK(report.weighted_violation <= 1e-8);
    CHECK(report.identity_error <= 1e-8);
  }
}

TEST_CASE("concentration c is one on the single-state MDP") {
  const TabularMdp mdp = single_state_mdp(0.0, 0.9);
  StateMeasure nu{VectorXd::Ones(1)};
  StateMeasure mu{VectorXd::Ones(1)};
  const TabularPolicy b = uniform_policy(mdp);
  for (int m = 0; m <= 3; ++m)
    CHECK(concentration_c(mdp, nu, mu, b, m) == doctest::Approx(1.0));
}

TEST_CASE("concentration c infinite when mu misses reachable mass") {
  Rng rng(79);
  const TabularMdp mdp = random_mdp(3, 2, 0.9, rng);
  StateMeasure nu{VectorXd::Constant(3, 1.0 / 3)};
  StateMeasure mu{VectorXd::Zero(3)};
  mu.weights(0) = 1.0;  // states 1 and 2 carry no behavior mass
  const TabularPolicy b = uniform_policy(mdp);
  CHECK(std::isinf(concentration_c(mdp, nu, mu, b, 1)));
}

TEST_CASE("concentration c matches brute-force policy enumeration") {
  Rng rng(83);
  for (int trial = 0; trial < 5; ++trial) {
    const TabularMdp mdp = random_mdp(3, 2, 0.9, rng);
    const StateMeasure nu = random_measure(3, rng, 0.2);
    const StateMeasure mu = random_measure(3, rng, 0.2);
    const TabularPolicy b = uniform_policy(mdp);
    const VectorXd den = [&] {
      VectorXd v(mdp.sa());
      for (int s = 0; s < 3; ++s)
        for (int a = 0; a < 2; ++a)
          v(mdp.idx(s, a)) = mu.weights(s) * b.probs(s, a);
      return v;
    }();
    const auto policies = all_deterministic_policies(mdp);

    // m = 1: nu Pi^{pi1}
    double best1 = 0.0;
    for (const auto& pi1 : policies) {
      const VectorXd occ = policy_flat_measure(mdp, nu.weights, pi1);
      for (int k = 0; k < mdp.sa(); ++k)
        if (occ(k) > 0.0) best1 = std::max(best1, occ(k) / den(k));
    }
    CHECK(concentration_c(mdp, nu, mu, b, 1) ==
          doctest::Approx(best1).epsilon(1e-12));

    // m = 2: nu Pi^{pi1} P Pi^{pi2}
    double best2 = 0.0;
    for (const auto& pi1 : policies) {
      const VectorXd occ1 = policy_flat_measure(mdp, nu.weights, pi1);
      const VectorXd state_m = mdp.trans.transpose() * occ1;
      for (const auto& pi2 : policies) {
        const VectorXd occ2 = policy_flat_measure(mdp, state_m, pi2);
        for (int k = 0; k < mdp.sa(); ++k)
          if (occ2(k) > 0.0) best2 = std::max(best2, occ2(k) / den(k));
      }
    }
    CHECK(concentration_c(mdp, nu, mu, b, 2) ==
          doctest::Approx(best2).epsilon(1e-12));
  }
}

TEST_CASE("concentration C on the single-state MDP") {
  const TabularMdp mdp = single_state_mdp(0.0, 0.9);
  StateMeasure nu{VectorXd::Ones(1)};
  StateMeasure mu{VectorXd::Ones(1)};
  const TabularPolicy b = uniform_policy(mdp);
  CHECK(concentration_C(mdp, nu, mu, b, 1e-6) ==
        doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("concentration C infinite without absolute continuity") {
  Rng rng(89);
  const TabularMdp mdp = random_mdp(3, 2, 0.9, rng);
  StateMeasure nu{VectorXd::Constant(3, 1.0 / 3)};
  StateMeasure mu{VectorXd::Zero(3)};
  mu.weights(2) = 1.0;
  const TabularPolicy b = uniform_policy(mdp);
  CHECK(std::isinf(concentration_C(mdp, nu, mu, b, 1e-6)));
}

TEST_CASE("concentration C stable under tolerance refinement") {
  Rng rng(97);
  const TabularMdp mdp = random_mdp(4, 2, 0.9, rng);
  const StateMeasure nu = random_measure(4, rng, 0.3);
  const StateMeasure mu = random_measure(4, rng, 0.3);
  const TabularPolicy b = uniform_policy(mdp);
  const double tol = 1e-5;
  const double coarse = concentration_C(mdp, nu, mu, b, tol);
  const double fine = concentration_C(mdp, nu, mu, b, tol / 10);
  CHECK(std::abs(coarse - fine) < tol);
}

TEST_CASE("concentration bound holds at Q*") {
  Rng rng(101);
  const TabularMdp mdp = random_mdp(5, 3, 0.9, rng);
  const QTable q_star = solve_q_star_exact(mdp);
  const StateMeasure nu = random_measure(5, rng, 0.3);
  const StateMeasure mu = random_measure(5, rng, 0.3);
  const TabularPolicy b = uniform_policy(mdp);
  const BoundReport report = verify_concentration_bound(mdp, q_star, nu, mu, b, 1.0);
  CHECK_FALSE(report.vacuous);
  CHECK(report.max_violation <= 1e-10);
}

TEST_CASE("concentration bound single-state closed form, p = 1") {
  const TabularMdp mdp = single_state_mdp(0.7, 0.9);
  StateMeasure nu{VectorXd::Ones(1)};
  StateMeasure mu{VectorXd::Ones(1)};
  const TabularPolicy b = uniform_policy(mdp);
  const QTable q = zero_q(mdp);  // Bellman residual is exactly r
  const BoundReport report = verify_concentration_bound(mdp, q, nu, mu, b, 1.0);
  // LHS is zero (only one policy exists); RHS = 2/(1-gamma) * C * |r|.
  const double expected_rhs = 2.0 / (1.0 - 0.9) * report.concentration * 0.7;
  CHECK(report.concentration == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(report.min_slack == doctest::Approx(expected_rhs).epsilon(1e-9));
}

TEST_CASE("concentration bound randomized sweep, p in {1,2}") {
  Rng rng(103);
  for (int trial = 0; trial < 10; ++trial) {
    const int n_states = 2 + rng.uniform_int(5);
    const TabularMdp mdp = random_mdp(n_states, 3, 0.9, rng);
    const QTable q = random_q(mdp, rng);
    const StateMeasure nu = random_measure(n_states, rng, 0.3);
    const StateMeasure mu = random_measure(n_states, rng, 0.3);
    const TabularPolicy b = uniform_policy(mdp);
    for (double p : {1.0, 2.0}) {
      const BoundReport report = verify_concentration_bound(mdp, q, nu, mu, b, p);
      CHECK_FALSE(report.vacuous);
      CHECK(report.max_violation <= 1e-8);
    }
  }
}

TEST_CASE("bias-variance identity on deterministic MDPs") {
  Rng rng(107);
  for (int trial = 0; trial < 10; ++trial) {
    const TabularMdp mdp = random_deterministic_mdp(6, 3, 0.9, rng);
    const QTable q = random_q(mdp, rng);
    const VectorXd d = VectorXd::Constant(mdp.sa(), 1.0 / mdp.sa());
    const IdentityReport report = verify_bias_variance(mdp, q, d);
    CHECK(report.variance_term == 0.0);
    CHECK(report.identity_error <= 1e-12);
    CHECK(report.expected_delta_sq ==
          doctest::Approx(report.bellman_error_sq).epsilon(1e-12));
  }
}

TEST_CASE("bias-variance terms vanish at Q* of a deterministic MDP") {
  Rng rng(109);
  const TabularMdp mdp = random_deterministic_mdp(5, 2, 0.9, rng);
  const QTable q_star = solve_q_star_exact(mdp);
  const VectorXd d = VectorXd::Constant(mdp.sa(), 1.0 / mdp.sa());
  const IdentityReport report = verify_bias_variance(mdp, q_star, d);
  CHECK(report.expected_delta_sq < 1e-15);
  CHECK(report.bellman_error_sq < 1e-15);
  CHECK(report.variance_term == 0.0);
}

TEST_CASE("bias-variance identity vs hand computation on 2-state MDP") {
  // One action. From state 0: to state 0 w.p. 0.3 (reward 0.5), to state 1
  // w.p. 0.7 (reward -0.25). State 1 absorbs with zero reward.
  TabularMdp mdp;
  mdp.n_states = 2;
  mdp.n_actions = 1;
  mdp.gamma = 0.5;
  mdp.trans.resize(2, 2);
  mdp.reward.resize(2, 2);
  mdp.trans << 0.3, 0.7, 0.0, 1.0;
  mdp.reward << 0.5, -0.25, 0.0, 0.0;
  mdp.validate();

  QTable q;
  q.values.resize(2, 1);
  q.values << 0.2, -0.1;

  // Hand-enumerated outcomes from (s=0):
  const double t_a = 0.5 + 0.5 * 0.2;     // to state 0
  const double t_b = -0.25 + 0.5 * -0.1;  // to state 1
  const double mean_t = 0.3 * t_a + 0.7 * t_b;
  const double e_delta_sq =
      0.3 * (t_a - 0.2) * (t_a - 0.2) + 0.7 * (t_b - 0.2) * (t_b - 0.2);
  const double be_sq = (mean_t - 0.2) * (mean_t - 0.2);
  const double variance = 0.3 * (t_a - mean_t) * (t_a - mean_t) +
                          0.7 * (t_b - mean_t) * (t_b - mean_t);

  VectorXd d(2);
  d << 1.0, 0.0;  // weight only the stochastic state
  const IdentityReport report = verify_bias_variance(mdp, q, d);
  CHECK(report.expected_delta_sq == doctest::Approx(e_delta_sq).epsilon(1e-14));
  CHECK(report.bellman_error_sq == doctest::Approx(be_sq).epsilon(1e-14));
  CHECK(report.variance_term == doctest::Approx(variance).epsilon(1e-14));
  CHECK(report.identity_error <= 1e-14);
}

TEST_CASE("bias-variance identity on stochastic random MDPs") {
  Rng rng(113);
  for (int trial = 0; trial < 20; ++trial) {
    const TabularMdp mdp = random_mdp(6, 3, 0.95, rng);
    const QTable q = random_q(mdp, rng);
    const StateMeasure nu = random_measure(6, rng);
    const VectorXd d = state_action_weights(nu, 3);
    const IdentityReport report = verify_bias_variance(mdp, q, d);
    CHECK(report.identity_error <= 1e-10);
    CHECK(report.variance_term > 0.0);
  }
}

TEST_CASE("mdp validation rejects malformed inputs") {
  TabularMdp mdp = single_state_mdp(1.0, 0.9);
  CHECK_NOTHROW(mdp.validate());
  mdp.gamma = 1.0;
  CHECK_THROWS_AS(mdp.validate(), std::invalid_argument);
  mdp.gamma = 0.9;
  mdp.trans(0, 0) = 0.5;
  CHECK_THROWS_AS(mdp.validate(), std::invalid_argument);
}

TEST_CASE("dimension mismatches are rejected") {
  Rng rng(127);
  const TabularMdp mdp = random_mdp(4, 2, 0.9, rng);
  QTable bad;
  bad.values = MatrixXd::Zero(3, 2);
  CHECK_THROWS_AS(bellman_optimality(mdp, bad), std::invalid_argument);
  TabularPolicy bad_pi;
  bad_pi.probs = MatrixXd::Constant(4, 3, 1.0 / 3);
  CHECK_THROWS_AS(solve_q_pi(mdp, bad_pi), std::invalid_argument);
}

TEST_CASE("behavior policy without full support is rejected") {
  Rng rng(131);
  const TabularMdp mdp = random_mdp(3, 2, 0.9, rng);
  StateMeasure nu{VectorXd::Constant(3, 1.0 / 3)};
  StateMeasure mu{VectorXd::Constant(3, 1.0 / 3)};
  TabularPolicy b;
  b.probs = MatrixXd::Zero(3, 2);
  b.probs.col(0).setOnes();
  CHECK_THROWS_AS(concentration_c(mdp, nu, mu, b, 1), std::invalid_argument);
}
