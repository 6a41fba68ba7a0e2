#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "rlim/agents.hpp"
#include "rlim/approx.hpp"
#include "rlim/envs.hpp"
#include "rlim/metrics.hpp"
#include "rlim/rng.hpp"

namespace rlim::measures {

using agents::ReplayBuffer;
using agents::Transition;
using approx::QFunction;
using envs::Environment;
using envs::EnvSnapshot;
using envs::Observation;

// ---------------------------------------------------------------------------
// Evaluation sets for the TD-error proxy

enum class EvalStrategy { Buffer, Reservoir, Discounted };

/**
 * Transition store backing the TD-error interference proxy. `Buffer` keeps
 * the most recent transitions (FIFO), `Reservoir` a uniform sample of the
 * whole stream, and `Discounted` a reservoir re-weighted per item by
 * (1-gamma) gamma^t for the episode step t at which it was recorded.
 */
class EvalSet {
 public:
  EvalSet(EvalStrategy strategy, int capacity, std::uint64_t seed,
          double gamma = 0.99);

  void add(const Transition& tr);

  EvalStrategy strategy() const { return strategy_; }
  std::size_t size() const { return items_.size(); }
  long items_seen() const { return items_seen_; }
  const std::vector<Transition>& items() const { return items_; }

  /// Per-item weights before normalization: uniform, or (1-gamma) gamma^t.
  std::vector<double> weights() const;

 private:
  EvalStrategy strategy_;
  int capacity_;
  double gamma_;
  Rng rng_;
  long items_seen_ = 0;
  std::size_t fifo_head_ = 0;
  std::vector<Transition> items_;
};

/// Standard reservoir insertion; requires a reservoir-backed set.
void reservoir_update(EvalSet& eval, const Transition& tr);

// ---------------------------------------------------------------------------
// TD errors and the approximate interference

/// delta = r + gamma max_a' Q(s', a') - Q(s, a); terminal transitions drop
/// the bootstrap term.
double td_error(const QFunction& q, const Transition& tr, double gamma);

/// Weighted mean over the eval set of delta_curr^2 - delta_prev^2, weights
/// normalized to sum to one.
double aei(const QFunction& q_prev, const QFunction& q_curr,
           const EvalSet& eval, double gamma);

// ---------------------------------------------------------------------------
// Rollout-based optimality-residual estimation

/// Fixed (state snapshot, action) draws from d plus the seed that derives
/// per-rollout generator streams. Reusing one sample set across parameter
/// snapshots gives common random numbers, so estimate differences telescope
/// exactly.
struct OrSampleSet {
  std::vector<std::pair<EnvSnapshot, int>> pairs;
  std::uint64_t rollout_seed = 0;
};

/// n_pairs draws of (start snapshot, uniform action) from the environment's
/// start distribution.
OrSampleSet make_or_samples(Environment& env, int n_pairs, std::uint64_t seed);

/// Two-Rooms has a point-mass start state, so d is the uniform mixture over
/// the four forced actions; enumerating them makes the d-expectation exact.
OrSampleSet make_two_rooms_exact_samples(int room, std::uint64_t seed = 0);

/// Room-covering measure for Two-Rooms interference: uniform grid cells
/// crossed with uniform actions. A point-mass d collapses the estimator on
/// this environment because truncated rollouts from one cell tie exactly.
OrSampleSet make_two_rooms_room_samples(int room, int n_pairs,
                                        std::uint64_t seed);

/// Smallest H with gamma^H < tail_tol.
int horizon_for(double gamma, double tail_tol);

/// Discounted return of one rollout: the forced action first, then the
/// greedy policy of `policy_q`, truncated at `horizon` steps.
double rollout_return(Environment& env, const QFunction& policy_q,
                      int forced_action, int horizon, double gamma);

struct OrEstimate {
  /// -E_d[Q^pi(S,A)] up to Monte-Carlo error. The optimal-value term of the
  /// optimality residual is constant in the parameters, so it cancels in
  /// interference differences and is omitted here.
  double proxy = 0.0;
  std::vector<double> per_pair_returns;
};

OrEstimate estimate_or(const QFunction& policy_q, Environment& env,
                       const OrSampleSet& samples, int n_rollouts, int horizon,
                       double gamma);

/// Signed expected interference of one update: positive means degradation.
/// Both estimates must come from the same sample set.
double expected_interference(const OrEstimate& before, const OrEstimate& after);

// ---------------------------------------------------------------------------
// Interference records

struct InterferenceRecord {
  long step = 0;
  double ei = 0.0;
  double aei_buffer = 0.0;
  double aei_reservoir = 0.0;
  double aei_discounted = 0.0;
  double or_before = 0.0;
  double or_after = 0.0;
};

/// Time-ordered interference records; steps must strictly increase.
class InterferenceSeries {
 public:
  void append(InterferenceRecord record);
  const std::vector<InterferenceRecord>& records() const { return records_; }
  std::vector<double> ei_values() const;

 private:
  std::vector<InterferenceRecord> records_;
};

// ---------------------------------------------------------------------------
// Tail statistics over an interference window

/// Mean of the values at or above the (1-alpha) percentile.
double eti(const std::vector<double>& series, double alpha = 0.1);

/// Interquartile range of the series.
double interference_dispersion(const std::vector<double>& series);

// ---------------------------------------------------------------------------
// Gradient alignment diagnostic

/// Dot product of two per-sample loss gradients; positive means an update
/// on one sample also reduces the loss on the other to first order.
double grad_alignment(const Eigen::VectorXd& grad_i,
                      const Eigen::VectorXd& grad_j);

// ---------------------------------------------------------------------------
// Off-policy-evaluation baseline

/**
 * Expected-update off-policy evaluation of the two greedy policies from
 * replayed data: each evaluation net starts from the corresponding
 * parameters and is swept `epochs` times over the buffer with targets
 * r + gamma Q_hat(s', pi(s')) for pi greedy under the original parameters.
 * Returns the mean over d_samples of Q_hat_prev - Q_hat_curr.
 */
template <typename TrainableQ>
double ope_ei_baseline(const ReplayBuffer& buffer, const TrainableQ& q_prev,
                       const TrainableQ& q_curr,
                       const std::vector<std::pair<Observation, int>>& d_samples,
                       double gamma, int epochs = 10, double lr = 0.01) {
  if (buffer.size() == 0)
    throw std::invalid_argument("OPE baseline needs a non-empty buffer");

  auto fit = [&](const TrainableQ& frozen) {
    TrainableQ evaluated = frozen;
    for (int epoch = 0; epoch < epochs; ++epoch) {
      for (std::size_t i = 0; i < buffer.size(); ++i) {
        const Transition& tr = buffer.at(i);
        double target = tr.reward;
        if (!tr.terminal) {
          const int pi_action = approx::greedy_action(frozen, tr.next_obs);
          target += gamma * evaluated.values(tr.next_obs)(pi_action);
        }
        evaluated.td_update(tr.obs, tr.action, target, lr);
      }
    }
    return evaluated;
  };

  const TrainableQ hat_prev = fit(q_prev);
  const TrainableQ hat_curr = fit(q_curr);
  double total = 0.0;
  for (const auto& [obs, action] : d_samples)
    total += hat_prev.values(obs)(action) - hat_curr.values(obs)(action);
  return total / double(d_samples.size());
}

}  // namespace rlim::measures
