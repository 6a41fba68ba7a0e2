#include "rlim/measures.hpp"

#include <cmath>
#include <stdexcept>

namespace rlim::measures {

// ---------------------------------------------------------------------------
// EvalSet

EvalSet::EvalSet(EvalStrategy strategy, int capacity, std::uint64_t seed,
                 double gamma)
    : strategy_(strategy), capacity_(capacity), gamma_(gamma), rng_(seed) {
  if (capacity <= 0)
    throw std::invalid_argument("eval set capacity must be positive");
  items_.reserve(capacity);
}

void EvalSet::add(const Transition& tr) {
  items_seen_ += 1;
  if (strategy_ == EvalStrategy::Buffer) {
    if (items_.size() < std::size_t(capacity_)) {
      items_.push_back(tr);
    } else {
      items_[fifo_head_] = tr;
      fifo_head_ = (fifo_head_ + 1) % items_.size();
    }
    return;
  }
  // Reservoir insertion: item n survives with probability capacity / n.
  if (items_.size() < std::size_t(capacity_)) {
    items_.push_back(tr);
    return;
  }
  const int slot = rng_.uniform_int(int(items_seen_));
  if (slot < capacity_) items_[std::size_t(slot)] = tr;
}

std::vector<double> EvalSet::weights() const {
  std::vector<double> out(items_.size(), 1.0);
  if (strategy_ == EvalStrategy::Discounted) {
    for (std::size_t i = 0; i < items_.size(); ++i)
      out[i] = (1.0 - gamma_) * std::pow(gamma_, double(items_[i].episode_step));
  }
  return out;
}

void reservoir_update(EvalSet& eval, const Transition& tr) {
  if (eval.strategy() == EvalStrategy::Buffer)
    throw std::invalid_argument("reservoir update on a FIFO eval set");
  eval.add(tr);
}

// ---------------------------------------------------------------------------
// TD errors and AEI

double td_error(const QFunction& q, const Transition& tr, double gamma) {
  double delta = tr.reward - q.values(tr.obs)(tr.action);
  if (!tr.terminal) delta += gamma * q.values(tr.next_obs).maxCoeff();
  return delta;
}

double aei(const QFunction& q_prev, const QFunction& q_curr,
           const EvalSet& eval, double gamma) {
  if (eval.size() == 0)
    throw std::invalid_argument("AEI over an empty eval set");
  const std::vector<double> weights = eval.weights();
  double weighted_sum = 0.0, weight_total = 0.0;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const Transition& tr = eval.items()[i];
    const double d_prev = td_error(q_prev, tr, gamma);
    const double d_curr = td_error(q_curr, tr, gamma);
    weighted_sum += weights[i] * (d_curr * d_curr - d_prev * d_prev);
    weight_total += weights[i];
  }
  return weighted_sum / weight_total;
}

// ---------------------------------------------------------------------------
// Rollout-based OR estimation

OrSampleSet make_or_samples(Environment& env, int n_pairs,
                            std::uint64_t seed) {
  envs::StartStateSampler sampler(env, derive_seed(seed, 0));
  OrSampleSet samples;
  samples.rollout_seed = derive_seed(seed, 1);
  samples.pairs.reserve(n_pairs);
  for (int i = 0; i < n_pairs; ++i) samples.pairs.push_back(sampler.next());
  return samples;
}

OrSampleSet make_two_rooms_exact_samples(int room, std::uint64_t seed) {
  envs::TwoRooms env(room);
  env.reset();
  OrSampleSet samples;
  samples.rollout_seed = derive_seed(seed, 1);
  for (int action = 0; action < env.n_actions(); ++action)
    samples.pairs.push_back({env.snapshot(), action});
  return samples;
}

OrSampleSet make_two_rooms_room_samples(int room, int n_pairs,
                                        std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0));
  envs::TwoRooms env(room);
  OrSampleSet samples;
  samples.rollout_seed = derive_seed(seed, 1);
  samples.pairs.reserve(n_pairs);
  for (int i = 0; i < n_pairs; ++i) {
    const int x = rng.uniform_int(envs::TwoRooms::kGridSize);
    const int y = rng.uniform_int(envs::TwoRooms::kGridSize);
    samples.pairs.push_back(
        {envs::TwoRooms::make_state(x, y), rng.uniform_int(env.n_actions())});
  }
  return samples;
}

int horizon_for(double gamma, double tail_tol) {
  if (gamma <= 0.0) return 1;
  return int(std::floor(std::log(tail_tol) / std::log(gamma))) + 1;
}

double rollout_return(Environment& env, const QFunction& policy_q,
                      int forced_action, int horizon, double gamma) {
  double total = 0.0;
  double discount = 1.0;
  int action = forced_action;
  for (int k = 0; k < horizon; ++k) {
    const envs::StepResult step = env.step(action);
    total += discount * step.reward;
    discount *= gamma;
    if (step.terminal || step.truncated) break;
    action = approx::greedy_action(policy_q, step.obs);
  }
  return total;
}

OrEstimate estimate_or(const QFunction& policy_q, Environment& env,
                       const OrSampleSet& samples, int n_rollouts, int horizon,
                       double gamma) {
  if (samples.pairs.empty())
    throw std::invalid_argument("empty OR sample set");
  OrEstimate estimate;
  estimate.per_pair_returns.reserve(samples.pairs.size());
  double total = 0.0;
  for (std::size_t i = 0; i < samples.pairs.size(); ++i) {
    const auto& [snap, action] = samples.pairs[i];
    double pair_total = 0.0;
    for (int r = 0; r < n_rollouts; ++r) {
      env.restore(snap);
      // Common random numbers: the stream depends only on the sample set
      // and the (pair, rollout) index, never on the policy under test.
      env.reseed(derive_seed(samples.rollout_seed,
                             std::uint64_t(i) * 1000003ULL + std::uint64_t(r)));
      pair_total += rollout_return(env, policy_q, action, horizon, gamma);
    }
    const double pair_mean = pair_total / double(n_rollouts);
    estimate.per_pair_returns.push_back(pair_mean);
    total += pair_mean;
  }
  estimate.proxy = -total / double(samples.pairs.size());
  return estimate;
}

double expected_interference(const OrEstimate& before,
                             const OrEstimate& after) {
  if (before.per_pair_returns.size() != after.per_pair_returns.size())
    throw std::invalid_argument(
        "interference estimates use mismatched sample sets");
  return after.proxy - before.proxy;
}

// ---------------------------------------------------------------------------
// InterferenceSeries

void InterferenceSeries::append(InterferenceRecord record) {
  if (!records_.empty() && record.step <= records_.back().step)
    throw std::invalid_argument("interference records must advance in time");
  records_.push_back(record);
}

std::vector<double> InterferenceSeries::ei_values() const {
  std::vector<double> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r.ei);
  return out;
}

// ---------------------------------------------------------------------------
// Tail statistics

double eti(const std::vector<double>& series, double alpha) {
  if (series.empty()) throw std::invalid_argument("ETI of an empty series");
  if (alpha <= 0.0 || alpha >= 1.0)
    throw std::invalid_argument("ETI level must lie in (0, 1)");
  const double cutoff = metrics::percentile(series, 1.0 - alpha);
  double sum = 0.0;
  std::size_t count = 0;
  for (const double v : series) {
    if (v >= cutoff) {
      sum += v;
      count += 1;
    }
  }
  return sum / double(count);
}

double interference_dispersion(const std::vector<double>& series) {
  if (series.empty())
    throw std::invalid_argument("dispersion of an empty series");
  return metrics::percentile(series, 0.75) - metrics::percentile(series, 0.25);
}

// ---------------------------------------------------------------------------
// Gradient alignment

double grad_alignment(const Eigen::VectorXd& grad_i,
                      const Eigen::VectorXd& grad_j) {
  if (grad_i.size() != grad_j.size())
    throw std::invalid_argument("gradient shapes differ");
  return grad_i.dot(grad_j);
}

}  // namespace rlim::measures
