#pragma once

#include <cstdint>
#include <vector>

#include "rlim/approx.hpp"
#include "rlim/envs.hpp"
#include "rlim/rng.hpp"

namespace rlim::agents {

using approx::MlpQ;
using approx::Optimizer;
using approx::OptimizerKind;
using approx::TileCoderQ;
using Eigen::VectorXd;
using envs::Environment;
using envs::Observation;

/// One environment transition; episode_step is the 0-based step index
/// within its episode, used by the discounted re-weighting of eval sets.
struct Transition {
  Observation obs;
  int action = 0;
  double reward = 0.0;
  Observation next_obs;
  bool terminal = false;
  int episode_step = 0;
};

/// FIFO replay store with uniform sampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity);

  void push(Transition tr);
  const Transition& sample(Rng& rng) const;
  /// Item i in insertion order, oldest first.
  const Transition& at(std::size_t i) const;

  std::size_t size() const { return items_.size(); }
  int capacity() const { return capacity_; }

 private:
  int capacity_;
  std::size_t head_ = 0;  // next slot to overwrite once full
  std::vector<Transition> items_;
};

struct AgentConfig {
  int hidden = 128;
  int batch = 64;
  int buffer = 1000;
  int target_sync = 0;  // F; 0 means no target network
  double gamma = 0.99;
  double epsilon = 0.1;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  // Blockwise (SBCD) learning rates: representation block, then head.
  double lr_rln = 1e-3;
  double lr_vln = 1e-3;
  // Sparsity regularizer on the last hidden layer; 0 disables it.
  double srnn_lambda = 0.0;
  double srnn_beta = 0.1;
};

/// What one environment interaction produced. episode_return is the
/// undiscounted return of the episode that just finished, valid only when
/// episode_end is set.
struct InteractResult {
  Transition transition;
  bool truncated = false;
  bool episode_end = false;
  double episode_return = 0.0;
};

/**
 * Semi-gradient Q-learning on an MLP with replay and an optional target
 * network: epsilon-greedy behavior, uniform mini-batches, targets
 * y = r + gamma max_a' Q_target(s', a') (y = r on terminal transitions),
 * and a full target sync every `target_sync` environment steps. Updates
 * start once the buffer holds one full batch.
 */
class DqnAgent {
 public:
  DqnAgent(int obs_dim, int n_actions, const AgentConfig& config,
           std::uint64_t seed);

  /// Make the agent start a fresh episode in env on its next interaction.
  void attach(Environment& env);

  /// Epsilon-greedy action, one environment step, transition stored.
  InteractResult interact(Environment& env);

  /// One mini-batch update; false when skipped during warm-up.
  bool train_update();

  /// Copies the online parameters into the target every F env steps.
  void sync_target_if_due();

  /// interact + train_update + sync_target_if_due.
  InteractResult step(Environment& env);

  const MlpQ& q() const { return q_; }
  const MlpQ& target() const { return target_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  long env_steps() const { return env_steps_; }
  const AgentConfig& config() const { return config_; }

 private:
  AgentConfig config_;
  MlpQ q_;
  MlpQ target_;
  Optimizer optimizer_;
  ReplayBuffer buffer_;
  Rng rng_;
  VectorXd grad_;

  bool attached_ = false;
  Observation current_obs_;
  int episode_step_ = 0;
  double episode_return_ = 0.0;
  long env_steps_ = 0;
};

/// Online tabular-feature Q-learning on the tile coder: no replay, constant
/// step size divided across the 16 tilings.
class TileCodeAgent {
 public:
  TileCodeAgent(int n_actions, double step_size, double gamma, double epsilon,
                std::uint64_t seed);

  void attach(Environment& env);
  InteractResult interact(Environment& env);
  void train_on(const Transition& tr);
  InteractResult step(Environment& env);

  const TileCoderQ& q() const { return q_; }

 private:
  double step_size_;
  double gamma_;
  double epsilon_;
  TileCoderQ q_;
  Rng rng_;

  bool attached_ = false;
  Observation current_obs_;
  int episode_step_ = 0;
  double episode_return_ = 0.0;
};

/**
 * Stochastic block coordinate descent Q-learning: each training step first
 * takes a gradient step on the hidden-layer block with rate lr_rln, then on
 * the head block with rate lr_vln against the already-updated
 * representation. A positive srnn_lambda adds the sparsity penalty gradient
 * to the representation step.
 */
class SbcdAgent {
 public:
  SbcdAgent(int obs_dim, int n_actions, const AgentConfig& config,
            std::uint64_t seed);

  void attach(Environment& env);
  InteractResult interact(Environment& env);

  bool ready() const { return buffer_.size() >= std::size_t(config_.batch); }
  std::vector<Transition> sample_batch();
  void rln_update(const std::vector<Transition>& batch);
  void vln_update(const std::vector<Transition>& batch);

  /// interact + (sample, rln_update, vln_update) when ready.
  InteractResult step(Environment& env);

  const MlpQ& q() const { return q_; }
  const AgentConfig& config() const { return config_; }

 private:
  VectorXd td_loss_gradient(const std::vector<Transition>& batch) const;

  AgentConfig config_;
  MlpQ q_;
  approx::ParamPartition partition_;
  ReplayBuffer buffer_;
  Rng rng_;

  bool attached_ = false;
  Observation current_obs_;
  int episode_step_ = 0;
  double episode_return_ = 0.0;
};

}  // namespace rlim::agents
