#include "rlim/agents.hpp"

#include <stdexcept>
#include <utility>

namespace rlim::agents {

namespace {

int epsilon_greedy(const approx::QFunction& q, const Observation& obs,
                   double epsilon, Rng& rng) {
  if (rng.uniform() < epsilon) return rng.uniform_int(q.n_actions());
  return approx::greedy_action(q, obs);
}

}  // namespace

// ---------------------------------------------------------------------------
// ReplayBuffer

ReplayBuffer::ReplayBuffer(int capacity) : capacity_(capacity) {
  if (capacity <= 0) throw std::invalid_argument("buffer capacity must be positive");
  items_.reserve(capacity);
}

void ReplayBuffer::push(Transition tr) {
  if (items_.size() < std::size_t(capacity_)) {
    items_.push_back(std::move(tr));
    return;
  }
  items_[head_] = std::move(tr);
  head_ = (head_ + 1) % items_.size();
}

const Transition& ReplayBuffer::sample(Rng& rng) const {
  if (items_.empty()) throw std::logic_error("sampling from an empty buffer");
  return items_[std::size_t(rng.uniform_int(int(items_.size())))];
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= items_.size()) throw std::out_of_range("buffer index");
  return items_[(head_ + i) % items_.size()];
}

// ---------------------------------------------------------------------------
// DqnAgent

DqnAgent::DqnAgent(int obs_dim, int n_actions, const AgentConfig& config,
                   std::uint64_t seed)
    : config_(config),
      q_(MlpQ::he_init(obs_dim, config.hidden, n_actions,
                       derive_seed(seed, 0))),
      target_(q_),
      optimizer_(config.optimizer, config.lr, q_.n_params()),
      buffer_(config.buffer),
      rng_(derive_seed(seed, 1)),
      grad_(VectorXd::Zero(q_.n_params())) {}

void DqnAgent::attach(Environment& env) {
  current_obs_ = env.reset();
  episode_step_ = 0;
  episode_return_ = 0.0;
  attached_ = true;
}

InteractResult DqnAgent::interact(Environment& env) {
  if (!attached_) attach(env);
  const int action = epsilon_greedy(q_, current_obs_, config_.epsilon, rng_);
  const envs::StepResult step = env.step(action);

  InteractResult result;
  result.transition = Transition{current_obs_, action, step.reward, step.obs,
                                 step.terminal, episode_step_};
  result.truncated = step.truncated;
  buffer_.push(result.transition);

  episode_return_ += step.reward;
  episode_step_ += 1;
  env_steps_ += 1;

  if (step.terminal || step.truncated) {
    result.episode_end = true;
    result.episode_return = episode_return_;
    current_obs_ = env.reset();
    episode_step_ = 0;
    episode_return_ = 0.0;
  } else {
    current_obs_ = step.obs;
  }
  return result;
}

bool DqnAgent::train_update() {
  if (buffer_.size() < std::size_t(config_.batch)) return false;
  const MlpQ& bootstrap = config_.target_sync > 0 ? target_ : q_;
  grad_.setZero();
  const double inv_batch = 1.0 / double(config_.batch);
  for (int i = 0; i < config_.batch; ++i) {
    const Transition& tr = buffer_.sample(rng_);
    double y = tr.reward;
    if (!tr.terminal)
      y += config_.gamma * bootstrap.values(tr.next_obs).maxCoeff();
    const MlpQ::ForwardTrace trace = q_.forward_trace(tr.obs);
    const double delta = y - trace.q(tr.action);
    // Loss gradient of the semi-gradient squared TD error, batch-averaged.
    q_.accumulate_action_gradient(trace, tr.obs, tr.action,
                                  -delta * inv_batch, grad_);
  }
  optimizer_.apply(q_.params(), grad_);
  return true;
}

void DqnAgent::sync_target_if_due() {
  if (config_.target_sync > 0 && env_steps_ % config_.target_sync == 0)
    target_ = q_;
}

InteractResult DqnAgent::step(Environment& env) {
  InteractResult result = interact(env);
  train_update();
  sync_target_if_due();
  return result;
}

// ---------------------------------------------------------------------------
// TileCodeAgent

TileCodeAgent::TileCodeAgent(int n_actions, double step_size, double gamma,
                             double epsilon, std::uint64_t seed)
    : step_size_(step_size),
      gamma_(gamma),
      epsilon_(epsilon),
      q_(n_actions),
      rng_(seed) {}

void TileCodeAgent::attach(Environment& env) {
  current_obs_ = env.reset();
  episode_step_ = 0;
  episode_return_ = 0.0;
  attached_ = true;
}

InteractResult TileCodeAgent::interact(Environment& env) {
  if (!attached_) attach(env);
  const int action = epsilon_greedy(q_, current_obs_, epsilon_, rng_);
  const envs::StepResult step = env.step(action);

  InteractResult result;
  result.transition = Transition{current_obs_, action, step.reward, step.obs,
                                 step.terminal, episode_step_};
  result.truncated = step.truncated;

  episode_return_ += step.reward;
  episode_step_ += 1;

  if (step.terminal || step.truncated) {
    result.episode_end = true;
    result.episode_return = episode_return_;
    current_obs_ = env.reset();
    episode_step_ = 0;
    episode_return_ = 0.0;
  } else {
    current_obs_ = step.obs;
  }
  return result;
}

void TileCodeAgent::train_on(const Transition& tr) {
  double delta = tr.reward - q_.values(tr.obs)(tr.action);
  if (!tr.terminal) delta += gamma_ * q_.values(tr.next_obs).maxCoeff();
  q_.update(tr.obs, tr.action, step_size_ / TileCoderQ::kTilings * delta);
}

InteractResult TileCodeAgent::step(Environment& env) {
  InteractResult result = interact(env);
  train_on(result.transition);
  return result;
}

// ---------------------------------------------------------------------------
// SbcdAgent

SbcdAgent::SbcdAgent(int obs_dim, int n_actions, const AgentConfig& config,
                     std::uint64_t seed)
    : config_(config),
      q_(MlpQ::he_init(obs_dim, config.hidden, n_actions,
                       derive_seed(seed, 0))),
      partition_(approx::ParamPartition::of(q_)),
      buffer_(config.buffer),
      rng_(derive_seed(seed, 1)) {}

void SbcdAgent::attach(Environment& env) {
  current_obs_ = env.reset();
  episode_step_ = 0;
  episode_return_ = 0.0;
  attached_ = true;
}

InteractResult SbcdAgent::interact(Environment& env) {
  if (!attached_) attach(env);
  const int action = epsilon_greedy(q_, current_obs_, config_.epsilon, rng_);
  const envs::StepResult step = env.step(action);

  InteractResult result;
  result.transition = Transition{current_obs_, action, step.reward, step.obs,
                                 step.terminal, episode_step_};
  result.truncated = step.truncated;
  buffer_.push(result.transition);

  episode_return_ += step.reward;
  episode_step_ += 1;

  if (step.terminal || step.truncated) {
    result.episode_end = true;
    result.episode_return = episode_return_;
    current_obs_ = env.reset();
    episode_step_ = 0;
    episode_return_ = 0.0;
  } else {
    current_obs_ = step.obs;
  }
  return result;
}

std::vector<Transition> SbcdAgent::sample_batch() {
  std::vector<Transition> batch;
  batch.reserve(config_.batch);
  for (int i = 0; i < config_.batch; ++i) batch.push_back(buffer_.sample(rng_));
  return batch;
}

VectorXd SbcdAgent::td_loss_gradient(
    const std::vector<Transition>& batch) const {
  VectorXd grad = VectorXd::Zero(q_.n_params());
  const double inv_batch = 1.0 / double(batch.size());
  for (const Transition& tr : batch) {
    double y = tr.reward;
    if (!tr.terminal) y += config_.gamma * q_.values(tr.next_obs).maxCoeff();
    const MlpQ::ForwardTrace trace = q_.forward_trace(tr.obs);
    const double delta = y - trace.q(tr.action);
    q_.accumulate_action_gradient(trace, tr.obs, tr.action,
                                  -delta * inv_batch, grad);
  }
  return grad;
}

void SbcdAgent::rln_update(const std::vector<Transition>& batch) {
  VectorXd grad = td_loss_gradient(batch);
  if (config_.srnn_lambda > 0.0) {
    std::vector<Observation> observations;
    observations.reserve(batch.size());
    for (const Transition& tr : batch) observations.push_back(tr.obs);
    const approx::SrnnPenalty penalty = approx::srnn_penalty(
        q_, observations,
        approx::SrnnConfig{config_.srnn_lambda, config_.srnn_beta});
    grad += penalty.grad;  // head entries of the penalty gradient are zero
  }
  q_.params().segment(partition_.rln_begin,
                      partition_.rln_end - partition_.rln_begin) -=
      config_.lr_rln * grad.segment(partition_.rln_begin,
                                    partition_.rln_end - partition_.rln_begin);
}

void SbcdAgent::vln_update(const std::vector<Transition>& batch) {
  // The loss is re-evaluated at the representation updated by rln_update.
  const VectorXd grad = td_loss_gradient(batch);
  q_.params().segment(partition_.vln_begin,
                      partition_.vln_end - partition_.vln_begin) -=
      config_.lr_vln * grad.segment(partition_.vln_begin,
                                    partition_.vln_end - partition_.vln_begin);
}

InteractResult SbcdAgent::step(Environment& env) {
  InteractResult result = interact(env);
  if (ready()) {
    const std::vector<Transition> batch = sample_batch();
    rln_update(batch);
    vln_update(batch);
  }
  return result;
}

}  // namespace rlim::agents
