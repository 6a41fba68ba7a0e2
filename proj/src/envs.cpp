#include "rlim/envs.hpp"

#include <cmath>
#include <stdexcept>

namespace rlim::envs {

// ---------------------------------------------------------------------------
// TwoRooms

TwoRooms::TwoRooms(int room) : room_(room) {
  if (room != 0 && room != 1) throw std::invalid_argument("room must be 0 or 1");
  reset();
}

Observation TwoRooms::observe() const {
  Observation obs(3);
  obs << double(state_.x) / (kGridSize - 1), double(state_.y) / (kGridSize - 1),
      double(room_);
  return obs;
}

Observation TwoRooms::reset() {
  state_ = State{};
  if (room_ == 1) {
    state_.x = kGridSize - 1;
    state_.y = kGridSize - 1;
  }
  return observe();
}

StepResult TwoRooms::step(int action) {
  if (action < 0 || action >= 4) throw std::invalid_argument("action out of range");
  int nx = state_.x, ny = state_.y;
  switch (action) {
    case 0: ny += 1; break;  // up
    case 1: ny -= 1; break;  // down
    case 2: nx -= 1; break;  // left
    case 3: nx += 1; break;  // right
  }
  if (nx >= 0 && nx < kGridSize) state_.x = nx;
  if (ny >= 0 && ny < kGridSize) state_.y = ny;
  state_.steps += 1;

  const int goal = room_ == 0 ? kGridSize - 1 : 0;
  StepResult result;
  result.reward = -1.0;
  result.terminal = state_.x == goal && state_.y == goal;
  result.truncated = !result.terminal && state_.steps >= kEpisodeCap;
  result.obs = observe();
  return result;
}

EnvSnapshot TwoRooms::snapshot() const { return EnvSnapshot{state_}; }

EnvSnapshot TwoRooms::make_state(int x, int y) {
  if (x < 0 || x >= kGridSize || y < 0 || y >= kGridSize)
    throw std::invalid_argument("cell outside the grid");
  State s;
  s.x = x;
  s.y = y;
  s.steps = 0;
  return EnvSnapshot{s};
}

void TwoRooms::restore(const EnvSnapshot& snap) {
  state_ = std::any_cast<State>(snap.state);
}

std::unique_ptr<Environment> TwoRooms::clone() const {
  return std::make_unique<TwoRooms>(*this);
}

// ---------------------------------------------------------------------------
// CartPole

namespace {
constexpr double kGravity = 9.8;
constexpr double kMassCart = 1.0;
constexpr double kMassPole = 0.1;
constexpr double kTotalMass = kMassCart + kMassPole;
constexpr double kHalfLength = 0.5;
constexpr double kPoleMassLength = kMassPole * kHalfLength;
constexpr double kForceMag = 10.0;
constexpr double kTau = 0.02;
constexpr double kThetaLimit = 12.0 * 2.0 * M_PI / 360.0;
constexpr double kXLimit = 2.4;
}  // namespace

CartPole::CartPole(std::uint64_t seed) {
  state_.rng = Rng(seed);
  reset();
}

Observation CartPole::observe() const {
  Observation obs(4);
  obs << state_.x, state_.x_dot, state_.theta, state_.theta_dot;
  return obs;
}

Observation CartPole::reset() {
  state_.x = state_.rng.uniform(-0.05, 0.05);
  state_.x_dot = state_.rng.uniform(-0.05, 0.05);
  state_.theta = state_.rng.uniform(-0.05, 0.05);
  state_.theta_dot = state_.rng.uniform(-0.05, 0.05);
  state_.steps = 0;
  return observe();
}

StepResult CartPole::step(int action) {
  if (action < 0 || action >= 2) throw std::invalid_argument("action out of range");
  const double force = action == 1 ? kForceMag : -kForceMag;
  const double cos_t = std::cos(state_.theta);
  const double sin_t = std::sin(state_.theta);

  const double temp =
      (force + kPoleMassLength * state_.theta_dot * state_.theta_dot * sin_t) /
      kTotalMass;
  const double theta_acc =
      (kGravity * sin_t - cos_t * temp) /
      (kHalfLength * (4.0 / 3.0 - kMassPole * cos_t * cos_t / kTotalMass));
  const double x_acc = temp - kPoleMassLength * theta_acc * cos_t / kTotalMass;

  state_.x += kTau * state_.x_dot;
  state_.x_dot += kTau * x_acc;
  state_.theta += kTau * state_.theta_dot;
  state_.theta_dot += kTau * theta_acc;
  state_.steps += 1;

  StepResult result;
  result.reward = 1.0;
  result.terminal =
      std::abs(state_.x) > kXLimit || std::abs(state_.theta) > kThetaLimit;
  result.truncated = !result.terminal && state_.steps >= kEpisodeCap;
  result.obs = observe();
  return result;
}

EnvSnapshot CartPole::snapshot() const { return EnvSnapshot{state_}; }

EnvSnapshot CartPole::make_state(double x, double x_dot, double theta,
                                 double theta_dot) {
  State s;
  s.x = x;
  s.x_dot = x_dot;
  s.theta = theta;
  s.theta_dot = theta_dot;
  return EnvSnapshot{s};
}

void CartPole::restore(const EnvSnapshot& snap) {
  state_ = std::any_cast<State>(snap.state);
}

std::unique_ptr<Environment> CartPole::clone() const {
  return std::make_unique<CartPole>(*this);
}

// ---------------------------------------------------------------------------
// TabularEnv

TabularEnv::TabularEnv(tabular::TabularMdp mdp, tabular::StateMeasure nu,
                       std::uint64_t seed)
    : mdp_(std::move(mdp)), nu_(std::move(nu)) {
  state_.rng = Rng(seed);
  reset();
}

int TabularEnv::sample_start(Rng& rng) const {
  const double u = rng.uniform();
  double acc = 0.0;
  for (int s = 0; s < mdp_.n_states; ++s) {
    acc += nu_.weights(s);
    if (u < acc) return s;
  }
  return mdp_.n_states - 1;
}

Observation TabularEnv::observe() const {
  Observation obs(1);
  obs << double(state_.s);
  return obs;
}

Observation TabularEnv::reset() {
  state_.s = sample_start(state_.rng);
  return observe();
}

StepResult TabularEnv::step(int action) {
  if (action < 0 || action >= mdp_.n_actions)
    throw std::invalid_argument("action out of range");
  const int k = mdp_.idx(state_.s, action);
  const double u = state_.rng.uniform();
  double acc = 0.0;
  int next = mdp_.n_states - 1;
  for (int s2 = 0; s2 < mdp_.n_states; ++s2) {
    acc += mdp_.trans(k, s2);
    if (u < acc) {
      next = s2;
      break;
    }
  }
  StepResult result;
  result.reward = mdp_.reward(k, next);
  state_.s = next;
  result.obs = observe();
  return result;
}

EnvSnapshot TabularEnv::snapshot() const { return EnvSnapshot{state_}; }

void TabularEnv::restore(const EnvSnapshot& snap) {
  state_ = std::any_cast<State>(snap.state);
}

std::unique_ptr<Environment> TabularEnv::clone() const {
  return std::make_unique<TabularEnv>(*this);
}

// ---------------------------------------------------------------------------
// StartStateSampler

std::pair<EnvSnapshot, int> StartStateSampler::next() {
  env_->reseed(rng_.next_u64());
  env_->reset();
  EnvSnapshot snap = env_->snapshot();
  const int action = rng_.uniform_int(env_->n_actions());
  return {std::move(snap), action};
}

}  // namespace rlim::envs
