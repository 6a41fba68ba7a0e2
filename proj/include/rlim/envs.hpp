#pragma once

#include <Eigen/Dense>
#include <any>
#include <cstdint>
#include <memory>
#include <utility>

#include "rlim/rng.hpp"
#include "rlim/tabular.hpp"

namespace rlim::envs {

using Observation = Eigen::VectorXd;

struct StepResult {
  Observation obs;
  double reward = 0.0;
  bool terminal = false;   // goal or failure reached
  bool truncated = false;  // step cap hit; never set together with terminal
};

/// Opaque copy of an environment's full internal state, including its
/// generator. Restoring and replaying the same actions reproduces the same
/// StepResults bit for bit.
struct EnvSnapshot {
  std::any state;
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual Observation reset() = 0;
  virtual StepResult step(int action) = 0;
  /// Current observation without advancing the dynamics.
  virtual Observation observe() const = 0;
  virtual int n_actions() const = 0;
  virtual int obs_dim() const = 0;
  virtual EnvSnapshot snapshot() const = 0;
  virtual void restore(const EnvSnapshot& snap) = 0;
  /// Replaces the internal generator state; a no-op for environments with
  /// deterministic dynamics and starts.
  virtual void reseed(std::uint64_t seed) = 0;
  virtual std::unique_ptr<Environment> clone() const = 0;
};

/**
 * Two-Rooms: a 10x10 grid per room with opposite start/goal corners. Room 0
 * starts at (0,0) with the goal at (9,9); room 1 is mirrored. Actions are
 * up/down/left/right, off-grid moves are no-ops, every step costs -1 and
 * reaching the goal ends the episode. Episodes cap at 200 steps. The
 * observation is (x/9, y/9, room). Each handle is fixed to one room; the
 * three-stage protocol swaps handles externally.
 */
class TwoRooms final : public Environment {
 public:
  static constexpr int kGridSize = 10;
  static constexpr int kEpisodeCap = 200;

  explicit TwoRooms(int room);

  Observation reset() override;
  StepResult step(int action) override;
  Observation observe() const override;
  int n_actions() const override { return 4; }
  int obs_dim() const override { return 3; }
  EnvSnapshot snapshot() const override;
  void restore(const EnvSnapshot& snap) override;
  void reseed(std::uint64_t) override {}
  std::unique_ptr<Environment> clone() const override;

  int room() const { return room_; }

  /// Snapshot placing the agent at a grid cell with a fresh step budget.
  static EnvSnapshot make_state(int x, int y);

 private:
  struct State {
    int x = 0;
    int y = 0;
    int steps = 0;
  };

  int room_;
  State state_;
};

/**
 * Cart-pole with the customary constants: gravity 9.8, cart mass 1.0, pole
 * mass 0.1, half-length 0.5, force 10, Euler step 0.02 s. Terminates when
 * |angle| > 12 degrees or |position| > 2.4; reward +1 per step; starts
 * uniform in [-0.05, 0.05]^4; episodes cap at 500 steps.
 */
class CartPole final : public Environment {
 public:
  static constexpr int kEpisodeCap = 500;

  explicit CartPole(std::uint64_t seed);

  Observation reset() override;
  StepResult step(int action) override;
  Observation observe() const override;
  int n_actions() const override { return 2; }
  int obs_dim() const override { return 4; }
  EnvSnapshot snapshot() const override;
  void restore(const EnvSnapshot& snap) override;
  void reseed(std::uint64_t seed) override { state_.rng.reseed(seed); }
  std::unique_ptr<Environment> clone() const override;

  /// Snapshot holding a hand-picked physical state, for controlled starts.
  static EnvSnapshot make_state(double x, double x_dot, double theta,
                                double theta_dot);

 private:
  struct State {
    double x = 0, x_dot = 0, theta = 0, theta_dot = 0;
    int steps = 0;
    Rng rng{0};
  };

  State state_;
};

/**
 * Environment view of an exact finite MDP: observations hold the state
 * index, transitions are sampled from the transition tensor and episodes
 * never terminate (rollouts truncate on their own horizon). Start states
 * are drawn from `nu`.
 */
class TabularEnv final : public Environment {
 public:
  TabularEnv(tabular::TabularMdp mdp, tabular::StateMeasure nu,
             std::uint64_t seed);

  Observation reset() override;
  StepResult step(int action) override;
  Observation observe() const override;
  int n_actions() const override { return mdp_.n_actions; }
  int obs_dim() const override { return 1; }
  EnvSnapshot snapshot() const override;
  void restore(const EnvSnapshot& snap) override;
  void reseed(std::uint64_t seed) override { state_.rng.reseed(seed); }
  std::unique_ptr<Environment> clone() const override;

  const tabular::TabularMdp& mdp() const { return mdp_; }

 private:
  struct State {
    int s = 0;
    Rng rng{0};
  };

  int sample_start(Rng& rng) const;

  tabular::TabularMdp mdp_;
  tabular::StateMeasure nu_;
  State state_;
};

/**
 * Stream of (snapshot, action) pairs with the snapshot taken right after a
 * reset and the action uniform: samples from d(s,a) = nu(s) u(a|s) for the
 * environment's start distribution nu and the uniform behavior u.
 */
class StartStateSampler {
 public:
  StartStateSampler(Environment& env, std::uint64_t seed)
      : env_(&env), rng_(seed) {}

  std::pair<EnvSnapshot, int> next();

 private:
  Environment* env_;
  Rng rng_;
};

}  // namespace rlim::envs
