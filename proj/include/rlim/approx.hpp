#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rlim/envs.hpp"
#include "rlim/tabular.hpp"

namespace rlim::approx {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using envs::Observation;

/// Action values for an observation.
class QFunction {
 public:
  virtual ~QFunction() = default;
  virtual VectorXd values(const Observation& obs) const = 0;
  virtual int n_actions() const = 0;
};

/// Greedy action with ties broken toward the lowest index.
int greedy_action(const QFunction& q, const Observation& obs);

/// FNV-1a hash of a parameter vector's bytes; used to certify that frozen
/// parameter copies stay untouched.
std::uint64_t param_hash(const VectorXd& params);

/**
 * Two-hidden-layer ReLU network with a linear head, parameters held in one
 * flat vector laid out as [W1, b1, W2, b2, W3, b3]. The hidden blocks form
 * the representation parameters and the head the value parameters, so the
 * last-layer partition is a single offset into the flat vector.
 */
class MlpQ : public QFunction {
 public:
  MlpQ() = default;
  MlpQ(int input_dim, int hidden_dim, int n_actions);

  /// He-initialized network: weights N(0, 2/fan_in), biases zero.
  static MlpQ he_init(int input_dim, int hidden_dim, int n_actions,
                      std::uint64_t seed);

  VectorXd values(const Observation& obs) const override;
  int n_actions() const override { return out_; }
  int input_dim() const { return in_; }
  int hidden_dim() const { return hidden_; }

  struct ForwardTrace {
    VectorXd z1, h1, z2, h2, q;
  };
  ForwardTrace forward_trace(const Observation& obs) const;

  /// Exact reverse-mode gradient of Q(obs, action) w.r.t. all parameters.
  /// The ReLU subgradient at zero is taken as zero.
  VectorXd action_gradient(const Observation& obs, int action) const;

  /// Adds coeff * dQ(obs, action)/dtheta into grad without allocating.
  void accumulate_action_gradient(const Observation& obs, int action,
                                  double coeff, VectorXd& grad) const;

  /// Same, reusing an existing forward trace of obs.
  void accumulate_action_gradient(const ForwardTrace& trace,
                                  const Observation& obs, int action,
                                  double coeff, VectorXd& grad) const;

  /// One SGD step of (target - Q(obs,action))^2 / 2 toward a fixed target.
  void td_update(const Observation& obs, int action, double target, double lr);

  VectorXd& params() { return theta_; }
  const VectorXd& params() const { return theta_; }
  int n_params() const { return int(theta_.size()); }

  /// First flat index of the last-layer block [W3, b3]; everything before
  /// it belongs to the hidden-layer block.
  int value_layer_offset() const;

 private:
  friend MlpQ load_checkpoint(const std::string& path);

  int in_ = 0, hidden_ = 0, out_ = 0;
  VectorXd theta_;
};

/// Parameter index ranges for blockwise updates: representation block
/// (hidden layers) and value block (linear head). The two blocks are
/// disjoint and cover the full vector.
struct ParamPartition {
  int rln_begin = 0;
  int rln_end = 0;  // == vln_begin
  int vln_begin = 0;
  int vln_end = 0;

  static ParamPartition of(const MlpQ& q) {
    ParamPartition p;
    p.rln_end = p.vln_begin = q.value_layer_offset();
    p.vln_end = q.n_params();
    return p;
  }
};

/**
 * Tile coding over the Two-Rooms observation (x, y, room): 16 tilings of
 * 4x4 tiles (5 grid positions per dimension once offsets stagger them
 * evenly), with fully separate index spaces per room. Exactly one feature
 * per tiling is active, 16 in total.
 */
class TileCoderQ : public QFunction {
 public:
  static constexpr int kTilings = 16;
  static constexpr int kTilesPerDim = 4;
  static constexpr int kPositionsPerDim = kTilesPerDim + 1;
  static constexpr int kFeaturesPerTiling = kPositionsPerDim * kPositionsPerDim;
  static constexpr int kFeaturesPerRoom = kTilings * kFeaturesPerTiling;
  static constexpr int kTotalFeatures = 2 * kFeaturesPerRoom;

  explicit TileCoderQ(int n_actions);

  std::array<int, kTilings> active_features(const Observation& obs) const;
  VectorXd values(const Observation& obs) const override;
  int n_actions() const override { return int(weights_.cols()); }

  /// Adds increment to the weight of every active feature for the action.
  void update(const Observation& obs, int action, double increment);

  const MatrixXd& weights() const { return weights_; }

 private:
  MatrixXd weights_;  // (kTotalFeatures, n_actions)
};

/// Table-backed action values over TabularEnv observations (state index in
/// the single observation entry).
class TabularQ : public QFunction {
 public:
  explicit TabularQ(tabular::QTable table) : table_(std::move(table)) {}

  VectorXd values(const Observation& obs) const override {
    return table_.values.row(int(obs(0))).transpose();
  }
  int n_actions() const override { return int(table_.values.cols()); }

  void td_update(const Observation& obs, int action, double target,
                 double lr) {
    double& cell = table_.values(int(obs(0)), action);
    cell += lr * (target - cell);
  }

  const tabular::QTable& table() const { return table_; }

 private:
  tabular::QTable table_;
};

enum class OptimizerKind { Sgd, Adam, RmsProp };

/**
 * First-order optimizer state over a flat parameter vector. apply() takes a
 * loss gradient and performs one descent step; Adam uses 0.9/0.999/1e-8
 * with bias correction, RMSProp a 0.99 decay with 1e-8 damping.
 */
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerKind kind, double lr, int n_params);

  void apply(VectorXd& params, const VectorXd& grad);

  /// Blockwise variant touching only [begin, end) of both vectors.
  void apply_block(VectorXd& params, const VectorXd& grad, int begin, int end);

  OptimizerKind kind() const { return kind_; }
  double learning_rate() const { return lr_; }

 private:
  OptimizerKind kind_ = OptimizerKind::Sgd;
  double lr_ = 0.0;
  long step_ = 0;
  VectorXd m_, v_;  // moment accumulators (Adam) / mean square (RMSProp)
};

struct SrnnConfig {
  double lambda = 0.001;
  double beta = 0.1;
};

struct SrnnPenalty {
  double value = 0.0;
  VectorXd grad;  // full parameter layout; head entries are zero
};

/**
 * Sparsity penalty on the mean activation of the last hidden layer:
 * lambda * sum_j SKL(max(phibar_j, 1e-6)) with SKL(x) = x/beta - log(x/beta)
 * - 1, the KL divergence between exponentials with means x and beta. Zero
 * exactly when every mean activation equals beta.
 */
SrnnPenalty srnn_penalty(const MlpQ& q, const std::vector<Observation>& batch,
                         const SrnnConfig& config);

/// Flat binary parameter checkpoint (magic, dims, raw doubles).
void save_checkpoint(const MlpQ& q, const std::string& path);
MlpQ load_checkpoint(const std::string& path);

}  // namespace rlim::approx
