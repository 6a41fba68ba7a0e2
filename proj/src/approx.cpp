#include "rlim/approx.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace rlim::approx {

namespace {

using ConstMat = Eigen::Map<const MatrixXd>;
using MutMat = Eigen::Map<MatrixXd>;
using ConstVec = Eigen::Map<const VectorXd>;
using MutVec = Eigen::Map<VectorXd>;

/// Offsets of [W1, b1, W2, b2, W3, b3] in the flat layout.
struct Layout {
  int w1, b1, w2, b2, w3, b3, total;

  Layout(int in, int hidden, int out) {
    w1 = 0;
    b1 = w1 + hidden * in;
    w2 = b1 + hidden;
    b2 = w2 + hidden * hidden;
    w3 = b2 + hidden;
    b3 = w3 + out * hidden;
    total = b3 + out;
  }
};

}  // namespace

int greedy_action(const QFunction& q, const Observation& obs) {
  const VectorXd v = q.values(obs);
  int best = 0;
  for (int a = 1; a < int(v.size()); ++a)
    if (v(a) > v(best)) best = a;
  return best;
}

std::uint64_t param_hash(const VectorXd& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(params.data());
  const size_t n = size_t(params.size()) * sizeof(double);
  for (size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// MlpQ

MlpQ::MlpQ(int input_dim, int hidden_dim, int n_actions)
    : in_(input_dim), hidden_(hidden_dim), out_(n_actions) {
  const Layout layout(in_, hidden_, out_);
  theta_ = VectorXd::Zero(layout.total);
}

MlpQ MlpQ::he_init(int input_dim, int hidden_dim, int n_actions,
                   std::uint64_t seed) {
  MlpQ q(input_dim, hidden_dim, n_actions);
  Rng rng(seed);
  const Layout layout(input_dim, hidden_dim, n_actions);
  auto fill = [&](int offset, int count, int fan_in) {
    const double std_dev = std::sqrt(2.0 / double(fan_in));
    for (int i = 0; i < count; ++i)
      q.theta_(offset + i) = std_dev * rng.normal();
  };
  fill(layout.w1, hidden_dim * input_dim, input_dim);
  fill(layout.w2, hidden_dim * hidden_dim, hidden_dim);
  fill(layout.w3, n_actions * hidden_dim, hidden_dim);
  return q;  // biases stay zero
}

int MlpQ::value_layer_offset() const {
  return Layout(in_, hidden_, out_).w3;
}

MlpQ::ForwardTrace MlpQ::forward_trace(const Observation& obs) const {
  if (int(obs.size()) != in_)
    throw std::invalid_argument("observation dimension mismatch");
  const Layout layout(in_, hidden_, out_);
  const double* t = theta_.data();
  ConstMat w1(t + layout.w1, hidden_, in_);
  ConstVec b1(t + layout.b1, hidden_);
  ConstMat w2(t + layout.w2, hidden_, hidden_);
  ConstVec b2(t + layout.b2, hidden_);
  ConstMat w3(t + layout.w3, out_, hidden_);
  ConstVec b3(t + layout.b3, out_);

  ForwardTrace trace;
  trace.z1 = w1 * obs + b1;
  trace.h1 = trace.z1.cwiseMax(0.0);
  trace.z2 = w2 * trace.h1 + b2;
  trace.h2 = trace.z2.cwiseMax(0.0);
  trace.q = w3 * trace.h2 + b3;
  return trace;
}

VectorXd MlpQ::values(const Observation& obs) const {
  return forward_trace(obs).q;
}

void MlpQ::accumulate_action_gradient(const Observation& obs, int action,
                                      double coeff, VectorXd& grad) const {
  accumulate_action_gradient(forward_trace(obs), obs, action, coeff, grad);
}

void MlpQ::accumulate_action_gradient(const ForwardTrace& trace,
                                      const Observation& obs, int action,
                                      double coeff, VectorXd& grad) const {
  if (action < 0 || action >= out_)
    throw std::invalid_argument("action out of range");
  if (grad.size() != theta_.size())
    throw std::invalid_argument("gradient buffer shape mismatch");
  const Layout layout(in_, hidden_, out_);
  const double* t = theta_.data();
  ConstMat w2(t + layout.w2, hidden_, hidden_);
  ConstMat w3(t + layout.w3, out_, hidden_);

  double* g = grad.data();
  MutMat gw1(g + layout.w1, hidden_, in_);
  MutVec gb1(g + layout.b1, hidden_);
  MutMat gw2(g + layout.w2, hidden_, hidden_);
  MutVec gb2(g + layout.b2, hidden_);
  MutMat gw3(g + layout.w3, out_, hidden_);
  MutVec gb3(g + layout.b3, out_);

  gw3.row(action) += coeff * trace.h2.transpose();
  gb3(action) += coeff;

  // Backprop through h2 = relu(z2); subgradient at exactly zero is zero.
  const VectorXd mask2 = (trace.z2.array() > 0.0).cast<double>().matrix();
  const VectorXd g2 =
      coeff * (w3.row(action).transpose().array() * mask2.array()).matrix();
  gw2 += g2 * trace.h1.transpose();
  gb2 += g2;

  const VectorXd mask1 = (trace.z1.array() > 0.0).cast<double>().matrix();
  const VectorXd g1 = ((w2.transpose() * g2).array() * mask1.array()).matrix();
  gw1 += g1 * obs.transpose();
  gb1 += g1;
}

VectorXd MlpQ::action_gradient(const Observation& obs, int action) const {
  VectorXd grad = VectorXd::Zero(theta_.size());
  accumulate_action_gradient(obs, action, 1.0, grad);
  return grad;
}

void MlpQ::td_update(const Observation& obs, int action, double target,
                     double lr) {
  const double delta = target - forward_trace(obs).q(action);
  VectorXd grad = VectorXd::Zero(theta_.size());
  accumulate_action_gradient(obs, action, 1.0, grad);
  theta_ += lr * delta * grad;
}

// ---------------------------------------------------------------------------
// TileCoderQ

TileCoderQ::TileCoderQ(int n_actions) {
  weights_ = MatrixXd::Zero(kTotalFeatures, n_actions);
}

std::array<int, TileCoderQ::kTilings> TileCoderQ::active_features(
    const Observation& obs) const {
  const double tile_width = 1.0 / kTilesPerDim;
  const int room = int(obs(2));
  const int room_offset = room * kFeaturesPerRoom;
  std::array<int, kTilings> active{};
  for (int k = 0; k < kTilings; ++k) {
    const double offset = double(k) / kTilings * tile_width;
    int ix = int(std::floor((obs(0) + offset) / tile_width));
    int iy = int(std::floor((obs(1) + offset) / tile_width));
    ix = std::min(std::max(ix, 0), kPositionsPerDim - 1);
    iy = std::min(std::max(iy, 0), kPositionsPerDim - 1);
    active[k] =
        room_offset + k * kFeaturesPerTiling + ix * kPositionsPerDim + iy;
  }
  return active;
}

VectorXd TileCoderQ::values(const Observation& obs) const {
  const auto active = active_features(obs);
  VectorXd out = VectorXd::Zero(weights_.cols());
  for (const int f : active) out += weights_.row(f).transpose();
  return out;
}

void TileCoderQ::update(const Observation& obs, int action, double increment) {
  const auto active = active_features(obs);
  for (const int f : active) weights_(f, action) += increment;
}

// ---------------------------------------------------------------------------
// Optimizer

Optimizer::Optimizer(OptimizerKind kind, double lr, int n_params)
    : kind_(kind), lr_(lr) {
  if (kind_ != OptimizerKind::Sgd) {
    m_ = VectorXd::Zero(n_params);
    v_ = VectorXd::Zero(n_params);
  }
}

void Optimizer::apply(VectorXd& params, const VectorXd& grad) {
  apply_block(params, grad, 0, int(params.size()));
}

void Optimizer::apply_block(VectorXd& params, const VectorXd& grad, int begin,
                            int end) {
  if (params.size() != grad.size())
    throw std::invalid_argument("parameter/gradient shape mismatch");
  if (kind_ != OptimizerKind::Sgd && m_.size() != params.size())
    throw std::invalid_argument("optimizer state shape mismatch");
  const int n = end - begin;
  auto p = params.segment(begin, n);
  const auto g = grad.segment(begin, n);

  switch (kind_) {
    case OptimizerKind::Sgd:
      p -= lr_ * g;
      break;
    case OptimizerKind::Adam: {
      constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
      step_ += 1;
      auto m = m_.segment(begin, n);
      auto v = v_.segment(begin, n);
      m = (beta1 * m + (1.0 - beta1) * g).eval();
      v = (beta2 * v.array() + (1.0 - beta2) * g.array().square())
              .matrix()
              .eval();
      const double bias1 = 1.0 - std::pow(beta1, double(step_));
      const double bias2 = 1.0 - std::pow(beta2, double(step_));
      p -= (lr_ * (m.array() / bias1) / ((v.array() / bias2).sqrt() + eps))
               .matrix();
      break;
    }
    case OptimizerKind::RmsProp: {
      constexpr double decay = 0.99, eps = 1e-8;
      auto v = v_.segment(begin, n);
      v = (decay * v.array() + (1.0 - decay) * g.array().square())
              .matrix()
              .eval();
      p -= (lr_ * g.array() / (v.array().sqrt() + eps)).matrix();
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// SR-NN penalty

SrnnPenalty srnn_penalty(const MlpQ& q, const std::vector<Observation>& batch,
                         const SrnnConfig& config) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const int hidden = q.hidden_dim();
  const double inv_batch = 1.0 / double(batch.size());

  std::vector<MlpQ::ForwardTrace> traces;
  traces.reserve(batch.size());
  VectorXd mean_act = VectorXd::Zero(hidden);
  for (const Observation& obs : batch) {
    traces.push_back(q.forward_trace(obs));
    mean_act += traces.back().h2;
  }
  mean_act *= inv_batch;

  constexpr double kClamp = 1e-6;
  SrnnPenalty out;
  VectorXd dpen_dmean = VectorXd::Zero(hidden);
  for (int j = 0; j < hidden; ++j) {
    const double x = std::max(mean_act(j), kClamp);
    const double ratio = x / config.beta;
    out.value += config.lambda * (ratio - std::log(ratio) - 1.0);
    if (mean_act(j) > kClamp)
      dpen_dmean(j) = config.lambda * (1.0 / config.beta - 1.0 / x);
  }

  // Backprop d penalty / d mean activation through each sample's trace.
  out.grad = VectorXd::Zero(q.n_params());
  const int in = q.input_dim();
  const int n_out = q.n_actions();
  const Layout layout(in, hidden, n_out);
  const double* t = q.params().data();
  ConstMat w2(t + layout.w2, hidden, hidden);
  double* g = out.grad.data();
  MutMat gw1(g + layout.w1, hidden, in);
  MutVec gb1(g + layout.b1, hidden);
  MutMat gw2(g + layout.w2, hidden, hidden);
  MutVec gb2(g + layout.b2, hidden);

  for (size_t i = 0; i < batch.size(); ++i) {
    const auto& trace = traces[i];
    const VectorXd mask2 = (trace.z2.array() > 0.0).cast<double>().matrix();
    const VectorXd g2 =
        inv_batch * (dpen_dmean.array() * mask2.array()).matrix();
    gw2 += g2 * trace.h1.transpose();
    gb2 += g2;
    const VectorXd mask1 = (trace.z1.array() > 0.0).cast<double>().matrix();
    const VectorXd g1 =
        ((w2.transpose() * g2).array() * mask1.array()).matrix();
    gw1 += g1 * batch[i].transpose();
    gb1 += g1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr char kMagic[8] = {'R', 'L', 'I', 'M', 'Q', 'N', 'E', 'T'};
}

void save_checkpoint(const MlpQ& q, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint file: " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::int32_t dims[3] = {std::int32_t(q.input_dim()),
                                std::int32_t(q.hidden_dim()),
                                std::int32_t(q.n_actions())};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(q.params().data()),
            std::streamsize(sizeof(double)) * q.n_params());
  if (!out) throw std::runtime_error("short write to checkpoint: " + path);
}

MlpQ load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint file: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("bad checkpoint header: " + path);
  std::int32_t dims[3];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  MlpQ q(dims[0], dims[1], dims[2]);
  in.read(reinterpret_cast<char*>(q.theta_.data()),
          std::streamsize(sizeof(double)) * q.n_params());
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  return q;
}

}  // namespace rlim::approx
