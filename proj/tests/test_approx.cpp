#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <vector>

#include "rlim/approx.hpp"

using namespace rlim;
using namespace rlim::approx;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

/// Packs explicit layer matrices into the flat layout [W1,b1,W2,b2,W3,b3]
/// (column-major within blocks). Doubles as a freeze of the checkpoint
/// parameter order.
VectorXd pack_params(const MatrixXd& w1, const VectorXd& b1,
                     const MatrixXd& w2, const VectorXd& b2,
                     const MatrixXd& w3, const VectorXd& b3) {
  VectorXd theta(w1.size() + b1.size() + w2.size() + b2.size() + w3.size() +
                 b3.size());
  int at = 0;
  auto put_mat = [&](const MatrixXd& m) {
    for (int c = 0; c < m.cols(); ++c)
      for (int r = 0; r < m.rows(); ++r) theta(at++) = m(r, c);
  };
  auto put_vec = [&](const VectorXd& v) {
    for (int i = 0; i < v.size(); ++i) theta(at++) = v(i);
  };
  put_mat(w1);
  put_vec(b1);
  put_mat(w2);
  put_vec(b2);
  put_mat(w3);
  put_vec(b3);
  return theta;
}

MlpQ random_net(int in, int hidden, int out, std::uint64_t seed) {
  return MlpQ::he_init(in, hidden, out, seed);
}

Observation random_obs(int dim, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Observation obs(dim);
  for (int i = 0; i < dim; ++i) obs(i) = rng.uniform(lo, hi);
  return obs;
}

/// Central finite differences of Q(obs, action) w.r.t. every parameter.
VectorXd fd_action_gradient(MlpQ q, const Observation& obs, int action,
                            double h) {
  VectorXd grad(q.n_params());
  for (int i = 0; i < q.n_params(); ++i) {
    const double saved = q.params()(i);
    q.params()(i) = saved + h;
    const double up = q.values(obs)(action);
    q.params()(i) = saved - h;
    const double down = q.values(obs)(action);
    q.params()(i) = saved;
    grad(i) = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace

TEST_CASE("he_init statistics") {
  // Equal fan-in everywhere so each weight is N(0, 2/128).
  const MlpQ q = MlpQ::he_init(128, 128, 4, 99);
  int zeros = 0;
  double sum = 0.0, sum_sq = 0.0;
  int n_weights = 0;
  for (int i = 0; i < q.n_params(); ++i) {
    const double v = q.params()(i);
    if (v == 0.0) {
      zeros += 1;
      continue;
    }
    sum += v;
    sum_sq += v * v;
    n_weights += 1;
  }
  CHECK(zeros == 128 + 128 + 4);  // biases exactly zero
  const double mean = sum / n_weights;
  const double var = sum_sq / n_weights - mean * mean;
  const double expected = 2.0 / 128.0;
  CHECK(var == doctest::Approx(expected).epsilon(0.2));
}

TEST_CASE("he_init is reproducible per seed") {
  const MlpQ a = MlpQ::he_init(4, 32, 2, 7);
  const MlpQ b = MlpQ::he_init(4, 32, 2, 7);
  const MlpQ c = MlpQ::he_init(4, 32, 2, 8);
  CHECK(a.params() == b.params());
  CHECK(a.params() != c.params());
}

TEST_CASE("zero-parameter forward yields zeros") {
  const MlpQ q(3, 16, 4);
  Rng rng(1);
  const VectorXd v = q.values(random_obs(3, rng));
  CHECK(v.cwiseAbs().maxCoeff() == 0.0);
  CHECK(greedy_action(q, random_obs(3, rng)) == 0);  // tie-break to action 0
}

TEST_CASE("forward matches an independent matrix oracle") {
  Rng rng(2);
  const int in = 4, hidden = 8, out = 3;
  MatrixXd w1(hidden, in), w2(hidden, hidden), w3(out, hidden);
  VectorXd b1(hidden), b2(hidden), b3(out);
  for (int trial = 0; trial < 10; ++trial) {
    for (int i = 0; i < w1.size(); ++i) w1.data()[i] = rng.uniform(-1, 1);
    for (int i = 0; i < w2.size(); ++i) w2.data()[i] = rng.uniform(-1, 1);
    for (int i = 0; i < w3.size(); ++i) w3.data()[i] = rng.uniform(-1, 1);
    for (int i = 0; i < hidden; ++i) b1(i) = rng.uniform(-1, 1);
    for (int i = 0; i < hidden; ++i) b2(i) = rng.uniform(-1, 1);
    for (int i = 0; i < out; ++i) b3(i) = rng.uniform(-1, 1);

    MlpQ q(in, hidden, out);
    q.params() = pack_params(w1, b1, w2, b2, w3, b3);

    const Observation x = random_obs(in, rng);
    const VectorXd h1 = (w1 * x + b1).cwiseMax(0.0);
    const VectorXd h2 = (w2 * h1 + b2).cwiseMax(0.0);
    const VectorXd expected = w3 * h2 + b3;
    CHECK((q.values(x) - expected).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("backward matches central finite differences") {
  Rng rng(3);
  int done = 0;
  std::uint64_t seed = 100;
  while (done < 20) {
    const int in = 3 + int(seed % 2);
    const int hidden = 8 + int(seed % 3) * 4;
    const int out = 2 + int(seed % 3);
    const MlpQ q = random_net(in, hidden, out, seed++);
    const Observation x = random_obs(in, rng);
    // Skip samples whose pre-activations sit on a ReLU kink.
    const auto trace = q.forward_trace(x);
    if (trace.z1.cwiseAbs().minCoeff() < 1e-4 ||
        trace.z2.cwiseAbs().minCoeff() < 1e-4)
      continue;
    const int action = int(seed % out);
    const VectorXd exact = q.action_gradient(x, action);
    const VectorXd fd = fd_action_gradient(q, x, action, 1e-5);
    const double rel =
        (exact - fd).norm() / std::max(1.0, exact.norm());
    CHECK(rel < 1e-6);
    done += 1;
  }
}

TEST_CASE("zero input with zero biases kills hidden gradients") {
  const MlpQ q = [] {
    MlpQ net = MlpQ::he_init(3, 8, 2, 5);
    // He init leaves biases at zero already; zero the input instead.
    return net;
  }();
  Observation x = Observation::Zero(3);
  const VectorXd grad = q.action_gradient(x, 1);
  // Everything below the last layer is dead: z1 = 0 and the subgradient at
  // zero is zero.
  const int vln = q.value_layer_offset();
  CHECK(grad.head(vln).cwiseAbs().maxCoeff() == 0.0);
  CHECK(grad.tail(grad.size() - vln).cwiseAbs().sum() == 1.0);  // only b3(a)
}

TEST_CASE("last-layer gradient is the hidden activation") {
  Rng rng(6);
  const MlpQ q = random_net(4, 12, 3, 17);
  const Observation x = random_obs(4, rng);
  const auto trace = q.forward_trace(x);
  const int action = 2;
  const VectorXd grad = q.action_gradient(x, action);
  // W3 is (out x hidden), column-major inside the flat block.
  const int vln = q.value_layer_offset();
  for (int j = 0; j < q.hidden_dim(); ++j) {
    const double g_w3_aj = grad(vln + j * q.n_actions() + action);
    CHECK(g_w3_aj == doctest::Approx(trace.h2(j)).epsilon(1e-12));
  }
  // Other actions' rows receive nothing.
  for (int j = 0; j < q.hidden_dim(); ++j)
    CHECK(grad(vln + j * q.n_actions() + 0) == 0.0);
}

TEST_CASE("tile coder activates one feature per tiling, disjoint by room") {
  TileCoderQ q(4);
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    Observation a(3), b(3);
    a << rng.uniform(), rng.uniform(), 0.0;
    b << rng.uniform(), rng.uniform(), 1.0;
    const auto fa = q.active_features(a);
    const auto fb = q.active_features(b);
    const std::set<int> sa(fa.begin(), fa.end());
    CHECK(sa.size() == TileCoderQ::kTilings);
    for (int f : fa) {
      CHECK(f >= 0);
      CHECK(f < TileCoderQ::kFeaturesPerRoom);
    }
    for (int f : fb) {
      CHECK(f >= TileCoderQ::kFeaturesPerRoom);
      CHECK(f < TileCoderQ::kTotalFeatures);
    }
  }
}

TEST_CASE("tile coder value is the sum of its 16 active weights") {
  TileCoderQ q(4);
  Rng rng(8);
  Observation obs(3);
  obs << 0.35, 0.8, 1.0;
  q.update(obs, 2, 0.25);  // adds 0.25 to each of the 16 active features
  const VectorXd v = q.values(obs);
  CHECK(v(2) == doctest::Approx(16 * 0.25));
  CHECK(v(0) == 0.0);
}

TEST_CASE("optimizers leave parameters alone when they should") {
  for (auto kind :
       {OptimizerKind::Sgd, OptimizerKind::Adam, OptimizerKind::RmsProp}) {
    VectorXd params = VectorXd::LinSpaced(5, 1.0, 5.0);
    const VectorXd before = params;

    Optimizer zero_lr(kind, 0.0, 5);
    zero_lr.apply(params, VectorXd::Ones(5));
    CHECK(params == before);  // step size zero is the identity
  }
  // Zero gradient under SGD.
  VectorXd params = VectorXd::LinSpaced(5, 1.0, 5.0);
  const VectorXd before = params;
  Optimizer sgd(OptimizerKind::Sgd, 0.1, 5);
  sgd.apply(params, VectorXd::Zero(5));
  CHECK(params == before);
}

TEST_CASE("adam single step matches the hand recurrence") {
  VectorXd params(1);
  params << 2.0;
  VectorXd grad(1);
  grad << 0.4;
  const double lr = 0.01;
  Optimizer adam(OptimizerKind::Adam, lr, 1);
  adam.apply(params, grad);

  const double m = 0.1 * 0.4;              // (1-beta1) g
  const double v = 0.001 * 0.4 * 0.4;      // (1-beta2) g^2
  const double m_hat = m / (1.0 - 0.9);    // bias correction, t = 1
  const double v_hat = v / (1.0 - 0.999);
  const double expected = 2.0 - lr * m_hat / (std::sqrt(v_hat) + 1e-8);
  CHECK(params(0) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("rmsprop single step matches the hand recurrence") {
  VectorXd params(1);
  params << -1.0;
  VectorXd grad(1);
  grad << -0.3;
  const double lr = 0.005;
  Optimizer rms(OptimizerKind::RmsProp, lr, 1);
  rms.apply(params, grad);
  const double v = 0.01 * 0.09;  // (1-decay) g^2
  const double expected = -1.0 - lr * -0.3 / (std::sqrt(v) + 1e-8);
  CHECK(params(0) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("srnn penalty vanishes when mean activations equal beta") {
  const int hidden = 6;
  MlpQ q(3, hidden, 2);
  // W1 = 0, b1 = 0, W2 = 0, b2 = beta: h2 is beta for every input.
  const SrnnConfig config{0.01, 0.1};
  const MatrixXd w1 = MatrixXd::Zero(hidden, 3);
  const MatrixXd w2 = MatrixXd::Zero(hidden, hidden);
  const MatrixXd w3 = MatrixXd::Zero(2, hidden);
  q.params() = pack_params(w1, VectorXd::Zero(hidden), w2,
                           VectorXd::Constant(hidden, config.beta), w3,
                           VectorXd::Zero(2));
  Rng rng(9);
  std::vector<Observation> batch;
  for (int i = 0; i < 8; ++i) batch.push_back(random_obs(3, rng));
  const SrnnPenalty penalty = srnn_penalty(q, batch, config);
  CHECK(penalty.value == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(penalty.grad.cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("srnn penalty is nonnegative and linear in lambda") {
  Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    const MlpQ q = random_net(3, 10, 2, 50 + trial);
    std::vector<Observation> batch;
    for (int i = 0; i < 6; ++i) batch.push_back(random_obs(3, rng, 0.0, 1.0));
    const SrnnPenalty p1 = srnn_penalty(q, batch, SrnnConfig{0.001, 0.1});
    const SrnnPenalty p2 = srnn_penalty(q, batch, SrnnConfig{0.002, 0.1});
    CHECK(p1.value >= 0.0);
    CHECK(p2.value == doctest::Approx(2.0 * p1.value).epsilon(1e-12));
  }
}

TEST_CASE("srnn penalty gradient matches finite differences") {
  Rng rng(11);
  const SrnnConfig config{0.01, 0.1};
  int done = 0;
  std::uint64_t seed = 400;
  while (done < 5) {
    MlpQ q = random_net(3, 8, 2, seed++);
    std::vector<Observation> batch;
    for (int i = 0; i < 5; ++i) batch.push_back(random_obs(3, rng, 0.1, 1.0));
    // Keep away from ReLU kinks and the clamp region.
    bool clean = true;
    VectorXd mean_act = VectorXd::Zero(8);
    for (const auto& obs : batch) {
      const auto trace = q.forward_trace(obs);
      if (trace.z1.cwiseAbs().minCoeff() < 1e-4 ||
          trace.z2.cwiseAbs().minCoeff() < 1e-4)
        clean = false;
      mean_act += trace.h2 / double(batch.size());
    }
    if (!clean || mean_act.minCoeff() < 1e-3) continue;

    const SrnnPenalty penalty = srnn_penalty(q, batch, config);
    const double h = 1e-6;
    VectorXd fd(q.n_params());
    for (int i = 0; i < q.n_params(); ++i) {
      const double saved = q.params()(i);
      q.params()(i) = saved + h;
      const double up = srnn_penalty(q, batch, config).value;
      q.params()(i) = saved - h;
      const double down = srnn_penalty(q, batch, config).value;
      q.params()(i) = saved;
      fd(i) = (up - down) / (2.0 * h);
    }
    const double rel =
        (penalty.grad - fd).norm() / std::max(1e-8, fd.norm());
    CHECK(rel < 1e-4);
    // Head parameters never feel the representation penalty.
    CHECK(penalty.grad.tail(q.n_params() - q.value_layer_offset())
              .cwiseAbs()
              .maxCoeff() == 0.0);
    done += 1;
  }
}

TEST_CASE("frozen parameter copies keep their hash") {
  MlpQ live = random_net(4, 16, 2, 77);
  const MlpQ frozen = live;  // target-network style snapshot
  const std::uint64_t hash_before = param_hash(frozen.params());
  Rng rng(12);
  for (int i = 0; i < 50; ++i)
    live.td_update(random_obs(4, rng), rng.uniform_int(2), rng.uniform(),
                   1e-2);
  CHECK(param_hash(frozen.params()) == hash_before);
  CHECK(param_hash(live.params()) != hash_before);
}

TEST_CASE("checkpoint round-trip is exact") {
  const MlpQ q = random_net(4, 24, 3, 123);
  const auto path = std::filesystem::temp_directory_path() / "rlim_q_test.bin";
  save_checkpoint(q, path.string());
  const MlpQ back = load_checkpoint(path.string());
  CHECK(back.input_dim() == 4);
  CHECK(back.hidden_dim() == 24);
  CHECK(back.n_actions() == 3);
  CHECK(back.params() == q.params());
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path.string()), std::runtime_error);
}

TEST_CASE("partition covers the parameter vector") {
  const MlpQ q = random_net(5, 16, 3, 9);
  const ParamPartition part = ParamPartition::of(q);
  CHECK(part.rln_begin == 0);
  CHECK(part.rln_end == part.vln_begin);
  CHECK(part.vln_end == q.n_params());
  CHECK(part.vln_end - part.vln_begin == 3 * 16 + 3);  // W3 + b3
}
