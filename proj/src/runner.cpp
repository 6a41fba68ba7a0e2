#include "rlim/runner.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "rlim/metrics.hpp"
#include "rlim/tabular.hpp"

namespace rlim::runner {

namespace fs = std::filesystem;
using agents::AgentConfig;
using agents::InteractResult;
using agents::Transition;
using approx::MlpQ;
using approx::OptimizerKind;
using approx::QFunction;
using envs::Environment;
using measures::EvalSet;
using measures::EvalStrategy;
using measures::OrEstimate;
using measures::OrSampleSet;

// ---------------------------------------------------------------------------
// Shared plumbing

std::string format_double(double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

std::string config_hash_hex(const json& j) {
  const std::string dump = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : dump) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buffer[17];
  std::snprintf(buffer, sizeof(buffer), "%016llx",
                static_cast<unsigned long long>(h));
  return buffer;
}

void write_text_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_json_atomic(const fs::path& path, const json& j) {
  write_text_atomic(path, j.dump(2) + "\n");
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  json j;
  in >> j;
  return j;
}

std::vector<std::string> run_parallel(
    const std::vector<std::function<void()>>& tasks, int jobs) {
  std::vector<std::string> errors;
  std::mutex errors_mutex;
  std::atomic<std::size_t> next{0};
  const int workers = std::max(1, std::min<int>(jobs, int(tasks.size())));

  auto worker = [&] {
    while (true) {
      const std::size_t index = next.fetch_add(1);
      if (index >= tasks.size()) return;
      try {
        tasks[index]();
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(errors_mutex);
        errors.push_back("task " + std::to_string(index) + ": " + e.what());
      }
    }
  };

  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return errors;
}

// ---------------------------------------------------------------------------
// Configuration serialization

namespace {

std::string optimizer_name(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::Adam: return "adam";
    case OptimizerKind::RmsProp: return "rmsprop";
  }
  return "sgd";
}

OptimizerKind optimizer_from_name(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "rmsprop") return OptimizerKind::RmsProp;
  throw std::invalid_argument("unknown optimizer: " + name);
}

json agent_to_json(const AgentConfig& a) {
  return json{{"hidden", a.hidden},
              {"batch", a.batch},
              {"buffer", a.buffer},
              {"target_sync", a.target_sync},
              {"lr", a.lr},
              {"optimizer", optimizer_name(a.optimizer)},
              {"lr_rln", a.lr_rln},
              {"lr_vln", a.lr_vln},
              {"srnn_lambda", a.srnn_lambda},
              {"srnn_beta", a.srnn_beta}};
}

void agent_from_json(AgentConfig& a, const json& j) {
  a.hidden = j.value("hidden", a.hidden);
  a.batch = j.value("batch", a.batch);
  a.buffer = j.value("buffer", a.buffer);
  a.target_sync = j.value("target_sync", a.target_sync);
  a.lr = j.value("lr", a.lr);
  if (j.contains("optimizer"))
    a.optimizer = optimizer_from_name(j["optimizer"].get<std::string>());
  a.lr_rln = j.value("lr_rln", a.lr_rln);
  a.lr_vln = j.value("lr_vln", a.lr_vln);
  a.srnn_lambda = j.value("srnn_lambda", a.srnn_lambda);
  a.srnn_beta = j.value("srnn_beta", a.srnn_beta);
}

}  // namespace

json RunSettings::to_json() const {
  return json{{"env", env},
              {"steps", steps},
              {"stages", stages},
              {"cadence", cadence},
              {"gamma", gamma},
              {"or", json{{"n_pairs", or_est.n_pairs},
                          {"n_rollouts", or_est.n_rollouts},
                          {"tail_tol", or_est.tail_tol}}},
              {"eval_capacity", eval_capacity},
              {"offline_rollouts", offline_rollouts},
              {"checkpoint_every", checkpoint_every},
              {"agent_kind", agent_kind},
              {"agent", agent_to_json(agent)},
              {"epsilon", agent.epsilon},
              {"tc_step_size", tc_step_size},
              {"per_room_ei", per_room_ei},
              {"measure_blocks", measure_blocks}};
}

json ExperimentConfig::to_json() const {
  json j = run.to_json();
  j["experiment"] = experiment;
  j["seeds"] = seeds;
  j["threshold"] = threshold;
  j["stability_k"] = stability_k;
  j["eti_alpha"] = eti_alpha;
  j["out"] = out;
  j["jobs"] = jobs;
  j["grid"] = json{{"hidden", grid_hidden},
                   {"batch", grid_batch},
                   {"buffer", grid_buffer},
                   {"target_sync", grid_target_sync}};
  j["verify"] = json{{"mdps", verify_mdps},
                     {"max_states", verify_max_states},
                     {"max_actions", verify_max_actions},
                     {"gammas", verify_gammas},
                     {"p", verify_p},
                     {"tol", verify_tol},
                     {"seed", verify_seed}};
  return j;
}

ExperimentConfig make_default_config(const std::string& experiment,
                                     const std::string& env) {
  ExperimentConfig config;
  config.experiment = experiment;
  config.run.env = env;
  if (env == "two_rooms") {
    config.run.steps = 90000;
    config.run.stages = {10000, 70000, 10000};
    config.threshold = -60.0;
  } else {
    config.run.steps = 20000;
    config.run.stages.clear();
    config.threshold = 200.0;
  }
  if (experiment == "validate-aei" || experiment == "demo-two-rooms") {
    // Fixed reference network: hidden 128, batch 64, buffer 1000, no target.
    config.grid_hidden = {128};
    config.grid_batch = {64};
    config.grid_buffer = {1000};
    config.grid_target_sync = {0};
  }
  if (experiment == "validate-aei") {
    // Without a target network the reference agent can blow up at the
    // module-wide default rate on some seeds, and a diverged run's TD
    // errors drown the pooled correlation. 3e-4 keeps every seed stable.
    config.run.agent.lr = 3e-4;
  }
  if (experiment == "sbcd") {
    config.run.agent_kind = "sbcd";
    config.run.agent.optimizer = OptimizerKind::Sgd;
    config.grid_hidden = {128};
    config.grid_batch = {64};
    config.grid_buffer = {1000};
    config.grid_target_sync = {0};
  }
  return config;
}

void apply_desk_preset(ExperimentConfig& config) {
  config.run.or_est.n_rollouts = 1;
  config.run.or_est.n_pairs = 20;
  config.run.offline_rollouts = 5;
  config.stability_k = 20;
  if (config.run.env == "two_rooms") {
    config.run.steps = 18000;
    config.run.stages = {6000, 9000, 3000};
  } else {
    config.run.steps = 10000;
  }
  if (config.experiment == "demo-two-rooms") {
    config.grid_hidden = {64};
    config.grid_batch = {32};
    config.run.tc_step_size = 0.2;
  }
  if (config.experiment == "sweep") {
    config.grid_hidden = {64};
    config.grid_batch = {16, 64, 256};
    config.grid_buffer = {1000};
    config.grid_target_sync = {0, 100, 200, 400};
    if (config.run.env == "two_rooms") {
      config.run.steps = 12000;
      config.run.stages = {2000, 8000, 2000};
    } else {
      config.run.steps = 8000;
    }
  }
  if (config.experiment == "sbcd") {
    config.grid_hidden = {64};
    config.run.steps = 10000;
  }
}

void overlay_config(ExperimentConfig& config, const json& j) {
  static const std::vector<std::string> known = {
      "experiment", "env", "steps", "stages", "cadence", "gamma", "epsilon",
      "or", "eval_capacity", "offline_rollouts", "checkpoint_every",
      "agent_kind", "agent", "tc_step_size", "per_room_ei", "measure_blocks",
      "seeds", "threshold", "stability_k", "eti_alpha", "out", "jobs", "grid",
      "verify"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw std::invalid_argument("unknown config key: " + key);
    (void)value;
  }

  RunSettings& run = config.run;
  run.env = j.value("env", run.env);
  run.steps = j.value("steps", run.steps);
  if (j.contains("stages")) run.stages = j["stages"].get<std::vector<long>>();
  run.cadence = j.value("cadence", run.cadence);
  run.gamma = j.value("gamma", run.gamma);
  run.agent.gamma = run.gamma;
  if (j.contains("epsilon")) run.agent.epsilon = j["epsilon"].get<double>();
  if (j.contains("or")) {
    const json& o = j["or"];
    run.or_est.n_pairs = o.value("n_pairs", run.or_est.n_pairs);
    run.or_est.n_rollouts = o.value("n_rollouts", run.or_est.n_rollouts);
    run.or_est.tail_tol = o.value("tail_tol", run.or_est.tail_tol);
  }
  run.eval_capacity = j.value("eval_capacity", run.eval_capacity);
  run.offline_rollouts = j.value("offline_rollouts", run.offline_rollouts);
  run.checkpoint_every = j.value("checkpoint_every", run.checkpoint_every);
  run.agent_kind = j.value("agent_kind", run.agent_kind);
  if (j.contains("agent")) agent_from_json(run.agent, j["agent"]);
  run.tc_step_size = j.value("tc_step_size", run.tc_step_size);
  run.per_room_ei = j.value("per_room_ei", run.per_room_ei);
  run.measure_blocks = j.value("measure_blocks", run.measure_blocks);

  config.experiment = j.value("experiment", config.experiment);
  config.seeds = j.value("seeds", config.seeds);
  config.threshold = j.value("threshold", config.threshold);
  config.stability_k = j.value("stability_k", config.stability_k);
  config.eti_alpha = j.value("eti_alpha", config.eti_alpha);
  config.out = j.value("out", config.out);
  config.jobs = j.value("jobs", config.jobs);
  if (j.contains("grid")) {
    const json& g = j["grid"];
    if (g.contains("hidden"))
      config.grid_hidden = g["hidden"].get<std::vector<int>>();
    if (g.contains("batch"))
      config.grid_batch = g["batch"].get<std::vector<int>>();
    if (g.contains("buffer"))
      config.grid_buffer = g["buffer"].get<std::vector<int>>();
    if (g.contains("target_sync"))
      config.grid_target_sync = g["target_sync"].get<std::vector<int>>();
  }
  if (j.contains("verify")) {
    const json& v = j["verify"];
    config.verify_mdps = v.value("mdps", config.verify_mdps);
    config.verify_max_states = v.value("max_states", config.verify_max_states);
    config.verify_max_actions =
        v.value("max_actions", config.verify_max_actions);
    if (v.contains("gammas"))
      config.verify_gammas = v["gammas"].get<std::vector<double>>();
    if (v.contains("p")) config.verify_p = v["p"].get<std::vector<double>>();
    config.verify_tol = v.value("tol", config.verify_tol);
    config.verify_seed = v.value("seed", config.verify_seed);
  }
}

// ---------------------------------------------------------------------------
// Run execution

namespace {

std::unique_ptr<Environment> make_env(const std::string& env, int room,
                                      std::uint64_t seed) {
  if (env == "two_rooms") return std::make_unique<envs::TwoRooms>(room);
  if (env == "cartpole") return std::make_unique<envs::CartPole>(seed);
  throw std::invalid_argument("unknown environment: " + env);
}

int episode_cap(const std::string& env) {
  return env == "two_rooms" ? envs::TwoRooms::kEpisodeCap
                            : envs::CartPole::kEpisodeCap;
}

struct StagePlan {
  std::vector<long> ends;  // cumulative step boundaries
  std::vector<int> rooms;  // room per stage: 0, 1, 0, ...
};

StagePlan make_plan(const RunSettings& settings) {
  StagePlan plan;
  if (settings.env == "two_rooms" && !settings.stages.empty()) {
    long acc = 0;
    for (std::size_t i = 0; i < settings.stages.size(); ++i) {
      acc += settings.stages[i];
      plan.ends.push_back(acc);
      plan.rooms.push_back(int(i % 2));
    }
    if (plan.ends.back() != settings.steps)
      throw std::invalid_argument("stage lengths must sum to total steps");
  } else {
    plan.ends.push_back(settings.steps);
    plan.rooms.push_back(0);
  }
  return plan;
}

/// Uniform facade over the three agent kinds used by the run loop.
class AnyAgent {
 public:
  AnyAgent(const RunSettings& settings, int obs_dim, int n_actions,
           std::uint64_t seed)
      : kind_(settings.agent_kind) {
    AgentConfig config = settings.agent;
    config.gamma = settings.gamma;
    if (kind_ == "dqn") {
      dqn_.emplace(obs_dim, n_actions, config, seed);
    } else if (kind_ == "tile") {
      tile_.emplace(n_actions, settings.tc_step_size, settings.gamma,
                    config.epsilon, seed);
    } else if (kind_ == "sbcd") {
      sbcd_.emplace(obs_dim, n_actions, config, seed);
    } else {
      throw std::invalid_argument("unknown agent kind: " + kind_);
    }
  }

  void attach(Environment& env) {
    if (dqn_) dqn_->attach(env);
    if (tile_) tile_->attach(env);
    if (sbcd_) sbcd_->attach(env);
  }

  InteractResult interact(Environment& env) {
    if (dqn_) last_ = dqn_->interact(env);
    if (tile_) last_ = tile_->interact(env);
    if (sbcd_) last_ = sbcd_->interact(env);
    return last_;
  }

  bool train() {
    if (dqn_) return dqn_->train_update();
    if (tile_) {
      tile_->train_on(last_.transition);
      return true;
    }
    if (sbcd_->ready()) {
      const auto batch = sbcd_->sample_batch();
      sbcd_->rln_update(batch);
      sbcd_->vln_update(batch);
      return true;
    }
    return false;
  }

  void post_sync() {
    if (dqn_) dqn_->sync_target_if_due();
  }

  std::unique_ptr<QFunction> policy_copy() const {
    if (dqn_) return std::make_unique<MlpQ>(dqn_->q());
    if (tile_) return std::make_unique<approx::TileCoderQ>(tile_->q());
    return std::make_unique<MlpQ>(sbcd_->q());
  }

  const MlpQ* net() const {
    if (dqn_) return &dqn_->q();
    if (sbcd_) return &sbcd_->q();
    return nullptr;
  }

  bool sbcd_ready() const { return sbcd_ && sbcd_->ready(); }
  std::vector<Transition> sbcd_batch() { return sbcd_->sample_batch(); }
  void sbcd_rln(const std::vector<Transition>& b) { sbcd_->rln_update(b); }
  void sbcd_vln(const std::vector<Transition>& b) { sbcd_->vln_update(b); }

 private:
  std::string kind_;
  std::optional<agents::DqnAgent> dqn_;
  std::optional<agents::TileCodeAgent> tile_;
  std::optional<agents::SbcdAgent> sbcd_;
  InteractResult last_;
};

double offline_return(const RunSettings& settings, int room,
                      const QFunction& policy, std::uint64_t seed) {
  auto env = make_env(settings.env, room, seed);
  const int horizon = episode_cap(settings.env);
  double total = 0.0;
  for (int r = 0; r < settings.offline_rollouts; ++r) {
    env->reseed(derive_seed(seed, r));
    const envs::Observation obs = env->reset();
    // Undiscounted episodic return of the frozen greedy policy.
    total += measures::rollout_return(*env, policy,
                                      approx::greedy_action(policy, obs),
                                      horizon, 1.0);
  }
  return total / settings.offline_rollouts;
}

RunOutput execute_run_impl(const RunSettings& settings, std::uint64_t seed,
                           const fs::path* checkpoint_dir) {
  const StagePlan plan = make_plan(settings);
  const int horizon = std::min(
      measures::horizon_for(settings.gamma, settings.or_est.tail_tol),
      episode_cap(settings.env) + 1);

  auto env = make_env(settings.env, plan.rooms[0], derive_seed(seed, 100));
  AnyAgent agent(settings, env->obs_dim(), env->n_actions(),
                 derive_seed(seed, 1));
  agent.attach(*env);

  auto rollout_env = env->clone();  // restored from snapshots before use
  EvalSet eval_buffer(EvalStrategy::Buffer, settings.eval_capacity,
                      derive_seed(seed, 2), settings.gamma);
  EvalSet eval_reservoir(EvalStrategy::Reservoir, settings.eval_capacity,
                         derive_seed(seed, 3), settings.gamma);
  EvalSet eval_discounted(EvalStrategy::Discounted, settings.eval_capacity,
                          derive_seed(seed, 4), settings.gamma);

  double online_avg = 0.0, partial_return = 0.0;
  bool online_ready = false;
  std::size_t stage_index = 0;

  // Interference is measured over the window between measurement steps:
  // the policy recorded at the previous measurement against the current
  // one. The blockwise study instead isolates the single two-block update
  // performed at the measurement step.
  std::unique_ptr<QFunction> window_policy = agent.policy_copy();
  long window_updates = 0;

  RunOutput output;
  for (long t = 1; t <= settings.steps; ++t) {
    const InteractResult result = agent.interact(*env);
    eval_buffer.add(result.transition);
    eval_reservoir.add(result.transition);
    eval_discounted.add(result.transition);
    partial_return += result.transition.reward;
    if (result.episode_end) {
      online_avg = online_ready
                       ? 0.9 * online_avg + 0.1 * result.episode_return
                       : result.episode_return;
      online_ready = true;
      partial_return = 0.0;
    }

    const bool measure = t % settings.cadence == 0;
    std::unique_ptr<QFunction> before;
    std::unique_ptr<QFunction> mid;
    bool block_updated = false;
    if (settings.measure_blocks && measure) {
      before = agent.policy_copy();
      block_updated = agent.sbcd_ready();
      if (block_updated) {
        const auto batch = agent.sbcd_batch();
        agent.sbcd_rln(batch);
        mid = agent.policy_copy();
        agent.sbcd_vln(batch);
      }
    } else {
      if (agent.train()) window_updates += 1;
    }

    if (measure) {
      const std::unique_ptr<QFunction> after = agent.policy_copy();

      MeasurementRow row;
      row.step = t;
      row.online_return = online_ready ? online_avg : partial_return;
      row.offline_return =
          offline_return(settings, plan.rooms[stage_index], *after,
                         derive_seed(seed, 5000000ULL + std::uint64_t(t)));

      std::array<double, 2> rooms_ei = {0.0, 0.0};
      std::array<double, 2> blocks_ei = {0.0, 0.0};
      const std::uint64_t sample_seed =
          derive_seed(seed, 7000000ULL + std::uint64_t(t));
      if (settings.measure_blocks) {
        if (block_updated) {
          const OrSampleSet samples = measures::make_or_samples(
              *rollout_env, settings.or_est.n_pairs, sample_seed);
          const OrEstimate est_before = measures::estimate_or(
              *before, *rollout_env, samples, settings.or_est.n_rollouts,
              horizon, settings.gamma);
          const OrEstimate est_mid = measures::estimate_or(
              *mid, *rollout_env, samples, settings.or_est.n_rollouts,
              horizon, settings.gamma);
          const OrEstimate est_after = measures::estimate_or(
              *after, *rollout_env, samples, settings.or_est.n_rollouts,
              horizon, settings.gamma);
          blocks_ei[0] = measures::expected_interference(est_before, est_mid);
          blocks_ei[1] = measures::expected_interference(est_mid, est_after);
          row.ei = measures::expected_interference(est_before, est_after);
          row.aei_buffer =
              measures::aei(*before, *after, eval_buffer, settings.gamma);
          row.aei_reservoir =
              measures::aei(*before, *after, eval_reservoir, settings.gamma);
          row.aei_discounted =
              measures::aei(*before, *after, eval_discounted, settings.gamma);
        }
      } else if (window_updates > 0) {
        if (settings.env == "two_rooms") {
          for (int room = 0; room < 2; ++room) {
            if (!settings.per_room_ei && room != plan.rooms[stage_index])
              continue;
            const OrSampleSet samples = measures::make_two_rooms_room_samples(
                room, settings.or_est.n_pairs, sample_seed);
            envs::TwoRooms room_env(room);
            const OrEstimate est_before = measures::estimate_or(
                *window_policy, room_env, samples, settings.or_est.n_rollouts,
                horizon, settings.gamma);
            const OrEstimate est_after = measures::estimate_or(
                *after, room_env, samples, settings.or_est.n_rollouts, horizon,
                settings.gamma);
            rooms_ei[room] =
                measures::expected_interference(est_before, est_after);
          }
          row.ei = rooms_ei[plan.rooms[stage_index]];
        } else {
          const OrSampleSet samples = measures::make_or_samples(
              *rollout_env, settings.or_est.n_pairs, sample_seed);
          const OrEstimate est_before = measures::estimate_or(
              *window_policy, *rollout_env, samples, settings.or_est.n_rollouts,
              horizon, settings.gamma);
          const OrEstimate est_after = measures::estimate_or(
              *after, *rollout_env, samples, settings.or_est.n_rollouts,
              horizon, settings.gamma);
          row.ei = measures::expected_interference(est_before, est_after);
        }
        row.aei_buffer =
            measures::aei(*window_policy, *after, eval_buffer, settings.gamma);
        row.aei_reservoir = measures::aei(*window_policy, *after,
                                          eval_reservoir, settings.gamma);
        row.aei_discounted = measures::aei(*window_policy, *after,
                                           eval_discounted, settings.gamma);
      }

      output.rows.push_back(row);
      output.stage_of_row.push_back(int(stage_index));
      if (settings.per_room_ei) output.room_ei.push_back(rooms_ei);
      if (settings.measure_blocks) output.block_ei.push_back(blocks_ei);

      window_policy = agent.policy_copy();
      window_updates = 0;
    }
    agent.post_sync();

    if (checkpoint_dir != nullptr && agent.net() != nullptr &&
        settings.checkpoint_every > 0 &&
        (t % settings.checkpoint_every == 0 || t == settings.steps)) {
      char name[64];
      std::snprintf(name, sizeof(name), "step_%08ld.bin", t);
      approx::save_checkpoint(*agent.net(), (*checkpoint_dir / name).string());
    }

    if (stage_index + 1 < plan.ends.size() && t == plan.ends[stage_index]) {
      stage_index += 1;
      env = make_env(settings.env, plan.rooms[stage_index],
                     derive_seed(seed, 100 + stage_index));
      rollout_env = env->clone();
      agent.attach(*env);
      // The online average restarts with the new room.
      online_ready = false;
      online_avg = 0.0;
      partial_return = 0.0;
    }
  }
  return output;
}

}  // namespace

RunOutput execute_run(const RunSettings& settings, std::uint64_t seed) {
  return execute_run_impl(settings, seed, nullptr);
}

// ---------------------------------------------------------------------------
// Summaries and persistence

namespace {

std::vector<double> collect(const std::vector<MeasurementRow>& rows,
                            const std::vector<std::size_t>& idx,
                            double MeasurementRow::*field) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (const std::size_t i : idx) out.push_back(rows[i].*field);
  return out;
}

}  // namespace

json summarize_run(const ExperimentConfig& config, const RunSettings& settings,
                   const RunOutput& output) {
  const std::vector<MeasurementRow>& rows = output.rows;
  if (rows.empty())
    throw std::invalid_argument("run produced no measurements");

  // Metric window: all rows for cartpole; the long middle stage for the
  // two-room schedule. Interference statistics use its second half.
  std::vector<std::size_t> metric_idx;
  if (settings.env == "two_rooms" && settings.stages.size() >= 2) {
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (output.stage_of_row[i] == 1) metric_idx.push_back(i);
  }
  if (metric_idx.empty())
    for (std::size_t i = 0; i < rows.size(); ++i) metric_idx.push_back(i);
  const std::vector<std::size_t> interference_idx(
      metric_idx.begin() + metric_idx.size() / 2, metric_idx.end());

  const std::vector<double> online =
      collect(rows, metric_idx, &MeasurementRow::online_return);
  const std::vector<double> offline =
      collect(rows, metric_idx, &MeasurementRow::offline_return);
  const std::vector<double> ei =
      collect(rows, interference_idx, &MeasurementRow::ei);
  const std::vector<double> aei_b =
      collect(rows, interference_idx, &MeasurementRow::aei_buffer);
  const std::vector<double> aei_r =
      collect(rows, interference_idx, &MeasurementRow::aei_reservoir);
  const std::vector<double> aei_d =
      collect(rows, interference_idx, &MeasurementRow::aei_discounted);

  json summary;
  summary["aer_online"] = metrics::aer(online);
  summary["aer_offline"] = metrics::aer(offline);
  summary["stable_online"] =
      metrics::consecutive_stable(online, config.threshold);
  summary["stable_offline"] =
      metrics::consecutive_stable(offline, config.threshold);
  summary["efficiency_online"] =
      metrics::sample_efficiency(online, config.threshold, config.stability_k);
  summary["efficiency_offline"] = metrics::sample_efficiency(
      offline, config.threshold, config.stability_k);
  summary["stable_aer_online_beta0"] = metrics::stable_aer(online, 0.0);
  summary["stable_aer_online_beta05"] = metrics::stable_aer(online, 0.5);
  summary["stable_aer_offline_beta0"] = metrics::stable_aer(offline, 0.0);
  summary["stable_aer_offline_beta05"] = metrics::stable_aer(offline, 0.5);
  summary["eti"] = measures::eti(ei, config.eti_alpha);
  summary["dispersion"] = measures::interference_dispersion(ei);
  summary["approximate_eti_buffer"] = measures::eti(aei_b, config.eti_alpha);
  summary["approximate_eti_reservoir"] = measures::eti(aei_r, config.eti_alpha);
  summary["approximate_eti_discounted"] =
      measures::eti(aei_d, config.eti_alpha);

  if (!output.block_ei.empty()) {
    std::vector<double> rln, vln;
    for (const std::size_t i : interference_idx) {
      rln.push_back(output.block_ei[i][0]);
      vln.push_back(output.block_ei[i][1]);
    }
    summary["eti_rln"] = measures::eti(rln, config.eti_alpha);
    summary["eti_vln"] = measures::eti(vln, config.eti_alpha);
  }
  return summary;
}

namespace {

std::string series_csv(const RunOutput& output) {
  std::string csv =
      "step,online_return,offline_return,ei,aei_buffer,aei_reservoir,"
      "aei_discounted\n";
  for (const MeasurementRow& row : output.rows) {
    csv += std::to_string(row.step);
    csv += ',';
    csv += format_double(row.online_return);
    csv += ',';
    csv += format_double(row.offline_return);
    csv += ',';
    csv += format_double(row.ei);
    csv += ',';
    csv += format_double(row.aei_buffer);
    csv += ',';
    csv += format_double(row.aei_reservoir);
    csv += ',';
    csv += format_double(row.aei_discounted);
    csv += '\n';
  }
  return csv;
}

std::string rooms_csv(const RunOutput& output) {
  std::string csv = "step,stage,ei_room0,ei_room1\n";
  for (std::size_t i = 0; i < output.rows.size(); ++i) {
    csv += std::to_string(output.rows[i].step);
    csv += ',';
    csv += std::to_string(output.stage_of_row[i]);
    csv += ',';
    csv += format_double(output.room_ei[i][0]);
    csv += ',';
    csv += format_double(output.room_ei[i][1]);
    csv += '\n';
  }
  return csv;
}

std::string blocks_csv(const RunOutput& output) {
  std::string csv = "step,ei_rln,ei_vln,ei_total\n";
  for (std::size_t i = 0; i < output.rows.size(); ++i) {
    csv += std::to_string(output.rows[i].step);
    csv += ',';
    csv += format_double(output.block_ei[i][0]);
    csv += ',';
    csv += format_double(output.block_ei[i][1]);
    csv += ',';
    csv += format_double(output.rows[i].ei);
    csv += '\n';
  }
  return csv;
}

}  // namespace

void write_run_dir(const fs::path& dir, const ExperimentConfig& config,
                   const RunSettings& settings, std::uint64_t seed,
                   const RunOutput& output) {
  fs::create_directories(dir);
  json run_config = settings.to_json();
  run_config["seed"] = seed;
  run_config["experiment"] = config.experiment;
  run_config["threshold"] = config.threshold;
  run_config["stability_k"] = config.stability_k;
  run_config["eti_alpha"] = config.eti_alpha;
  write_json_atomic(dir / "config.json", run_config);
  write_text_atomic(dir / "series.csv", series_csv(output));
  if (!output.room_ei.empty())
    write_text_atomic(dir / "demo_rooms.csv", rooms_csv(output));
  if (!output.block_ei.empty())
    write_text_atomic(dir / "sbcd_series.csv", blocks_csv(output));
  write_json_atomic(dir / "summary.json",
                    summarize_run(config, settings, output));
}

// ---------------------------------------------------------------------------
// Experiment drivers

namespace {

fs::path run_dir_for(const ExperimentConfig& config,
                     const RunSettings& settings, int seed) {
  const std::string hash = config_hash_hex(settings.to_json());
  return fs::path(config.out) / config.experiment / hash /
         ("seed_" + std::to_string(seed));
}

bool run_complete(const fs::path& dir) {
  return fs::exists(dir / "summary.json");
}

/// Executes one seeded run into its directory unless already present.
void run_and_persist(const ExperimentConfig& config,
                     const RunSettings& settings, int seed) {
  const fs::path dir = run_dir_for(config, settings, seed);
  if (run_complete(dir)) return;
  const fs::path checkpoints = dir / "checkpoints";
  fs::create_directories(checkpoints);
  const RunOutput output =
      execute_run_impl(settings, std::uint64_t(seed), &checkpoints);
  write_run_dir(dir, config, settings, std::uint64_t(seed), output);
}

}  // namespace

json run_demo_two_rooms(const ExperimentConfig& config) {
  struct Variant {
    std::string name;
    std::string kind;
    OptimizerKind optimizer;
    double lr;
  };
  // Learning rates picked per optimizer so every variant can master a room
  // within the first stage.
  const std::vector<Variant> variants = {
      {"tile_coding", "tile", OptimizerKind::Sgd, 0.0},
      {"dqn_adam", "dqn", OptimizerKind::Adam, 3e-3},
      {"dqn_rmsprop", "dqn", OptimizerKind::RmsProp, 1e-3}};

  json report;
  report["experiment"] = "demo-two-rooms";
  report["seeds"] = config.seeds;
  std::vector<std::function<void()>> tasks;
  for (const Variant& variant : variants) {
    RunSettings settings = config.run;
    settings.env = "two_rooms";
    settings.per_room_ei = true;
    settings.agent_kind = variant.kind;
    settings.agent.hidden = config.grid_hidden.front();
    settings.agent.batch = config.grid_batch.front();
    settings.agent.buffer = config.grid_buffer.front();
    settings.agent.target_sync = config.grid_target_sync.front();
    settings.agent.optimizer = variant.optimizer;
    if (variant.lr > 0.0) settings.agent.lr = variant.lr;
    report["variants"][variant.name] = {
        {"hash", config_hash_hex(settings.to_json())},
        {"settings", settings.to_json()}};
    for (int seed = 0; seed < config.seeds; ++seed)
      tasks.push_back([config, settings, seed] {
        run_and_persist(config, settings, seed);
      });
  }
  const std::vector<std::string> errors = run_parallel(tasks, config.jobs);
  report["failures"] = errors;
  write_json_atomic(fs::path(config.out) / config.experiment / "report.json",
                    report);
  return report;
}

json run_sweep(const ExperimentConfig& config) {
  json report;
  report["experiment"] = config.experiment;
  report["env"] = config.run.env;
  report["seeds"] = config.seeds;
  report["configs"] = json::array();

  std::vector<std::function<void()>> tasks;
  for (const int hidden : config.grid_hidden) {
    for (const int batch : config.grid_batch) {
      for (const int buffer : config.grid_buffer) {
        for (const int target : config.grid_target_sync) {
          RunSettings settings = config.run;
          settings.agent_kind = "dqn";
          settings.agent.hidden = hidden;
          settings.agent.batch = batch;
          settings.agent.buffer = buffer;
          settings.agent.target_sync = target;
          report["configs"].push_back(
              {{"hash", config_hash_hex(settings.to_json())},
               {"hidden", hidden},
               {"batch", batch},
               {"buffer", buffer},
               {"target_sync", target}});
          for (int seed = 0; seed < config.seeds; ++seed)
            tasks.push_back([config, settings, seed] {
              run_and_persist(config, settings, seed);
            });
        }
      }
    }
  }
  const std::vector<std::string> errors = run_parallel(tasks, config.jobs);
  report["failures"] = errors;
  write_json_atomic(fs::path(config.out) / config.experiment / "report.json",
                    report);
  return report;
}

json run_correlation(const ExperimentConfig& config) {
  const fs::path sweep_root = fs::path(config.out) / config.experiment;
  if (!fs::exists(sweep_root))
    throw std::runtime_error("no sweep output under " + sweep_root.string());

  // Per-config seed averages of every summary scalar.
  struct Aggregate {
    std::map<std::string, double> sums;
    int count = 0;
  };
  std::map<std::string, Aggregate> by_config;
  std::vector<std::string> missing;
  for (const auto& hash_dir : fs::directory_iterator(sweep_root)) {
    if (!hash_dir.is_directory()) continue;
    for (const auto& seed_dir : fs::directory_iterator(hash_dir.path())) {
      if (!seed_dir.is_directory()) continue;
      const fs::path summary_path = seed_dir.path() / "summary.json";
      if (!fs::exists(summary_path)) {
        missing.push_back(seed_dir.path().string());
        continue;
      }
      const json summary = read_json_file(summary_path);
      Aggregate& agg = by_config[hash_dir.path().filename().string()];
      for (const auto& [key, value] : summary.items())
        if (value.is_number()) agg.sums[key] += value.get<double>();
      agg.count += 1;
    }
  }
  if (by_config.size() < 2)
    throw std::runtime_error("correlation needs at least two sweep configs");

  const std::vector<std::string> metric_names = {"aer", "stable", "efficiency",
                                                 "stable_aer"};
  const std::vector<std::string> modes = {"online", "offline"};
  const std::vector<std::string> statistics = {"eti", "dispersion"};

  auto summary_key = [](const std::string& metric, const std::string& mode) {
    if (metric == "stable_aer") return "stable_aer_" + mode + "_beta05";
    return metric + "_" + mode;
  };

  json report;
  report["configs"] = int(by_config.size());
  report["missing_runs"] = missing;
  std::string csv = "metric,statistic,mode,tau\n";
  for (const std::string& metric : metric_names) {
    for (const std::string& statistic : statistics) {
      for (const std::string& mode : modes) {
        std::vector<std::pair<double, double>> pairs;
        for (const auto& [hash, agg] : by_config) {
          const double g = agg.sums.at(summary_key(metric, mode)) / agg.count;
          const double s = agg.sums.at(statistic) / agg.count;
          pairs.push_back({g, s});
        }
        const double tau = metrics::kendall_tau(pairs);
        report["tau"][metric][statistic][mode] = tau;
        csv += metric + "," + statistic + "," + mode + "," +
               format_double(tau) + "\n";
      }
    }
  }
  write_text_atomic(sweep_root / "correlations.csv", csv);
  write_json_atomic(sweep_root / "correlations.json", report);
  return report;
}

json run_aei_validation(const ExperimentConfig& config) {
  RunSettings settings = config.run;
  settings.env = "cartpole";
  settings.agent_kind = "dqn";
  settings.agent.hidden = config.grid_hidden.front();
  settings.agent.batch = config.grid_batch.front();
  settings.agent.buffer = config.grid_buffer.front();
  settings.agent.target_sync = config.grid_target_sync.front();

  std::vector<RunOutput> outputs(config.seeds);
  std::vector<std::function<void()>> tasks;
  for (int seed = 0; seed < config.seeds; ++seed) {
    tasks.push_back([&outputs, config, settings, seed] {
      const fs::path dir = run_dir_for(config, settings, seed);
      if (run_complete(dir)) {
        // Reload the persisted series instead of re-running.
        RunOutput output;
        std::ifstream in(dir / "series.csv");
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
          MeasurementRow row;
          std::sscanf(line.c_str(), "%ld,%lf,%lf,%lf,%lf,%lf,%lf", &row.step,
                      &row.online_return, &row.offline_return, &row.ei,
                      &row.aei_buffer, &row.aei_reservoir,
                      &row.aei_discounted);
          output.rows.push_back(row);
          output.stage_of_row.push_back(0);
        }
        outputs[seed] = std::move(output);
        return;
      }
      const fs::path checkpoints = dir / "checkpoints";
      fs::create_directories(checkpoints);
      RunOutput output =
          execute_run_impl(settings, std::uint64_t(seed), &checkpoints);
      write_run_dir(dir, config, settings, std::uint64_t(seed), output);
      outputs[seed] = std::move(output);
    });
  }
  const std::vector<std::string> errors = run_parallel(tasks, config.jobs);
  if (!errors.empty())
    throw std::runtime_error("validation runs failed: " + errors.front());

  // Pool second-half (EI, AEI) pairs across seeds.
  std::vector<double> ei_pool;
  std::map<std::string, std::vector<double>> aei_pool;
  std::map<std::string, std::vector<std::pair<double, double>>> eti_pairs;
  std::string pairs_csv =
      "seed,step,ei,aei_buffer,aei_reservoir,aei_discounted\n";
  for (int seed = 0; seed < config.seeds; ++seed) {
    const auto& rows = outputs[seed].rows;
    std::vector<double> ei_window, b_window, r_window, d_window;
    for (std::size_t i = rows.size() / 2; i < rows.size(); ++i) {
      ei_pool.push_back(rows[i].ei);
      aei_pool["buffer"].push_back(rows[i].aei_buffer);
      aei_pool["reservoir"].push_back(rows[i].aei_reservoir);
      aei_pool["discounted"].push_back(rows[i].aei_discounted);
      ei_window.push_back(rows[i].ei);
      b_window.push_back(rows[i].aei_buffer);
      r_window.push_back(rows[i].aei_reservoir);
      d_window.push_back(rows[i].aei_discounted);
      pairs_csv += std::to_string(seed) + "," + std::to_string(rows[i].step) +
                   "," + format_double(rows[i].ei) + "," +
                   format_double(rows[i].aei_buffer) + "," +
                   format_double(rows[i].aei_reservoir) + "," +
                   format_double(rows[i].aei_discounted) + "\n";
    }
    const double e = measures::eti(ei_window, config.eti_alpha);
    eti_pairs["buffer"].push_back(
        {e, measures::eti(b_window, config.eti_alpha)});
    eti_pairs["reservoir"].push_back(
        {e, measures::eti(r_window, config.eti_alpha)});
    eti_pairs["discounted"].push_back(
        {e, measures::eti(d_window, config.eti_alpha)});
  }

  json report;
  report["experiment"] = "validate-aei";
  report["seeds"] = config.seeds;
  report["n_pairs"] = ei_pool.size();
  for (const std::string strategy : {"buffer", "reservoir", "discounted"}) {
    const metrics::PearsonResult step_level =
        metrics::pearson_r(ei_pool, aei_pool[strategy]);
    report["per_step"][strategy] = {{"r", step_level.r},
                                    {"p", step_level.p_value}};
    std::vector<double> xs, ys;
    for (const auto& [x, y] : eti_pairs[strategy]) {
      xs.push_back(x);
      ys.push_back(y);
    }
    if (xs.size() >= 3) {
      const metrics::PearsonResult eti_level = metrics::pearson_r(xs, ys);
      report["eti_level"][strategy] = {{"r", eti_level.r},
                                       {"p", eti_level.p_value}};
    }
  }

  // Null control: shuffling the pairing should destroy the correlation.
  std::vector<double> shuffled = aei_pool["reservoir"];
  Rng rng(999);
  for (std::size_t i = shuffled.size(); i > 1; --i)
    std::swap(shuffled[i - 1], shuffled[std::size_t(rng.uniform_int(int(i)))]);
  report["null_control_r"] = metrics::pearson_r(ei_pool, shuffled).r;

  const fs::path out_dir = fs::path(config.out) / "validate-aei";
  write_text_atomic(out_dir / "pairs.csv", pairs_csv);
  write_json_atomic(out_dir / "validation_report.json", report);
  return report;
}

json run_sbcd_study(const ExperimentConfig& config) {
  struct Variant {
    std::string name;
    double lr_vln;
    double srnn_lambda;
  };
  const std::vector<Variant> variants = {
      {"sbcd", config.run.agent.lr_vln, 0.0},
      {"sbcd_small_alpha2", config.run.agent.lr_vln / 10.0, 0.0},
      {"sbcd_srnn", config.run.agent.lr_vln, 0.001}};

  json report;
  report["experiment"] = "sbcd";
  report["seeds"] = config.seeds;
  std::vector<std::function<void()>> tasks;
  std::vector<RunSettings> variant_settings;
  for (const Variant& variant : variants) {
    RunSettings settings = config.run;
    settings.env = "cartpole";
    settings.agent_kind = "sbcd";
    settings.measure_blocks = true;
    settings.agent.hidden = config.grid_hidden.front();
    settings.agent.batch = config.grid_batch.front();
    settings.agent.buffer = config.grid_buffer.front();
    settings.agent.target_sync = 0;
    settings.agent.lr_vln = variant.lr_vln;
    settings.agent.srnn_lambda = variant.srnn_lambda;
    variant_settings.push_back(settings);
    for (int seed = 0; seed < config.seeds; ++seed)
      tasks.push_back([config, settings, seed] {
        run_and_persist(config, settings, seed);
      });
  }
  const std::vector<std::string> errors = run_parallel(tasks, config.jobs);
  report["failures"] = errors;

  std::string csv =
      "variant,eti_rln_mean,eti_rln_se,eti_vln_mean,eti_vln_se,"
      "performance_mean,performance_se\n";
  for (std::size_t v = 0; v < variants.size(); ++v) {
    std::vector<double> rln, vln, perf;
    for (int seed = 0; seed < config.seeds; ++seed) {
      const fs::path dir = run_dir_for(config, variant_settings[v], seed);
      const json summary = read_json_file(dir / "summary.json");
      rln.push_back(summary["eti_rln"].get<double>());
      vln.push_back(summary["eti_vln"].get<double>());
      perf.push_back(summary["aer_online"].get<double>());
    }
    auto mean_se = [](const std::vector<double>& xs) {
      double mean = 0.0;
      for (const double x : xs) mean += x / xs.size();
      double var = 0.0;
      for (const double x : xs) var += (x - mean) * (x - mean);
      var = xs.size() > 1 ? var / double(xs.size() - 1) : 0.0;
      return std::pair<double, double>(mean,
                                       std::sqrt(var / double(xs.size())));
    };
    const auto [rln_mean, rln_se] = mean_se(rln);
    const auto [vln_mean, vln_se] = mean_se(vln);
    const auto [perf_mean, perf_se] = mean_se(perf);
    report["rows"][variants[v].name] = {
        {"eti_rln", {{"mean", rln_mean}, {"se", rln_se}}},
        {"eti_vln", {{"mean", vln_mean}, {"se", vln_se}}},
        {"performance", {{"mean", perf_mean}, {"se", perf_se}}},
        {"hash", config_hash_hex(variant_settings[v].to_json())}};
    csv += variants[v].name + "," + format_double(rln_mean) + "," +
           format_double(rln_se) + "," + format_double(vln_mean) + "," +
           format_double(vln_se) + "," + format_double(perf_mean) + "," +
           format_double(perf_se) + "\n";
  }
  const fs::path out_dir = fs::path(config.out) / "sbcd";
  write_text_atomic(out_dir / "sbcd_report.csv", csv);
  write_json_atomic(out_dir / "sbcd_report.json", report);
  return report;
}

json run_verify_bounds(const ExperimentConfig& config) {
  Rng rng(config.verify_seed);
  json report;
  double max_cw_violation = -tabular::kInf;
  double max_weighted_violation = -tabular::kInf;
  double max_identity_error = 0.0;
  double max_concentration_violation = -tabular::kInf;
  double max_bias_variance_error = 0.0;
  int vacuous = 0;

  for (int i = 0; i < config.verify_mdps; ++i) {
    const int n_states = 2 + rng.uniform_int(config.verify_max_states - 1);
    const int n_actions = 2 + rng.uniform_int(config.verify_max_actions - 1);
    const double gamma = config.verify_gammas[i % config.verify_gammas.size()];
    const tabular::TabularMdp mdp =
        tabular::random_mdp(n_states, n_actions, gamma, rng);
    const tabular::QTable q = tabular::random_q(mdp, rng);
    const tabular::StateMeasure nu =
        tabular::random_measure(n_states, rng, 0.2);
    const tabular::StateMeasure mu =
        tabular::random_measure(n_states, rng, 0.2);
    tabular::TabularPolicy b;
    b.probs = tabular::MatrixXd::Constant(n_states, n_actions,
                                          1.0 / double(n_actions));

    const tabular::VectorXd d = tabular::state_action_weights(nu, n_actions);
    const tabular::BoundReport bound = tabular::verify_residual_bound(mdp, q, d);
    max_cw_violation = std::max(max_cw_violation, bound.max_violation);
    max_weighted_violation =
        std::max(max_weighted_violation, bound.weighted_violation);
    max_identity_error = std::max(max_identity_error, bound.identity_error);

    for (const double p : config.verify_p) {
      const tabular::BoundReport conc =
          tabular::verify_concentration_bound(mdp, q, nu, mu, b, p);
      if (conc.vacuous) {
        vacuous += 1;
        continue;
      }
      max_concentration_violation =
          std::max(max_concentration_violation, conc.max_violation);
    }

    const tabular::IdentityReport identity =
        tabular::verify_bias_variance(mdp, q, d);
    max_bias_variance_error =
        std::max(max_bias_variance_error, identity.identity_error);
  }

  // Deterministic MDPs must carry exactly zero target variance.
  double max_det_variance = 0.0;
  for (int i = 0; i < config.verify_mdps / 4 + 1; ++i) {
    const tabular::TabularMdp mdp = tabular::random_deterministic_mdp(
        2 + rng.uniform_int(config.verify_max_states - 1),
        2 + rng.uniform_int(config.verify_max_actions - 1),
        config.verify_gammas[i % config.verify_gammas.size()], rng);
    const tabular::QTable q = tabular::random_q(mdp, rng);
    const tabular::VectorXd d =
        tabular::VectorXd::Constant(mdp.sa(), 1.0 / mdp.sa());
    const tabular::IdentityReport identity =
        tabular::verify_bias_variance(mdp, q, d);
    max_det_variance = std::max(max_det_variance, identity.variance_term);
    max_bias_variance_error =
        std::max(max_bias_variance_error, identity.identity_error);
  }

  report["mdps"] = config.verify_mdps;
  report["tolerance"] = config.verify_tol;
  report["residual_bound"] = {{"max_componentwise_violation", max_cw_violation},
                      {"max_weighted_violation", max_weighted_violation},
                      {"max_proof_identity_error", max_identity_error}};
  report["concentration_bound"] = {{"max_violation", max_concentration_violation},
                        {"vacuous", vacuous}};
  report["bias_variance"] = {
      {"max_identity_error", max_bias_variance_error},
      {"max_deterministic_variance", max_det_variance}};
  report["pass"] = max_cw_violation <= config.verify_tol &&
                   max_weighted_violation <= config.verify_tol &&
                   max_identity_error <= config.verify_tol &&
                   max_concentration_violation <= config.verify_tol &&
                   max_bias_variance_error <= 1e-10 &&
                   max_det_variance == 0.0;
  write_json_atomic(fs::path(config.out) / "verify_bounds.json", report);
  return report;
}

// ---------------------------------------------------------------------------
// CLI

namespace {

struct CliOverrides {
  std::string config_path;
  std::string out;
  int seeds = -1;
  long steps = -1;
  int cadence = -1;
  int jobs = -1;
  bool desk = false;
  std::string env;
};

void add_common_options(CLI::App* cmd, CliOverrides& overrides) {
  cmd->add_option("--config", overrides.config_path, "JSON config file");
  cmd->add_option("--out", overrides.out, "output root directory");
  cmd->add_option("--seeds", overrides.seeds, "number of seeds (0, 1, ...)");
  cmd->add_option("--steps", overrides.steps, "total environment steps");
  cmd->add_option("--cadence", overrides.cadence,
                  "environment steps between measurements");
  cmd->add_option("--jobs", overrides.jobs, "worker pool size");
  cmd->add_flag("--desk", overrides.desk, "desk-scale preset");
}

ExperimentConfig build_config(const std::string& experiment,
                              const std::string& default_env,
                              const CliOverrides& overrides) {
  const std::string env = overrides.env.empty() ? default_env : overrides.env;
  ExperimentConfig config = make_default_config(experiment, env);
  if (overrides.desk) apply_desk_preset(config);
  if (!overrides.config_path.empty()) {
    if (!fs::exists(overrides.config_path))
      throw std::runtime_error("config file not found: " +
                               overrides.config_path);
    overlay_config(config, read_json_file(overrides.config_path));
  }
  if (const char* env_out = std::getenv("RLIM_OUT");
      env_out != nullptr && config.out == "runs")
    config.out = env_out;
  if (!overrides.out.empty()) config.out = overrides.out;
  if (overrides.seeds >= 0) config.seeds = overrides.seeds;
  if (overrides.steps >= 0) {
    config.run.steps = overrides.steps;
    if (config.run.env == "two_rooms" && !config.run.stages.empty()) {
      // Keep the 1/9 - 7/9 - 1/9 proportions of the default schedule.
      const long s1 = overrides.steps / 9;
      const long s2 = overrides.steps * 7 / 9;
      config.run.stages = {s1, s2, overrides.steps - s1 - s2};
    }
  }
  if (overrides.cadence >= 1) config.run.cadence = overrides.cadence;
  if (overrides.jobs >= 1) config.jobs = overrides.jobs;
  return config;
}

}  // namespace

int cli_dispatch(int argc, char** argv) {
  CLI::App app{"rlim: interference measurement laboratory for RL control"};
  app.require_subcommand(1);

  struct Sub {
    std::string name;
    std::string description;
    std::string default_env;
    bool has_env_option;
  };
  const std::vector<Sub> subs = {
      {"demo-two-rooms", "three-stage Two-Rooms demonstration", "two_rooms",
       false},
      {"sweep", "hyperparameter sweep over the agent grid", "cartpole", true},
      {"correlate", "Kendall correlation over a finished sweep", "cartpole",
       true},
      {"validate-aei", "per-step EI vs AEI correlation study", "cartpole",
       false},
      {"sbcd", "blockwise interference study", "cartpole", false},
      {"verify-bounds", "numerical certification of the tabular bounds",
       "cartpole", false}};

  std::map<std::string, CliOverrides> overrides;
  for (const Sub& sub : subs) {
    CLI::App* cmd = app.add_subcommand(sub.name, sub.description);
    add_common_options(cmd, overrides[sub.name]);
    if (sub.has_env_option)
      cmd->add_option("--env", overrides[sub.name].env,
                      "environment: cartpole or two_rooms");
  }

  int verify_mdps = -1;
  long long verify_seed = -1;
  {
    CLI::App* cmd = app.get_subcommand("verify-bounds");
    cmd->add_option("--mdps", verify_mdps, "number of random MDPs");
    cmd->add_option("--seed", verify_seed, "generator seed");
  }

  app.get_subcommand("demo-two-rooms")->callback([&] {
    const json report = run_demo_two_rooms(build_config(
        "demo-two-rooms", "two_rooms", overrides["demo-two-rooms"]));
    std::cout << report.dump(2) << std::endl;
  });
  app.get_subcommand("sweep")->callback([&] {
    ExperimentConfig config =
        build_config("sweep", "cartpole", overrides["sweep"]);
    config.experiment = "sweep-" + config.run.env;
    const json report = run_sweep(config);
    std::cout << report.dump(2) << std::endl;
  });
  app.get_subcommand("correlate")->callback([&] {
    ExperimentConfig config =
        build_config("correlate", "cartpole", overrides["correlate"]);
    config.experiment = "sweep-" + config.run.env;
    const json report = run_correlation(config);
    std::cout << report.dump(2) << std::endl;
  });
  app.get_subcommand("validate-aei")->callback([&] {
    const json report = run_aei_validation(
        build_config("validate-aei", "cartpole", overrides["validate-aei"]));
    std::cout << report.dump(2) << std::endl;
  });
  app.get_subcommand("sbcd")->callback([&] {
    const json report =
        run_sbcd_study(build_config("sbcd", "cartpole", overrides["sbcd"]));
    std::cout << report.dump(2) << std::endl;
  });
  app.get_subcommand("verify-bounds")->callback([&] {
    ExperimentConfig config = build_config("verify-bounds", "cartpole",
                                           overrides["verify-bounds"]);
    if (verify_mdps > 0) config.verify_mdps = verify_mdps;
    if (verify_seed >= 0) config.verify_seed = std::uint64_t(verify_seed);
    const json report = run_verify_bounds(config);
    std::cout << report.dump(2) << std::endl;
    if (!report["pass"].get<bool>())
      throw CLI::RuntimeError("bound verification failed", 1);
  });

  if (argc <= 1) {
    std::cout << app.help() << std::endl;
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::RuntimeError& e) {
    return e.get_exit_code();
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}

}  // namespace rlim::runner
