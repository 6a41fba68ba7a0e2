#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "rlim/agents.hpp"
#include "rlim/measures.hpp"

namespace rlim::runner {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

struct OrSettings {
  int n_pairs = 50;
  int n_rollouts = 10;
  double tail_tol = 1e-4;  // horizon H solves gamma^H < tail_tol
};

/**
 * Everything defining one seeded run: environment schedule, agent variant,
 * and measurement cadence. Hashing its JSON form names the run directory.
 */
struct RunSettings {
  std::string env = "cartpole";    // "cartpole" or "two_rooms"
  long steps = 20000;
  std::vector<long> stages;        // Two-Rooms stage lengths, rooms 0/1/0
  int cadence = 100;
  double gamma = 0.99;
  OrSettings or_est;
  int eval_capacity = 1000;
  int offline_rollouts = 10;
  long checkpoint_every = 1000;

  std::string agent_kind = "dqn";  // dqn | tile | sbcd
  agents::AgentConfig agent;
  double tc_step_size = 0.1;

  bool per_room_ei = false;        // also track both rooms' interference
  bool measure_blocks = false;     // sbcd: per-block interference

  json to_json() const;
};

/// Experiment-level configuration: a RunSettings template plus the sweep
/// grid, seed count, metric conventions and output root.
struct ExperimentConfig {
  std::string experiment;
  RunSettings run;
  int seeds = 10;
  double threshold = 200.0;  // performance threshold for stability metrics
  int stability_k = 500;
  double eti_alpha = 0.1;
  std::string out = "runs";
  int jobs = 1;

  // Sweep grid (cartesian product); single-element vectors elsewhere.
  std::vector<int> grid_hidden = {128, 256, 512};
  std::vector<int> grid_batch = {16, 64, 256};
  std::vector<int> grid_buffer = {100, 1000, 2000};
  std::vector<int> grid_target_sync = {0, 100, 200, 400, 800};

  // Bound-verification settings.
  int verify_mdps = 200;
  int verify_max_states = 10;
  int verify_max_actions = 4;
  std::vector<double> verify_gammas = {0.9, 0.99};
  std::vector<double> verify_p = {1.0, 2.0};
  double verify_tol = 1e-8;
  std::uint64_t verify_seed = 1;

  json to_json() const;
};

/// Full-scale defaults per experiment and environment.
ExperimentConfig make_default_config(const std::string& experiment,
                                     const std::string& env);

/// Shrinks steps, grids and rollout counts to desk scale.
void apply_desk_preset(ExperimentConfig& config);

/// Overlays JSON fields onto an existing config; unknown keys are errors.
void overlay_config(ExperimentConfig& config, const json& j);

// ---------------------------------------------------------------------------
// Run execution

struct MeasurementRow {
  long step = 0;
  double online_return = 0.0;
  double offline_return = 0.0;
  double ei = 0.0;
  double aei_buffer = 0.0;
  double aei_reservoir = 0.0;
  double aei_discounted = 0.0;
};

struct RunOutput {
  std::vector<MeasurementRow> rows;
  std::vector<int> stage_of_row;                   // 0-based stage index
  std::vector<std::array<double, 2>> room_ei;      // when per_room_ei
  std::vector<std::array<double, 2>> block_ei;     // when measure_blocks
};

/// Executes one seeded run and returns its measurement series.
RunOutput execute_run(const RunSettings& settings, std::uint64_t seed);

/// Summary metrics recomputable bit-exactly from the series: performance
/// metrics over the metric window and interference statistics over the
/// interference window.
json summarize_run(const ExperimentConfig& config, const RunSettings& settings,
                   const RunOutput& output);

/// Writes config.json, series.csv (and per-room / per-block series when
/// present) plus summary.json into the run directory.
void write_run_dir(const std::filesystem::path& dir,
                   const ExperimentConfig& config, const RunSettings& settings,
                   std::uint64_t seed, const RunOutput& output);

// ---------------------------------------------------------------------------
// Experiments (each returns its report, also written under config.out)

json run_demo_two_rooms(const ExperimentConfig& config);
json run_sweep(const ExperimentConfig& config);
json run_correlation(const ExperimentConfig& config);
json run_aei_validation(const ExperimentConfig& config);
json run_sbcd_study(const ExperimentConfig& config);
json run_verify_bounds(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Shared plumbing

/// Shortest-round-trip decimal form of a double (%.17g).
std::string format_double(double value);

/// FNV-1a over the canonical dump, as 16 hex digits.
std::string config_hash_hex(const json& j);

void write_text_atomic(const std::filesystem::path& path,
                       const std::string& content);
void write_json_atomic(const std::filesystem::path& path, const json& j);
json read_json_file(const std::filesystem::path& path);

/// Runs tasks on a bounded pool; returns one error string per failed task.
std::vector<std::string> run_parallel(
    const std::vector<std::function<void()>>& tasks, int jobs);

/// CLI entry point: subcommands demo-two-rooms, sweep, correlate,
/// validate-aei, sbcd, verify-bounds.
int cli_dispatch(int argc, char** argv);

}  // namespace rlim::runner
