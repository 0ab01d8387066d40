#pragma once

// Experiment configuration: one struct holding every module's settings, a
// schema of documented keys, and an INI-style reader that rejects unknown
// keys.
//
//   [section]
//   key = value

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "arl/buffers.hpp"
#include "arl/env.hpp"
#include "arl/inference.hpp"
#include "arl/model.hpp"
#include "arl/rollout.hpp"
#include "arl/trainer.hpp"

namespace arl {

enum class RunMode { async, sync_baseline };
RunMode parse_run_mode(const std::string& s);
std::string to_string(RunMode m);

struct ExperimentConfig {
    RunMode mode = RunMode::async;
    std::uint64_t seed = 1;
    bool virtual_clock = true;
    std::size_t env_step_budget = 200000;
    double wall_budget_s = 3600.0;       // runtime clock
    std::size_t eval_interval = 5000;    // env steps between checkpoints
    std::size_t eval_episodes_per_task = 20;
    double stop_at_return = 0.0;         // > 0: stop once an evaluation reaches it
    double throughput_interval_s = 1.0;
    std::string out_dir;

    bool world_model = false;
    std::size_t pretrain_trajectories = 200;
    std::size_t pretrain_steps = 1000;
    bool snap_predicted_obs = true;      // decode imagined frames to valid grids
    double pretrain_noise = 0.3;         // probability of a random chunk in scripted episodes
    bool pretrain_counts_toward_budget = true;

    std::size_t sync_episodes_per_worker = 1;
    std::size_t sync_updates_per_round = 1;

    SuiteConfig suite;
    std::vector<double> worker_latency_scales;
    ModelConfig model;
    InferenceService::Config inference;
    RolloutConfig rollout;
    std::size_t main_capacity = 512;
    std::size_t wm_capacity = 2048;
    std::size_t img_capacity = 2048;
    PrefetchConfig prefetch;
    TrainerConfig trainer;

    ExperimentConfig();

    /// Derives dependent fields (model shapes, per-worker latency scales,
    /// trainer world-model flag) and validates everything. Throws ConfigError.
    void finalize();
};

/// Documented key list in canonical order ("section.key").
std::vector<std::string> config_keys();
std::string config_key_doc(const std::string& key);

/// Sets one key from its textual value. Throws ConfigError for an unknown
/// key or a malformed value.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const ExperimentConfig& cfg, const std::string& key);

/// Applies every key of an INI file on top of `base`. All unknown keys are
/// reported together. Throws IoError when the file cannot be read.
ExperimentConfig load_config_file(const std::string& path, ExperimentConfig base = {});
ExperimentConfig parse_config_text(const std::string& text, ExperimentConfig base = {});

/// Canonical "section.key = value" lines.
std::string dump_config(const ExperimentConfig& cfg);

/// 16 hex digits of an FNV-1a hash over the canonical dump. The
/// scheduling-neutral variant leaves out run.mode, run.out_dir and
/// run.virtual_clock so paired async/sync runs share it.
std::string config_hash(const ExperimentConfig& cfg);
std::string algorithm_hash(const ExperimentConfig& cfg);

}  // namespace arl
