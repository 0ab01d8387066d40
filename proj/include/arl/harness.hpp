#pragma once

// Experiment runner. Wires the environment suite, inference service,
// rollout workers, buffers, prefetcher and trainer according to an
// ExperimentConfig, runs either the asynchronous pipeline or the lock-step
// baseline to budget, evaluates frozen snapshots periodically and returns
// the collected metrics.

#include <string>
#include <vector>

#include "arl/config.hpp"
#include "arl/metrics.hpp"

namespace arl {

/// Runs `cfg` (finalized internally). When cfg.out_dir is set the report is
/// also written there; on a component failure the partial report is written
/// before the error propagates.
MetricsReport run_experiment(ExperimentConfig cfg);

/// Greedy episodes of a frozen policy on evaluation layouts derived from
/// `eval_seed`. Environment latency is not simulated and nothing is
/// recorded for training. Fills mean_return, success_rate and task_returns.
EvalPoint evaluate_policy(const ParamSet& policy, const ExperimentConfig& cfg, std::uint64_t eval_seed);

/// Episodes driven by shortest-path solutions, with a random chunk taken
/// with probability cfg.pretrain_noise at each step. Behaviour logits are
/// uniform and values zero; they are meant for world-model data only.
std::vector<TrajectoryPtr> scripted_trajectories(const ExperimentConfig& cfg, std::size_t n, Rng& rng);

/// Canned experiment setups. Each returns a non-finalized config.
namespace presets {

/// Model-free asynchronous learning on the toy suite.
ExperimentConfig learning();
/// Stale-data setting (deep prefetch cache) used by the revalue and
/// algorithm ablations.
ExperimentConfig revalue_ablation(bool revalue);
ExperimentConfig algorithm_ablation(Algorithm algorithm);
/// Real-clock throughput under straggler latency.
ExperimentConfig worker_scaling(std::size_t workers, RunMode mode);
/// Constant latency, one worker.
ExperimentConfig tail_free(RunMode mode);
/// World-model sample efficiency; `world_model` selects the arm.
ExperimentConfig world_model_efficiency(bool world_model);

}  // namespace presets

}  // namespace arl
