#pragma once

// The learner: policy/value optimization over super-batches, world-model
// sub-steps on their own schedules, and weight publication.

#include <functional>
#include <optional>
#include <vector>

#include "arl/buffers.hpp"
#include "arl/inference.hpp"
#include "arl/losses.hpp"
#include "arl/model.hpp"

namespace arl {

struct Transition {
    Vec obs;
    ActionChunk chunk;
    Vec next_obs;
};

struct LabeledFrame {
    Vec obs;
    double label = 0.0;  // 1 for the goal frame of a successful episode
};

/// Mean over the batch of the mean squared error of the predicted next
/// observation. Accumulates gradients into `grads` when non-null.
double obs_model_loss(const ParamSet& p, const ModelConfig& mcfg, const std::vector<Transition>& batch,
                      ParamSet* grads);

/// Mean binary cross-entropy of the predicted success probability.
double reward_model_loss(const ParamSet& p, const std::vector<LabeledFrame>& batch, ParamSet* grads);

/// Uniform transitions from stored trajectories.
std::vector<Transition> sample_transitions(const std::vector<TrajectoryPtr>& trajs, std::size_t n, Rng& rng);

/// Success-labeled frames. When both classes are present, about half of the
/// batch is drawn from the positive frames.
std::vector<LabeledFrame> sample_labeled_frames(const std::vector<TrajectoryPtr>& trajs, std::size_t n, Rng& rng);

struct WmSchedule {
    std::size_t t_obs = 4;
    std::size_t t_reward = 8;
    void validate() const;
    bool obs_due(std::size_t cycle) const { return cycle % t_obs == 0; }
    bool reward_due(std::size_t cycle) const { return cycle % t_reward == 0; }
};

struct TrainerConfig {
    LossConfig loss;
    AdamConfig adam;
    double max_grad_norm = 1.0;
    bool world_model = false;
    WmSchedule schedule;
    AdamConfig wm_adam{1e-3};
    std::size_t wm_batch = 64;
    std::size_t wm_min_trajectories = 4;
    Duration step_cost{0};
    Duration wm_step_cost{0};
};

struct TrainStepRecord {
    std::size_t step = 0;
    Duration time{0};
    std::uint64_t version = 0;
    std::uint64_t critic_version = 0;
    std::uint64_t staleness = 0;  // version before the step minus the oldest behaviour version
    LossDiagnostics diag;
    double grad_norm = 0.0;
};

using Publisher = std::function<void(ModelKind, VersionedWeights)>;

class Trainer {
public:
    Trainer(ModelConfig mcfg, TrainerConfig cfg, ParamSet policy, ParamSet obs_model, ParamSet reward_model);

    void set_publisher(Publisher p) { publish_ = std::move(p); }

    /// One optimizer step on the policy and value head, then publication.
    /// Returns nullopt when the batch was dropped (no usable token).
    std::optional<TrainStepRecord> train_step(const SuperBatch& batch, Duration now = Duration{0});

    /// Observation-model step on a transition batch; publishes on success.
    double train_obs_model_step(const std::vector<Transition>& batch);
    /// Reward-model step; publishes on success.
    double train_reward_model_step(const std::vector<LabeledFrame>& batch);

    /// Runs the scheduled world-model sub-steps for the current cycle using
    /// data sampled from `wm`. Returns how many sub-steps ran.
    int world_model_substeps(ReplayBuffer& wm, Rng& rng);

    /// Publishes every model at its current version.
    void publish_all();

    std::size_t cycle() const { return cycle_; }
    std::size_t dropped_batches() const { return dropped_; }
    std::size_t obs_updates() const { return obs_updates_; }
    std::size_t reward_updates() const { return reward_updates_; }
    std::size_t single_class_reward_batches() const { return single_class_; }

    const ParamSet& policy() const { return policy_; }
    const ParamSet& obs_model() const { return obs_model_; }
    const ParamSet& reward_model() const { return reward_model_; }
    ParamSet& mutable_policy() { return policy_; }
    VersionedWeights snapshot(ModelKind kind) const;
    const ModelConfig& model_config() const { return mcfg_; }
    const TrainerConfig& config() const { return cfg_; }

private:
    void publish(ModelKind kind);

    ModelConfig mcfg_;
    TrainerConfig cfg_;
    ParamSet policy_, obs_model_, reward_model_;
    AdamState policy_opt_, obs_opt_, reward_opt_;
    Publisher publish_;
    std::size_t cycle_ = 0;
    std::size_t steps_ = 0;
    std::size_t dropped_ = 0;
    std::size_t obs_updates_ = 0;
    std::size_t reward_updates_ = 0;
    std::size_t single_class_ = 0;
};

}  // namespace arl
