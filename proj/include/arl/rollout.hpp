#pragma once

// Rollout workers: task selection by dynamic weighted resampling, real
// episode collection through the inference service, and imagination
// episodes driven by the world model.

#include <cmath>
#include <deque>
#include <functional>
#include <optional>
#include <vector>

#include "arl/buffers.hpp"
#include "arl/env.hpp"
#include "arl/inference.hpp"
#include "arl/runtime.hpp"
#include "arl/trajectory.hpp"

namespace arl {

/// Per-task sliding windows of success indicators. Not synchronized; shared
/// instances are used under the runtime lock.
class TaskStats {
public:
    TaskStats(int num_tasks, std::size_t window, double epsilon);

    void record_outcome(int task, bool success);
    std::size_t failures(int task) const;
    const std::deque<bool>& window(int task) const;
    /// w_i = failures in window + epsilon.
    Vec weights() const;
    Vec probabilities() const;
    int select_task(Rng& rng) const;
    int num_tasks() const { return static_cast<int>(windows_.size()); }

private:
    void check(int task) const;

    std::vector<std::deque<bool>> windows_;
    std::size_t window_;
    double epsilon_;
};

/// Worker-local store of start frames for imagination.
class EpisodeBuffer {
public:
    explicit EpisodeBuffer(std::size_t capacity);
    /// Adds every non-terminal frame of a completed real episode.
    void add_episode(const Trajectory& t);
    std::optional<Observation> sample(Rng& rng) const;
    std::size_t size() const { return frames_.size(); }

private:
    std::size_t capacity_;
    std::deque<Observation> frames_;
};

struct RolloutConfig {
    std::size_t num_workers = 4;
    std::size_t n_imagined_per_real = 0;
    std::size_t h_dwr = 50;
    std::size_t h_img = 8;
    double dwr_epsilon = 1.0;
    double success_threshold = 0.9;
    Duration episode_deadline = from_ms(60000.0);
    std::size_t episode_buffer_capacity = 512;
    std::vector<double> latency_scales;  // per worker; missing entries are 1

    void validate() const;
    double latency_scale(std::size_t worker) const;
};

/// Counters shared by all workers (runtime lock).
struct RolloutCounters {
    std::size_t env_steps = 0;
    std::size_t real_episodes = 0;
    std::size_t successes = 0;
    std::size_t imagined_episodes = 0;
    std::size_t imagined_successes = 0;
    std::size_t imagined_steps = 0;
    std::size_t aborted_episodes = 0;
    std::size_t discarded_imagined = 0;
    Duration env_time{0};        // time workers spent inside environment steps
    Duration inference_wait{0};  // time workers spent blocked on responses
    double max_telescoping_error = 0.0;
    std::vector<std::size_t> worker_episodes;
};

/// Everything a worker talks to.
struct RolloutContext {
    Runtime& rt;
    InferenceService& service;
    ReplayBuffer* main = nullptr;      // B, may be null when the policy trains on imagination
    ReplayBuffer* wm = nullptr;        // B_wm
    ReplayBuffer* imagined = nullptr;  // B_img
    TaskStats& stats;
    RolloutCounters& counters;
    const SuiteConfig& suite;
    const RolloutConfig& cfg;
    /// Evaluated under the runtime lock at episode boundaries.
    std::function<bool()> stop;
    /// Called after every environment step while the lock is not held
    /// (lock-step baseline barrier); may be empty.
    std::function<void()> after_step;
};

class Worker {
public:
    Worker(RolloutContext& ctx, std::size_t index, std::uint64_t seed);

    /// Runs one real episode. Returns nullopt when it was aborted on an
    /// inference deadline; nothing is pushed in that case.
    std::optional<TrajectoryPtr> collect_real_episode();
    std::optional<TrajectoryPtr> collect_real_episode(int task);

    /// Runs one imagination episode from a stored start frame. Returns
    /// nullopt when no start frame exists or a model output was non-finite.
    std::optional<TrajectoryPtr> imagine_episode();
    std::optional<TrajectoryPtr> imagine_episode(const Observation& start);

    /// [1 real, n imagined] repeated until ctx.stop() or shutdown.
    void run();

    std::size_t index() const { return index_; }
    const EpisodeBuffer& episode_buffer() const { return episodes_; }

private:
    InferenceResponse query(InferenceRequest req, Duration deadline);
    void publish_real(TrajectoryPtr t);

    RolloutContext& ctx_;
    std::size_t index_;
    Rng rng_;
    GridEnv env_;
    EpisodeBuffer episodes_;
};

struct InferenceTimeout : Error {
    using Error::Error;
};

/// Potential-based imagined reward p_next - p_cur.
inline double imagined_reward(double p_next, double p_cur) { return p_next - p_cur; }

/// Rounds a success probability to a multiple of 2^-20. Differences and
/// partial sums of such values are exact in double precision, so imagined
/// rewards telescope without rounding error.
inline double quantize_potential(double p) {
    constexpr double kScale = 1048576.0;
    return std::round(p * kScale) / kScale;
}

}  // namespace arl
