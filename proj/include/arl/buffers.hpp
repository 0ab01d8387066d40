#pragma once

// Trajectory stores and the background prefetcher that turns sampled
// trajectories into normalized super-batches ahead of the trainer.

#include <deque>
#include <functional>
#include <optional>
#include <vector>

#include "arl/advantage.hpp"
#include "arl/batch.hpp"
#include "arl/inference.hpp"
#include "arl/model.hpp"
#include "arl/runtime.hpp"
#include "arl/trajectory.hpp"

namespace arl {

enum class BufferKind { main, world_model, imagined };
std::string to_string(BufferKind k);

struct BufferCounters {
    std::size_t pushed = 0;
    std::size_t sampled = 0;
    std::size_t evicted = 0;
};

/// Bounded FIFO of trajectories, synchronized through the runtime lock. The
/// `_locked` variants expect the caller to hold it.
class ReplayBuffer {
public:
    ReplayBuffer(Runtime& rt, BufferKind kind, std::size_t capacity);

    void push(TrajectoryPtr t);
    /// Uniform sampling with replacement. nullopt signals not-ready (fewer
    /// than n trajectories stored); n == 0 yields an empty list.
    std::optional<std::vector<TrajectoryPtr>> sample(std::size_t n, Rng& rng);

    void push_locked(TrajectoryPtr t);
    std::optional<std::vector<TrajectoryPtr>> sample_locked(std::size_t n, Rng& rng);
    std::size_t size_locked() const { return items_.size(); }

    std::size_t size();
    BufferCounters counters();
    std::vector<TrajectoryPtr> contents();
    BufferKind kind() const { return kind_; }
    std::size_t capacity() const { return capacity_; }

private:
    Runtime& rt_;
    BufferKind kind_;
    std::size_t capacity_;
    std::deque<TrajectoryPtr> items_;
    BufferCounters counters_;
};

/// Values of every stored observation (T + 1) under `critic`.
Vec recompute_values(const Trajectory& traj, const ParamSet& critic, const ModelConfig& mcfg);

struct SuperBatchConfig {
    bool revalue = true;
    GaeConfig gae;
    std::size_t shards = 4;
    double norm_eps = 1e-8;
};

/// Recomputes values (when revalue is on), derives GAE advantages and value
/// targets, normalizes advantages with statistics pooled over `shards`
/// contiguous shards, and flattens everything to token-level arrays.
/// Throws NonFiniteError on a non-finite value or advantage.
SuperBatch build_super_batch(const std::vector<TrajectoryPtr>& trajs, const VersionedWeights& critic,
                             const ModelConfig& mcfg, const SuperBatchConfig& cfg);

struct PrefetchConfig {
    std::size_t trajectories_per_batch = 16;
    std::size_t min_trajectories = 16;  // buffer fill before the first batch
    std::size_t cache_capacity = 2;
    SuperBatchConfig batch;
    Duration build_cost{0};
};

struct PrefetchStats {
    std::size_t built = 0;
    std::size_t dropped = 0;
    std::size_t popped = 0;
    std::size_t max_occupancy = 0;
    Duration consumer_wait{0};
};

class Prefetcher {
public:
    using CriticSource = std::function<VersionedWeights()>;

    Prefetcher(Runtime& rt, ReplayBuffer& source, CriticSource critic, ModelConfig mcfg, PrefetchConfig cfg,
               std::uint64_t seed);

    void start();
    void shutdown();

    /// Takes the oldest cached batch, waiting until `deadline`. Returns
    /// nullopt on timeout or shutdown.
    std::optional<SuperBatch> pop(Duration deadline = kNoDeadline);

    std::size_t cache_size();
    PrefetchStats stats();

private:
    void loop();

    Runtime& rt_;
    ReplayBuffer& source_;
    CriticSource critic_;
    ModelConfig mcfg_;
    PrefetchConfig cfg_;
    Rng rng_;
    std::deque<SuperBatch> cache_;
    PrefetchStats stats_;
    std::uint64_t next_id_ = 1;
    bool stopping_ = false;
};

}  // namespace arl
