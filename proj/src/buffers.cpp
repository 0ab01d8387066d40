#include "arl/buffers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "arl/error.hpp"

namespace arl {

std::string to_string(BufferKind k) {
    switch (k) {
        case BufferKind::main: return "B";
        case BufferKind::world_model: return "B_wm";
        case BufferKind::imagined: return "B_img";
    }
    return "?";
}

ReplayBuffer::ReplayBuffer(Runtime& rt, BufferKind kind, std::size_t capacity)
    : rt_(rt), kind_(kind), capacity_(capacity) {
    if (capacity == 0) throw ConfigError(to_string(kind) + " capacity must be >= 1");
}

void ReplayBuffer::push(TrajectoryPtr t) {
    Lock lk = rt_.lock();
    push_locked(std::move(t));
}

void ReplayBuffer::push_locked(TrajectoryPtr t) {
    if (!t) throw DomainError("push: null trajectory");
    const bool imagined = t->source == Source::imagined;
    if (imagined != (kind_ == BufferKind::imagined)) {
        throw DomainError(std::string(imagined ? "imagined" : "real") + " trajectory pushed to " + to_string(kind_));
    }
    t->validate();
    if (items_.size() == capacity_) {
        items_.pop_front();
        ++counters_.evicted;
    }
    items_.push_back(std::move(t));
    ++counters_.pushed;
    rt_.notify();
}

std::optional<std::vector<TrajectoryPtr>> ReplayBuffer::sample(std::size_t n, Rng& rng) {
    Lock lk = rt_.lock();
    return sample_locked(n, rng);
}

std::optional<std::vector<TrajectoryPtr>> ReplayBuffer::sample_locked(std::size_t n, Rng& rng) {
    if (n == 0) return std::vector<TrajectoryPtr>{};
    if (items_.size() < n || items_.empty()) return std::nullopt;
    std::vector<TrajectoryPtr> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(items_[uniform_index(rng, items_.size())]);
    counters_.sampled += n;
    return out;
}

std::size_t ReplayBuffer::size() {
    Lock lk = rt_.lock();
    return items_.size();
}

BufferCounters ReplayBuffer::counters() {
    Lock lk = rt_.lock();
    return counters_;
}

std::vector<TrajectoryPtr> ReplayBuffer::contents() {
    Lock lk = rt_.lock();
    return {items_.begin(), items_.end()};
}

Vec recompute_values(const Trajectory& traj, const ParamSet& critic, const ModelConfig& mcfg) {
    Vec v;
    v.reserve(traj.observations.size());
    for (const auto& o : traj.observations) {
        const int step = std::min(o.step, mcfg.max_step - 1);
        v.push_back(critic_value(critic, mcfg, o.pixels, step));
    }
    return v;
}

SuperBatch build_super_batch(const std::vector<TrajectoryPtr>& trajs, const VersionedWeights& critic,
                             const ModelConfig& mcfg, const SuperBatchConfig& cfg) {
    if (trajs.empty()) throw DomainError("build_super_batch: no trajectories");
    if (cfg.revalue && !critic.params) throw DomainError("build_super_batch: revalue needs a critic snapshot");
    SuperBatch b;
    b.obs_dim = static_cast<std::size_t>(mcfg.obs_dim);
    b.chunk_len = static_cast<std::size_t>(mcfg.chunk_len);
    b.critic_version = critic.version;
    b.min_behavior_version = std::numeric_limits<std::uint64_t>::max();
    b.n_trajectories = trajs.size();
    const std::size_t K = b.chunk_len;

    Vec targets;
    for (const auto& tp : trajs) {
        const Trajectory& t = *tp;
        const std::size_t T = t.length();
        Vec values;
        if (cfg.revalue) {
            values = recompute_values(t, *critic.params, mcfg);
        } else {
            values = t.values;
            values.push_back(t.bootstrap_value);
        }
        for (double v : values) {
            if (!std::isfinite(v)) throw NonFiniteError("build_super_batch: non-finite value estimate");
        }
        const GaeResult g = compute_gae(t.rewards, values, t.done, cfg.gae);
        for (std::size_t s = 0; s < T; ++s) {
            const Observation& o = t.observations[s];
            b.observations.insert(b.observations.end(), o.pixels.begin(), o.pixels.end());
            b.steps.push_back(std::min(o.step, mcfg.max_step - 1));
            const auto& toks = t.actions[s].tokens;
            for (std::size_t k = 0; k < K; ++k) {
                if (k < toks.size()) {
                    b.tokens.push_back(toks[k]);
                    b.behavior_logp.push_back(behavior_log_prob(t.behavior_logits[s][k], toks[k]));
                } else {
                    b.tokens.push_back(-1);
                    b.behavior_logp.push_back(0.0);
                }
            }
            b.raw_advantages.push_back(g.advantages[s]);
            targets.push_back(g.targets[s]);
            b.min_behavior_version =
                std::min(b.min_behavior_version, t.step_versions.empty() ? t.behavior_version : t.step_versions[s]);
        }
        (t.source == Source::real ? b.n_real : b.n_imagined) += 1;
    }
    for (double a : b.raw_advantages) {
        if (!std::isfinite(a)) throw NonFiniteError("build_super_batch: non-finite advantage");
    }
    b.rows = b.raw_advantages.size();
    const std::size_t shards = std::clamp<std::size_t>(cfg.shards, 1, b.rows);
    b.advantages = normalize_sharded(b.raw_advantages, shards, cfg.norm_eps, &b.norm);
    b.value_targets = std::move(targets);
    b.validate();
    return b;
}

Prefetcher::Prefetcher(Runtime& rt, ReplayBuffer& source, CriticSource critic, ModelConfig mcfg, PrefetchConfig cfg,
                       std::uint64_t seed)
    : rt_(rt),
      source_(source),
      critic_(std::move(critic)),
      mcfg_(std::move(mcfg)),
      cfg_(std::move(cfg)),
      rng_(make_rng(seed, 0x9e3779b97f4a7c15ULL)) {
    if (cfg_.cache_capacity < 1) throw ConfigError("prefetch_cache_size must be >= 1");
    if (cfg_.trajectories_per_batch < 1) throw ConfigError("batch_trajectories must be >= 1");
}

void Prefetcher::start() {
    rt_.spawn("prefetcher", [this] { loop(); });
}

void Prefetcher::shutdown() {
    Lock lk = rt_.lock();
    stopping_ = true;
    rt_.notify();
}

std::optional<SuperBatch> Prefetcher::pop(Duration deadline) {
    Lock lk = rt_.lock();
    const Duration t0 = rt_.now();
    rt_.wait_until(lk, [&] { return stopping_ || !cache_.empty(); }, deadline);
    stats_.consumer_wait += rt_.now() - t0;
    if (cache_.empty()) return std::nullopt;
    SuperBatch b = std::move(cache_.front());
    cache_.pop_front();
    ++stats_.popped;
    rt_.notify();
    return b;
}

std::size_t Prefetcher::cache_size() {
    Lock lk = rt_.lock();
    return cache_.size();
}

PrefetchStats Prefetcher::stats() {
    Lock lk = rt_.lock();
    return stats_;
}

void Prefetcher::loop() {
    const std::size_t need = std::max(cfg_.min_trajectories, cfg_.trajectories_per_batch);
    Lock lk = rt_.lock();
    for (;;) {
        rt_.wait_until(lk, [&] {
            return stopping_ || (cache_.size() < cfg_.cache_capacity && source_.size_locked() >= need);
        });
        if (stopping_) return;
        auto trajs = source_.sample_locked(cfg_.trajectories_per_batch, rng_);
        lk.unlock();
        const VersionedWeights critic = critic_();
        std::optional<SuperBatch> batch;
        try {
            batch = build_super_batch(*trajs, critic, mcfg_, cfg_.batch);
        } catch (const Error&) {
            batch.reset();
        }
        rt_.charge(cfg_.build_cost);
        lk.lock();
        if (!batch) {
            ++stats_.dropped;
            continue;
        }
        batch->id = next_id_++;
        cache_.push_back(std::move(*batch));
        ++stats_.built;
        stats_.max_occupancy = std::max(stats_.max_occupancy, cache_.size());
        rt_.notify();
    }
}

}  // namespace arl
