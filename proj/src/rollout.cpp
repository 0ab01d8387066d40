#include "arl/rollout.hpp"

#include <cmath>

#include "arl/error.hpp"

namespace arl {

TaskStats::TaskStats(int num_tasks, std::size_t window, double epsilon)
    : windows_(static_cast<std::size_t>(num_tasks)), window_(window), epsilon_(epsilon) {
    if (num_tasks < 1) throw ConfigError("task stats need at least one task");
    if (window < 1) throw ConfigError("rollout.h_dwr must be >= 1");
    if (!(epsilon > 0.0)) throw ConfigError("rollout.dwr_epsilon must be > 0");
}

void TaskStats::check(int task) const {
    if (task < 0 || task >= num_tasks()) {
        throw DomainError("unknown task id " + std::to_string(task) + "; valid range is [0, " +
                          std::to_string(num_tasks()) + ")");
    }
}

void TaskStats::record_outcome(int task, bool success) {
    check(task);
    auto& w = windows_[static_cast<std::size_t>(task)];
    w.push_back(success);
    if (w.size() > window_) w.pop_front();
}

std::size_t TaskStats::failures(int task) const {
    check(task);
    std::size_t f = 0;
    for (bool s : windows_[static_cast<std::size_t>(task)]) f += !s;
    return f;
}

const std::deque<bool>& TaskStats::window(int task) const {
    check(task);
    return windows_[static_cast<std::size_t>(task)];
}

Vec TaskStats::weights() const {
    Vec w(windows_.size());
    for (int i = 0; i < num_tasks(); ++i) w[static_cast<std::size_t>(i)] = static_cast<double>(failures(i)) + epsilon_;
    return w;
}

Vec TaskStats::probabilities() const {
    Vec w = weights();
    double z = 0.0;
    for (double x : w) z += x;
    for (double& x : w) x /= z;
    return w;
}

int TaskStats::select_task(Rng& rng) const {
    const Vec w = weights();
    double z = 0.0;
    for (double x : w) z += x;
    const double u = uniform01(rng) * z;
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        acc += w[i];
        if (u < acc) return static_cast<int>(i);
    }
    return num_tasks() - 1;
}

EpisodeBuffer::EpisodeBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity < 1) throw ConfigError("rollout.episode_buffer_capacity must be >= 1");
}

void EpisodeBuffer::add_episode(const Trajectory& t) {
    if (t.source != Source::real) throw DomainError("episode buffer accepts real episodes only");
    for (std::size_t i = 0; i < t.length(); ++i) {
        frames_.push_back(t.observations[i]);
        if (frames_.size() > capacity_) frames_.pop_front();
    }
}

std::optional<Observation> EpisodeBuffer::sample(Rng& rng) const {
    if (frames_.empty()) return std::nullopt;
    return frames_[uniform_index(rng, frames_.size())];
}

void RolloutConfig::validate() const {
    if (num_workers < 1) throw ConfigError("rollout.num_workers must be >= 1");
    if (h_img < 1) throw ConfigError("rollout.h_img must be >= 1");
    if (h_dwr < 1) throw ConfigError("rollout.h_dwr must be >= 1");
    if (!(dwr_epsilon > 0.0)) throw ConfigError("rollout.dwr_epsilon must be > 0");
    if (!(success_threshold > 0.0 && success_threshold <= 1.0)) {
        throw ConfigError("rollout.success_threshold must lie in (0, 1]");
    }
    if (episode_deadline <= Duration::zero()) throw ConfigError("rollout.episode_deadline_ms must be > 0");
    for (double s : latency_scales) {
        if (!(s >= 0.0)) throw ConfigError("latency.worker_scales entries must be >= 0");
    }
}

double RolloutConfig::latency_scale(std::size_t worker) const {
    return worker < latency_scales.size() ? latency_scales[worker] : 1.0;
}

Worker::Worker(RolloutContext& ctx, std::size_t index, std::uint64_t seed)
    : ctx_(ctx),
      index_(index),
      rng_(make_rng(seed, 1000 + index)),
      env_(ctx.suite, ctx.cfg.latency_scale(index)),
      episodes_(ctx.cfg.episode_buffer_capacity) {}

InferenceResponse Worker::query(InferenceRequest req, Duration deadline) {
    const Duration t0 = ctx_.rt.now();
    const std::uint64_t ticket = ctx_.service.submit(std::move(req));
    auto resp = ctx_.service.await(ticket, deadline);
    {
        Lock lk = ctx_.rt.lock();
        ctx_.counters.inference_wait += ctx_.rt.now() - t0;
    }
    if (!resp) throw InferenceTimeout("inference deadline exceeded");
    return std::move(*resp);
}

std::optional<TrajectoryPtr> Worker::collect_real_episode() {
    int task = 0;
    {
        Lock lk = ctx_.rt.lock();
        task = ctx_.stats.select_task(rng_);
    }
    return collect_real_episode(task);
}

std::optional<TrajectoryPtr> Worker::collect_real_episode(int task) {
    auto t = std::make_shared<Trajectory>();
    t->source = Source::real;
    t->task = task;
    Observation o = env_.reset(task, rng_());
    t->observations.push_back(o);
    const Duration deadline = ctx_.rt.now() + ctx_.cfg.episode_deadline;
    try {
        for (;;) {
            InferenceRequest req;
            req.kind = ModelKind::policy;
            req.obs = o.pixels;
            req.step = o.step;
            InferenceResponse resp = query(std::move(req), deadline);
            if (t->actions.empty()) t->behavior_version = resp.version;

            const Duration t0 = ctx_.rt.now();
            StepResult r = env_.step(resp.chunk);
            ctx_.rt.sleep_for(r.wall_delay);
            {
                Lock lk = ctx_.rt.lock();
                ctx_.counters.env_time += ctx_.rt.now() - t0;
                ++ctx_.counters.env_steps;
            }
            t->actions.push_back(std::move(resp.chunk));
            t->behavior_logits.push_back(std::move(resp.logits));
            t->values.push_back(resp.value);
            t->step_versions.push_back(resp.version);
            t->rewards.push_back(r.reward);
            t->observations.push_back(r.obs);
            o = r.obs;
            if (ctx_.after_step) ctx_.after_step();
            if (r.done) {
                t->done = true;
                t->success = r.success;
                break;
            }
        }
        InferenceRequest vreq;
        vreq.kind = ModelKind::policy;
        vreq.query = PolicyQuery::value;
        vreq.obs = o.pixels;
        vreq.step = o.step;
        t->bootstrap_value = query(std::move(vreq), deadline).value;
    } catch (const InferenceTimeout&) {
        Lock lk = ctx_.rt.lock();
        ++ctx_.counters.aborted_episodes;
        return std::nullopt;
    }
    TrajectoryPtr done = t;
    publish_real(done);
    return done;
}

void Worker::publish_real(TrajectoryPtr t) {
    episodes_.add_episode(*t);
    Lock lk = ctx_.rt.lock();
    ctx_.stats.record_outcome(t->task, t->success);
    ++ctx_.counters.real_episodes;
    ctx_.counters.successes += t->success;
    if (ctx_.counters.worker_episodes.size() <= index_) ctx_.counters.worker_episodes.resize(index_ + 1, 0);
    ++ctx_.counters.worker_episodes[index_];
    if (ctx_.main) ctx_.main->push_locked(t);
    if (ctx_.wm) ctx_.wm->push_locked(t);
}

std::optional<TrajectoryPtr> Worker::imagine_episode() {
    auto start = episodes_.sample(rng_);
    if (!start) return std::nullopt;
    return imagine_episode(*start);
}

std::optional<TrajectoryPtr> Worker::imagine_episode(const Observation& start) {
    auto t = std::make_shared<Trajectory>();
    t->source = Source::imagined;
    t->task = start.task;
    const Duration deadline = ctx_.rt.now() + ctx_.cfg.episode_deadline;
    auto discard = [&] {
        Lock lk = ctx_.rt.lock();
        ++ctx_.counters.discarded_imagined;
        return std::nullopt;
    };
    auto finite = [](const Vec& v) {
        for (double x : v) {
            if (!std::isfinite(x)) return false;
        }
        return true;
    };
    try {
        auto success_prob = [&](const Vec& obs) {
            InferenceRequest req;
            req.kind = ModelKind::reward;
            req.obs = obs;
            return quantize_potential(query(std::move(req), deadline).success_prob);
        };
        Observation o = start;
        double p_cur = success_prob(o.pixels);
        if (!std::isfinite(p_cur)) return discard();
        t->observations.push_back(o);
        t->potentials.push_back(p_cur);
        for (std::size_t h = 0; h < ctx_.cfg.h_img; ++h) {
            InferenceRequest preq;
            preq.kind = ModelKind::policy;
            preq.obs = o.pixels;
            preq.step = o.step;
            InferenceResponse act = query(std::move(preq), deadline);
            for (const auto& l : act.logits) {
                if (!finite(l)) return discard();
            }
            if (t->actions.empty()) t->behavior_version = act.version;

            InferenceRequest oreq;
            oreq.kind = ModelKind::observation;
            oreq.obs = o.pixels;
            oreq.chunk = act.chunk;
            Vec next = query(std::move(oreq), deadline).next_obs;
            if (!finite(next)) return discard();
            const double p_next = success_prob(next);
            if (!std::isfinite(p_next) || !std::isfinite(act.value)) return discard();

            t->actions.push_back(std::move(act.chunk));
            t->behavior_logits.push_back(std::move(act.logits));
            t->values.push_back(act.value);
            t->step_versions.push_back(act.version);
            t->rewards.push_back(imagined_reward(p_next, p_cur));
            o = Observation{std::move(next), o.step + 1, o.task};
            t->observations.push_back(o);
            t->potentials.push_back(p_next);
            p_cur = p_next;
            if (p_next >= ctx_.cfg.success_threshold) {
                t->done = true;
                t->success = true;
                break;
            }
        }
        InferenceRequest vreq;
        vreq.kind = ModelKind::policy;
        vreq.query = PolicyQuery::value;
        vreq.obs = o.pixels;
        vreq.step = o.step;
        t->bootstrap_value = query(std::move(vreq), deadline).value;
        if (!std::isfinite(t->bootstrap_value)) return discard();
    } catch (const InferenceTimeout&) {
        return discard();
    }
    const double telescoped = t->potentials.back() - t->potentials.front();
    const double err = std::abs(t->total_reward() - telescoped);
    Lock lk = ctx_.rt.lock();
    ctx_.counters.max_telescoping_error = std::max(ctx_.counters.max_telescoping_error, err);
    ++ctx_.counters.imagined_episodes;
    ctx_.counters.imagined_successes += t->success;
    ctx_.counters.imagined_steps += t->length();
    if (ctx_.imagined) ctx_.imagined->push_locked(t);
    return TrajectoryPtr(t);
}

void Worker::run() {
    for (;;) {
        {
            Lock lk = ctx_.rt.lock();
            if (ctx_.stop && ctx_.stop()) return;
        }
        try {
            collect_real_episode();
            for (std::size_t i = 0; i < ctx_.cfg.n_imagined_per_real; ++i) {
                {
                    Lock lk = ctx_.rt.lock();
                    if (ctx_.stop && ctx_.stop()) return;
                }
                imagine_episode();
            }
        } catch (const ShutdownError&) {
            return;
        }
    }
}

}  // namespace arl
