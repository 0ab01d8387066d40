#include "arl/inference.hpp"

#include <algorithm>

#include "arl/error.hpp"

namespace arl {

std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::policy: return "policy";
        case ModelKind::observation: return "observation";
        case ModelKind::reward: return "reward";
    }
    return "?";
}

void BatchWindowConfig::validate() const {
    if (batch_size < 1) throw ConfigError("inference batch_size must be >= 1");
    if (max_wait <= Duration::zero()) throw ConfigError("inference max_wait_ms must be > 0");
}

bool should_trigger(std::size_t queue_len, Duration oldest_wait, const BatchWindowConfig& cfg) {
    if (queue_len >= cfg.batch_size) return true;
    return queue_len > 0 && oldest_wait >= cfg.max_wait;
}

void validate_request(const InferenceRequest& req, const ModelConfig& mcfg) {
    if (req.obs.size() != static_cast<std::size_t>(mcfg.obs_dim)) {
        throw DimensionError("inference request " + std::to_string(req.ticket) + ": observation has " +
                             std::to_string(req.obs.size()) + " entries, expected " + std::to_string(mcfg.obs_dim));
    }
    switch (req.kind) {
        case ModelKind::policy:
            if (req.step < 0 || req.step >= mcfg.max_step) {
                throw DomainError("policy request: step " + std::to_string(req.step) + " outside [0, " +
                                  std::to_string(mcfg.max_step) + ")");
            }
            break;
        case ModelKind::observation:
            if (!req.chunk) throw DimensionError("observation-model request without an action chunk");
            if (req.chunk->tokens.empty() || req.chunk->tokens.size() > static_cast<std::size_t>(mcfg.chunk_len)) {
                throw DimensionError("observation-model request: chunk length out of range");
            }
            for (int t : req.chunk->tokens) {
                if (t < 0 || t >= mcfg.n_actions) throw DomainError("observation-model request: token out of range");
            }
            break;
        case ModelKind::reward: break;
    }
}

std::vector<InferenceResponse> run_batch(const VersionedWeights& w, const ModelConfig& mcfg,
                                         const std::vector<InferenceRequest>& reqs, std::uint64_t seed) {
    if (reqs.empty()) return {};
    if (!w.params) throw DomainError("run_batch: no weights published");
    const ModelKind kind = reqs.front().kind;
    for (const auto& r : reqs) {
        if (r.kind != kind) throw DomainError("run_batch: mixed model kinds in one batch");
        validate_request(r, mcfg);
    }
    const ParamSet& p = *w.params;
    std::vector<InferenceResponse> out;
    out.reserve(reqs.size());
    for (const auto& r : reqs) {
        InferenceResponse resp;
        resp.ticket = r.ticket;
        resp.kind = kind;
        resp.version = w.version;
        switch (kind) {
            case ModelKind::policy:
                if (r.query == PolicyQuery::value) {
                    resp.value = critic_value(p, mcfg, r.obs, r.step);
                } else {
                    Rng rng = make_rng(seed, r.ticket);
                    PolicyAct act = policy_act(p, mcfg, r.obs, r.step, r.greedy ? nullptr : &rng);
                    resp.chunk = std::move(act.chunk);
                    resp.logits = std::move(act.logits);
                    resp.value = act.value;
                }
                break;
            case ModelKind::observation: resp.next_obs = predict_next_obs(p, mcfg, r.obs, *r.chunk); break;
            case ModelKind::reward: resp.success_prob = predict_success(p, r.obs); break;
        }
        out.push_back(std::move(resp));
    }
    return out;
}

InferenceService::InferenceService(Runtime& rt, ModelConfig mcfg, Config cfg)
    : rt_(rt), mcfg_(std::move(mcfg)), cfg_(std::move(cfg)) {
    for (const auto& w : cfg_.window) w.validate();
}

InferenceService::~InferenceService() = default;

void InferenceService::start() {
    {
        Lock lk = rt_.lock();
        if (started_) return;
        started_ = true;
    }
    for (int k = 0; k < kNumModelKinds; ++k) {
        const auto kind = static_cast<ModelKind>(k);
        rt_.spawn("inference." + to_string(kind), [this, kind] { batching_loop(kind); });
    }
}

void InferenceService::shutdown() {
    Lock lk = rt_.lock();
    stopping_ = true;
    rt_.notify();
}

std::uint64_t InferenceService::submit(InferenceRequest req) {
    Lock lk = rt_.lock();
    if (stopping_) throw ShutdownError("inference service is shut down");
    req.ticket = next_ticket_++;
    validate_request(req, mcfg_);
    req.enqueued = rt_.now();
    const std::uint64_t t = req.ticket;
    queues_[static_cast<int>(req.kind)].pending.push_back(std::move(req));
    slots_.emplace(t, Slot{});
    rt_.notify();
    return t;
}

std::optional<InferenceResponse> InferenceService::await(std::uint64_t ticket, Duration deadline) {
    Lock lk = rt_.lock();
    auto it = slots_.find(ticket);
    if (it == slots_.end()) throw DomainError("await: unknown ticket " + std::to_string(ticket));
    rt_.wait_until(lk, [&] { return it->second.response.has_value() || stopping_; }, deadline);
    if (it->second.response) {
        InferenceResponse r = std::move(*it->second.response);
        slots_.erase(it);
        return r;
    }
    if (stopping_) {
        slots_.erase(it);
        throw ShutdownError("inference service shut down while awaiting ticket " + std::to_string(ticket));
    }
    it->second.abandoned = true;
    return std::nullopt;
}

std::optional<InferenceResponse> InferenceService::call(InferenceRequest req, Duration timeout) {
    const std::uint64_t t = submit(std::move(req));
    return await(t, timeout == kNoDeadline ? kNoDeadline : rt_.now() + timeout);
}

PublishAck InferenceService::update_weights(ModelKind kind, VersionedWeights w) {
    if (!w.params) throw DomainError("update_weights: empty parameter snapshot");
    Lock lk = rt_.lock();
    Queue& q = queues_[static_cast<int>(kind)];
    if (q.weights.params) {
        if (w.version < q.weights.version) {
            throw VersionRegression(to_string(kind) + " weights: version " + std::to_string(w.version) +
                                    " is older than served version " + std::to_string(q.weights.version));
        }
        if (w.version == q.weights.version) return PublishAck::unchanged;
    }
    w.published = rt_.now();
    q.weights = std::move(w);
    rt_.notify();
    return PublishAck::applied;
}

VersionedWeights InferenceService::current(ModelKind kind) {
    Lock lk = rt_.lock();
    return queues_[static_cast<int>(kind)].weights;
}

std::size_t InferenceService::queue_length(ModelKind kind) {
    Lock lk = rt_.lock();
    return queues_[static_cast<int>(kind)].pending.size();
}

KindMetrics InferenceService::metrics(ModelKind kind) {
    Lock lk = rt_.lock();
    return queues_[static_cast<int>(kind)].metrics;
}

void InferenceService::batching_loop(ModelKind kind) {
    Queue& q = queues_[static_cast<int>(kind)];
    const BatchWindowConfig& win = cfg_.window[static_cast<int>(kind)];
    Lock lk = rt_.lock();
    for (;;) {
        for (;;) {
            if (stopping_) return;
            if (q.weights.params && !q.pending.empty()) {
                const Duration first = q.pending.front().enqueued;
                if (should_trigger(q.pending.size(), rt_.now() - first, win)) break;
                rt_.wait_until(
                    lk, [&] { return stopping_ || q.pending.size() >= win.batch_size; }, first + win.max_wait);
            } else {
                rt_.wait_until(lk, [&] { return stopping_ || (q.weights.params && !q.pending.empty()); });
            }
        }
        const std::size_t n = std::min(win.batch_size, q.pending.size());
        std::vector<InferenceRequest> batch(std::make_move_iterator(q.pending.begin()),
                                            std::make_move_iterator(q.pending.begin() + static_cast<long>(n)));
        q.pending.erase(q.pending.begin(), q.pending.begin() + static_cast<long>(n));
        const VersionedWeights w = q.weights;
        const Duration start = rt_.now();
        lk.unlock();

        std::vector<InferenceResponse> responses = run_batch(w, mcfg_, batch, cfg_.seed);
        rt_.charge(cfg_.cost.of(n));

        lk.lock();
        const Duration service = rt_.now() - start;
        BatchRecord rec;
        rec.start = start;
        rec.size = n;
        rec.service = service;
        rec.version = w.version;
        Duration total{0};
        for (const auto& r : batch) {
            const Duration waited = start - r.enqueued;
            rec.max_wait = std::max(rec.max_wait, waited);
            total += waited;
        }
        rec.mean_wait = total / static_cast<Duration::rep>(n);
        KindMetrics& m = q.metrics;
        ++m.batches;
        m.requests += n;
        m.max_wait = std::max(m.max_wait, rec.max_wait);
        m.total_wait += total;
        m.max_service = std::max(m.max_service, service);
        m.busy += service;
        if (cfg_.record_batches) m.records.push_back(rec);

        for (auto& r : responses) {
            auto it = slots_.find(r.ticket);
            if (it == slots_.end()) continue;
            if (it->second.abandoned) {
                slots_.erase(it);
            } else {
                it->second.response = std::move(r);
            }
        }
        rt_.notify();
    }
}

}  // namespace arl
