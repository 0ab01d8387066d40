#pragma once

// Centralized inference pool. Workers submit requests and collect responses
// by ticket; one batching loop per model kind drains its queue whenever the
// dynamic window fires, evaluates the batch under a single weight snapshot
// and fills the per-ticket response slots.

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "arl/model.hpp"
#include "arl/runtime.hpp"

namespace arl {

enum class ModelKind { policy = 0, observation = 1, reward = 2 };
inline constexpr int kNumModelKinds = 3;
std::string to_string(ModelKind k);

enum class PolicyQuery { act, value };

struct InferenceRequest {
    std::uint64_t ticket = 0;
    ModelKind kind = ModelKind::policy;
    PolicyQuery query = PolicyQuery::act;
    bool greedy = false;
    Vec obs;
    int step = 0;
    std::optional<ActionChunk> chunk;  // observation-model requests only
    Duration enqueued{0};
};

struct InferenceResponse {
    std::uint64_t ticket = 0;
    ModelKind kind = ModelKind::policy;
    std::uint64_t version = 0;
    ActionChunk chunk;
    std::vector<Vec> logits;  // K x N_actions
    double value = 0.0;
    Vec next_obs;
    double success_prob = 0.0;

    bool operator==(const InferenceResponse&) const = default;
};

struct BatchWindowConfig {
    std::size_t batch_size = 8;       // B
    Duration max_wait = from_ms(5.0);  // T_max
    void validate() const;
};

/// (|Q| >= B) or (|Q| > 0 and oldest wait >= T_max).
bool should_trigger(std::size_t queue_len, Duration oldest_wait, const BatchWindowConfig& cfg);

struct VersionedWeights {
    std::shared_ptr<const ParamSet> params;
    std::uint64_t version = 0;
    Duration published{0};
};

/// Evaluates requests of one kind under one weight snapshot. Each request
/// draws from its own RNG stream keyed by (seed, ticket), so the result of a
/// request does not depend on which batch it lands in.
std::vector<InferenceResponse> run_batch(const VersionedWeights& w, const ModelConfig& mcfg,
                                         const std::vector<InferenceRequest>& reqs, std::uint64_t seed);

/// Checks that a request's payload matches its kind.
void validate_request(const InferenceRequest& req, const ModelConfig& mcfg);

/// Simulated evaluation cost, charged to the virtual clock per batch.
struct InferenceCost {
    Duration per_batch = from_ms(1.0);
    Duration per_item = from_ms(0.1);
    Duration of(std::size_t n) const { return per_batch + per_item * static_cast<Duration::rep>(n); }
};

struct BatchRecord {
    Duration start{0};
    std::size_t size = 0;
    Duration max_wait{0};
    Duration mean_wait{0};
    Duration service{0};
    std::uint64_t version = 0;
};

struct KindMetrics {
    std::size_t batches = 0;
    std::size_t requests = 0;
    Duration max_wait{0};
    Duration total_wait{0};
    Duration max_service{0};
    Duration busy{0};
    std::vector<BatchRecord> records;  // filled only when recording is on
};

enum class PublishAck { applied, unchanged };

class InferenceService {
public:
    struct Config {
        BatchWindowConfig window[kNumModelKinds];
        InferenceCost cost;
        std::uint64_t seed = 0;
        bool record_batches = false;
    };

    InferenceService(Runtime& rt, ModelConfig mcfg, Config cfg);
    ~InferenceService();
    InferenceService(const InferenceService&) = delete;
    InferenceService& operator=(const InferenceService&) = delete;

    /// Spawns one batching loop per model kind.
    void start();
    /// Stops the loops; pending and later requests fail with ShutdownError.
    void shutdown();

    std::uint64_t submit(InferenceRequest req);
    /// Waits for the response. Returns nullopt when `deadline` passes first;
    /// the late response is then discarded.
    std::optional<InferenceResponse> await(std::uint64_t ticket, Duration deadline = kNoDeadline);
    std::optional<InferenceResponse> call(InferenceRequest req, Duration timeout = kNoDeadline);

    PublishAck update_weights(ModelKind kind, VersionedWeights w);
    /// Latest published snapshot (null params when nothing was published).
    VersionedWeights current(ModelKind kind);

    std::size_t queue_length(ModelKind kind);
    KindMetrics metrics(ModelKind kind);
    const ModelConfig& model_config() const { return mcfg_; }

private:
    struct Slot {
        std::optional<InferenceResponse> response;
        bool abandoned = false;
    };
    struct Queue {
        std::deque<InferenceRequest> pending;
        VersionedWeights weights;
        KindMetrics metrics;
    };

    void batching_loop(ModelKind kind);

    Runtime& rt_;
    ModelConfig mcfg_;
    Config cfg_;
    Queue queues_[kNumModelKinds];
    std::map<std::uint64_t, Slot> slots_;
    std::uint64_t next_ticket_ = 1;
    bool started_ = false;
    bool stopping_ = false;
};

}  // namespace arl
