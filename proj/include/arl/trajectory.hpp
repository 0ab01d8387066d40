#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "arl/env.hpp"
#include "arl/numerics.hpp"

namespace arl {

enum class Source { real, imagined };

/// One collected episode: T+1 observations, T action chunks with their
/// rewards, behaviour logits (K x N per step) and value estimates, plus the
/// bootstrap value of the final observation.
struct Trajectory {
    std::vector<Observation> observations;
    std::vector<ActionChunk> actions;
    Vec rewards;
    std::vector<std::vector<Vec>> behavior_logits;
    Vec values;
    double bootstrap_value = 0.0;
    bool done = false;
    Source source = Source::real;
    std::uint64_t behavior_version = 0;            // version serving the first step
    std::vector<std::uint64_t> step_versions;      // version serving each step
    int task = 0;
    bool success = false;
    Vec potentials;  // imagined only: predicted success probability of each observation

    std::size_t length() const { return actions.size(); }
    double total_reward() const;

    /// Throws DimensionError when the per-step arrays disagree in length.
    void validate() const;

    bool operator==(const Trajectory&) const = default;
};

using TrajectoryPtr = std::shared_ptr<const Trajectory>;

/// Log-probability of `token` under behaviour logits (max-shifted log-softmax).
double behavior_log_prob(const Vec& logits, int token);

}  // namespace arl
