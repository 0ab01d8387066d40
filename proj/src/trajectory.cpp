#include "arl/trajectory.hpp"

#include <string>

#include "arl/batch.hpp"
#include "arl/error.hpp"

namespace arl {

double Trajectory::total_reward() const {
    double s = 0.0;
    for (double r : rewards) s += r;
    return s;
}

void Trajectory::validate() const {
    const std::size_t T = actions.size();
    auto bad = [&](const char* what, std::size_t got, std::size_t want) {
        throw DimensionError(std::string("trajectory: ") + what + " has " + std::to_string(got) + " entries, expected " +
                             std::to_string(want));
    };
    if (observations.size() != T + 1) bad("observations", observations.size(), T + 1);
    if (rewards.size() != T) bad("rewards", rewards.size(), T);
    if (behavior_logits.size() != T) bad("behavior_logits", behavior_logits.size(), T);
    if (values.size() != T) bad("values", values.size(), T);
    if (step_versions.size() != T) bad("step_versions", step_versions.size(), T);
    if (source == Source::imagined && !potentials.empty() && potentials.size() != T + 1) {
        bad("potentials", potentials.size(), T + 1);
    }
    for (std::size_t t = 0; t < T; ++t) {
        if (behavior_logits[t].size() != actions[t].tokens.size()) {
            bad("behavior_logits[t]", behavior_logits[t].size(), actions[t].tokens.size());
        }
    }
}

double behavior_log_prob(const Vec& logits, int token) {
    if (token < 0 || static_cast<std::size_t>(token) >= logits.size()) {
        throw DomainError("behavior_log_prob: token outside logits");
    }
    return log_softmax(logits)[static_cast<std::size_t>(token)];
}

void SuperBatch::validate() const {
    auto check = [&](const char* what, std::size_t got, std::size_t want) {
        if (got != want) {
            throw DimensionError(std::string("superbatch: ") + what + " has " + std::to_string(got) +
                                 " entries, expected " + std::to_string(want));
        }
    };
    check("observations", observations.size(), rows * obs_dim);
    check("steps", steps.size(), rows);
    check("tokens", tokens.size(), rows * chunk_len);
    check("behavior_logp", behavior_logp.size(), rows * chunk_len);
    check("advantages", advantages.size(), rows);
    check("value_targets", value_targets.size(), rows);
}

}  // namespace arl
