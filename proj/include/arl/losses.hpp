#pragma once

// Token-level policy objectives (Gaussian trust-weighted surrogate and the
// clipped PPO baseline), the value regression loss and the entropy bonus.

#include <span>
#include <string>

#include "arl/batch.hpp"
#include "arl/error.hpp"
#include "arl/model.hpp"
#include "arl/numerics.hpp"

namespace arl {

enum class Algorithm { gipo, ppo };

Algorithm parse_algorithm(const std::string& s);
std::string to_string(Algorithm a);

struct LossConfig {
    Algorithm algorithm = Algorithm::gipo;
    double sigma = 0.3;         // trust width of the Gaussian weight
    double value_coef = 0.5;    // lambda_v
    double entropy_coef = 0.01; // lambda_h
    double clip = 0.2;          // PPO arm only
    void validate() const;
};

/// Thrown when no usable token remains in a batch.
class BatchDropped : public Error {
public:
    using Error::Error;
};

/// exp(-0.5 * (log(ratio) / sigma)^2). Throws DomainError for ratio <= 0 or sigma <= 0.
double gipo_weight(double ratio, double sigma);

struct LossDiagnostics {
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double total = 0.0;
    double mean_ratio = 0.0;
    double max_ratio = 0.0;
    double clip_fraction = 0.0;      // fraction of tokens with |ratio - 1| > clip
    double mean_trust_weight = 0.0;  // GIPO arm
    std::size_t tokens = 0;
    std::size_t excluded_tokens = 0;
};

struct LossResult {
    double loss = 0.0;
    ParamSet grads;
    LossDiagnostics diag;
};

/// Which terms enter the returned loss and gradient.
struct LossTerms {
    bool policy = true;
    bool value = true;
    bool entropy = true;
    /// When set (rows x K), these trust weights replace the ones computed
    /// from the current ratios. Used by gradient checks, where the weight
    /// must stay constant while parameters are perturbed.
    const Vec* frozen_trust = nullptr;
    /// When set (rows x K*D), the value head reads these states instead of
    /// the live slots, which makes the detachment explicit to a numerical
    /// differentiator.
    const Vec* frozen_value_inputs = nullptr;
};

/// L = L_policy + lambda_v * L_v - lambda_h * L_ent over a SuperBatch, with
/// gradients for every tensor in `params`. Per-token ratios are computed in
/// log space against the stored behaviour log-probabilities; each token of
/// a chunk receives that step's advantage. Throws BatchDropped when every
/// token ratio is non-finite.
LossResult compute_loss(const ParamSet& params, const ModelConfig& mcfg, const SuperBatch& batch,
                        const LossConfig& cfg, LossTerms terms = {});

inline LossResult policy_loss(const ParamSet& params, const ModelConfig& mcfg, const SuperBatch& batch,
                              const LossConfig& cfg) {
    return compute_loss(params, mcfg, batch, cfg, LossTerms{true, false, false});
}

/// Per-token Gaussian trust weights at `params` (rows x K, NaN where a token
/// is padded or excluded).
Vec token_trust_weights(const ParamSet& params, const ModelConfig& mcfg, const SuperBatch& batch,
                        const LossConfig& cfg);

/// exp(new - old) per token.
Vec token_ratios(std::span<const double> new_logp, std::span<const double> old_logp);
/// Joint-probability ratio of a whole chunk, exp(sum(new) - sum(old)).
double chunk_ratio(std::span<const double> new_logp, std::span<const double> old_logp);

/// Slot states the value head pools for each batch row (rows x K*D).
Vec value_head_inputs(const ParamSet& params, const ModelConfig& mcfg, const SuperBatch& batch);

double total_loss(double policy, double value, double entropy, const LossConfig& cfg);

}  // namespace arl
