#include "arl/losses.hpp"

#include <algorithm>
#include <cmath>

namespace arl {

Algorithm parse_algorithm(const std::string& s) {
    if (s == "gipo") return Algorithm::gipo;
    if (s == "ppo") return Algorithm::ppo;
    throw ConfigError("unknown algorithm '" + s + "' (expected gipo|ppo)");
}

std::string to_string(Algorithm a) { return a == Algorithm::gipo ? "gipo" : "ppo"; }

void LossConfig::validate() const {
    if (!(sigma > 0.0)) throw ConfigError("loss.sigma must be positive");
    if (!(value_coef >= 0.0) || !(entropy_coef >= 0.0)) throw ConfigError("loss coefficients must be non-negative");
    if (!(clip > 0.0 && clip < 1.0)) throw ConfigError("loss.clip must lie in (0, 1)");
}

double gipo_weight(double ratio, double sigma) {
    if (!(ratio > 0.0)) throw DomainError("gipo_weight: ratio must be positive");
    if (!(sigma > 0.0)) throw DomainError("gipo_weight: sigma must be positive");
    const double z = std::log(ratio) / sigma;
    return std::exp(-0.5 * z * z);
}

Vec value_head_inputs(const ParamSet& params, const ModelConfig& mcfg, const SuperBatch& batch) {
    Vec out;
    for (std::size_t i = 0; i < batch.rows; ++i) {
        const Vec s = policy_slots(params, mcfg, batch.obs_row(i));
        out.insert(out.end(), s.begin(), s.end());
    }
    return out;
}

Vec token_ratios(std::span<const double> new_logp, std::span<const double> old_logp) {
    if (new_logp.size() != old_logp.size()) throw DimensionError("token_ratios: length mismatch");
    Vec r(new_logp.size());
    for (std::size_t k = 0; k < r.size(); ++k) r[k] = std::exp(new_logp[k] - old_logp[k]);
    return r;
}

double chunk_ratio(std::span<const double> new_logp, std::span<const double> old_logp) {
    if (new_logp.size() != old_logp.size()) throw DimensionError("chunk_ratio: length mismatch");
    double s = 0.0;
    for (std::size_t k = 0; k < new_logp.size(); ++k) s += new_logp[k] - old_logp[k];
    return std::exp(s);
}

double total_loss(double policy, double value, double entropy, const LossConfig& cfg) {
    return policy + cfg.value_coef * value - cfg.entropy_coef * entropy;
}

LossResult compute_loss(const ParamSet& params, const ModelConfig& mcfg, const SuperBatch& batch,
                        const LossConfig& cfg, LossTerms terms) {
    batch.validate();
    const std::size_t rows = batch.rows;
    const std::size_t K = batch.chunk_len;
    LossResult res;
    res.grads = params.zeros_like();
    if (rows == 0) throw BatchDropped("compute_loss: empty batch");

    std::vector<PolicyTrace> traces(rows);
    std::size_t valid = 0, entropy_tokens = 0;
    // per-token log ratio; NaN marks an excluded or padded token
    Vec log_ratio(rows * K, std::nan(""));
    auto& d = res.diag;
    for (std::size_t i = 0; i < rows; ++i) {
        auto row = batch.token_row(i);
        std::size_t k_i = 0;
        while (k_i < K && row[k_i] >= 0) ++k_i;
        traces[i] = policy_trace(params, mcfg, batch.obs_row(i), row.first(k_i));
        entropy_tokens += k_i;
        for (std::size_t k = 0; k < k_i; ++k) {
            const double lp_new = traces[i].logp[k][static_cast<std::size_t>(row[k])];
            const double lp_old = batch.behavior_logp[i * K + k];
            const double lr = lp_new - lp_old;
            if (!std::isfinite(lr) || !std::isfinite(std::exp(lr))) {
                ++d.excluded_tokens;
                continue;
            }
            log_ratio[i * K + k] = lr;
            ++valid;
        }
    }
    d.tokens = valid;
    if (terms.policy && valid == 0) throw BatchDropped("compute_loss: every token ratio is non-finite");

    double pol = 0.0, ent = 0.0, val = 0.0;
    double ratio_sum = 0.0, weight_sum = 0.0;
    std::size_t clipped = 0;
    std::vector<Vec> d_logits;
    for (std::size_t i = 0; i < rows; ++i) {
        const PolicyTrace& tr = traces[i];
        const std::size_t k_i = tr.tokens.size();
        const double adv = batch.advantages[i];
        d_logits.assign(k_i, Vec(static_cast<std::size_t>(mcfg.n_actions), 0.0));
        bool any_grad = false;
        for (std::size_t k = 0; k < k_i; ++k) {
            const Vec& lp = tr.logp[k];
            Vec& dz = d_logits[k];
            const double lr = log_ratio[i * K + k];
            if (!std::isnan(lr)) {
                const double r = std::exp(lr);
                ratio_sum += r;
                d.max_ratio = std::max(d.max_ratio, r);
                if (std::abs(r - 1.0) > cfg.clip) ++clipped;
                double term = 0.0, coef = 0.0;  // coef = d term / d log pi_new(a)
                if (cfg.algorithm == Algorithm::gipo) {
                    const double w = terms.frozen_trust != nullptr ? (*terms.frozen_trust)[i * K + k]
                                                                   : gipo_weight(r, cfg.sigma);
                    weight_sum += w;
                    term = -w * r * adv;
                    coef = -w * r * adv;
                } else {
                    const double unclipped = r * adv;
                    const double clipped_v = std::clamp(r, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv;
                    if (unclipped <= clipped_v) {
                        term = -unclipped;
                        coef = -unclipped;
                    } else {
                        term = -clipped_v;
                    }
                }
                pol += term;
                if (terms.policy && coef != 0.0) {
                    const double g = coef / static_cast<double>(valid);
                    const std::size_t a = static_cast<std::size_t>(tr.tokens[k]);
                    for (std::size_t j = 0; j < dz.size(); ++j) dz[j] -= g * std::exp(lp[j]);
                    dz[a] += g;
                    any_grad = true;
                }
            }
            double h = 0.0;
            for (double l : lp) h -= std::exp(l) * l;
            ent += h;
            if (terms.entropy && cfg.entropy_coef > 0.0) {
                // d(-lambda_h * mean H)/dz_j = lambda_h / n * p_j (log p_j + H)
                const double g = cfg.entropy_coef / static_cast<double>(entropy_tokens);
                for (std::size_t j = 0; j < dz.size(); ++j) dz[j] += g * std::exp(lp[j]) * (lp[j] + h);
                any_grad = true;
            }
        }
        if (any_grad) policy_backward(params, mcfg, batch.obs_row(i), tr, d_logits, res.grads);

        std::span<const double> vin = tr.slots;
        if (terms.frozen_value_inputs != nullptr) vin = std::span<const double>(*terms.frozen_value_inputs).subspan(i * tr.slots.size(), tr.slots.size());
        const ValueTrace vt = value_head_trace(params, vin, K, batch.steps[i]);
        const double err = vt.value - batch.value_targets[i];
        val += err * err;
        if (terms.value && cfg.value_coef > 0.0) {
            value_head_backward(params, vin, K, vt, cfg.value_coef * 2.0 * err / static_cast<double>(rows),
                                res.grads);
        }
    }
    d.policy_loss = valid > 0 ? pol / static_cast<double>(valid) : 0.0;
    d.entropy = entropy_tokens > 0 ? ent / static_cast<double>(entropy_tokens) : 0.0;
    d.value_loss = val / static_cast<double>(rows);
    d.mean_ratio = valid > 0 ? ratio_sum / static_cast<double>(valid) : 0.0;
    d.clip_fraction = valid > 0 ? static_cast<double>(clipped) / static_cast<double>(valid) : 0.0;
    d.mean_trust_weight = valid > 0 && cfg.algorithm == Algorithm::gipo ? weight_sum / static_cast<double>(valid) : 0.0;
    d.total = total_loss(d.policy_loss, d.value_loss, d.entropy, cfg);
    res.loss = (terms.policy ? d.policy_loss : 0.0) + (terms.value ? cfg.value_coef * d.value_loss : 0.0) -
               (terms.entropy ? cfg.entropy_coef * d.entropy : 0.0);
    return res;
}

Vec token_trust_weights(const ParamSet& params, const ModelConfig& mcfg, const SuperBatch& batch,
                        const LossConfig& cfg) {
    const std::size_t K = batch.chunk_len;
    Vec out(batch.rows * K, std::nan(""));
    for (std::size_t i = 0; i < batch.rows; ++i) {
        auto row = batch.token_row(i);
        std::size_t k_i = 0;
        while (k_i < K && row[k_i] >= 0) ++k_i;
        const PolicyTrace tr = policy_trace(params, mcfg, batch.obs_row(i), row.first(k_i));
        for (std::size_t k = 0; k < k_i; ++k) {
            const double lr = tr.logp[k][static_cast<std::size_t>(row[k])] - batch.behavior_logp[i * K + k];
            if (std::isfinite(lr) && std::isfinite(std::exp(lr))) out[i * K + k] = gipo_weight(std::exp(lr), cfg.sigma);
        }
    }
    return out;
}

}  // namespace arl
