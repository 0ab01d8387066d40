#include "arl/advantage.hpp"

#include <cmath>

#include "arl/error.hpp"

namespace arl {

void GaeConfig::validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gae.gamma must lie in (0, 1]");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("gae.lambda must lie in [0, 1]");
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, bool done,
                      const GaeConfig& cfg) {
    const std::size_t T = rewards.size();
    if (T == 0) throw DimensionError("compute_gae: empty trajectory");
    if (values.size() != T + 1) {
        throw DimensionError("compute_gae: expected " + std::to_string(T + 1) + " values, got " +
                             std::to_string(values.size()));
    }
    GaeResult out;
    out.advantages.assign(T, 0.0);
    out.targets.assign(T, 0.0);
    const double decay = cfg.gamma * cfg.lambda;
    double running = 0.0;
    for (std::size_t i = T; i-- > 0;) {
        const double next = (i + 1 == T && done) ? 0.0 : values[i + 1];
        const double delta = (rewards[i] - values[i]) + cfg.gamma * next;
        running = delta + decay * running;
        out.advantages[i] = running;
        out.targets[i] = running + values[i];
    }
    return out;
}

ShardMoments shard_moments(std::span<const double> values) {
    ShardMoments m;
    for (double v : values) {
        m.sum += v;
        m.sq_sum += v * v;
    }
    m.count = values.size();
    return m;
}

NormStats reduce_moments(std::vector<ShardMoments> shards, double eps) {
    NormStats st;
    double s = 0.0, q = 0.0;
    std::size_t n = 0;
    for (const auto& m : shards) {
        s += m.sum;
        q += m.sq_sum;
        n += m.count;
    }
    if (n == 0) throw DomainError("global_normalize: no advantages across shards");
    st.shards = std::move(shards);
    st.count = n;
    st.mean = s / static_cast<double>(n);
    double var = q / static_cast<double>(n) - st.mean * st.mean;
    if (var < -1e-12) throw DomainError("global_normalize: negative variance " + std::to_string(var));
    st.variance = var < 0.0 ? 0.0 : var;
    st.eps = eps;
    return st;
}

std::vector<Vec> global_normalize(const std::vector<Vec>& shards, double eps, NormStats* stats) {
    std::vector<ShardMoments> moments;
    moments.reserve(shards.size());
    for (const Vec& s : shards) moments.push_back(shard_moments(s));
    NormStats st = reduce_moments(std::move(moments), eps);
    const double denom = std::sqrt(st.variance) + eps;
    std::vector<Vec> out;
    out.reserve(shards.size());
    for (const Vec& s : shards) {
        Vec o(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) o[i] = denom > 0.0 ? (s[i] - st.mean) / denom : 0.0;
        out.push_back(std::move(o));
    }
    if (stats != nullptr) *stats = std::move(st);
    return out;
}

Vec normalize_sharded(std::span<const double> values, std::size_t k, double eps, NormStats* stats) {
    if (k == 0) throw DomainError("normalize_sharded: shard count must be positive");
    std::vector<Vec> shards(k);
    const std::size_t n = values.size();
    for (std::size_t s = 0; s < k; ++s) {
        const std::size_t lo = n * s / k, hi = n * (s + 1) / k;
        shards[s].assign(values.begin() + static_cast<std::ptrdiff_t>(lo), values.begin() + static_cast<std::ptrdiff_t>(hi));
    }
    const auto normed = global_normalize(shards, eps, stats);
    Vec out;
    out.reserve(n);
    for (const Vec& s : normed) out.insert(out.end(), s.begin(), s.end());
    return out;
}

}  // namespace arl
