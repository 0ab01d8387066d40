#pragma once

// Advantage pipeline: generalized advantage estimation over recomputed
// values, and global standardization from per-shard moment sums.

#include <cstddef>
#include <span>
#include <vector>

#include "arl/numerics.hpp"

namespace arl {

struct GaeConfig {
    double gamma = 0.99;
    double lambda = 0.95;
    void validate() const;
};

struct GaeResult {
    Vec advantages;  // T
    Vec targets;     // T, advantage + value
};

/// values has T+1 entries; the last is the bootstrap and is ignored when done.
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, bool done,
                      const GaeConfig& cfg);

/// Sum, squared sum and count of one shard's advantages.
struct ShardMoments {
    double sum = 0.0;
    double sq_sum = 0.0;
    std::size_t count = 0;
};

ShardMoments shard_moments(std::span<const double> values);

struct NormStats {
    std::vector<ShardMoments> shards;
    double mean = 0.0;
    double variance = 0.0;
    std::size_t count = 0;
    double eps = 0.0;
};

/// Reduces the per-shard moments (the all-reduce) and derives mean/variance.
/// Throws DomainError when the total count is zero or the variance is
/// negative beyond rounding (< -1e-12); tiny negatives are clamped to 0.
NormStats reduce_moments(std::vector<ShardMoments> shards, double eps);

/// Standardizes every shard's advantages with the global statistics.
std::vector<Vec> global_normalize(const std::vector<Vec>& shards, double eps, NormStats* stats = nullptr);

/// Splits `values` into `k` contiguous shards and normalizes globally.
Vec normalize_sharded(std::span<const double> values, std::size_t k, double eps, NormStats* stats = nullptr);

}  // namespace arl
