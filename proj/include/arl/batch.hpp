#pragma once

#include <cstdint>
#include <vector>

#include "arl/advantage.hpp"
#include "arl/numerics.hpp"

namespace arl {

/// A fully preprocessed training batch: one row per environment step, with
/// K token columns for the per-token arrays.
struct SuperBatch {
    std::size_t rows = 0;
    std::size_t obs_dim = 0;
    std::size_t chunk_len = 0;

    Vec observations;               // rows x obs_dim
    std::vector<int> steps;         // rows
    std::vector<int> tokens;        // rows x chunk_len, -1 marks padding
    Vec behavior_logp;              // rows x chunk_len
    Vec advantages;                 // rows, globally normalized
    Vec raw_advantages;             // rows, before normalization
    Vec value_targets;              // rows

    std::uint64_t critic_version = 0;
    std::uint64_t min_behavior_version = 0;
    std::size_t n_real = 0;
    std::size_t n_imagined = 0;
    std::size_t n_trajectories = 0;
    NormStats norm;
    std::uint64_t id = 0;

    std::span<const double> obs_row(std::size_t i) const { return {observations.data() + i * obs_dim, obs_dim}; }
    std::span<const int> token_row(std::size_t i) const { return {tokens.data() + i * chunk_len, chunk_len}; }
    void validate() const;
};

}  // namespace arl
