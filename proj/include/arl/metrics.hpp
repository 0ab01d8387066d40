#pragma once

// Metrics report: time series produced by a run plus summary aggregates,
// with JSONL and CSV writers and matching readers.
//
// JSONL: one object per line, each carrying schema_version, type (eval,
// train, throughput or summary), config_hash and seed.
// CSV learning curve, fixed column order:
//   env_steps,wall_s,mean_return,success_rate,policy_version

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace arl {

inline constexpr int kMetricsSchemaVersion = 1;

struct EvalPoint {
    std::size_t env_steps = 0;
    double wall_s = 0.0;
    double mean_return = 0.0;
    double success_rate = 0.0;
    std::uint64_t policy_version = 0;
    std::vector<double> task_returns;

    bool operator==(const EvalPoint&) const = default;
};

struct TrainPoint {
    std::size_t step = 0;
    double wall_s = 0.0;
    std::size_t env_steps = 0;
    std::uint64_t version = 0;
    std::uint64_t critic_version = 0;
    std::uint64_t staleness = 0;
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double mean_ratio = 0.0;
    double max_ratio = 0.0;
    double clip_fraction = 0.0;
    double mean_trust_weight = 0.0;
    double grad_norm = 0.0;

    bool operator==(const TrainPoint&) const = default;
};

struct ThroughputPoint {
    double wall_s = 0.0;
    std::size_t env_steps = 0;
    std::size_t episodes = 0;
    double episodes_per_s = 0.0;    // over the last interval
    double steps_per_s = 0.0;       // over the last interval
    double worker_utilization = 0.0;  // busy fraction over the last interval

    bool operator==(const ThroughputPoint&) const = default;
};

struct MetricsReport {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<EvalPoint> evals;
    std::vector<TrainPoint> train;
    std::vector<ThroughputPoint> throughput;
    std::map<std::string, double> summary;

    bool empty() const { return evals.empty() && train.empty() && throughput.empty() && summary.empty(); }
    double summary_or(const std::string& key, double fallback) const;
    bool operator==(const MetricsReport&) const = default;
};

/// Throws IoError naming the path when it cannot be written or read.
void write_jsonl(const MetricsReport& r, const std::string& path);
MetricsReport read_jsonl(const std::string& path);
void write_csv(const MetricsReport& r, const std::string& path);
std::vector<EvalPoint> read_csv(const std::string& path);

/// Writes metrics.jsonl and learning_curve.csv into `dir`, creating it.
void write_report(const MetricsReport& r, const std::string& dir);

/// Environment steps of the first checkpoint with mean return >= threshold.
std::optional<std::size_t> steps_to_reach(const std::vector<EvalPoint>& evals, double threshold);

}  // namespace arl
