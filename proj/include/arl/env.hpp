#pragma once

// Multi-task grid manipulation suite. The agent walks a square grid, grasps
// an object and carries it onto a goal cell. Observations are flattened
// 3 x N x N grids (agent, object, goal channels). Every step call executes
// a chunk of primitive tokens and reports a simulated wall-clock delay drawn
// from a latency model; the caller's scheduler decides whether that delay
// is slept or accounted on a virtual clock.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "arl/numerics.hpp"
#include "arl/rng.hpp"

namespace arl {

using Duration = std::chrono::nanoseconds;

inline Duration from_ms(double ms) { return Duration(std::llround(ms * 1e6)); }
inline double to_ms(Duration d) { return static_cast<double>(d.count()) / 1e6; }

enum class LatencyKind { constant, lognormal, bimodal };

struct LatencyModel {
    LatencyKind kind = LatencyKind::constant;
    double constant_ms = 0.0;
    double lognormal_mu = 0.0;     // log of the median in ms
    double lognormal_sigma = 0.0;
    double fast_ms = 0.0;
    double slow_ms = 0.0;
    double p_straggler = 0.0;
    double scale = 1.0;            // per-worker multiplier

    void validate() const;  // throws ConfigError
};

LatencyKind parse_latency_kind(const std::string& s);
std::string to_string(LatencyKind k);

Duration sample_latency(const LatencyModel& model, Rng& rng);

/// Primitive action tokens.
enum Token : int { kUp = 0, kDown = 1, kLeft = 2, kRight = 3, kGrasp = 4, kRelease = 5, kNoop = 6 };
inline constexpr int kNumPrimitiveActions = 7;

struct SuiteConfig {
    int grid_size = 8;
    int num_tasks = 2;
    int horizon = 12;        // max number of chunk steps per episode
    int chunk_len = 4;       // K
    int object_spread = 2;   // object placed within this Chebyshev radius of its anchor
    LatencyModel latency;

    int obs_dim() const { return 3 * grid_size * grid_size; }
    void validate() const;
};

struct Observation {
    Vec pixels;
    int step = 0;
    int task = 0;

    bool operator==(const Observation&) const = default;
};

struct ActionChunk {
    std::vector<int> tokens;

    bool operator==(const ActionChunk&) const = default;
};

struct Cell {
    int r = 0;
    int c = 0;
    bool operator==(const Cell&) const = default;
};

struct Layout {
    Cell agent;
    Cell object;
    Cell goal;
    bool operator==(const Layout&) const = default;
};

struct EnvState {
    Layout layout;
    bool holding = false;
    int step = 0;
    int task = 0;
    bool terminal = false;
    bool success = false;
};

struct StepResult {
    Observation obs;
    double reward = 0.0;
    bool done = false;
    bool success = false;
    Duration wall_delay{0};
};

/// Deterministic layout for (task, seed); re-draws until the instance is
/// solvable within the horizon.
Layout generate_layout(const SuiteConfig& cfg, int task_id, std::uint64_t seed);

/// Breadth-first search over (agent, object, holding) states. Returns the
/// shortest primitive token sequence reaching success, if any exists within
/// `max_tokens`.
std::optional<std::vector<int>> shortest_solution(const SuiteConfig& cfg, const Layout& layout, bool holding,
                                                  int max_tokens);

/// Applies one primitive token; returns true when the object lands on the goal.
bool apply_token(int grid_size, EnvState& s, int token);

Observation render(const SuiteConfig& cfg, const EnvState& s);

class GridEnv {
public:
    explicit GridEnv(SuiteConfig cfg, double latency_scale = 1.0);

    Observation reset(int task_id, std::uint64_t seed);
    StepResult step(const ActionChunk& chunk);

    const EnvState& state() const { return state_; }
    const SuiteConfig& config() const { return cfg_; }
    Observation observe() const { return render(cfg_, state_); }

private:
    SuiteConfig cfg_;
    LatencyModel latency_;
    EnvState state_;
    Rng latency_rng_;
    bool initialized_ = false;
};

}  // namespace arl
