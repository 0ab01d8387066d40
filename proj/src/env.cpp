#include "arl/env.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>

#include "arl/error.hpp"

namespace arl {

void LatencyModel::validate() const {
    auto neg = [](double v) { return !(v >= 0.0); };
    if (neg(constant_ms) || neg(lognormal_sigma) || neg(fast_ms) || neg(slow_ms) || neg(scale)) {
        throw ConfigError("latency model: parameters must be non-negative");
    }
    if (!(p_straggler >= 0.0 && p_straggler <= 1.0)) {
        throw ConfigError("latency model: p_straggler must lie in [0, 1]");
    }
    if (!std::isfinite(lognormal_mu)) throw ConfigError("latency model: lognormal_mu must be finite");
}

LatencyKind parse_latency_kind(const std::string& s) {
    if (s == "constant") return LatencyKind::constant;
    if (s == "lognormal") return LatencyKind::lognormal;
    if (s == "bimodal") return LatencyKind::bimodal;
    throw ConfigError("unknown latency kind '" + s + "' (expected constant|lognormal|bimodal)");
}

std::string to_string(LatencyKind k) {
    switch (k) {
        case LatencyKind::constant: return "constant";
        case LatencyKind::lognormal: return "lognormal";
        case LatencyKind::bimodal: return "bimodal";
    }
    return "?";
}

Duration sample_latency(const LatencyModel& model, Rng& rng) {
    model.validate();
    double ms = 0.0;
    switch (model.kind) {
        case LatencyKind::constant:
            ms = model.constant_ms;
            break;
        case LatencyKind::lognormal: {
            std::normal_distribution<double> nd(model.lognormal_mu, model.lognormal_sigma);
            ms = std::exp(nd(rng));
            break;
        }
        case LatencyKind::bimodal:
            ms = uniform01(rng) < model.p_straggler ? model.slow_ms : model.fast_ms;
            break;
    }
    return from_ms(ms * model.scale);
}

void SuiteConfig::validate() const {
    if (grid_size < 3) throw ConfigError("env.grid_size must be >= 3");
    if (num_tasks < 1) throw ConfigError("env.num_tasks must be >= 1");
    if (horizon < 1) throw ConfigError("env.horizon must be >= 1");
    if (chunk_len < 1) throw ConfigError("env.chunk_len must be >= 1");
    if (object_spread < 0) throw ConfigError("env.object_spread must be >= 0");
    latency.validate();
}

namespace {

Cell rotate(Cell c, int n, int quarter_turns) {
    for (int i = 0; i < quarter_turns % 4; ++i) c = Cell{c.c, n - 1 - c.r};
    return c;
}

Cell clamp_cell(Cell c, int n) {
    c.r = std::clamp(c.r, 0, n - 1);
    c.c = std::clamp(c.c, 0, n - 1);
    return c;
}

// Anchors for task i: a base arrangement rotated by quarter turns, shifted
// one cell inward every four tasks.
Layout task_anchors(int n, int task) {
    const int ring = task / 4;
    Layout base;
    base.agent = clamp_cell(Cell{1 + ring, 1 + ring}, n);
    base.object = clamp_cell(Cell{n / 2 - 1, n / 2 - 1}, n);
    base.goal = clamp_cell(Cell{n / 2 + 1 - ring, 1 + ring}, n);
    Layout out;
    out.agent = rotate(base.agent, n, task % 4);
    out.object = rotate(base.object, n, task % 4);
    out.goal = rotate(base.goal, n, task % 4);
    return out;
}

}  // namespace

bool apply_token(int n, EnvState& s, int token) {
    Cell& a = s.layout.agent;
    switch (token) {
        case kUp: a.r = std::max(0, a.r - 1); break;
        case kDown: a.r = std::min(n - 1, a.r + 1); break;
        case kLeft: a.c = std::max(0, a.c - 1); break;
        case kRight: a.c = std::min(n - 1, a.c + 1); break;
        case kGrasp:
            if (a == s.layout.object) s.holding = true;
            break;
        case kRelease: s.holding = false; break;
        case kNoop: break;
        default: throw DomainError("token " + std::to_string(token) + " outside the action vocabulary");
    }
    if (s.holding) s.layout.object = a;
    return s.layout.object == s.layout.goal;
}

std::optional<std::vector<int>> shortest_solution(const SuiteConfig& cfg, const Layout& layout, bool holding,
                                                  int max_tokens) {
    const int n = cfg.grid_size;
    const int cells = n * n;
    auto encode = [&](const EnvState& s) {
        const int a = s.layout.agent.r * n + s.layout.agent.c;
        const int o = s.layout.object.r * n + s.layout.object.c;
        return (a * cells + o) * 2 + (s.holding ? 1 : 0);
    };
    if (layout.object == layout.goal) return std::vector<int>{};
    std::vector<int> parent(static_cast<std::size_t>(cells * cells * 2), -2);
    std::vector<int> via(parent.size(), -1);
    std::vector<int> depth(parent.size(), 0);
    std::deque<EnvState> frontier;
    EnvState start;
    start.layout = layout;
    start.holding = holding;
    parent[encode(start)] = -1;
    frontier.push_back(start);
    while (!frontier.empty()) {
        EnvState cur = frontier.front();
        frontier.pop_front();
        const int ck = encode(cur);
        if (depth[ck] >= max_tokens) continue;
        for (int tok = 0; tok < kNumPrimitiveActions; ++tok) {
            EnvState nxt = cur;
            const bool done = apply_token(n, nxt, tok);
            const int nk = encode(nxt);
            if (parent[nk] != -2) continue;
            parent[nk] = ck;
            via[nk] = tok;
            depth[nk] = depth[ck] + 1;
            if (done) {
                std::vector<int> path;
                for (int k = nk; parent[k] != -1; k = parent[k]) path.push_back(via[k]);
                return std::vector<int>(path.rbegin(), path.rend());
            }
            frontier.push_back(nxt);
        }
    }
    return std::nullopt;
}

Layout generate_layout(const SuiteConfig& cfg, int task_id, std::uint64_t seed) {
    if (task_id < 0 || task_id >= cfg.num_tasks) {
        throw DomainError("unknown task id " + std::to_string(task_id) + "; valid range is [0, " +
                          std::to_string(cfg.num_tasks) + ")");
    }
    const int n = cfg.grid_size;
    const Layout anchor = task_anchors(n, task_id);
    Rng rng = make_rng(seed, 0x1a70u + static_cast<std::uint64_t>(task_id));
    const int spread = cfg.object_spread;
    for (int attempt = 0; attempt < 1000; ++attempt) {
        Layout l = anchor;
        const int side = 2 * spread + 1;
        const int pick = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(side * side)));
        l.object = clamp_cell(Cell{anchor.object.r - spread + pick / side, anchor.object.c - spread + pick % side}, n);
        if (l.object == l.goal || l.object == l.agent) continue;
        if (shortest_solution(cfg, l, false, cfg.horizon * cfg.chunk_len)) return l;
    }
    throw ConfigError("could not generate a solvable layout for task " + std::to_string(task_id));
}

Observation render(const SuiteConfig& cfg, const EnvState& s) {
    const int n = cfg.grid_size;
    Observation o;
    o.pixels.assign(static_cast<std::size_t>(3 * n * n), 0.0);
    auto at = [&](int ch, Cell c) -> double& { return o.pixels[static_cast<std::size_t>((ch * n + c.r) * n + c.c)]; };
    at(0, s.layout.agent) = 1.0;
    at(1, s.layout.object) = s.holding ? 0.5 : 1.0;
    at(2, s.layout.goal) = 1.0;
    o.step = s.step;
    o.task = s.task;
    return o;
}

GridEnv::GridEnv(SuiteConfig cfg, double latency_scale) : cfg_(std::move(cfg)), latency_(cfg_.latency) {
    cfg_.validate();
    latency_.scale *= latency_scale;
    latency_.validate();
}

Observation GridEnv::reset(int task_id, std::uint64_t seed) {
    state_ = EnvState{};
    state_.layout = generate_layout(cfg_, task_id, seed);
    state_.task = task_id;
    latency_rng_ = make_rng(seed, 0x7a7e0000u + static_cast<std::uint64_t>(task_id));
    initialized_ = true;
    return observe();
}

StepResult GridEnv::step(const ActionChunk& chunk) {
    if (!initialized_ || state_.terminal) throw IllegalTransition("step called on a terminal or unreset environment");
    const int k = static_cast<int>(chunk.tokens.size());
    if (k < 1 || k > cfg_.chunk_len) {
        throw DomainError("action chunk length " + std::to_string(k) + " outside [1, " + std::to_string(cfg_.chunk_len) +
                          "]");
    }
    for (int t : chunk.tokens) {
        if (t < 0 || t >= kNumPrimitiveActions) throw DomainError("token " + std::to_string(t) + " outside vocabulary");
    }
    StepResult res;
    for (int t : chunk.tokens) {
        if (apply_token(cfg_.grid_size, state_, t)) {
            state_.success = true;
            break;
        }
    }
    state_.step += 1;
    if (state_.success) {
        res.reward = 1.0;
        state_.terminal = true;
    } else if (state_.step >= cfg_.horizon) {
        state_.terminal = true;
    }
    res.done = state_.terminal;
    res.success = state_.success;
    res.obs = observe();
    res.wall_delay = sample_latency(latency_, latency_rng_);
    return res;
}

}  // namespace arl
