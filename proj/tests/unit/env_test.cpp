#include <gtest/gtest.h>

#include <algorithm>
#include <functional>

#include "arl/env.hpp"
#include "arl/error.hpp"

using namespace arl;

namespace {

SuiteConfig eight_task_suite() {
    SuiteConfig c;
    c.grid_size = 8;
    c.num_tasks = 8;
    return c;
}

// Exhaustive search over all token strings up to max_len; independent of the
// BFS in the library.
int brute_force_min_length(const SuiteConfig& cfg, const Layout& l, int max_len) {
    for (int len = 1; len <= max_len; ++len) {
        std::vector<int> seq(static_cast<std::size_t>(len), 0);
        std::function<bool(int, EnvState)> rec = [&](int depth, EnvState s) {
            if (depth == len) return false;
            for (int t = 0; t < kNumPrimitiveActions; ++t) {
                EnvState n = s;
                if (apply_token(cfg.grid_size, n, t)) return true;
                if (rec(depth + 1, n)) return true;
            }
            return false;
        };
        EnvState s;
        s.layout = l;
        if (rec(0, s)) return len;
    }
    return -1;
}

}  // namespace

TEST(Env, ResetIsDeterministic) {
    GridEnv a(eight_task_suite()), b(eight_task_suite());
    EXPECT_EQ(a.reset(0, 42), b.reset(0, 42));
    EXPECT_EQ(a.state().layout, b.state().layout);
}

TEST(Env, SeedsChangeObjectPlacement) {
    const auto cfg = eight_task_suite();
    const Layout l42 = generate_layout(cfg, 0, 42);
    const Layout l43 = generate_layout(cfg, 0, 43);
    EXPECT_NE(l42.object, l43.object);
}

TEST(Env, UnknownTaskListsValidRange) {
    GridEnv env(eight_task_suite());
    try {
        env.reset(99, 0);
        FAIL() << "expected DomainError";
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("[0, 8)"), std::string::npos);
    }
}

TEST(Env, ObservationLayout) {
    GridEnv env(eight_task_suite());
    const Observation o = env.reset(1, 3);
    EXPECT_EQ(o.pixels.size(), 192u);
    EXPECT_EQ(o.step, 0);
    EXPECT_EQ(o.task, 1);
    for (int ch = 0; ch < 3; ++ch) {
        double s = 0.0;
        for (int i = 0; i < 64; ++i) s += o.pixels[static_cast<std::size_t>(ch * 64 + i)];
        EXPECT_DOUBLE_EQ(s, 1.0) << "channel " << ch;
    }
}

TEST(Env, NoopOnNonGoalState) {
    GridEnv env(eight_task_suite());
    env.reset(0, 1);
    const auto r = env.step(ActionChunk{{kNoop, kNoop, kNoop, kNoop}});
    EXPECT_EQ(r.reward, 0.0);
    EXPECT_FALSE(r.done);
    EXPECT_EQ(r.obs.step, 1);
}

TEST(Env, ShortestSolutionOnThreeByThreeReachesGoal) {
    SuiteConfig cfg;
    cfg.grid_size = 3;
    cfg.num_tasks = 1;
    cfg.horizon = 6;
    cfg.object_spread = 1;
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const Layout l = generate_layout(cfg, 0, seed);
        const auto sol = shortest_solution(cfg, l, false, 24);
        ASSERT_TRUE(sol.has_value());
        EXPECT_EQ(static_cast<int>(sol->size()), brute_force_min_length(cfg, l, 7)) << "seed " << seed;

        GridEnv env(cfg);
        env.reset(0, seed);
        StepResult last;
        std::size_t i = 0;
        while (i < sol->size()) {
            ActionChunk c;
            for (int k = 0; k < cfg.chunk_len && i < sol->size(); ++k) c.tokens.push_back((*sol)[i++]);
            last = env.step(c);
            if (i < sol->size()) EXPECT_FALSE(last.done);
        }
        EXPECT_EQ(last.reward, 1.0);
        EXPECT_TRUE(last.done);
        EXPECT_TRUE(last.success);
    }
}

TEST(Env, HorizonExhaustion) {
    auto cfg = eight_task_suite();
    cfg.horizon = 3;
    GridEnv env(cfg);
    env.reset(0, 5);
    StepResult r;
    for (int t = 0; t < 3; ++t) {
        r = env.step(ActionChunk{{kNoop, kNoop, kNoop, kNoop}});
    }
    EXPECT_EQ(r.reward, 0.0);
    EXPECT_TRUE(r.done);
    EXPECT_THROW(env.step(ActionChunk{{kNoop}}), IllegalTransition);
}

TEST(Env, RejectsMalformedChunks) {
    GridEnv env(eight_task_suite());
    env.reset(0, 5);
    EXPECT_THROW(env.step(ActionChunk{}), DomainError);
    EXPECT_THROW(env.step(ActionChunk{{0, 0, 0, 0, 0}}), DomainError);
    EXPECT_THROW(env.step(ActionChunk{{7}}), DomainError);
}

TEST(Env, PropertyDeterminismAndBinaryReturn) {
    const auto cfg = eight_task_suite();
    Rng rng = make_rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        const int task = static_cast<int>(uniform_index(rng, 8));
        const std::uint64_t seed = rng();
        std::vector<ActionChunk> chunks;
        for (int t = 0; t < cfg.horizon; ++t) {
            ActionChunk c;
            for (int k = 0; k < 4; ++k) c.tokens.push_back(static_cast<int>(uniform_index(rng, kNumPrimitiveActions)));
            chunks.push_back(c);
        }
        GridEnv a(cfg), b(cfg);
        ASSERT_EQ(a.reset(task, seed), b.reset(task, seed));
        double total = 0.0;
        for (const auto& c : chunks) {
            const auto ra = a.step(c);
            const auto rb = b.step(c);
            ASSERT_EQ(ra.obs, rb.obs);
            ASSERT_EQ(ra.reward, rb.reward);
            ASSERT_EQ(ra.done, rb.done);
            ASSERT_EQ(ra.wall_delay, rb.wall_delay);
            if (ra.reward != 0.0) EXPECT_TRUE(ra.done);
            total += ra.reward;
            if (ra.done) break;
        }
        EXPECT_TRUE(total == 0.0 || total == 1.0);
    }
}

TEST(Env, EveryGeneratedInstanceIsSolvable) {
    const auto cfg = eight_task_suite();
    for (int task = 0; task < cfg.num_tasks; ++task) {
        for (std::uint64_t seed = 0; seed < 25; ++seed) {
            const Layout l = generate_layout(cfg, task, seed);
            EXPECT_TRUE(shortest_solution(cfg, l, false, cfg.horizon * cfg.chunk_len).has_value());
        }
    }
}

TEST(Latency, Constant) {
    LatencyModel m;
    m.kind = LatencyKind::constant;
    m.constant_ms = 5.0;
    Rng rng = make_rng(1);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_latency(m, rng), from_ms(5.0));
}

TEST(Latency, LognormalMedian) {
    LatencyModel m;
    m.kind = LatencyKind::lognormal;
    m.lognormal_mu = std::log(5.0);
    m.lognormal_sigma = 1.0;
    Rng rng = make_rng(2);
    std::vector<double> d;
    for (int i = 0; i < 10000; ++i) {
        const Duration x = sample_latency(m, rng);
        ASSERT_GE(x.count(), 0);
        d.push_back(to_ms(x));
    }
    std::nth_element(d.begin(), d.begin() + 5000, d.end());
    EXPECT_NEAR(d[5000], 5.0, 1.0);  // analytic median exp(mu) = 5 ms, 20% band
}

TEST(Latency, BimodalStragglerFraction) {
    LatencyModel m;
    m.kind = LatencyKind::bimodal;
    m.fast_ms = 2.0;
    m.slow_ms = 200.0;
    m.p_straggler = 0.1;
    Rng rng = make_rng(3);
    int slow = 0;
    for (int i = 0; i < 10000; ++i) {
        const Duration x = sample_latency(m, rng);
        ASSERT_TRUE(x == from_ms(2.0) || x == from_ms(200.0));
        slow += x == from_ms(200.0);
    }
    // binomial sd = sqrt(0.1 * 0.9 / 1e4) = 0.003; the band is > 6 sd
    EXPECT_NEAR(slow / 10000.0, 0.1, 0.02);
}

TEST(Latency, NegativeParametersRejected) {
    LatencyModel m;
    m.constant_ms = -1.0;
    Rng rng = make_rng(4);
    EXPECT_THROW(sample_latency(m, rng), ConfigError);
    m.constant_ms = 1.0;
    m.p_straggler = 1.5;
    EXPECT_THROW(m.validate(), ConfigError);
}

TEST(Latency, WorkerScaleMultiplies) {
    auto cfg = eight_task_suite();
    cfg.latency.constant_ms = 2.0;
    GridEnv env(cfg, 3.0);
    env.reset(0, 0);
    EXPECT_EQ(env.step(ActionChunk{{kNoop}}).wall_delay, from_ms(6.0));
}
