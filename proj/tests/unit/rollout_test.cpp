#include <gtest/gtest.h>

#include <map>
#include <set>

#include "arl/error.hpp"
#include "arl/rollout.hpp"
#include "test_support.hpp"

using namespace arl;
using namespace arl::testing;

TEST(TaskStats, WeightsFollowFailureCounts) {
    TaskStats s(2, 50, 1.0);
    for (int i = 0; i < 3; ++i) s.record_outcome(0, false);
    s.record_outcome(1, false);
    s.record_outcome(1, true);
    EXPECT_EQ(s.weights(), (Vec{4.0, 2.0}));
    const Vec p = s.probabilities();
    EXPECT_DOUBLE_EQ(p[0], 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(p[1], 1.0 / 3.0);
}

TEST(TaskStats, AllSucceededIsUniform) {
    TaskStats s(3, 50, 1.0);
    for (int t = 0; t < 3; ++t) {
        for (int i = 0; i < 5; ++i) s.record_outcome(t, true);
    }
    for (double x : s.probabilities()) EXPECT_DOUBLE_EQ(x, 1.0 / 3.0);
}

TEST(TaskStats, EvictionKeepsWindow) {
    TaskStats s(1, 2, 1.0);
    s.record_outcome(0, false);
    s.record_outcome(0, false);
    s.record_outcome(0, true);
    EXPECT_EQ(s.window(0), (std::deque<bool>{false, true}));
    EXPECT_EQ(s.failures(0), 1u);
}

TEST(TaskStats, SuccessLowersWeightByOneUnlessFailureEvicted) {
    TaskStats s(1, 4, 1.0);
    Rng rng = make_rng(31);
    for (int i = 0; i < 200; ++i) {
        const double before = s.weights()[0];
        const bool evicts_failure = s.window(0).size() == 4 && !s.window(0).front();
        const bool success = uniform01(rng) < 0.5;
        s.record_outcome(0, success);
        const double after = s.weights()[0];
        if (success) {
            EXPECT_DOUBLE_EQ(after, before - (evicts_failure ? 1.0 : 0.0));
        } else {
            EXPECT_DOUBLE_EQ(after, before + (evicts_failure ? 0.0 : 1.0));
        }
        std::size_t f = 0;
        for (bool x : s.window(0)) f += !x;
        EXPECT_EQ(s.failures(0), f);
    }
}

TEST(TaskStats, SmoothingFloor) {
    TaskStats s(2, 10, 0.01);
    for (int i = 0; i < 10; ++i) {
        s.record_outcome(0, true);
        s.record_outcome(1, false);
    }
    EXPECT_DOUBLE_EQ(s.weights()[0], 0.01);
    const Vec p = s.probabilities();
    EXPECT_GT(p[0], 0.0);
    EXPECT_DOUBLE_EQ(p[0] + p[1], 1.0);
}

TEST(TaskStats, Errors) {
    EXPECT_THROW(TaskStats(0, 10, 1.0), ConfigError);
    EXPECT_THROW(TaskStats(2, 10, 0.0), ConfigError);
    TaskStats s(2, 10, 1.0);
    EXPECT_THROW(s.record_outcome(2, true), DomainError);
    EXPECT_THROW(s.record_outcome(-1, true), DomainError);
}

TEST(TaskStats, EmpiricalFrequencies) {
    TaskStats s(3, 50, 1.0);
    for (int i = 0; i < 7; ++i) s.record_outcome(0, false);
    for (int i = 0; i < 2; ++i) s.record_outcome(1, false);
    s.record_outcome(2, true);
    const Vec p = s.probabilities();
    Rng rng = make_rng(32);
    std::vector<int> counts(3, 0);
    constexpr int kDraws = 100000;
    for (int i = 0; i < kDraws; ++i) ++counts[static_cast<std::size_t>(s.select_task(rng))];
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(counts[i] / static_cast<double>(kDraws), p[i], 0.01);
}

TEST(ImaginedReward, Telescoping) {
    const Vec p{0.1, 0.5, 0.9};
    const double r0 = imagined_reward(p[1], p[0]), r1 = imagined_reward(p[2], p[1]);
    EXPECT_NEAR(r0, 0.4, 1e-15);
    EXPECT_NEAR(r1, 0.4, 1e-15);
    EXPECT_NEAR(r0 + r1, 0.8, 1e-15);
    EXPECT_EQ(imagined_reward(0.3, 0.3), 0.0);
    const double q0 = quantize_potential(0.1), q1 = quantize_potential(0.5), q2 = quantize_potential(0.9);
    EXPECT_EQ(imagined_reward(q1, q0) + imagined_reward(q2, q1), q2 - q0);
}

TEST(EpisodeBuffer, StoresNonTerminalRealFramesOldestFirst) {
    const ModelConfig mc = micro_model();
    Rng rng = make_rng(33);
    const ParamSet p = make_policy_params(mc, rng);
    EpisodeBuffer eb(5);
    const auto a = synthetic_trajectory(mc, p, 3, rng);
    eb.add_episode(*a);
    EXPECT_EQ(eb.size(), 3u);
    const auto b = synthetic_trajectory(mc, p, 3, rng);
    eb.add_episode(*b);
    EXPECT_EQ(eb.size(), 5u);
    EXPECT_THROW(eb.add_episode(*synthetic_trajectory(mc, p, 2, rng, Source::imagined)), DomainError);
    Rng r2 = make_rng(34);
    for (int i = 0; i < 200; ++i) {
        const auto o = eb.sample(r2);
        ASSERT_TRUE(o.has_value());
        EXPECT_LT(o->step, 3);
        bool from_b = false;
        for (std::size_t s = 0; s < 3; ++s) from_b |= *o == b->observations[s];
        EXPECT_TRUE(from_b || *o == a->observations[1] || *o == a->observations[2]);
    }
}

namespace {

// Grid the suite uses for scripted episodes: with no object spread the
// layout is fixed at the task anchor, agent (1,1), object (2,2), goal (4,1).
SuiteConfig scripted_suite() {
    SuiteConfig s;
    s.grid_size = 6;
    s.num_tasks = 1;
    s.horizon = 4;
    s.chunk_len = 6;
    s.object_spread = 0;
    s.latency.kind = LatencyKind::constant;
    s.latency.constant_ms = 2.0;
    return s;
}

ModelConfig model_for(const SuiteConfig& s, std::size_t h_img) {
    ModelConfig m;
    m.obs_dim = s.obs_dim();
    m.n_actions = kNumPrimitiveActions;
    m.chunk_len = s.chunk_len;
    m.max_step = s.horizon + static_cast<int>(h_img) + 1;
    m.trunk_width = 12;
    m.slot_width = 6;
    m.value_hidden = 6;
    m.vocab_size = 16;
    m.obs_model_hidden = 16;
    m.reward_hidden = 6;
    return m;
}

// Emits tokens[k] at chunk position k regardless of the observation.
ParamSet scripted_policy(const ModelConfig& mc, const std::vector<int>& tokens) {
    Rng rng = make_rng(0);
    ParamSet p = make_policy_params(mc, rng);
    p.fill(0.0);
    Tensor& sb = p.at("pi.slots.b");
    Tensor& hw = p.at("pi.head.w");
    const auto D = static_cast<std::size_t>(mc.slot_width);
    for (std::size_t k = 0; k < tokens.size(); ++k) {
        sb.data[k * D + k] = 10.0;
        hw(static_cast<std::size_t>(tokens[k]), k) = 60.0;
    }
    return p;
}

struct Rig {
    SuiteConfig suite;
    RolloutConfig cfg;
    ModelConfig mc;
    std::unique_ptr<Runtime> rt = make_virtual_runtime();
    InferenceService svc;
    ReplayBuffer main{*rt, BufferKind::main, 512};
    ReplayBuffer wm{*rt, BufferKind::world_model, 512};
    ReplayBuffer img{*rt, BufferKind::imagined, 4096};
    TaskStats stats;
    RolloutCounters counters;
    RolloutContext ctx;

    static InferenceService::Config service_cfg() {
        InferenceService::Config c;
        for (auto& w : c.window) w = BatchWindowConfig{4, from_ms(1.0)};
        c.seed = 5;
        return c;
    }

    Rig(SuiteConfig s, RolloutConfig c)
        : suite(std::move(s)),
          cfg(std::move(c)),
          mc(model_for(suite, cfg.h_img)),
          svc(*rt, mc, service_cfg()),
          stats(suite.num_tasks, cfg.h_dwr, cfg.dwr_epsilon),
          ctx{*rt, svc, &main, &wm, &img, stats, counters, suite, cfg, {}, {}} {
        svc.start();
    }
    ~Rig() {
        svc.shutdown();
        rt->join_all();
    }
    void publish(ModelKind k, ParamSet p, std::uint64_t v) { svc.update_weights(k, versioned(std::move(p), v)); }
};

RolloutConfig rollout_cfg() {
    RolloutConfig c;
    c.num_workers = 1;
    c.h_img = 5;
    c.episode_deadline = from_ms(500.0);
    return c;
}

}  // namespace

TEST(Worker, OneStepSuccessEpisode) {
    Rig rig(scripted_suite(), rollout_cfg());
    rig.publish(ModelKind::policy, scripted_policy(rig.mc, {kDown, kRight, kGrasp, kDown, kLeft, kDown}), 1);
    Worker w(rig.ctx, 0, 1);
    const auto t = w.collect_real_episode(0);
    ASSERT_TRUE(t.has_value());
    const Trajectory& tr = **t;
    EXPECT_EQ(tr.length(), 1u);
    EXPECT_TRUE(tr.done);
    EXPECT_TRUE(tr.success);
    EXPECT_DOUBLE_EQ(tr.total_reward(), 1.0);
    EXPECT_EQ(tr.behavior_version, 1u);
    EXPECT_EQ(rig.main.size(), 1u);
    EXPECT_EQ(rig.wm.size(), 1u);
    EXPECT_EQ(rig.img.size(), 0u);
    EXPECT_EQ(rig.stats.window(0), (std::deque<bool>{true}));
    EXPECT_EQ(w.episode_buffer().size(), 1u);
    EXPECT_EQ(rig.counters.env_steps, 1u);
    EXPECT_EQ(rig.counters.env_time, from_ms(2.0));
}

TEST(Worker, HorizonExhaustedEpisode) {
    Rig rig(scripted_suite(), rollout_cfg());
    rig.publish(ModelKind::policy, scripted_policy(rig.mc, {kNoop, kNoop, kNoop, kNoop, kNoop, kNoop}), 1);
    Worker w(rig.ctx, 0, 2);
    const auto t = w.collect_real_episode(0);
    ASSERT_TRUE(t.has_value());
    EXPECT_EQ((*t)->length(), 4u);
    EXPECT_TRUE((*t)->done);
    EXPECT_FALSE((*t)->success);
    EXPECT_DOUBLE_EQ((*t)->total_reward(), 0.0);
    EXPECT_EQ(rig.stats.failures(0), 1u);
}

TEST(Worker, StoredBehaviourReproducesServedVersion) {
    SuiteConfig s = scripted_suite();
    s.object_spread = 1;
    s.horizon = 8;
    Rig rig(s, rollout_cfg());
    std::map<std::uint64_t, ParamSet> versions;
    Rng rng = make_rng(35);
    ParamSet p = make_policy_params(rig.mc, rng);
    versions[1] = p;
    rig.publish(ModelKind::policy, p, 1);
    rig.rt->spawn("publisher", [&] {
        for (std::uint64_t v = 2; v <= 12; ++v) {
            rig.rt->sleep_for(from_ms(3.0));
            perturb(p, rng, 0.05);
            {
                Lock lk = rig.rt->lock();
                versions[v] = p;
            }
            rig.publish(ModelKind::policy, p, v);
        }
    });
    Worker w(rig.ctx, 0, 3);
    std::vector<TrajectoryPtr> trajs;
    for (int e = 0; e < 4; ++e) {
        if (auto t = w.collect_real_episode(0)) trajs.push_back(*t);
    }
    ASSERT_EQ(trajs.size(), 4u);
    std::set<std::uint64_t> seen;
    for (const auto& t : trajs) {
        for (std::size_t i = 0; i < t->length(); ++i) {
            const ParamSet& frozen = versions.at(t->step_versions[i]);
            seen.insert(t->step_versions[i]);
            const Observation& o = t->observations[i];
            const PolicyTrace tr = policy_trace(frozen, rig.mc, o.pixels, t->actions[i].tokens);
            for (std::size_t k = 0; k < t->actions[i].tokens.size(); ++k) {
                const int tok = t->actions[i].tokens[k];
                EXPECT_NEAR(tr.logp[k][static_cast<std::size_t>(tok)], behavior_log_prob(t->behavior_logits[i][k], tok),
                            1e-9);
            }
            EXPECT_NEAR(t->values[i], critic_value(frozen, rig.mc, o.pixels, o.step), 1e-9);
            if (i > 0) EXPECT_LE(t->step_versions[i - 1], t->step_versions[i]);
        }
    }
    EXPECT_GT(seen.size(), 1u);
}

TEST(Worker, InferenceDeadlineDiscardsEpisode) {
    RolloutConfig c = rollout_cfg();
    c.episode_deadline = from_ms(20.0);
    Rig rig(scripted_suite(), c);
    Worker w(rig.ctx, 0, 4);  // no policy weights published: requests never run
    EXPECT_FALSE(w.collect_real_episode(0).has_value());
    EXPECT_EQ(rig.counters.aborted_episodes, 1u);
    EXPECT_EQ(rig.main.size(), 0u);
    EXPECT_EQ(rig.wm.size(), 0u);
    EXPECT_TRUE(rig.stats.window(0).empty());
}

namespace {

ParamSet constant_reward_model(const ModelConfig& mc, double logit) {
    Rng rng = make_rng(0);
    ParamSet p = make_reward_model_params(mc, rng);
    p.fill(0.0);
    p.at("wm.rew.l1.b").data[0] = logit;
    return p;
}

}  // namespace

TEST(Worker, ImaginationLengthAndZeroRewardForConstantPotential) {
    Rig rig(scripted_suite(), rollout_cfg());
    Rng rng = make_rng(36);
    rig.publish(ModelKind::policy, make_policy_params(rig.mc, rng), 1);
    rig.publish(ModelKind::observation, make_obs_model_params(rig.mc, rng), 1);
    rig.publish(ModelKind::reward, constant_reward_model(rig.mc, -4.0), 1);
    Worker w(rig.ctx, 0, 5);
    EXPECT_FALSE(w.imagine_episode().has_value());  // no start frame yet
    GridEnv env(rig.suite);
    const Observation start = env.reset(0, 1);
    const auto t = w.imagine_episode(start);
    ASSERT_TRUE(t.has_value());
    EXPECT_EQ((*t)->length(), 5u);
    EXPECT_EQ((*t)->observations.size(), 6u);
    EXPECT_FALSE((*t)->done);
    EXPECT_EQ((*t)->source, Source::imagined);
    for (double r : (*t)->rewards) EXPECT_EQ(r, 0.0);
    EXPECT_EQ(rig.img.size(), 1u);
    EXPECT_EQ(rig.main.size(), 0u);
    EXPECT_EQ((*t)->observations.back().step, 5);
}

TEST(Worker, ImaginationStopsOnPredictedSuccess) {
    Rig rig(scripted_suite(), rollout_cfg());
    Rng rng = make_rng(37);
    rig.publish(ModelKind::policy, make_policy_params(rig.mc, rng), 1);
    rig.publish(ModelKind::observation, make_obs_model_params(rig.mc, rng), 1);
    rig.publish(ModelKind::reward, constant_reward_model(rig.mc, 4.0), 1);
    Worker w(rig.ctx, 0, 6);
    GridEnv env(rig.suite);
    const auto t = w.imagine_episode(env.reset(0, 1));
    ASSERT_TRUE(t.has_value());
    EXPECT_EQ((*t)->length(), 1u);
    EXPECT_TRUE((*t)->done);
    EXPECT_TRUE((*t)->success);
}

TEST(Worker, ImaginedRewardsTelescopeExactly) {
    Rig rig(scripted_suite(), rollout_cfg());
    Rng rng = make_rng(38);
    rig.publish(ModelKind::policy, make_policy_params(rig.mc, rng), 1);
    ParamSet om = make_obs_model_params(rig.mc, rng);
    perturb(om, rng, 0.3);
    rig.publish(ModelKind::observation, om, 1);
    ParamSet rm = make_reward_model_params(rig.mc, rng);
    perturb(rm, rng, 0.5);
    rig.publish(ModelKind::reward, rm, 1);
    Worker w(rig.ctx, 0, 7);
    GridEnv env(rig.suite);
    for (int e = 0; e < 30; ++e) {
        const auto t = w.imagine_episode(env.reset(0, static_cast<std::uint64_t>(e)));
        ASSERT_TRUE(t.has_value());
        const Trajectory& tr = **t;
        EXPECT_EQ(tr.total_reward(), tr.potentials.back() - tr.potentials.front());
        for (std::size_t i = 0; i < tr.length(); ++i) {
            EXPECT_EQ(tr.rewards[i], tr.potentials[i + 1] - tr.potentials[i]);
        }
        EXPECT_LE(tr.length(), 5u);
    }
    EXPECT_EQ(rig.counters.max_telescoping_error, 0.0);
}

TEST(Worker, NonFiniteModelOutputDiscardsImagination) {
    Rig rig(scripted_suite(), rollout_cfg());
    Rng rng = make_rng(39);
    rig.publish(ModelKind::policy, make_policy_params(rig.mc, rng), 1);
    ParamSet om = make_obs_model_params(rig.mc, rng);
    om.at("wm.obs.l0.b").data[0] = std::nan("");
    rig.publish(ModelKind::observation, om, 1);
    rig.publish(ModelKind::reward, make_reward_model_params(rig.mc, rng), 1);
    Worker w(rig.ctx, 0, 8);
    GridEnv env(rig.suite);
    EXPECT_FALSE(w.imagine_episode(env.reset(0, 1)).has_value());
    EXPECT_EQ(rig.counters.discarded_imagined, 1u);
    EXPECT_EQ(rig.img.size(), 0u);
}

TEST(Worker, AlternatingScheduleRatio) {
    SuiteConfig s = scripted_suite();
    s.object_spread = 1;
    RolloutConfig c = rollout_cfg();
    c.n_imagined_per_real = 10;
    Rig rig(s, c);
    Rng rng = make_rng(40);
    rig.publish(ModelKind::policy, make_policy_params(rig.mc, rng), 1);
    rig.publish(ModelKind::observation, make_obs_model_params(rig.mc, rng), 1);
    rig.publish(ModelKind::reward, make_reward_model_params(rig.mc, rng), 1);
    rig.ctx.stop = [&] { return rig.counters.real_episodes >= 30; };
    std::vector<std::unique_ptr<Worker>> workers;
    for (std::size_t i = 0; i < 2; ++i) {
        workers.push_back(std::make_unique<Worker>(rig.ctx, i, 40 + i));
        rig.rt->spawn("worker" + std::to_string(i), [w = workers.back().get()] { w->run(); });
    }
    {
        Lock lk = rig.rt->lock();
        rig.rt->wait_until(lk, [&] { return rig.counters.real_episodes >= 30; });
    }
    rig.svc.shutdown();
    rig.rt->join_all();
    const double ratio = static_cast<double>(rig.counters.imagined_episodes) / rig.counters.real_episodes;
    EXPECT_GE(ratio, 9.0);
    EXPECT_LE(ratio, 10.0);
    EXPECT_EQ(rig.img.counters().pushed, rig.counters.imagined_episodes);
}

TEST(Worker, HeterogeneousWorkersBothProgress) {
    SuiteConfig s = scripted_suite();
    s.object_spread = 1;
    RolloutConfig c = rollout_cfg();
    c.latency_scales = {1.0, 8.0};
    Rig rig(s, c);
    rig.publish(ModelKind::policy, scripted_policy(rig.mc, {kNoop, kNoop, kNoop, kNoop, kNoop, kNoop}), 1);
    rig.ctx.stop = [&] { return rig.rt->now() >= from_ms(1000.0); };
    std::vector<std::unique_ptr<Worker>> workers;
    for (std::size_t i = 0; i < 2; ++i) {
        workers.push_back(std::make_unique<Worker>(rig.ctx, i, 50 + i));
        rig.rt->spawn("worker" + std::to_string(i), [w = workers.back().get()] { w->run(); });
    }
    rig.rt->sleep_for(from_ms(1200.0));
    rig.svc.shutdown();
    rig.rt->join_all();
    ASSERT_EQ(rig.counters.worker_episodes.size(), 2u);
    EXPECT_GT(rig.counters.worker_episodes[1], 0u);
    // the fast worker is never held back by the slow one
    EXPECT_GT(rig.counters.worker_episodes[0], 3 * rig.counters.worker_episodes[1]);
}
