#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "arl/losses.hpp"
#include "test_support.hpp"

using namespace arl;
using arl::testing::micro_model;
using arl::testing::perturb;
using arl::testing::random_batch;

namespace {

struct Fixture {
    ModelConfig mc = micro_model();
    ParamSet behavior;
    ParamSet current;
    SuperBatch batch;

    explicit Fixture(std::uint64_t seed, double lag = 0.1, std::size_t rows = 6) {
        Rng rng = make_rng(seed);
        behavior = make_policy_params(mc, rng);
        batch = random_batch(mc, behavior, rows, rng);
        current = behavior;
        perturb(current, rng, lag);
    }
};

}  // namespace

TEST(GipoWeight, KnownValues) {
    EXPECT_EQ(gipo_weight(1.0, 0.3), 1.0);
    EXPECT_NEAR(gipo_weight(std::exp(0.3), 0.3), std::exp(-0.5), 1e-12);
    EXPECT_NEAR(gipo_weight(std::exp(-0.6), 0.3), std::exp(-2.0), 1e-12);
}

TEST(GipoWeight, LogSymmetricAndMonotone) {
    Rng rng = make_rng(8);
    for (int i = 0; i < 10000; ++i) {
        const double rho = std::exp((uniform01(rng) - 0.5) * 8.0);
        const double w = gipo_weight(rho, 0.5);
        EXPECT_NEAR(w, gipo_weight(1.0 / rho, 0.5), 1e-12);
        EXPECT_GT(w, 0.0 - 1e-300);
        EXPECT_LE(w, 1.0);
    }
    double prev = 1.0;
    for (double rho = 1.0; rho < 20.0; rho *= 1.3) {
        const double w = gipo_weight(rho, 0.3);
        EXPECT_LE(w, prev);
        prev = w;
    }
}

TEST(GipoWeight, NonPositiveRatioIsError) {
    EXPECT_THROW(gipo_weight(0.0, 0.3), DomainError);
    EXPECT_THROW(gipo_weight(-1.0, 0.3), DomainError);
    EXPECT_THROW(gipo_weight(1.0, 0.0), DomainError);
}

TEST(Ratios, TokenProductEqualsChunkRatio) {
    const Vec nw{std::log(0.5), std::log(0.5)};
    const Vec old{std::log(0.25), std::log(0.5)};
    const Vec r = token_ratios(nw, old);
    EXPECT_NEAR(r[0], 2.0, 1e-15);
    EXPECT_NEAR(r[1], 1.0, 1e-15);
    EXPECT_NEAR(chunk_ratio(nw, old), 2.0, 1e-15);
}

TEST(Ratios, JointRatioShrinksGeometrically) {
    const Vec nw(8, std::log(0.9 * 0.5));
    const Vec old(8, std::log(0.5));
    for (double r : token_ratios(nw, old)) EXPECT_NEAR(r, 0.9, 1e-12);
    EXPECT_NEAR(chunk_ratio(nw, old), std::pow(0.9, 8), 1e-12);
    EXPECT_NEAR(chunk_ratio(nw, old), 0.4305, 1e-4);
}

TEST(Ratios, PropertyProductIdentity) {
    Rng rng = make_rng(9);
    std::normal_distribution<double> nd(0.0, 0.3);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t K = 1 + uniform_index(rng, 8);
        Vec nw(K), old(K);
        for (std::size_t k = 0; k < K; ++k) {
            old[k] = std::log(0.05 + 0.9 * uniform01(rng));
            nw[k] = old[k] + nd(rng);
        }
        double prod = 1.0;
        for (double r : token_ratios(nw, old)) prod *= r;
        EXPECT_NEAR(prod, chunk_ratio(nw, old), 1e-9);
    }
}

TEST(Loss, OnPolicyRatiosAreOne) {
    Fixture f(20, 0.0);
    LossConfig cfg;
    const LossResult r = compute_loss(f.behavior, f.mc, f.batch, cfg);
    EXPECT_NEAR(r.diag.mean_ratio, 1.0, 1e-12);
    EXPECT_NEAR(r.diag.max_ratio, 1.0, 1e-12);
    EXPECT_NEAR(r.diag.mean_trust_weight, 1.0, 1e-12);
    EXPECT_EQ(r.diag.clip_fraction, 0.0);
}

TEST(Loss, OnPolicyGipoGradientIsVanillaPolicyGradient) {
    Fixture f(21, 0.0);
    LossConfig cfg;
    const LossResult r = policy_loss(f.behavior, f.mc, f.batch, cfg);
    // surrogate -mean_tokens[A * log pi(a)], differenced numerically
    auto surrogate = [&](const ParamSet& q) {
        double s = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < f.batch.rows; ++i) {
            const auto toks = f.batch.token_row(i);
            const PolicyTrace tr = policy_trace(q, f.mc, f.batch.obs_row(i), toks);
            for (std::size_t k = 0; k < toks.size(); ++k) {
                s -= f.batch.advantages[i] * tr.logp[k][static_cast<std::size_t>(toks[k])];
                ++n;
            }
        }
        return s / static_cast<double>(n);
    };
    EXPECT_LT(finite_diff_check(surrogate, f.behavior, r.grads, 1e-6), 1e-4);
}

TEST(Loss, GipoFullObjectiveMatchesFiniteDifferences) {
    for (std::uint64_t seed : {30u, 31u, 32u}) {
        Fixture f(seed, 0.15);
        LossConfig cfg;
        cfg.entropy_coef = 0.05;
        const Vec w = token_trust_weights(f.current, f.mc, f.batch, cfg);
        const Vec h = value_head_inputs(f.current, f.mc, f.batch);
        LossTerms frozen;
        frozen.frozen_trust = &w;
        frozen.frozen_value_inputs = &h;
        const LossResult live = compute_loss(f.current, f.mc, f.batch, cfg);
        const LossResult fixed = compute_loss(f.current, f.mc, f.batch, cfg, frozen);
        EXPECT_EQ(live.loss, fixed.loss);
        EXPECT_EQ(live.grads, fixed.grads);
        auto loss = [&](const ParamSet& q) { return compute_loss(q, f.mc, f.batch, cfg, frozen).loss; };
        EXPECT_LT(finite_diff_check(loss, f.current, live.grads, 1e-6), 1e-4) << "seed " << seed;
    }
}

TEST(Loss, PpoFullObjectiveMatchesFiniteDifferences) {
    for (std::uint64_t seed : {40u, 41u}) {
        Fixture f(seed, 0.1);
        LossConfig cfg;
        cfg.algorithm = Algorithm::ppo;
        const Vec h = value_head_inputs(f.current, f.mc, f.batch);
        LossTerms frozen;
        frozen.frozen_value_inputs = &h;
        auto loss = [&](const ParamSet& q) { return compute_loss(q, f.mc, f.batch, cfg, frozen).loss; };
        const LossResult r = compute_loss(f.current, f.mc, f.batch, cfg);
        EXPECT_LT(finite_diff_check(loss, f.current, r.grads, 1e-6), 1e-4) << "seed " << seed;
    }
}

TEST(Loss, PpoClippedTokensCarryNoGradient) {
    Fixture f(42, 0.0, 4);
    LossConfig cfg;
    cfg.algorithm = Algorithm::ppo;
    // every ratio is e > 1 + clip with positive advantage: the flat branch
    for (double& lp : f.batch.behavior_logp) lp -= 1.0;
    for (double& a : f.batch.advantages) a = std::abs(a) + 0.1;
    const LossResult r = policy_loss(f.current, f.mc, f.batch, cfg);
    EXPECT_EQ(r.diag.clip_fraction, 1.0);
    for (std::size_t i = 0; i < r.grads.num_scalars(); ++i) ASSERT_EQ(r.grads.flat(i), 0.0);
    // negative advantage keeps the unclipped branch and its gradient
    for (double& a : f.batch.advantages) a = -a;
    const LossResult neg = policy_loss(f.current, f.mc, f.batch, cfg);
    double norm = 0.0;
    for (std::size_t i = 0; i < neg.grads.num_scalars(); ++i) norm += std::abs(neg.grads.flat(i));
    EXPECT_GT(norm, 0.0);
}

TEST(Loss, ZeroCoefficientsGivePolicyLoss) {
    Fixture f(50);
    LossConfig cfg;
    cfg.value_coef = 0.0;
    cfg.entropy_coef = 0.0;
    const LossResult all = compute_loss(f.current, f.mc, f.batch, cfg);
    const LossResult pol = policy_loss(f.current, f.mc, f.batch, cfg);
    EXPECT_DOUBLE_EQ(all.loss, pol.loss);
    EXPECT_DOUBLE_EQ(all.diag.total, all.diag.policy_loss);
    EXPECT_DOUBLE_EQ(total_loss(0.7, 3.0, 2.0, cfg), 0.7);
}

TEST(Loss, UniformPolicyEntropyIsLogN) {
    Fixture f(51);
    ParamSet zero = f.current;
    zero.fill(0.0);
    LossConfig cfg;
    const LossResult r = compute_loss(zero, f.mc, f.batch, cfg);
    EXPECT_NEAR(r.diag.entropy, std::log(4.0), 1e-12);
}

TEST(Loss, ValueGradientDoesNotReachPolicy) {
    Fixture f(52);
    LossConfig cfg;
    const LossResult r = compute_loss(f.current, f.mc, f.batch, cfg, LossTerms{false, true, false});
    bool any_value = false;
    for (std::size_t t = 0; t < r.grads.size(); ++t) {
        const bool is_value = r.grads.name(t).starts_with("v.");
        for (double g : r.grads.tensor(t).data) {
            if (!is_value) ASSERT_EQ(g, 0.0) << r.grads.name(t);
            any_value |= is_value && g != 0.0;
        }
    }
    EXPECT_TRUE(any_value);
}

TEST(Loss, NonFiniteTokensExcludedAndAllBadDropsBatch) {
    Fixture f(53);
    LossConfig cfg;
    f.batch.behavior_logp[0] = -std::numeric_limits<double>::infinity();
    const LossResult r = compute_loss(f.current, f.mc, f.batch, cfg);
    EXPECT_EQ(r.diag.excluded_tokens, 1u);
    EXPECT_TRUE(std::isfinite(r.loss));
    for (double& lp : f.batch.behavior_logp) lp = std::nan("");
    EXPECT_THROW(compute_loss(f.current, f.mc, f.batch, cfg), BatchDropped);
}

TEST(Loss, ConfigValidation) {
    LossConfig c;
    c.sigma = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_EQ(parse_algorithm("ppo"), Algorithm::ppo);
    EXPECT_THROW(parse_algorithm("trpo"), ConfigError);
}
