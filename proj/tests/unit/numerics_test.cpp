#include <gtest/gtest.h>

#include <cmath>

#include "arl/numerics.hpp"

using namespace arl;

namespace {

ParamSet random_mlp(std::uint64_t seed, std::vector<std::size_t> widths) {
    Rng rng = make_rng(seed);
    ParamSet p;
    init_mlp(p, MlpLayout{"", std::move(widths)}, rng);
    std::normal_distribution<double> nd;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p.name(i).ends_with(".b")) {
            for (double& v : p.tensor(i).data) v = nd(rng) * 0.3;
        }
    }
    return p;
}

}  // namespace

TEST(Mlp, ZeroWeightsGiveZeroOutput) {
    Rng rng = make_rng(1);
    ParamSet p;
    init_mlp(p, MlpLayout{"", {3, 5, 2}}, rng);
    p.fill(0.0);
    const Vec x{0.3, -2.0, 7.0};
    const auto out = mlp_forward(p, x);
    ASSERT_EQ(out.output.size(), 2u);
    EXPECT_EQ(out.output[0], 0.0);
    EXPECT_EQ(out.output[1], 0.0);
}

TEST(Mlp, IdentitySingleLayer) {
    ParamSet p;
    Tensor& w = p.add("l0.w", 3, 3);
    p.add("l0.b", 3, 1);
    for (std::size_t i = 0; i < 3; ++i) w(i, i) = 1.0;
    const Vec x{1.5, -0.25, 4.0};
    const auto out = mlp_forward(p, x);
    EXPECT_EQ(out.output, x);
    EXPECT_TRUE(out.hidden.empty());
}

TEST(Mlp, TwoLayerMatchesMatrixProductOracle) {
    const ParamSet p = random_mlp(7, {2, 4, 3});
    const Vec x{1.0, 0.0};
    // oracle: explicit loops, written independently of affine()
    const Tensor& w0 = p.at("l0.w");
    const Tensor& b0 = p.at("l0.b");
    const Tensor& w1 = p.at("l1.w");
    const Tensor& b1 = p.at("l1.b");
    Vec h(4);
    for (int i = 0; i < 4; ++i) h[i] = std::tanh(w0(i, 0) * x[0] + w0(i, 1) * x[1] + b0.data[i]);
    Vec y(3);
    for (int i = 0; i < 3; ++i) {
        y[i] = b1.data[i];
        for (int j = 0; j < 4; ++j) y[i] += w1(i, j) * h[j];
    }
    const auto out = mlp_forward(p, x);
    ASSERT_EQ(out.hidden.size(), 1u);
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(out.hidden[0][i], h[i], 1e-12);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(out.output[i], y[i], 1e-12);
}

TEST(Mlp, ShapeMismatchNamesLayer) {
    const ParamSet p = random_mlp(3, {2, 4, 3});
    const Vec x{1.0, 2.0, 3.0};
    try {
        mlp_forward(p, x);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("l0.w"), std::string::npos);
    }
}

TEST(Mlp, BackwardMatchesFiniteDifferences) {
    const ParamSet p = random_mlp(11, {3, 5, 4, 2});
    const Vec x{0.2, -0.7, 1.1};
    const Vec target{0.5, -1.0};
    auto loss = [&](const ParamSet& q) {
        const auto r = mlp_forward(q, x);
        double s = 0.0;
        for (int i = 0; i < 2; ++i) s += 0.5 * (r.output[i] - target[i]) * (r.output[i] - target[i]);
        return s;
    };
    const auto fwd = mlp_forward(p, x);
    Vec dout{fwd.output[0] - target[0], fwd.output[1] - target[1]};
    ParamSet g = p.zeros_like();
    mlp_backward(p, "", x, fwd, dout, g);
    EXPECT_LT(finite_diff_check(loss, p, g, 1e-6), 1e-4);
}

TEST(Softmax, Symmetric) {
    const auto p = softmax(Vec{0.0, 0.0});
    EXPECT_DOUBLE_EQ(p[0], 0.5);
    EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Softmax, ShiftInvariantConstant) {
    for (double c : {-1000.0, -3.0, 0.0, 17.5, 800.0}) {
        const auto p = softmax(Vec{c, c, c, c});
        for (double v : p) EXPECT_NEAR(v, 0.25, 1e-15);
    }
}

TEST(Softmax, MatchesDirectEvaluation) {
    const Vec z{1.0, 2.0, 3.0};
    const double s = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    const auto p = softmax(z);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[i], std::exp(z[i]) / s, 1e-12);
    const auto lp = log_softmax(z);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(lp[i], z[i] - std::log(s), 1e-12);
}

TEST(Softmax, EmptyIsDomainError) {
    EXPECT_THROW(softmax(Vec{}), DomainError);
    EXPECT_THROW(log_softmax(Vec{}), DomainError);
}

TEST(Softmax, PropertySumsToOneAndShiftInvariant) {
    Rng rng = make_rng(2024);
    std::normal_distribution<double> nd(0.0, 5.0);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t n = 1 + uniform_index(rng, 40);
        Vec z(n);
        for (double& v : z) v = nd(rng);
        const auto p = softmax(z);
        double s = 0.0;
        for (double v : p) {
            EXPECT_GE(v, 0.0);
            s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
        Vec shifted = z;
        const double c = nd(rng) * 10.0;
        for (double& v : shifted) v += c;
        const auto q = softmax(shifted);
        for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
    }
}

TEST(Softmax, LogSoftmaxAvoidsUnderflow) {
    const auto lp = log_softmax(Vec{0.0, -2000.0});
    EXPECT_TRUE(std::isfinite(lp[1]));
    EXPECT_NEAR(lp[1], -2000.0, 1e-9);
}

TEST(Adam, ZeroGradientLeavesParamsAndBumpsVersion) {
    ParamSet p;
    p.add("w", 2, 2, 0.7);
    p.set_version(5);
    AdamState st = AdamState::for_params(p);
    const ParamSet before = p;
    adam_step(p, p.zeros_like(), st);
    EXPECT_EQ(p.at("w"), before.at("w"));
    EXPECT_EQ(p.version(), 6u);
    EXPECT_EQ(st.step, 1u);
}

TEST(Adam, DescendsOnSquare) {
    ParamSet p;
    p.add("w", 1, 1, 1.0);
    AdamState st = AdamState::for_params(p, AdamConfig{0.1, 0.9, 0.999, 1e-8});
    ParamSet g = p.zeros_like();
    g.at("w").data[0] = 2.0 * p.at("w").data[0];
    adam_step(p, g, st);
    EXPECT_LT(p.at("w").data[0], 1.0);
}

TEST(Adam, MatchesHandUnrolledRecurrence) {
    // f(w) = 0.5 * a * (w - c)^2, gradient a * (w - c)
    const double a = 3.0, c = -0.4;
    Rng rng = make_rng(99);
    const double w0 = uniform01(rng) * 2.0 - 1.0;
    ParamSet p;
    p.add("w", 1, 1, w0);
    const AdamConfig cfg{0.05, 0.9, 0.999, 1e-8};
    AdamState st = AdamState::for_params(p, cfg);

    double w = w0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 3; ++t) {
        const double g = a * (w - c);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1.0 - std::pow(0.9, t));
        const double vh = v / (1.0 - std::pow(0.999, t));
        w = w - 0.05 * mh / (std::sqrt(vh) + 1e-8);

        ParamSet grad = p.zeros_like();
        grad.at("w").data[0] = a * (p.at("w").data[0] - c);
        adam_step(p, grad, st);
        EXPECT_NEAR(p.at("w").data[0], w, 1e-14) << "step " << t;
    }
    EXPECT_EQ(p.version(), 3u);
}

TEST(Adam, RejectsNonFiniteGradient) {
    ParamSet p;
    p.add("w", 1, 3, 1.0);
    AdamState st = AdamState::for_params(p);
    ParamSet g = p.zeros_like();
    g.at("w").data[1] = std::nan("");
    const ParamSet before = p;
    EXPECT_THROW(adam_step(p, g, st), NonFiniteError);
    EXPECT_EQ(p, before);
    EXPECT_EQ(st.step, 0u);
}

TEST(Adam, PropertyFiniteInFiniteOut) {
    Rng rng = make_rng(5);
    std::normal_distribution<double> nd(0.0, 1.0);
    ParamSet p;
    p.add("a", 4, 3);
    p.add("b", 3, 1);
    AdamState st = AdamState::for_params(p, AdamConfig{1e-2});
    for (int it = 0; it < 500; ++it) {
        ParamSet g = p.zeros_like();
        for (std::size_t i = 0; i < g.num_scalars(); ++i) g.flat(i) = nd(rng) * std::pow(10.0, nd(rng) * 3.0);
        adam_step(p, g, st);
        ASSERT_TRUE(p.all_finite());
    }
}

TEST(FiniteDiff, ExactForLinearLoss) {
    ParamSet p;
    p.add("w", 3, 1);
    p.at("w").data = {0.5, -1.0, 2.0};
    const Vec x{1.5, 2.0, -0.5};
    auto loss = [&](const ParamSet& q) { return dot(q.at("w").data, x); };
    ParamSet g = p.zeros_like();
    g.at("w").data = x;
    EXPECT_LT(finite_diff_check(loss, p, g, 1e-3), 1e-8);
}

TEST(FiniteDiff, QuadraticLoss) {
    ParamSet p;
    p.add("w", 2, 1);
    p.at("w").data = {0.3, -1.2};
    auto loss = [](const ParamSet& q) {
        const auto& w = q.at("w").data;
        return 2.0 * w[0] * w[0] + w[0] * w[1] + 0.5 * w[1] * w[1];
    };
    ParamSet g = p.zeros_like();
    const auto& w = p.at("w").data;
    g.at("w").data = {4.0 * w[0] + w[1], w[0] + w[1]};
    EXPECT_LT(finite_diff_check(loss, p, g, 1e-5), 1e-5);
}

TEST(FiniteDiff, ReportsScaledGradient) {
    ParamSet p;
    p.add("w", 2, 1);
    p.at("w").data = {0.8, -0.6};
    auto loss = [](const ParamSet& q) {
        const auto& w = q.at("w").data;
        return w[0] * w[0] + w[1] * w[1];
    };
    ParamSet g = p.zeros_like();
    g.at("w").data = {2.0 * 2.0 * 0.8, 2.0 * 2.0 * -0.6};
    // |g - 2g| / |2g| for every coordinate
    EXPECT_NEAR(finite_diff_check(loss, p, g, 1e-5), 0.5, 1e-6);
}

TEST(FiniteDiff, RejectsNonDeterministicLoss) {
    ParamSet p;
    p.add("w", 1, 1, 1.0);
    int calls = 0;
    auto loss = [&](const ParamSet& q) { return q.at("w").data[0] + 1e-3 * (calls++); };
    EXPECT_THROW(finite_diff_check(loss, p, p.zeros_like(), 1e-4), DomainError);
    EXPECT_THROW(finite_diff_check(loss, p, p.zeros_like(), 0.0), DomainError);
}
