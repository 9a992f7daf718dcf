#include <cmath>
#include <map>
#include <vector>

#include <gtest/gtest.h>

#include "ate/ate.hpp"

using namespace ate;

namespace {

// Fixed probabilities standing in for a posterior.
struct TableProbs {
    std::vector<double> best_p;
    double margin = 1.0;
    std::vector<double> minimum;
    int best_calls = 0;

    double best(Arm k, ArmSet) {
        ++best_calls;
        return best_p[k];
    }
    double control_margin(ArmSet) const { return margin; }
    double meets_minimum(Arm k) const { return minimum.empty() ? 1.0 : minimum[k]; }
};

constexpr auto A = ArmStatus::Active;
constexpr auto D = ArmStatus::Dormant;
constexpr auto X = ArmStatus::Dropped;

}  // namespace

TEST(Rule1, ExperimentalArmDormantBelowEpsilon) {
    const std::vector<double> p{0.95, 0.05};
    EXPECT_EQ(rule1_update(p, 0.3, 0.1), (std::vector<ArmStatus>{A, D}));
}

TEST(Rule1, ControlUsesMarginProbability) {
    const std::vector<double> p{0.02, 0.98};
    // p_max[0] is tiny but the margin keeps the control in play.
    EXPECT_EQ(rule1_update(p, 0.4, 0.1), (std::vector<ArmStatus>{A, A}));
    EXPECT_EQ(rule1_update(p, 0.05, 0.1), (std::vector<ArmStatus>{D, A}));
}

TEST(Rule1, ThresholdIsStrict) {
    const std::vector<double> p{0.9, 0.1};
    EXPECT_EQ(rule1_update(p, 0.1, 0.1), (std::vector<ArmStatus>{A, A}));
}

TEST(Rule1, ZeroEpsilonKeepsEverythingActive) {
    const std::vector<double> p{0.0, 0.0, 1.0};
    EXPECT_EQ(rule1_update(p, 0.0, 0.0), (std::vector<ArmStatus>{A, A, A}));
}

TEST(Rule2, SmallBestProbabilityDropsArm) {
    TableProbs probs{{0.5, 0.01, 0.49}, 0.5, {}};
    DesignParams p;
    p.policy = Policy::Rule2;
    p.epsilon = 0.1;
    p.epsilon2 = 0.05;
    const std::vector<ArmStatus> st{A, A, A};
    const auto r = rule2_update(probs, st, ArmSet::all(3), p, DropRecord{17, 12});
    EXPECT_EQ(r.statuses, (std::vector<ArmStatus>{A, X, A}));
    EXPECT_FALSE(r.candidates.contains(1));
    ASSERT_EQ(r.drops.size(), 1u);
    EXPECT_EQ(r.drops[0].first, 1u);
    EXPECT_EQ(r.drops[0].second.n_last, 17u);
    EXPECT_EQ(r.drops[0].second.N_last, 12u);
}

TEST(Rule2, BetweenThresholdsMeansDormant) {
    TableProbs probs{{0.5, 0.07, 0.43}, 0.08, {}};
    DesignParams p;
    p.policy = Policy::Rule2;
    p.epsilon = 0.1;
    p.epsilon2 = 0.05;
    const std::vector<ArmStatus> st{A, A, A};
    const auto r = rule2_update(probs, st, ArmSet::all(3), p, {});
    EXPECT_EQ(r.statuses, (std::vector<ArmStatus>{D, D, A}));
    EXPECT_EQ(r.candidates, ArmSet::all(3));
}

TEST(Rule2, MinimumResponseCheckDropsBeforeComparison) {
    TableProbs probs{{0.3, 0.4, 0.3}, 0.9, {0.5, 0.02, 0.5}};
    DesignParams p;
    p.policy = Policy::Rule2;
    p.epsilon1 = 0.05;
    const std::vector<ArmStatus> st{A, A, A};
    const auto r = rule2_update(probs, st, ArmSet::all(3), p, {});
    EXPECT_EQ(r.statuses[1], X);
    EXPECT_EQ(r.statuses[0], A);
    EXPECT_EQ(r.statuses[2], A);
}

TEST(Rule2, ControlDroppedOnMargin) {
    TableProbs probs{{0.01, 0.99}, 0.01, {}};
    DesignParams p;
    p.policy = Policy::Rule2;
    p.epsilon = 0.1;
    p.epsilon2 = 0.05;
    const std::vector<ArmStatus> st{A, A};
    const auto r = rule2_update(probs, st, ArmSet::all(2), p, {});
    EXPECT_EQ(r.statuses, (std::vector<ArmStatus>{X, A}));
    EXPECT_FALSE(r.candidates.contains(0));
}

TEST(Rule2, DroppedArmsAreNotReevaluated) {
    TableProbs probs{{0.5, 0.9, 0.5}, 0.5, {}};
    DesignParams p;
    p.policy = Policy::Rule2;
    p.epsilon = 0.1;
    p.epsilon2 = 0.05;
    const std::vector<ArmStatus> st{A, X, A};
    const auto r = rule2_update(probs, st, ArmSet::all(3).without(1), p, {});
    EXPECT_EQ(r.statuses[1], X);
    EXPECT_TRUE(r.drops.empty());
    EXPECT_EQ(probs.best_calls, 1);
}

TEST(Thompson, WeightsFollowPowerOfProbabilities) {
    const std::vector<double> p{0.36, 0.64};
    const auto w = thompson_weights(p, 0.5);
    EXPECT_NEAR(w[0], 3.0 / 7.0, 1e-15);
    EXPECT_NEAR(w[1], 4.0 / 7.0, 1e-15);
}

TEST(Thompson, KappaZeroIsUniform) {
    const std::vector<double> p{0.0, 0.2, 0.8};
    const auto w = thompson_weights(p, 0.0);
    for (double x : w) EXPECT_DOUBLE_EQ(x, 1.0 / 3.0);
}

TEST(Thompson, KappaOneIsProportional) {
    const std::vector<double> p{0.1, 0.3, 0.6};
    const auto w = thompson_weights(p, 1.0);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(w[k], p[k], 1e-15);
}

TEST(Thompson, AllZeroThrows) {
    const std::vector<double> p{0.0, 0.0};
    EXPECT_THROW(thompson_weights(p, 1.0), std::invalid_argument);
}

TEST(Thompson, SampleArmFrequencies) {
    const std::vector<double> w{0.2, 0.0, 0.8};
    Stream rng(5);
    std::map<Arm, int> c;
    const int n = 200000;
    for (int i = 0; i < n; ++i) ++c[sample_arm(w, rng)];
    EXPECT_EQ(c[1], 0);
    EXPECT_NEAR(c[0] / double(n), 0.2, 4.0 * std::sqrt(0.16 / n));
}

TEST(Assignment, SkipsInactiveEntries) {
    const RandomizationList list(3, 2);
    const std::vector<ArmStatus> st{A, D};
    for (std::uint64_t n = 1; n <= 50; ++n) {
        const auto a = next_assignment(list, n, st);
        EXPECT_EQ(a.arm, 0u);
        EXPECT_GE(a.n, n);
        for (std::uint64_t m = n; m < a.n; ++m) EXPECT_EQ(list.arm_at(m), 1u);
    }
}

TEST(Assignment, AllActiveTakesTheNextEntry) {
    const RandomizationList list(8, 3);
    const std::vector<ArmStatus> st{A, A, A};
    for (std::uint64_t n = 1; n <= 30; ++n) {
        const auto a = next_assignment(list, n, st);
        EXPECT_EQ(a.n, n);
        EXPECT_EQ(a.arm, list.arm_at(n));
    }
}

TEST(Assignment, NoActiveArmIsADeadlock) {
    const RandomizationList list(1, 3);
    const std::vector<ArmStatus> st{D, X, D};
    EXPECT_THROW(next_assignment(list, 1, st), DeadlockError);
}

TEST(BurnIn, ReactivatesDormantArmsOnlyDuringBurnIn) {
    DesignParams p;
    p.burn_in = 30;
    const std::vector<ArmStatus> st{D, X, A};
    EXPECT_EQ(apply_burn_in(12, p, st), (std::vector<ArmStatus>{A, X, A}));
    EXPECT_EQ(apply_burn_in(30, p, st), (std::vector<ArmStatus>{A, X, A}));
    EXPECT_EQ(apply_burn_in(31, p, st), st);
}

TEST(DesignValidation, EpsilonMustLeaveAnArmActive) {
    DesignParams p;
    p.policy = Policy::Rule1;
    p.epsilon = 0.25;
    EXPECT_NO_THROW(validate(p, 3));
    EXPECT_THROW(validate(p, 4), ConfigError);
    p.epsilon = 0.5;
    EXPECT_THROW(validate(p, 2), ConfigError);
}

TEST(DesignValidation, RejectsOutOfRangeParameters) {
    DesignParams p;
    p.kappa = 1.5;
    EXPECT_THROW(validate(p, 2), ConfigError);
    p.kappa = 1.0;
    p.delta = -0.1;
    EXPECT_THROW(validate(p, 2), ConfigError);
    p.delta = 0.0;
    p.rho = 0.0;
    EXPECT_THROW(validate(p, 2), ConfigError);
}

TEST(DesignValidation, ErrorNamesTheField) {
    DesignParams p;
    p.policy = Policy::Rule2;
    p.epsilon2 = 0.6;
    try {
        validate(p, 2, "designs[1]");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field(), "designs[1].epsilon2");
    }
}
