#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "ate/ate.hpp"

using namespace ate;

namespace {

TrialSetup two_arm(Policy policy, double epsilon, std::uint64_t n_max) {
    TrialSetup s;
    s.theta = {0.3, 0.5};
    s.priors = {{1, 1}, {1, 1}};
    s.design.policy = policy;
    s.design.epsilon = epsilon;
    s.design.delta = 0.1;
    s.n_max = n_max;
    return s;
}

}  // namespace

TEST(Trial, ZeroEpsilonGivesBalancedBlocks) {
    for (std::uint64_t key = 1; key <= 20; ++key) {
        const auto s = run_trial(two_arm(Policy::Rule1, 0.0, 200), key);
        EXPECT_EQ(s.assigned[0], 100u);
        EXPECT_EQ(s.assigned[1], 100u);
        EXPECT_EQ(s.n, 200u);
        EXPECT_EQ(s.stop, StopReason::ReachedMax);
    }
}

TEST(Trial, ZeroEpsilonMatchesFixedBlockAssignments) {
    const auto a = trace_trial(two_arm(Policy::Rule1, 0.0, 120), 99);
    const auto b = trace_trial(two_arm(Policy::FixedBlock, 0.0, 120), 99);
    ASSERT_EQ(a.rows.size(), b.rows.size());
    for (std::size_t r = 0; r < a.rows.size(); ++r) {
        EXPECT_EQ(a.rows[r].arm, b.rows[r].arm);
        EXPECT_EQ(a.rows[r].outcome, b.rows[r].outcome);
    }
}

TEST(Trial, SameKeyReproducesTrace) {
    auto setup = two_arm(Policy::Thompson, 0.0, 150);
    setup.design.kappa = 0.5;
    const auto a = trace_trial(setup, 1234);
    const auto b = trace_trial(setup, 1234);
    const auto c = trace_trial(setup, 1235);
    ASSERT_EQ(a.rows.size(), b.rows.size());
    bool differs = false;
    for (std::size_t r = 0; r < a.rows.size(); ++r) {
        EXPECT_EQ(a.rows[r].arm, b.rows[r].arm);
        EXPECT_EQ(a.rows[r].p_max, b.rows[r].p_max);
        differs = differs || a.rows[r].arm != c.rows[r].arm || a.rows[r].outcome != c.rows[r].outcome;
    }
    EXPECT_TRUE(differs);
}

TEST(Trial, DormantArmReceivesNoPatients) {
    auto setup = two_arm(Policy::Rule1, 0.2, 300);
    setup.theta = {0.1, 0.7};
    const auto t = trace_trial(setup, 5);
    for (std::size_t r = 0; r + 1 < t.rows.size(); ++r) {
        if (t.rows[r].status[0] == ArmStatus::Dormant) {
            EXPECT_NE(t.rows[r + 1].arm, 0u);
        }
    }
}

TEST(Trial, ClearWinnerDominatesAllocation) {
    auto setup = two_arm(Policy::Rule1, 0.1, 300);
    setup.theta = {0.1, 0.7};
    const auto s = run_trial(setup, 5);
    EXPECT_GT(s.assigned[1], 3 * s.assigned[0]);
}

TEST(Trial, ListIndexNeverBehindPatientCount) {
    const auto t = trace_trial(two_arm(Policy::Rule1, 0.1, 200), 7);
    std::uint64_t prev = 0;
    for (const auto& r : t.rows) {
        EXPECT_GE(r.n, r.i);
        EXPECT_GT(r.n, prev);
        prev = r.n;
    }
}

TEST(Trial, Rule2StopsWhenOneArmRemains) {
    TrialSetup s;
    s.theta = {0.1, 0.8};
    s.priors = {{1, 1}, {1, 1}};
    s.design.policy = Policy::Rule2;
    s.design.epsilon = 0.1;
    s.design.epsilon2 = 0.05;
    s.n_max = 400;
    const auto st = run_trial(s, 3);
    EXPECT_EQ(st.stop, StopReason::SingleSurvivor);
    EXPECT_EQ(st.status[0], ArmStatus::Dropped);
    ASSERT_TRUE(st.drops[0].has_value());
    EXPECT_EQ(st.drops[0]->N_last, st.N);
    EXPECT_LT(st.N, 400u);
}

TEST(Trial, Rule2FutilityWhenAllExperimentalArmsDrop) {
    TrialSetup s;
    s.theta = {0.8, 0.1, 0.1};
    s.priors = {{1, 1}, {1, 1}, {1, 1}};
    s.design.policy = Policy::Rule2;
    s.design.epsilon = 0.1;
    s.design.epsilon2 = 0.05;
    s.n_max = 600;
    s.estimator.draws = 4096;
    const auto st = run_trial(s, 11);
    EXPECT_EQ(st.stop, StopReason::Futility);
    EXPECT_EQ(st.status[1], ArmStatus::Dropped);
    EXPECT_EQ(st.status[2], ArmStatus::Dropped);
}

TEST(Trial, RejectsBadSetups) {
    auto s = two_arm(Policy::Rule1, 0.1, 0);
    EXPECT_THROW(run_trial(s, 1), std::invalid_argument);
    s.n_max = 10;
    s.priors.pop_back();
    EXPECT_THROW(run_trial(s, 1), std::invalid_argument);
}

TEST(Trial, BurnInDelaysAdaptation) {
    auto setup = two_arm(Policy::Rule1, 0.2, 30);
    setup.theta = {0.05, 0.95};
    setup.design.burn_in = 30;
    for (std::uint64_t key = 1; key <= 10; ++key) {
        const auto s = run_trial(setup, key);
        EXPECT_EQ(s.assigned[0], 15u);
        EXPECT_EQ(s.assigned[1], 15u);
    }
}

TEST(FinalTest, ThresholdsFollowTheVariant) {
    FinalTest t;
    t.epsilon0 = 0.05;
    t.delta0 = 0.05;
    auto pair = [](double keep, double zero) {
        return [=](double s) { return s == 0.0 ? zero : keep; };
    };
    t.variant = FinalVariant::Original;
    EXPECT_EQ(decide_final(pair(0.04, 0.01), t), Verdict::Positive);
    EXPECT_EQ(decide_final(pair(0.05, 0.01), t), Verdict::Positive);
    EXPECT_EQ(decide_final(pair(0.99, 0.96), t), Verdict::Negative);
    EXPECT_EQ(decide_final(pair(0.99, 0.94), t), Verdict::Inconclusive);
    t.variant = FinalVariant::NoControlMargin;
    EXPECT_EQ(decide_final(pair(0.04, 0.2), t), Verdict::Inconclusive);
    EXPECT_EQ(decide_final(pair(0.9, 0.03), t), Verdict::Positive);
    t.variant = FinalVariant::SymmetricMargin;
    EXPECT_EQ(decide_final(pair(0.96, 0.5), t), Verdict::Negative);
    EXPECT_EQ(decide_final(pair(0.94, 0.99), t), Verdict::Inconclusive);
}

TEST(FinalTest, ClearDataGivesClearVerdicts) {
    FinalTest t;
    EXPECT_EQ(final_test({31, 71}, {61, 41}, t), Verdict::Positive);
    EXPECT_EQ(final_test({61, 41}, {31, 71}, t), Verdict::Negative);
    EXPECT_EQ(final_test({31, 71}, {31, 71}, t), Verdict::Inconclusive);
}

TEST(FinalTest, ComparatorAgreesWithDirectEvaluation) {
    Stream draws(1);
    BetaComparator cmp({{1, 1}, {1, 1}}, {}, draws);
    Stream rng(2);
    for (int i = 0; i < 300; ++i) {
        cmp.observe(rng.below(2), rng.uniform() < 0.4);
        for (auto v : {FinalVariant::Original, FinalVariant::NoControlMargin, FinalVariant::SymmetricMargin}) {
            FinalTest t;
            t.variant = v;
            const auto& p = cmp.posteriors();
            ASSERT_EQ(final_test(cmp, t), final_test(p[0], p[1], t));
        }
    }
}
