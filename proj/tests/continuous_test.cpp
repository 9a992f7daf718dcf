#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "ate/ate.hpp"

using namespace ate;

TEST(Arrivals, CountWithinPoissonBounds) {
    const double rate = 3.0, horizon = 1000.0;
    const auto u = simulate_arrivals({rate, horizon}, Stream(4));
    const double mean = rate * horizon;
    EXPECT_NEAR(static_cast<double>(u.size()), mean, 4.0 * std::sqrt(mean));
    EXPECT_NO_THROW(check_arrivals(u));
    EXPECT_LE(u.back(), horizon);
}

TEST(Arrivals, MeanGapIsInverseRate) {
    const auto u = simulate_arrivals({2.0, INFINITY}, Stream(9), 100000);
    ASSERT_EQ(u.size(), 100000u);
    EXPECT_NEAR(u.back() / u.size(), 0.5, 4.0 * 0.5 / std::sqrt(100000.0));
}

TEST(Arrivals, RejectsBadInput) {
    EXPECT_THROW(simulate_arrivals({0.0, 10.0}, Stream(1)), std::invalid_argument);
    EXPECT_THROW(simulate_arrivals({1.0, INFINITY}, Stream(1)), std::invalid_argument);
    EXPECT_THROW(check_arrivals({1.0, 1.0}), std::invalid_argument);
}

namespace {

TrialSetup setup_for(Policy policy) {
    TrialSetup s;
    s.theta = {0.3, 0.5};
    s.priors = {{1, 1}, {1, 1}};
    s.design.policy = policy;
    s.design.epsilon = 0.1;
    s.design.delta = 0.1;
    s.design.kappa = 0.5;
    s.n_max = 40;
    return s;
}

}  // namespace

TEST(Delayed, OutcomeMaturesStrictlyAfterDelay) {
    // U = 1, 2, 3 with d = 1: at t = 2 patient 1 is not yet observed (1 < 1
    // fails), at t = 3 it is and patient 2 is not.
    auto s = setup_for(Policy::FixedBlock);
    s.n_max = 3;
    const auto tr = trace_delayed_trial(s, {1.0, 2.0, 3.0}, 1.0, 8);
    ASSERT_EQ(tr.rows.size(), 3u);
    EXPECT_EQ(tr.rows[0].i, 1u);
    EXPECT_DOUBLE_EQ(tr.rows[0].t, 3.0);
    EXPECT_EQ(tr.rows[1].i, 2u);
    EXPECT_DOUBLE_EQ(tr.rows[1].t, 4.0);
    EXPECT_DOUBLE_EQ(tr.rows[2].t, 4.0);
}

TEST(Delayed, PendingOutcomesDoNotAffectAllocation) {
    // A delay longer than the trial: nothing is observed before the end, so
    // Rule 1 never leaves the block list.
    auto s = setup_for(Policy::Rule1);
    s.theta = {0.05, 0.95};
    s.design.epsilon = 0.2;
    std::vector<double> u;
    for (int i = 1; i <= 40; ++i) u.push_back(i);
    const auto st = run_delayed_trial(s, u, 100.0, 3);
    EXPECT_EQ(st.assigned[0], 20u);
    EXPECT_EQ(st.assigned[1], 20u);
}

TEST(Delayed, AllOutcomesAbsorbedAtTheEnd) {
    auto s = setup_for(Policy::Rule1);
    std::vector<double> u;
    for (int i = 1; i <= 40; ++i) u.push_back(0.5 * i);
    const auto st = run_delayed_trial(s, u, 3.0, 21);
    EXPECT_EQ(st.successes[0] + st.failures[0] + st.successes[1] + st.failures[1], 40u);
    EXPECT_DOUBLE_EQ(st.time, 23.0);
}

TEST(Exposure, EventsAndTimeOnTest) {
    const std::vector<double> entry{0.0, 1.0, 2.0};
    const std::vector<double> x{0.5, 5.0, 5.0};
    const std::vector<Arm> arm{0, 0, 0};
    const auto e = exposure_at(2.5, entry, x, arm, 1);
    EXPECT_EQ(e.events[0], 1u);
    EXPECT_EQ(e.censored[0], 2u);
    EXPECT_DOUBLE_EQ(e.ttt[0], 2.5);
}

TEST(Exposure, LaterEntriesIgnored) {
    const auto e = exposure_at(1.0, {0.0, 2.0}, {3.0, 0.1}, {0, 1}, 2);
    EXPECT_EQ(e.events[1] + e.censored[1], 0u);
    EXPECT_DOUBLE_EQ(e.ttt[0], 1.0);
}

TEST(Vaccine, DecisionsFollowThresholds) {
    const double ve = 0.3, eps = 0.01;
    // Strong, borderline and adverse evidence.
    const GammaPosterior control{41, 1000};
    const struct {
        GammaPosterior vaccine;
        VaccineDecision want;
    } cases[] = {
        {{6, 1000}, VaccineDecision::DeclareSuccess},
        {{29, 1000}, VaccineDecision::ContinueTrial},
        {{60, 1000}, VaccineDecision::DeclareFutility},
    };
    for (const auto& c : cases) {
        const double pr = prob_vaccine_efficacy(control, c.vaccine, ve).value;
        EXPECT_EQ(vaccine_stop_check(control, c.vaccine, ve, eps), c.want) << pr;
    }
}

TEST(Vaccine, EfficacyProbabilityMatchesSimulation) {
    const GammaPosterior control{41, 1000}, vaccine{29, 1000};
    const double pr = prob_vaccine_efficacy(control, vaccine, 0.3).value;
    Stream rng(17);
    int hits = 0;
    const int n = 200000;
    for (int j = 0; j < n; ++j) {
        const double l0 = standard_gamma(rng, control.shape) / control.rate;
        const double l1 = standard_gamma(rng, vaccine.shape) / vaccine.rate;
        hits += 1.0 - l1 / l0 > 0.3 ? 1 : 0;
    }
    EXPECT_NEAR(pr, hits / double(n), 4.0 * std::sqrt(0.25 / n));
}

TEST(Vaccine, EffectiveVaccineStopsForSuccess) {
    TteSetup s;
    s.intensity = {0.05, 0.01};
    s.priors = {{1, 1}, {1, 1}};
    s.design.policy = Policy::FixedBlock;
    s.n_max = 1000;
    s.end_of_study = 250.0;
    s.vaccine = VaccineCheck{0.3, 0.01};
    const auto u = simulate_arrivals({10.0, INFINITY}, Stream(3), 1000);
    const auto st = run_tte_trial(s, u, 77);
    EXPECT_EQ(st.stop, StopReason::VaccineSuccess);
}

TEST(Tte, PosteriorMatchesExposure) {
    TteSetup s;
    s.intensity = {1.0, 0.5};
    s.priors = {{1, 1}, {2, 3}};
    s.design.policy = Policy::Rule2;
    s.design.epsilon = 0.1;
    s.design.epsilon2 = 0.05;
    s.design.rho = std::exp(-0.1);
    s.n_max = 200;
    const auto u = simulate_arrivals({1.0, INFINITY}, Stream(12), 200);
    const auto tr = trace_tte_trial(s, u, 40);
    ASSERT_FALSE(tr.rows.empty());
    for (const auto& r : tr.rows) {
        for (Arm k = 0; k < 2; ++k) {
            const auto want = update_gamma(s.priors[k], r.events[k], r.exposure[k]);
            ASSERT_DOUBLE_EQ(r.param_a[k], want.shape);
            ASSERT_DOUBLE_EQ(r.param_b[k], want.rate);
        }
    }
}

TEST(Tte, RejectsNonPositiveIntensity) {
    TteSetup s;
    s.intensity = {1.0, 0.0};
    s.priors = {{1, 1}, {1, 1}};
    s.n_max = 5;
    EXPECT_THROW(run_tte_trial(s, {1, 2, 3}, 1), std::invalid_argument);
}
