// Properties that must hold for any input: conjugacy, probability sums,
// estimator agreement and engine invariants over fuzzed trials.

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <gtest/gtest.h>

#include "ate/ate.hpp"
#include "ate/config.hpp"
#include "ate/csv.hpp"
#include "oracle.hpp"

using namespace ate;

// --- conjugacy -------------------------------------------------------------

TEST(Conjugacy, BetaMatchesNormalizedPriorTimesLikelihood) {
    Stream rng(101);
    boost::math::quadrature::tanh_sinh<double> ts;
    for (int c = 0; c < 40; ++c) {
        const BetaPosterior prior{0.5 + 4.0 * rng.uniform(), 0.5 + 4.0 * rng.uniform()};
        const auto s = rng.below(60), f = rng.below(60);
        const auto post = update_beta(prior, s, f);
        // Unnormalized prior x likelihood, scaled at the mode to avoid underflow.
        const double a = prior.alpha - 1.0 + static_cast<double>(s);
        const double b = prior.beta - 1.0 + static_cast<double>(f);
        const double m = std::clamp(a / std::max(a + b, 1e-9), 0.01, 0.99);
        const double ref = a * std::log(m) + b * std::log1p(-m);
        auto g = [&](double t) { return std::exp(a * std::log(t) + b * std::log1p(-t) - ref); };
        const double z = ts.integrate(g, 0.0, 1.0, 1e-13);
        for (double x : {0.05, 0.2, 0.35, 0.5, 0.65, 0.8, 0.95}) {
            const double want = g(x) / z;
            if (want < 1e-200) continue;
            const double got = std::exp(post.log_density(x));
            EXPECT_LE(std::abs(got - want) / want, 1e-6) << "x=" << x << " a=" << post.alpha << " b=" << post.beta;
        }
    }
}

TEST(Conjugacy, GammaMatchesNormalizedPriorTimesLikelihood) {
    Stream rng(202);
    boost::math::quadrature::exp_sinh<double> es;
    for (int c = 0; c < 40; ++c) {
        const GammaPosterior prior{0.5 + 3.0 * rng.uniform(), 0.2 + 3.0 * rng.uniform()};
        const auto d = rng.below(40);
        const double ttt = 50.0 * rng.uniform();
        const auto post = update_gamma(prior, d, ttt);
        const double a = prior.shape - 1.0 + static_cast<double>(d);
        const double r = prior.rate + ttt;
        const double m = std::max(a / r, 1e-3);
        const double ref = a * std::log(m) - r * m;
        auto g = [&](double l) { return std::exp(a * std::log(l) - r * l - ref); };
        const double z = es.integrate(g, 1e-13);
        for (double q : {0.25, 0.5, 1.0, 2.0, 3.0}) {
            const double x = q * post.mean();
            const double want = g(x) / z;
            if (want < 1e-200) continue;
            const double got = std::exp(post.log_density(x));
            EXPECT_LE(std::abs(got - want) / want, 1e-6) << "x=" << x;
        }
    }
}

// --- probability sums and estimator agreement ------------------------------

TEST(ProbabilitySums, MaximumProbabilitiesSumToOne) {
    Stream rng(303);
    for (int c = 0; c < 60; ++c) {
        const std::size_t arms = 2 + rng.below(4);
        std::vector<BetaPosterior> posts;
        for (std::size_t k = 0; k < arms; ++k) {
            posts.push_back(update_beta({1, 1}, rng.below(40), rng.below(40)));
        }
        ArmSet t = ArmSet::all(arms);
        if (arms > 2 && rng.below(2) == 1) t.erase(rng.below(arms));
        for (auto kind : {EstimatorKind::quadrature, EstimatorKind::monte_carlo}) {
            EstimatorConfig cfg;
            cfg.kind = kind;
            cfg.draws = 4096;
            Stream draws(c);
            const auto p = prob_is_max_all(posts, t, cfg, draws);
            double sum = 0.0;
            for (Arm k = 0; k < arms; ++k) {
                if (!t.contains(k)) {
                    EXPECT_EQ(p[k].value, 0.0);
                }
                sum += p[k].value;
            }
            EXPECT_NEAR(sum, 1.0, 1e-9);
        }
        BetaComparator cmp(posts, {}, Stream(c));
        double sum = 0.0;
        for (double v : cmp.best_all(t)) sum += v;
        EXPECT_NEAR(sum, 1.0, 1e-9);
    }
}

TEST(EstimatorAgreement, QuadratureWithinThreeStandardErrorsOfSimulation) {
    Stream rng(404);
    const std::size_t n = 20000;
    for (int c = 0; c < 100; ++c) {
        const BetaPosterior a = update_beta({1, 1}, rng.below(80), rng.below(80));
        const BetaPosterior b = update_beta({1, 1}, rng.below(80), rng.below(80));
        const double shift = 0.1 * (static_cast<double>(rng.below(3)) - 1.0);
        const double q = pairwise_prob(a, b, shift).value;
        const auto mc = oracle::frequency(n, [&] {
            return oracle::beta(a.alpha, a.beta) + shift >= oracle::beta(b.alpha, b.beta);
        });
        const double se = std::sqrt(std::max(q * (1.0 - q), 1.0 / n) / n);
        EXPECT_LE(std::abs(q - mc.p), 3.0 * se) << "case " << c << " q=" << q << " mc=" << mc.p;
    }
}

// --- engine invariants -----------------------------------------------------

namespace {

TrialSetup fuzz_setup(Stream& rng) {
    TrialSetup s;
    const std::size_t arms = 2 + rng.below(3);
    for (std::size_t k = 0; k < arms; ++k) {
        s.theta.push_back(0.05 + 0.9 * rng.uniform());
        s.priors.push_back({0.5 + 2.0 * rng.uniform(), 0.5 + 2.0 * rng.uniform()});
    }
    const double limit = 1.0 / static_cast<double>(arms);
    auto& d = s.design;
    d.policy = static_cast<Policy>(rng.below(4));
    d.epsilon = 0.95 * limit * rng.uniform();
    d.delta = 0.2 * rng.uniform();
    d.theta_low = rng.below(3) == 0 ? 0.3 * rng.uniform() : 0.0;
    d.kappa = rng.uniform();
    d.burn_in = rng.below(3) == 0 ? rng.below(20) : 0;
    if (d.policy == Policy::Rule2) {
        d.epsilon2 = d.epsilon * rng.uniform();
        d.epsilon1 = rng.below(2) == 0 ? 0.05 * rng.uniform() : 0.0;
        d.continue_after_control_drop = rng.below(2) == 0;
    }
    s.n_max = 20 + rng.below(60);
    s.estimator.draws = 1024;
    return s;
}

}  // namespace

TEST(Invariants, PosteriorsEqualPriorPlusCountsOnEveryTrace) {
    Stream rng(505);
    for (int run = 0; run < 1000; ++run) {
        const auto s = fuzz_setup(rng);
        const auto tr = trace_trial(s, rng());
        const std::size_t arms = s.theta.size();
        std::vector<std::uint64_t> succ(arms, 0), fail(arms, 0);
        for (const auto& r : tr.rows) {
            ++(r.outcome != 0.0 ? succ : fail)[r.arm];
            for (Arm k = 0; k < arms; ++k) {
                ASSERT_EQ(r.param_a[k], s.priors[k].alpha + static_cast<double>(succ[k])) << "run " << run;
                ASSERT_EQ(r.param_b[k], s.priors[k].beta + static_cast<double>(fail[k])) << "run " << run;
            }
        }
    }
}

TEST(Invariants, DroppedIsAbsorbingAndDormantPosteriorsFreeze) {
    Stream rng(606);
    int dormant_seen = 0, dropped_seen = 0;
    for (int run = 0; run < 1000; ++run) {
        const auto s = fuzz_setup(rng);
        const auto tr = trace_trial(s, rng());
        const std::size_t arms = s.theta.size();
        const bool statuses_drive_assignment = s.design.policy != Policy::Thompson;
        for (std::size_t r = 0; r + 1 < tr.rows.size(); ++r) {
            const auto& now = tr.rows[r];
            const auto& next = tr.rows[r + 1];
            for (Arm k = 0; k < arms; ++k) {
                if (now.status[k] == ArmStatus::Dropped) {
                    ++dropped_seen;
                    ASSERT_EQ(next.status[k], ArmStatus::Dropped) << "run " << run;
                    ASSERT_NE(next.arm, k) << "run " << run;
                }
                const bool frozen = now.status[k] == ArmStatus::Dropped ||
                                    (now.status[k] == ArmStatus::Dormant && next.i > s.design.burn_in);
                if (statuses_drive_assignment && frozen) {
                    if (now.status[k] == ArmStatus::Dormant) ++dormant_seen;
                    ASSERT_NE(next.arm, k) << "run " << run;
                    ASSERT_EQ(next.param_a[k], now.param_a[k]);
                    ASSERT_EQ(next.param_b[k], now.param_b[k]);
                }
            }
        }
    }
    EXPECT_GT(dormant_seen, 1000);
    EXPECT_GT(dropped_seen, 100);
}

TEST(Invariants, BlockListPrefixesStayBalanced) {
    for (std::uint64_t seed = 100; seed < 120; ++seed) {
        const std::size_t arms = 2 + seed % 5;
        const RandomizationList list(seed, arms);
        std::vector<int> c(arms, 0);
        for (std::uint64_t n = 1; n <= 500; ++n) {
            ++c[list.arm_at(n)];
            const auto [lo, hi] = std::minmax_element(c.begin(), c.end());
            ASSERT_LE(*hi - *lo, 1);
        }
    }
}

TEST(Invariants, VanishingDelayReproducesInstantaneousTrace) {
    Stream rng(707);
    for (int run = 0; run < 200; ++run) {
        const auto s = fuzz_setup(rng);
        const std::uint64_t key = rng();
        std::vector<double> u;
        for (std::uint64_t i = 1; i <= s.n_max; ++i) u.push_back(static_cast<double>(i));
        const auto a = trace_trial(s, key);
        const auto b = trace_delayed_trial(s, u, 1e-9, key);
        ASSERT_EQ(a.rows.size(), b.rows.size()) << "run " << run;
        for (std::size_t r = 0; r < a.rows.size(); ++r) {
            const auto& x = a.rows[r];
            const auto& y = b.rows[r];
            ASSERT_EQ(x.i, y.i);
            ASSERT_EQ(x.n, y.n);
            ASSERT_EQ(x.arm, y.arm);
            ASSERT_EQ(x.outcome, y.outcome);
            ASSERT_EQ(x.status, y.status);
            ASSERT_EQ(x.param_a, y.param_a);
            ASSERT_EQ(x.param_b, y.param_b);
            for (std::size_t k = 0; k < x.p_max.size(); ++k) {
                ASSERT_TRUE(x.p_max[k] == y.p_max[k] || (std::isnan(x.p_max[k]) && std::isnan(y.p_max[k])));
            }
        }
        EXPECT_EQ(a.stop, b.stop);
    }
}

TEST(Invariants, Rule2WithoutDroppingIsRule1) {
    Stream rng(808);
    for (int c = 0; c < 300; ++c) {
        const std::size_t arms = 2 + rng.below(3);
        std::vector<BetaPosterior> posts;
        for (std::size_t k = 0; k < arms; ++k) posts.push_back(update_beta({1, 1}, rng.below(50), rng.below(50)));
        const double eps = 0.95 * rng.uniform() / static_cast<double>(arms);
        const double delta = 0.2 * rng.uniform();
        BetaComparator cmp(posts, {}, Stream(c), delta);
        DesignParams p;
        p.policy = Policy::Rule2;
        p.epsilon = eps;
        const std::vector<ArmStatus> st(arms, ArmStatus::Active);
        const auto r2 = rule2_update(cmp, st, ArmSet::all(arms), p, {});
        const auto& pm = cmp.best_all(ArmSet::all(arms));
        const auto r1 = rule1_update(pm, cmp.control_margin(ArmSet::all(arms)), eps);
        ASSERT_EQ(r2.statuses, r1);
        ASSERT_TRUE(r2.drops.empty());
    }
    // The same holds for whole trials.
    for (int run = 0; run < 100; ++run) {
        auto s = fuzz_setup(rng);
        s.design.policy = Policy::Rule1;
        const std::uint64_t key = rng();
        const auto a = trace_trial(s, key);
        s.design.policy = Policy::Rule2;
        s.design.epsilon1 = 0.0;
        s.design.epsilon2 = 0.0;
        const auto b = trace_trial(s, key);
        ASSERT_EQ(a.rows.size(), b.rows.size());
        for (std::size_t r = 0; r < a.rows.size(); ++r) {
            ASSERT_EQ(a.rows[r].arm, b.rows[r].arm);
            ASSERT_EQ(a.rows[r].status, b.rows[r].status);
        }
    }
}

// --- thread-count invariance -------------------------------------------------

namespace {

const char* const invariance_configs[] = {
    R"({"schema_version": 1, "name": "two_arm", "num_arms": 2,
        "scenarios": [{"label": "null", "role": "null", "theta": [0.3, 0.3]},
                      {"label": "alt", "role": "alt", "theta": [0.3, 0.5]}],
        "designs": [{"label": "a", "policy": "rule1", "epsilon": 0.1, "delta": 0.1},
                    {"label": "t", "policy": "thompson", "kappa": 0.5, "burn_in": 10},
                    {"label": "d", "policy": "fixed_block"}],
        "final_tests": [{"label": "original"}, {"label": "sym", "variant": "symmetric_margin"}],
        "n_max": [40, 60], "checkpoints": [20], "replicates": 37, "master_seed": 5,
        "bands": ["joint_status", "maximal_with_control_out", "dropped_status"], "keep_verdicts": true})",
    R"({"schema_version": 1, "name": "four_arm", "num_arms": 4,
        "scenarios": [{"label": "alt", "role": "alt", "theta": [0.3, 0.4, 0.5, 0.6]}],
        "designs": [{"label": "r2", "policy": "rule2", "epsilon": 0.1, "epsilon2": 0.05, "delta": 0.1}],
        "n_max": 50, "replicates": 23, "master_seed": 6, "estimator": {"method": "monte_carlo", "draws": 2048},
        "bands": ["joint_status", "maximal_with_control_out", "dropped_status"]})",
    R"({"schema_version": 1, "name": "delayed", "model": "delayed", "num_arms": 2,
        "scenarios": [{"label": "alt", "role": "alt", "theta": [0.3, 0.5]}],
        "designs": [{"label": "a", "policy": "rule1", "epsilon": 0.1, "delta": 0.1}],
        "final_tests": [{"label": "original"}], "n_max": 50, "replicates": 21, "master_seed": 7,
        "arrival": {"rate": 2.0, "delay": 3.0}, "bands": ["joint_status"], "keep_verdicts": true})",
    R"({"schema_version": 1, "name": "tte", "model": "tte", "num_arms": 2, "priors": {"shape": 1, "rate": 1},
        "scenarios": [{"label": "alt", "role": "alt", "theta": [1.0, 0.5]}],
        "designs": [{"label": "r2", "policy": "rule2", "epsilon": 0.1, "epsilon2": 0.05, "rho": 0.9}],
        "n_max": 60, "checkpoints": [30], "replicates": 19, "master_seed": 8, "bands": ["dropped_status"]})",
};

std::string all_csvs(const ExperimentSpec& spec, std::size_t threads) {
    const auto cells = run_experiment(spec, threads);
    std::ostringstream os;
    csv::write_summary(os, summarize(spec, cells));
    csv::write_bands(os, band_rows(spec, cells));
    csv::write_cdf(os, cdf_rows(spec, cells));
    csv::write_verdicts(os, spec, cells);
    return os.str();
}

}  // namespace

TEST(Invariants, CsvOutputDoesNotDependOnThreadCount) {
    for (const char* text : invariance_configs) {
        const auto spec = parse_config(std::string(text)).spec;
        const auto one = all_csvs(spec, 1);
        EXPECT_GT(one.size(), 1000u);
        for (std::size_t threads : {2u, 4u, 7u}) EXPECT_EQ(one, all_csvs(spec, threads)) << spec.name << " " << threads;
    }
}
