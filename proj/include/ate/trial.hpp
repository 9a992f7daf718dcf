#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ate/allocation.hpp"
#include "ate/comparator.hpp"
#include "ate/posterior.hpp"
#include "ate/random.hpp"
#include "ate/randomization.hpp"
#include "ate/types.hpp"

namespace ate {

enum class StopReason { Running, ReachedMax, SingleSurvivor, Futility, ControlDropped, VaccineSuccess, VaccineFutility };

inline const char* to_string(StopReason r) noexcept {
    switch (r) {
        case StopReason::Running: return "running";
        case StopReason::ReachedMax: return "reached_n_max";
        case StopReason::SingleSurvivor: return "single_survivor";
        case StopReason::Futility: return "futility";
        case StopReason::ControlDropped: return "control_dropped";
        case StopReason::VaccineSuccess: return "vaccine_success";
        case StopReason::VaccineFutility: return "vaccine_futility";
    }
    return "?";
}

/*
 * Live state of one trial. For Bernoulli outcomes successes/failures are the
 * observed S_k and F_k; for event times they are the event and censored
 * counts at the last decision time and `exposure` holds total time on test.
 */
template <class Posterior>
struct BasicTrialState {
    std::uint64_t n = 0;  // list index of the latest assignment
    std::uint64_t N = 0;  // patients assigned so far
    std::vector<ArmStatus> status;
    std::vector<std::uint64_t> assigned;
    std::vector<std::uint64_t> successes;
    std::vector<std::uint64_t> failures;
    std::vector<double> exposure;
    std::vector<Posterior> posterior;
    ArmSet candidates;
    std::vector<double> p_max;  // P(arm is best) over all arms, or over T under Rule 2
    double p_ctrl_margin = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::optional<DropRecord>> drops;
    StopReason stop = StopReason::Running;
    double time = 0.0;

    explicit BasicTrialState(std::vector<Posterior> priors)
        : status(priors.size(), ArmStatus::Active),
          assigned(priors.size(), 0),
          successes(priors.size(), 0),
          failures(priors.size(), 0),
          exposure(priors.size(), 0.0),
          posterior(std::move(priors)),
          candidates(ArmSet::all(posterior.size())),
          p_max(posterior.size(), std::numeric_limits<double>::quiet_NaN()),
          drops(posterior.size()) {}

    std::size_t num_arms() const noexcept { return posterior.size(); }
    bool running() const noexcept { return stop == StopReason::Running; }
};

using TrialState = BasicTrialState<BetaPosterior>;
using TteTrialState = BasicTrialState<GammaPosterior>;

/// One patient: index i, list index n, arm, and outcome (0/1 or event time).
struct PatientRecord {
    std::uint64_t i = 0;
    std::uint64_t n = 0;
    Arm arm = 0;
    double outcome = 0.0;
};

struct TrialSetup {
    std::vector<double> theta;  // generating response rates
    std::vector<BetaPosterior> priors;
    DesignParams design;
    std::uint64_t n_max = 0;
    EstimatorConfig estimator;
    bool record_probabilities = false;  // fill p_max / p_ctrl_margin even when the policy ignores them
};

inline void check_setup(std::size_t arms_theta, std::size_t arms_priors, std::uint64_t n_max) {
    if (arms_theta < 2 || arms_theta > max_arms) throw std::invalid_argument("trial needs 2..32 arms");
    if (arms_priors != arms_theta) throw std::invalid_argument("one prior per arm is required");
    if (n_max < 1) throw std::invalid_argument("n_max must be >= 1");
}

namespace detail {

template <class Cmp, class State>
void record_probabilities(Cmp& cmp, State& s, ArmSet over, bool with_margin) {
    const auto& pm = cmp.best_all(over);
    s.p_max.assign(pm.begin(), pm.end());
    if (with_margin) s.p_ctrl_margin = cmp.control_margin(over);
}

template <class Cmp, class State>
void apply_policy(const DesignParams& p, Cmp& cmp, State& s, bool want_probs, DropRecord now) {
    const ArmSet all = ArmSet::all(s.num_arms());
    switch (p.policy) {
        case Policy::FixedBlock:
            if (want_probs) record_probabilities(cmp, s, all, true);
            return;
        case Policy::Thompson:
            if (want_probs || p.kappa > 0.0) record_probabilities(cmp, s, all, want_probs);
            return;
        case Policy::Rule1:
            if (p.epsilon > 0.0 || want_probs) {
                record_probabilities(cmp, s, all, true);
                if (p.epsilon > 0.0) s.status = rule1_update(s.p_max, s.p_ctrl_margin, p.epsilon);
            }
            return;
        case Policy::Rule2: {
            if (p.adaptive()) {
                auto r = rule2_update(cmp, s.status, s.candidates, p, now);
                s.status = std::move(r.statuses);
                s.candidates = r.candidates;
                for (auto& [k, rec] : r.drops) s.drops[k] = rec;
            }
            if (want_probs && !s.candidates.empty()) record_probabilities(cmp, s, s.candidates, true);
            if (s.candidates.without(0).empty()) {
                s.stop = StopReason::Futility;
            } else if (s.candidates.size() <= 1) {
                s.stop = StopReason::SingleSurvivor;
            } else if (!s.candidates.contains(0) && !p.continue_after_control_drop) {
                s.stop = StopReason::ControlDropped;
            }
            return;
        }
    }
}

// Picks the next patient's arm: Thompson draw after burn-in, otherwise the
// first active entry of the list.
template <class State>
Assignment choose_arm(const DesignParams& p, const RandomizationList& list, const State& s, std::uint64_t i,
                      Stream& thompson) {
    if (p.policy == Policy::Thompson && i > p.burn_in) {
        std::vector<double> probs = s.p_max;
        if (p.kappa == 0.0) probs.assign(s.num_arms(), 1.0);
        const auto w = thompson_weights(probs, p.kappa);
        return {s.n + 1, sample_arm(w, thompson)};
    }
    return next_assignment(list, s.n + 1, apply_burn_in(i, p, s.status));
}

inline bool needs_initial_probabilities(const DesignParams& p) {
    return p.policy == Policy::Thompson && p.kappa > 0.0;
}

}  // namespace detail

struct NoObserver {
    template <class... A>
    void operator()(const A&...) const noexcept {}
};

/*
 * Runs one trial with instantaneous Bernoulli outcomes. `key` is the
 * replicate key; the block list, outcomes, posterior draws and Thompson draws
 * come from separate streams derived from it. `obs(record, state, cmp)` is
 * called once per patient after the outcome and the policy update.
 */
template <class Observer = NoObserver>
TrialState run_trial(const TrialSetup& setup, std::uint64_t key, Observer&& obs = {}) {
    check_setup(setup.theta.size(), setup.priors.size(), setup.n_max);
    const DesignParams& p = setup.design;
    const std::size_t arms = setup.theta.size();
    const RandomizationList list{key, arms};
    Stream outcome_rng = make_stream(key, StreamTag::Outcome);
    Stream thompson_rng = make_stream(key, StreamTag::Thompson);
    BetaComparator cmp(setup.priors, setup.estimator, make_stream(key, StreamTag::PosteriorDraws), p.delta,
                       p.theta_low);
    TrialState s(setup.priors);
    if (detail::needs_initial_probabilities(p) || setup.record_probabilities) {
        detail::record_probabilities(cmp, s, ArmSet::all(arms), setup.record_probabilities);
    }

    for (std::uint64_t i = 1; i <= setup.n_max; ++i) {
        const Assignment a = detail::choose_arm(p, list, s, i, thompson_rng);
        const bool y = bernoulli(outcome_rng, setup.theta[a.arm]);
        s.n = a.n;
        s.N = i;
        ++s.assigned[a.arm];
        ++(y ? s.successes : s.failures)[a.arm];
        s.posterior[a.arm] = update_beta(setup.priors[a.arm], s.successes[a.arm], s.failures[a.arm]);
        cmp.observe(a.arm, y);
        if (i >= p.burn_in) {
            detail::apply_policy(p, cmp, s, setup.record_probabilities, DropRecord{a.n, i});
        } else if (setup.record_probabilities || detail::needs_initial_probabilities(p)) {
            detail::record_probabilities(cmp, s, ArmSet::all(arms), setup.record_probabilities);
        }
        if (s.running() && i == setup.n_max) s.stop = StopReason::ReachedMax;
        obs(PatientRecord{i, a.n, a.arm, y ? 1.0 : 0.0}, s, cmp);
        if (!s.running()) break;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Trace

struct TraceRow {
    std::uint64_t i = 0;
    std::uint64_t n = 0;
    Arm arm = 0;
    double outcome = 0.0;
    double t = std::numeric_limits<double>::quiet_NaN();
    std::vector<ArmStatus> status;
    std::vector<double> param_a;  // alpha (Beta) or shape (Gamma)
    std::vector<double> param_b;  // beta (Beta) or rate (Gamma)
    double p_ctrl_margin = 0.0;
    std::vector<double> p_max;
    std::uint32_t candidates = 0;
    std::vector<std::uint64_t> events;  // time-to-event runs only
    std::vector<double> exposure;
};

struct TrialTrace {
    std::vector<TraceRow> rows;
    StopReason stop = StopReason::Running;
    std::uint64_t n = 0;
    std::uint64_t N = 0;
    std::uint32_t candidates = 0;
    std::vector<std::optional<DropRecord>> drops;
};

namespace detail {

inline void split(const BetaPosterior& p, double& a, double& b) {
    a = p.alpha;
    b = p.beta;
}
inline void split(const GammaPosterior& p, double& a, double& b) {
    a = p.shape;
    b = p.rate;
}

}  // namespace detail

/// Observer that copies every record into a TrialTrace.
struct TraceRecorder {
    TrialTrace* trace;
    bool time_to_event = false;

    template <class State, class Cmp>
    void operator()(const PatientRecord& r, const State& s, const Cmp&) const {
        TraceRow row;
        row.i = r.i;
        row.n = r.n;
        row.arm = r.arm;
        row.outcome = r.outcome;
        row.t = s.time;
        row.status = s.status;
        row.param_a.resize(s.num_arms());
        row.param_b.resize(s.num_arms());
        for (std::size_t k = 0; k < s.num_arms(); ++k) detail::split(s.posterior[k], row.param_a[k], row.param_b[k]);
        row.p_ctrl_margin = s.p_ctrl_margin;
        row.p_max = s.p_max;
        row.candidates = s.candidates.mask();
        if (time_to_event) {
            row.events = s.successes;
            row.exposure = s.exposure;
        }
        trace->rows.push_back(std::move(row));
    }
};

template <class State>
void finish_trace(TrialTrace& trace, const State& s) {
    trace.stop = s.stop;
    trace.n = s.n;
    trace.N = s.N;
    trace.candidates = s.candidates.mask();
    trace.drops = s.drops;
}

/// Full per-patient trace of one replicate.
inline TrialTrace trace_trial(TrialSetup setup, std::uint64_t key) {
    setup.record_probabilities = true;
    TrialTrace trace;
    const auto s = run_trial(setup, key, TraceRecorder{&trace});
    finish_trace(trace, s);
    return trace;
}

}  // namespace ate
