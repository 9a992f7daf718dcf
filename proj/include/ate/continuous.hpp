#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <stdexcept>
#include <vector>

#include "ate/allocation.hpp"
#include "ate/comparator.hpp"
#include "ate/posterior.hpp"
#include "ate/random.hpp"
#include "ate/randomization.hpp"
#include "ate/trial.hpp"

namespace ate {

struct ArrivalProcess {
    double rate = 1.0;
    double horizon = INFINITY;
};

/// Homogeneous Poisson arrival times on (0, horizon], at most max_count.
inline std::vector<double> simulate_arrivals(const ArrivalProcess& proc, Stream rng,
                                             std::size_t max_count = std::numeric_limits<std::size_t>::max()) {
    if (!(proc.rate > 0.0)) throw std::invalid_argument("arrival rate must be > 0");
    if (!(proc.horizon > 0.0)) throw std::invalid_argument("arrival horizon must be > 0");
    if (std::isinf(proc.horizon) && max_count == std::numeric_limits<std::size_t>::max()) {
        throw std::invalid_argument("unbounded arrival process needs a count limit");
    }
    std::vector<double> out;
    double t = 0.0;
    while (out.size() < max_count) {
        t += exponential(rng, proc.rate);
        if (t > proc.horizon) break;
        out.push_back(t);
    }
    return out;
}

inline void check_arrivals(const std::vector<double>& u) {
    for (std::size_t i = 1; i < u.size(); ++i) {
        if (!(u[i] > u[i - 1])) throw std::invalid_argument("arrival times must be strictly increasing");
    }
}

/*
 * Binary outcomes observed a fixed delay d after arrival. At the arrival of
 * each patient, outcomes with U_j < t - d are absorbed (in arrival order),
 * the policy is evaluated once, and the patient is assigned. A record for
 * patient j is emitted when its outcome is absorbed, carrying the state
 * after that epoch's evaluation. Outcomes still pending after the last
 * arrival are absorbed together at U_last + d. The policy runs only once the
 * latest absorbed patient index reaches the burn-in n0.
 */
template <class Observer = NoObserver>
TrialState run_delayed_trial(const TrialSetup& setup, const std::vector<double>& arrivals, double delay,
                             std::uint64_t key, Observer&& obs = {}) {
    check_setup(setup.theta.size(), setup.priors.size(), setup.n_max);
    check_arrivals(arrivals);
    if (!(delay >= 0.0)) throw std::invalid_argument("delay must be >= 0");
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

    struct Pending {
        PatientRecord rec;
        double u;
    };
    std::deque<Pending> pending;
    std::vector<PatientRecord> absorbed;

    auto absorb_until = [&](double t, bool all) {
        absorbed.clear();
        while (!pending.empty() && (all || pending.front().u < t - delay)) {
            const auto& r = pending.front().rec;
            const bool y = r.outcome != 0.0;
            ++(y ? s.successes : s.failures)[r.arm];
            s.posterior[r.arm] = update_beta(setup.priors[r.arm], s.successes[r.arm], s.failures[r.arm]);
            cmp.observe(r.arm, y);
            absorbed.push_back(r);
            pending.pop_front();
        }
        if (absorbed.empty()) return;
        s.time = t;
        const std::uint64_t last = absorbed.back().i;
        if (last >= p.burn_in) {
            detail::apply_policy(p, cmp, s, setup.record_probabilities, DropRecord{absorbed.back().n, last});
        } else if (setup.record_probabilities || detail::needs_initial_probabilities(p)) {
            detail::record_probabilities(cmp, s, ArmSet::all(arms), setup.record_probabilities);
        }
    };
    auto emit = [&] {
        for (const auto& r : absorbed) obs(r, s, cmp);
    };

    const std::uint64_t n_patients = std::min<std::uint64_t>(setup.n_max, arrivals.size());
    for (std::uint64_t i = 1; i <= n_patients; ++i) {
        const double t = arrivals[i - 1];
        absorb_until(t, false);
        s.time = t;
        if (!s.running()) {
            emit();
            break;
        }
        emit();
        const Assignment a = detail::choose_arm(p, list, s, i, thompson_rng);
        const bool y = bernoulli(outcome_rng, setup.theta[a.arm]);
        s.n = a.n;
        s.N = i;
        ++s.assigned[a.arm];
        pending.push_back({PatientRecord{i, a.n, a.arm, y ? 1.0 : 0.0}, t});
    }
    if (s.running()) {
        const double t_end = (n_patients > 0 ? arrivals[n_patients - 1] : 0.0) + delay;
        absorb_until(t_end, true);
        if (s.running()) s.stop = StopReason::ReachedMax;
        emit();
    } else {
        // Patients assigned before the stop whose outcomes never matured.
        for (const auto& q : pending) obs(q.rec, s, cmp);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Time to event

struct VaccineCheck {
    double ve_star = 0.0;
    double epsilon1 = 0.01;
};

enum class VaccineDecision { ContinueTrial, DeclareSuccess, DeclareFutility };

inline VaccineDecision vaccine_stop_check(const GammaPosterior& control, const GammaPosterior& vaccine, double ve_star,
                                          double epsilon1) {
    if (!(epsilon1 > 0.0 && epsilon1 < 0.5)) throw std::invalid_argument("vaccine epsilon1 must lie in (0, 0.5)");
    const double pr = prob_vaccine_efficacy(control, vaccine, ve_star).value;
    if (pr > 1.0 - epsilon1) return VaccineDecision::DeclareSuccess;
    if (pr < epsilon1) return VaccineDecision::DeclareFutility;
    return VaccineDecision::ContinueTrial;
}

struct TteSetup {
    std::vector<double> intensity;  // generating exponential rates
    std::vector<GammaPosterior> priors;
    DesignParams design;
    std::uint64_t n_max = 0;
    EstimatorConfig estimator;
    double end_of_study = INFINITY;  // calendar time at which follow-up stops
    std::optional<VaccineCheck> vaccine;
    bool record_probabilities = false;
};

/// Event count and total time on test per arm at calendar time t.
struct ExposureSummary {
    std::vector<std::uint64_t> events;
    std::vector<std::uint64_t> censored;
    std::vector<double> ttt;
};

inline ExposureSummary exposure_at(double t, const std::vector<double>& entry, const std::vector<double>& x,
                                   const std::vector<Arm>& arm, std::size_t arms) {
    ExposureSummary e{std::vector<std::uint64_t>(arms, 0), std::vector<std::uint64_t>(arms, 0),
                      std::vector<double>(arms, 0.0)};
    for (std::size_t j = 0; j < entry.size(); ++j) {
        if (entry[j] > t) continue;
        const double at_risk = t - entry[j];
        if (x[j] <= at_risk) {
            ++e.events[arm[j]];
            e.ttt[arm[j]] += x[j];
        } else {
            ++e.censored[arm[j]];
            e.ttt[arm[j]] += at_risk;
        }
    }
    return e;
}

/*
 * Right-censored exponential event times with Gamma posteriors. At each
 * arrival t the posteriors use the events and total time on test at t, the
 * hazard-scale policy is evaluated (after burn-in), and the patient is
 * assigned with X ~ Exp(intensity of the arm). Records are emitted at
 * assignment. With a vaccine check the success/futility criterion is
 * evaluated at every event time up to end_of_study.
 */
template <class Observer = NoObserver>
TteTrialState run_tte_trial(const TteSetup& setup, const std::vector<double>& arrivals, std::uint64_t key,
                            Observer&& obs = {}) {
    check_setup(setup.intensity.size(), setup.priors.size(), setup.n_max);
    check_arrivals(arrivals);
    for (double th : setup.intensity) {
        if (!(th > 0.0)) throw std::invalid_argument("intensities must be > 0");
    }
    if (setup.vaccine && setup.intensity.size() != 2) throw std::invalid_argument("vaccine check needs two arms");
    const DesignParams& p = setup.design;
    const std::size_t arms = setup.intensity.size();
    const RandomizationList list{key, arms};
    Stream outcome_rng = make_stream(key, StreamTag::Outcome);
    Stream thompson_rng = make_stream(key, StreamTag::Thompson);
    GammaComparator cmp(setup.priors, setup.estimator, make_stream(key, StreamTag::PosteriorDraws), p.rho,
                        p.theta_high);
    TteTrialState s(setup.priors);

    std::vector<double> entry;
    std::vector<double> x;
    std::vector<Arm> arm_of;

    auto refresh = [&](double t) {
        const auto e = exposure_at(t, entry, x, arm_of, arms);
        for (Arm k = 0; k < arms; ++k) {
            s.successes[k] = e.events[k];
            s.failures[k] = e.censored[k];
            s.exposure[k] = e.ttt[k];
            s.posterior[k] = update_gamma(setup.priors[k], e.events[k], e.ttt[k]);
            cmp.set(k, s.posterior[k]);
        }
        s.time = t;
    };
    // Vaccine criterion at each event time in (from, to].
    auto monitor = [&](double from, double to) {
        if (!setup.vaccine) return;
        std::vector<double> times;
        for (std::size_t j = 0; j < entry.size(); ++j) {
            const double v = entry[j] + x[j];
            if (v > from && v <= to) times.push_back(v);
        }
        std::sort(times.begin(), times.end());
        for (double v : times) {
            refresh(v);
            const auto d = vaccine_stop_check(s.posterior[0], s.posterior[1], setup.vaccine->ve_star,
                                              setup.vaccine->epsilon1);
            if (d == VaccineDecision::DeclareSuccess) s.stop = StopReason::VaccineSuccess;
            if (d == VaccineDecision::DeclareFutility) s.stop = StopReason::VaccineFutility;
            if (!s.running()) return;
        }
    };

    if (detail::needs_initial_probabilities(p) || setup.record_probabilities) {
        detail::record_probabilities(cmp, s, ArmSet::all(arms), setup.record_probabilities);
    }
    double last_t = 0.0;
    const std::uint64_t n_patients = std::min<std::uint64_t>(setup.n_max, arrivals.size());
    for (std::uint64_t i = 1; i <= n_patients; ++i) {
        const double t = arrivals[i - 1];
        if (t > setup.end_of_study) break;
        monitor(last_t, t);
        if (!s.running()) break;
        refresh(t);
        last_t = t;
        if (i > 1 && i - 1 >= p.burn_in) {
            detail::apply_policy(p, cmp, s, setup.record_probabilities, DropRecord{s.n, s.N});
        } else if (setup.record_probabilities || detail::needs_initial_probabilities(p)) {
            detail::record_probabilities(cmp, s, ArmSet::all(arms), setup.record_probabilities);
        }
        if (!s.running()) break;
        const Assignment a = detail::choose_arm(p, list, s, i, thompson_rng);
        const double xi = exponential(outcome_rng, setup.intensity[a.arm]);
        entry.push_back(t);
        x.push_back(xi);
        arm_of.push_back(a.arm);
        s.n = a.n;
        s.N = i;
        ++s.assigned[a.arm];
        obs(PatientRecord{i, a.n, a.arm, xi}, s, cmp);
    }
    if (s.running()) {
        const double t_end = std::isfinite(setup.end_of_study) ? std::max(setup.end_of_study, last_t) : last_t;
        monitor(last_t, t_end);
        if (s.running()) {
            refresh(t_end);
            s.stop = StopReason::ReachedMax;
        }
    }
    return s;
}

/// Full per-patient trace of one time-to-event replicate.
inline TrialTrace trace_tte_trial(TteSetup setup, const std::vector<double>& arrivals, std::uint64_t key) {
    setup.record_probabilities = true;
    TrialTrace trace;
    const auto s = run_tte_trial(setup, arrivals, key, TraceRecorder{&trace, true});
    finish_trace(trace, s);
    return trace;
}

/// Full per-patient trace of one delayed-outcome replicate.
inline TrialTrace trace_delayed_trial(TrialSetup setup, const std::vector<double>& arrivals, double delay,
                                      std::uint64_t key) {
    setup.record_probabilities = true;
    TrialTrace trace;
    const auto s = run_delayed_trial(setup, arrivals, delay, key, TraceRecorder{&trace});
    finish_trace(trace, s);
    return trace;
}

}  // namespace ate
