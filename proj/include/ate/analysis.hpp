#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <type_traits>
#include <vector>

#include "ate/allocation.hpp"
#include "ate/comparator.hpp"
#include "ate/continuous.hpp"
#include "ate/posterior.hpp"
#include "ate/random.hpp"
#include "ate/trial.hpp"

namespace ate {

// ---------------------------------------------------------------------------
// Final test for two-arm trials

enum class FinalVariant { Original, NoControlMargin, SymmetricMargin };

enum class Verdict : std::uint8_t { Positive, Negative, Inconclusive };

inline const char* to_string(Verdict v) noexcept {
    switch (v) {
        case Verdict::Positive: return "positive";
        case Verdict::Negative: return "negative";
        case Verdict::Inconclusive: return "inconclusive";
    }
    return "?";
}

inline const char* to_string(FinalVariant v) noexcept {
    switch (v) {
        case FinalVariant::Original: return "original";
        case FinalVariant::NoControlMargin: return "no_control_margin";
        case FinalVariant::SymmetricMargin: return "symmetric_margin";
    }
    return "?";
}

struct FinalTest {
    std::string label = "final";
    FinalVariant variant = FinalVariant::Original;
    double epsilon0 = 0.05;
    double delta0 = 0.05;
};

inline void validate(const FinalTest& t, const std::string& where = "final_test") {
    if (!(t.epsilon0 > 0.0 && t.epsilon0 < 0.5)) throw ConfigError(where + ".epsilon0", "must lie in (0, 0.5)");
    if (!(t.delta0 >= 0.0 && t.delta0 < 1.0)) throw ConfigError(where + ".delta0", "must lie in [0, 1)");
}

/*
 * `pair(shift)` returns P(theta_0 + shift >= theta_1).
 *   Original         positive iff P(theta_0 + d0 >= theta_1) <= e0,
 *                    negative iff P(theta_1 >= theta_0) <= e0
 *   NoControlMargin  d0 = 0 in the positive branch
 *   SymmetricMargin  negative iff P(theta_1 >= theta_0 + d0) <= e0
 */
template <class Pair>
Verdict decide_final(Pair&& pair, const FinalTest& t) {
    if (!(t.epsilon0 < 0.5)) throw std::invalid_argument("final test needs epsilon0 < 0.5");
    double keep_control = 0.0;
    double keep_experimental = 0.0;
    switch (t.variant) {
        case FinalVariant::Original:
            keep_control = pair(t.delta0);
            keep_experimental = 1.0 - pair(0.0);
            break;
        case FinalVariant::NoControlMargin:
            keep_control = pair(0.0);
            keep_experimental = 1.0 - keep_control;
            break;
        case FinalVariant::SymmetricMargin:
            keep_control = pair(t.delta0);
            keep_experimental = 1.0 - keep_control;
            break;
    }
    if (keep_control <= t.epsilon0) return Verdict::Positive;
    if (keep_experimental <= t.epsilon0) return Verdict::Negative;
    return Verdict::Inconclusive;
}

inline Verdict final_test(const BetaPosterior& control, const BetaPosterior& experimental, const FinalTest& t) {
    return decide_final([&](double s) { return pairwise_prob(control, experimental, s).value; }, t);
}

inline Verdict final_test(BetaComparator& cmp, const FinalTest& t) {
    if (cmp.num_arms() != 2) throw std::invalid_argument("final test is defined for two arms");
    return decide_final([&](double s) { return cmp.pairwise(0, 1, s); }, t);
}

// ---------------------------------------------------------------------------
// Experiment description

enum class Model { Bernoulli, Delayed, TimeToEvent };
enum class Role { Null, Alt };
enum class BandFamily { JointStatus, DroppedStatus, MaximalControlOut };

inline const char* to_string(Model m) noexcept {
    switch (m) {
        case Model::Bernoulli: return "bernoulli";
        case Model::Delayed: return "delayed";
        case Model::TimeToEvent: return "tte";
    }
    return "?";
}

inline const char* to_string(BandFamily f) noexcept {
    switch (f) {
        case BandFamily::JointStatus: return "joint_status";
        case BandFamily::DroppedStatus: return "dropped_status";
        case BandFamily::MaximalControlOut: return "maximal_with_control_out";
    }
    return "?";
}

struct Scenario {
    std::string label;
    Role role = Role::Null;
    std::vector<double> theta;
};

struct ExperimentSpec {
    std::string name = "experiment";
    Model model = Model::Bernoulli;
    std::size_t num_arms = 2;
    std::vector<BetaPosterior> beta_priors;
    std::vector<GammaPosterior> gamma_priors;
    std::vector<Scenario> scenarios;
    std::vector<DesignParams> designs;
    std::vector<FinalTest> final_tests;
    std::vector<std::uint64_t> n_max;
    std::vector<std::uint64_t> checkpoints;
    std::size_t replicates = 1000;
    std::uint64_t master_seed = 1;
    EstimatorConfig estimator;
    std::vector<BandFamily> bands;
    double arrival_rate = 1.0;
    double delay = 0.0;
    double end_of_study = INFINITY;
    std::optional<VaccineCheck> vaccine;
    bool keep_verdicts = false;

    /// Sorted union of n_max values and extra checkpoints.
    std::vector<std::uint64_t> evaluation_points() const {
        std::vector<std::uint64_t> pts = n_max;
        pts.insert(pts.end(), checkpoints.begin(), checkpoints.end());
        std::sort(pts.begin(), pts.end());
        pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
        return pts;
    }
    std::uint64_t horizon() const {
        const auto pts = evaluation_points();
        return pts.empty() ? 0 : pts.back();
    }
    bool wants_band(BandFamily f) const { return std::find(bands.begin(), bands.end(), f) != bands.end(); }
};

inline std::uint64_t replicate_key(std::uint64_t master, std::size_t design, std::size_t scenario,
                                   std::size_t replicate) {
    return derive_key(master, {design, scenario, replicate});
}

// ---------------------------------------------------------------------------
// Aggregates

// Posterior means are summed in fixed point so totals do not depend on the
// order in which replicates finish.
inline constexpr double fixed_point_scale = 1099511627776.0;  // 2^40

inline std::int64_t to_fixed(double x) { return static_cast<std::int64_t>(std::llround(x * fixed_point_scale)); }

struct VerdictRow {
    std::size_t replicate = 0;
    std::uint64_t i = 0;
    std::string test;
    Verdict verdict = Verdict::Inconclusive;
    std::vector<std::optional<std::uint64_t>> n_last;
    std::uint64_t successes = 0;
    std::vector<std::uint64_t> assigned;
};

struct CheckpointCounts {
    std::uint64_t i = 0;
    std::vector<std::array<std::uint64_t, 3>> verdicts;  // per final test, indexed by Verdict
    std::array<std::uint64_t, 3> drop_verdicts{};        // control dropped / all experimental dropped / neither
    std::vector<std::uint64_t> dropped;                  // per arm
    std::uint64_t imbalance = 0;                         // N_1(i) < i/2, two-arm trials
    std::vector<std::vector<std::uint64_t>> assigned_hist;  // per arm, counts of N_k(i) = v
    std::vector<std::uint64_t> success_hist;

    void merge(const CheckpointCounts& o) {
        for (std::size_t t = 0; t < verdicts.size(); ++t) {
            for (std::size_t v = 0; v < 3; ++v) verdicts[t][v] += o.verdicts[t][v];
        }
        for (std::size_t v = 0; v < 3; ++v) drop_verdicts[v] += o.drop_verdicts[v];
        for (std::size_t k = 0; k < dropped.size(); ++k) dropped[k] += o.dropped[k];
        imbalance += o.imbalance;
        for (std::size_t k = 0; k < assigned_hist.size(); ++k) {
            for (std::size_t v = 0; v < assigned_hist[k].size(); ++v) assigned_hist[k][v] += o.assigned_hist[k][v];
        }
        for (std::size_t v = 0; v < success_hist.size(); ++v) success_hist[v] += o.success_hist[v];
    }
};

/// Aggregated results of one (design, scenario) cell.
struct CellResult {
    std::size_t design = 0;
    std::size_t scenario = 0;
    std::uint64_t replicates = 0;
    std::vector<CheckpointCounts> checkpoints;
    // band family -> event code -> count per i (index i - 1)
    std::map<BandFamily, std::map<std::uint32_t, std::vector<std::uint64_t>>> bands;
    std::vector<std::vector<std::int64_t>> post_mean_sum;    // per arm, per i
    std::vector<std::vector<std::int64_t>> post_mean_sumsq;  // per arm, per i
    std::map<StopReason, std::uint64_t> stops;
    std::vector<VerdictRow> verdict_rows;

    void merge(CellResult&& o) {
        replicates += o.replicates;
        for (std::size_t c = 0; c < checkpoints.size(); ++c) checkpoints[c].merge(o.checkpoints[c]);
        for (auto& [fam, events] : o.bands) {
            auto& mine = bands[fam];
            for (auto& [code, counts] : events) {
                auto& dst = mine[code];
                if (dst.empty()) dst.assign(counts.size(), 0);
                for (std::size_t i = 0; i < counts.size(); ++i) dst[i] += counts[i];
            }
        }
        for (std::size_t k = 0; k < post_mean_sum.size(); ++k) {
            for (std::size_t i = 0; i < post_mean_sum[k].size(); ++i) {
                post_mean_sum[k][i] += o.post_mean_sum[k][i];
                post_mean_sumsq[k][i] += o.post_mean_sumsq[k][i];
            }
        }
        for (auto& [r, c] : o.stops) stops[r] += c;
        for (auto& row : o.verdict_rows) verdict_rows.push_back(std::move(row));
    }
};

inline CellResult make_cell(const ExperimentSpec& spec, std::size_t design, std::size_t scenario) {
    CellResult c;
    c.design = design;
    c.scenario = scenario;
    const std::size_t arms = spec.num_arms;
    for (std::uint64_t i : spec.evaluation_points()) {
        CheckpointCounts cp;
        cp.i = i;
        cp.verdicts.assign(spec.final_tests.size(), {0, 0, 0});
        cp.dropped.assign(arms, 0);
        cp.assigned_hist.assign(arms, std::vector<std::uint64_t>(i + 1, 0));
        cp.success_hist.assign(i + 1, 0);
        c.checkpoints.push_back(std::move(cp));
    }
    const std::size_t h = spec.horizon();
    c.post_mean_sum.assign(arms, std::vector<std::int64_t>(h, 0));
    c.post_mean_sumsq.assign(arms, std::vector<std::int64_t>(h, 0));
    return c;
}

// Event codes -----------------------------------------------------------------

inline std::uint32_t joint_status_code(const std::vector<ArmStatus>& st) {
    std::uint32_t code = 0;
    for (std::size_t k = st.size(); k-- > 0;) code = code * 3 + static_cast<std::uint32_t>(st[k]);
    return code;
}

inline std::string joint_status_label(std::uint32_t code, std::size_t arms) {
    static constexpr char letters[] = {'A', 'D', 'X'};
    std::string s = "status_";
    for (std::size_t k = 0; k < arms; ++k) {
        s += letters[code % 3];
        code /= 3;
    }
    return s;
}

inline std::string dropped_label(std::uint32_t mask) {
    if (mask == 0) return "dropped_none";
    std::string s = "dropped";
    ArmSet::from_mask(mask).for_each([&](Arm k) { s += "_" + std::to_string(k); });
    return s;
}

// 0 while the control is active, otherwise 1 + the arm with the largest
// p_max (ties to the smaller index).
inline std::uint32_t maximal_code(const std::vector<double>& p_max, ArmStatus control) {
    if (control == ArmStatus::Active) return 0;
    Arm top = 0;
    for (Arm k = 1; k < p_max.size(); ++k) {
        if (p_max[k] > p_max[top]) top = k;
    }
    return static_cast<std::uint32_t>(top) + 1;
}

inline std::string maximal_label(std::uint32_t code) {
    return code == 0 ? "control_active" : "maximal_" + std::to_string(code - 1) + "_control_out";
}

inline std::string band_label(BandFamily f, std::uint32_t code, std::size_t arms) {
    switch (f) {
        case BandFamily::JointStatus: return joint_status_label(code, arms);
        case BandFamily::DroppedStatus: return dropped_label(code);
        case BandFamily::MaximalControlOut: return maximal_label(code);
    }
    return "?";
}

namespace detail {

inline double mean_of(const BetaPosterior& p) { return p.mean(); }
inline double mean_of(const GammaPosterior& p) { return p.mean(); }

// Collects what one replicate contributes, indexed by patient i.
struct ReplicateRecorder {
    const ExperimentSpec* spec;
    std::size_t horizon;
    std::vector<std::uint64_t> eval_points;
    bool final_tests;

    std::uint64_t last_i = 0;
    std::vector<std::uint64_t> cum_assigned;
    std::uint64_t cum_success = 0;
    std::vector<std::vector<std::uint64_t>> assigned_at;  // per i, per arm
    std::vector<std::uint64_t> success_at;
    std::vector<std::vector<double>> post_mean_at;
    std::vector<std::uint32_t> joint_at;
    std::vector<std::uint32_t> maximal_at;
    std::map<std::uint64_t, std::vector<Verdict>> verdicts_at;
    std::vector<Verdict> last_verdicts;

    ReplicateRecorder(const ExperimentSpec& s, bool with_tests)
        : spec(&s),
          horizon(s.horizon()),
          eval_points(s.evaluation_points()),
          final_tests(with_tests),
          cum_assigned(s.num_arms, 0),
          assigned_at(horizon),
          success_at(horizon, 0),
          post_mean_at(horizon),
          joint_at(horizon, 0),
          maximal_at(horizon, 0) {}

    template <class State, class Cmp>
    void operator()(const PatientRecord& r, const State& s, Cmp& cmp) {
        if (r.i < 1 || r.i > horizon) return;
        ++cum_assigned[r.arm];
        if (r.outcome != 0.0) ++cum_success;
        const std::size_t at = r.i - 1;
        assigned_at[at] = cum_assigned;
        success_at[at] = cum_success;
        post_mean_at[at].resize(s.num_arms());
        for (std::size_t k = 0; k < s.num_arms(); ++k) post_mean_at[at][k] = mean_of(s.posterior[k]);
        joint_at[at] = joint_status_code(s.status);
        if (spec->wants_band(BandFamily::MaximalControlOut)) maximal_at[at] = maximal_code(s.p_max, s.status[0]);
        last_i = r.i;
        if constexpr (std::is_same_v<Cmp, BetaComparator>) {
            const bool checkpoint = std::binary_search(eval_points.begin(), eval_points.end(), r.i);
            if (final_tests && (checkpoint || !s.running() || r.i == horizon)) {
                last_verdicts.clear();
                for (const auto& t : spec->final_tests) last_verdicts.push_back(final_test(cmp, t));
                if (checkpoint) verdicts_at[r.i] = last_verdicts;
            }
        }
    }

    // Carries the final state forward to the horizon after an early stop.
    void fill() {
        if (last_i == 0) throw std::runtime_error("trial produced no patients");
        for (std::size_t at = last_i; at < horizon; ++at) {
            assigned_at[at] = assigned_at[last_i - 1];
            success_at[at] = success_at[last_i - 1];
            post_mean_at[at] = post_mean_at[last_i - 1];
            joint_at[at] = joint_at[last_i - 1];
            maximal_at[at] = maximal_at[last_i - 1];
        }
        if (final_tests) {
            for (std::uint64_t i : eval_points) {
                if (i > last_i) verdicts_at[i] = last_verdicts;
            }
        }
    }
};

template <class State>
void accumulate(const ExperimentSpec& spec, std::size_t replicate, const ReplicateRecorder& rec, const State& final_state,
                CellResult& cell) {
    const std::size_t arms = spec.num_arms;
    const std::size_t h = rec.horizon;
    ++cell.replicates;
    ++cell.stops[final_state.stop];

    auto dropped_by = [&](Arm k, std::uint64_t i) {
        return final_state.drops[k].has_value() && final_state.drops[k]->N_last <= i;
    };

    for (std::size_t at = 0; at < h; ++at) {
        for (std::size_t k = 0; k < arms; ++k) {
            const double m = rec.post_mean_at[at][k];
            cell.post_mean_sum[k][at] += to_fixed(m);
            cell.post_mean_sumsq[k][at] += to_fixed(m * m);
        }
    }
    auto bump = [&](BandFamily f, std::uint32_t code, std::size_t at) {
        auto& v = cell.bands[f][code];
        if (v.empty()) v.assign(h, 0);
        ++v[at];
    };
    for (std::size_t at = 0; at < h; ++at) {
        if (spec.wants_band(BandFamily::JointStatus)) bump(BandFamily::JointStatus, rec.joint_at[at], at);
        if (spec.wants_band(BandFamily::MaximalControlOut)) bump(BandFamily::MaximalControlOut, rec.maximal_at[at], at);
        if (spec.wants_band(BandFamily::DroppedStatus)) {
            std::uint32_t mask = 0;
            for (Arm k = 0; k < arms; ++k) {
                if (dropped_by(k, at + 1)) mask |= 1u << k;
            }
            bump(BandFamily::DroppedStatus, mask, at);
        }
    }

    for (auto& cp : cell.checkpoints) {
        const std::size_t at = cp.i - 1;
        bool control_out = dropped_by(0, cp.i);
        bool all_experimental_out = true;
        for (Arm k = 0; k < arms; ++k) {
            const bool d = dropped_by(k, cp.i);
            if (d) ++cp.dropped[k];
            if (k > 0) all_experimental_out = all_experimental_out && d;
        }
        ++cp.drop_verdicts[control_out ? 0 : (all_experimental_out ? 1 : 2)];
        const auto& n_at = rec.assigned_at[at];
        for (Arm k = 0; k < arms; ++k) ++cp.assigned_hist[k][std::min<std::uint64_t>(n_at[k], cp.i)];
        ++cp.success_hist[std::min<std::uint64_t>(rec.success_at[at], cp.i)];
        if (arms == 2 && 2 * n_at[1] < cp.i) ++cp.imbalance;
        if (rec.final_tests) {
            const auto& v = rec.verdicts_at.at(cp.i);
            for (std::size_t t = 0; t < v.size(); ++t) {
                ++cp.verdicts[t][static_cast<std::size_t>(v[t])];
                if (spec.keep_verdicts) {
                    VerdictRow row;
                    row.replicate = replicate;
                    row.i = cp.i;
                    row.test = spec.final_tests[t].label;
                    row.verdict = v[t];
                    row.n_last.resize(arms);
                    for (Arm k = 0; k < arms; ++k) {
                        if (dropped_by(k, cp.i)) row.n_last[k] = final_state.drops[k]->n_last;
                    }
                    row.successes = rec.success_at[at];
                    row.assigned = n_at;
                    cell.verdict_rows.push_back(std::move(row));
                }
            }
        }
    }
}

}  // namespace detail

/// Builds the per-cell trial setup for Bernoulli and delayed models.
inline TrialSetup make_trial_setup(const ExperimentSpec& spec, std::size_t design, std::size_t scenario) {
    TrialSetup s;
    s.theta = spec.scenarios.at(scenario).theta;
    s.priors = spec.beta_priors;
    s.design = spec.designs.at(design);
    s.n_max = spec.horizon();
    s.estimator = spec.estimator;
    s.record_probabilities = spec.wants_band(BandFamily::MaximalControlOut);
    return s;
}

inline TteSetup make_tte_setup(const ExperimentSpec& spec, std::size_t design, std::size_t scenario) {
    TteSetup s;
    s.intensity = spec.scenarios.at(scenario).theta;
    s.priors = spec.gamma_priors;
    s.design = spec.designs.at(design);
    s.n_max = spec.horizon();
    s.estimator = spec.estimator;
    s.end_of_study = spec.end_of_study;
    s.vaccine = spec.vaccine;
    s.record_probabilities = spec.wants_band(BandFamily::MaximalControlOut);
    return s;
}

/// Runs one replicate of one cell and adds it to `cell`.
inline void run_replicate(const ExperimentSpec& spec, std::size_t design, std::size_t scenario, std::size_t replicate,
                          CellResult& cell) {
    const std::uint64_t key = replicate_key(spec.master_seed, design, scenario, replicate);
    const std::uint64_t h = spec.horizon();
    const bool tests = spec.model != Model::TimeToEvent && spec.num_arms == 2 && !spec.final_tests.empty();
    detail::ReplicateRecorder rec(spec, tests);
    auto arrivals = [&] {
        return simulate_arrivals({spec.arrival_rate, INFINITY}, make_stream(key, StreamTag::Arrival), h);
    };
    switch (spec.model) {
        case Model::Bernoulli: {
            const auto s = run_trial(make_trial_setup(spec, design, scenario), key, rec);
            rec.fill();
            detail::accumulate(spec, replicate, rec, s, cell);
            break;
        }
        case Model::Delayed: {
            const auto s = run_delayed_trial(make_trial_setup(spec, design, scenario), arrivals(), spec.delay, key, rec);
            rec.fill();
            detail::accumulate(spec, replicate, rec, s, cell);
            break;
        }
        case Model::TimeToEvent: {
            const auto s = run_tte_trial(make_tte_setup(spec, design, scenario), arrivals(), key, rec);
            rec.fill();
            detail::accumulate(spec, replicate, rec, s, cell);
            break;
        }
    }
}

/// Full per-patient trace of one replicate, on the same streams as run_replicate.
inline TrialTrace trace_replicate(const ExperimentSpec& spec, std::size_t design, std::size_t scenario,
                                  std::size_t replicate) {
    const std::uint64_t key = replicate_key(spec.master_seed, design, scenario, replicate);
    auto arrivals = [&] {
        return simulate_arrivals({spec.arrival_rate, INFINITY}, make_stream(key, StreamTag::Arrival), spec.horizon());
    };
    switch (spec.model) {
        case Model::Bernoulli: return trace_trial(make_trial_setup(spec, design, scenario), key);
        case Model::Delayed:
            return trace_delayed_trial(make_trial_setup(spec, design, scenario), arrivals(), spec.delay, key);
        case Model::TimeToEvent: return trace_tte_trial(make_tte_setup(spec, design, scenario), arrivals(), key);
    }
    throw std::logic_error("unknown model");
}

/// Context added to errors raised inside a replicate.
class ReplicateError : public std::runtime_error {
  public:
    ReplicateError(std::size_t design, std::size_t scenario, std::size_t replicate, const std::string& what)
        : std::runtime_error("design " + std::to_string(design) + ", scenario " + std::to_string(scenario) +
                             ", replicate " + std::to_string(replicate) + ": " + what) {}
};

/*
 * Runs every (design, scenario) cell for spec.replicates replicates on a pool
 * of `threads` workers. Workers accumulate privately and merge integer
 * counts at the end, so results do not depend on the thread count. Cells are
 * returned design-major. Setting *cancel stops workers after their current
 * chunk; cells then hold only the replicates that finished.
 */
inline std::vector<CellResult> run_experiment(const ExperimentSpec& spec, std::size_t threads = 1,
                                              const std::function<void(std::size_t, std::size_t)>& progress = {},
                                              const std::atomic<bool>* cancel = nullptr) {
    const std::size_t n_cells = spec.designs.size() * spec.scenarios.size();
    const std::size_t per_cell = spec.replicates;
    const std::size_t total = n_cells * per_cell;
    if (spec.horizon() == 0) throw std::invalid_argument("experiment needs at least one n_max");
    std::vector<CellResult> cells;
    for (std::size_t d = 0; d < spec.designs.size(); ++d) {
        for (std::size_t sc = 0; sc < spec.scenarios.size(); ++sc) cells.push_back(make_cell(spec, d, sc));
    }
    constexpr std::size_t chunk = 8;
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> done{0};
    std::atomic<bool> failed{false};
    std::mutex merge_mutex;
    std::exception_ptr error;

    auto worker = [&] {
        std::map<std::size_t, CellResult> local;
        try {
            for (;;) {
                const std::size_t start = next.fetch_add(chunk);
                if (start >= total || failed.load() || (cancel && cancel->load())) break;
                const std::size_t stop = std::min(total, start + chunk);
                for (std::size_t w = start; w < stop; ++w) {
                    const std::size_t c = w / per_cell;
                    const std::size_t r = w % per_cell;
                    auto it = local.find(c);
                    if (it == local.end()) {
                        it = local.emplace(c, make_cell(spec, cells[c].design, cells[c].scenario)).first;
                    }
                    try {
                        run_replicate(spec, cells[c].design, cells[c].scenario, r, it->second);
                    } catch (const std::exception& e) {
                        throw ReplicateError(cells[c].design, cells[c].scenario, r, e.what());
                    }
                }
                const std::size_t now = done.fetch_add(stop - start) + (stop - start);
                if (progress) progress(now, total);
            }
        } catch (...) {
            std::lock_guard lock(merge_mutex);
            if (!error) error = std::current_exception();
            failed = true;
            return;
        }
        std::lock_guard lock(merge_mutex);
        for (auto& [c, cell] : local) cells[c].merge(std::move(cell));
    };

    threads = std::max<std::size_t>(1, std::min(threads, total == 0 ? 1 : total));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (error) std::rethrow_exception(error);
    for (auto& c : cells) {
        std::sort(c.verdict_rows.begin(), c.verdict_rows.end(), [](const VerdictRow& a, const VerdictRow& b) {
            return std::tie(a.replicate, a.i, a.test) < std::tie(b.replicate, b.i, b.test);
        });
    }
    return cells;
}

// ---------------------------------------------------------------------------
// Operating characteristics

struct SummaryRow {
    std::string design;
    std::string scenario;
    std::string metric;
    std::uint64_t i = 0;
    double value = 0.0;
    double std_error = 0.0;
};

struct BandRow {
    std::string design;
    std::string scenario;
    std::string event;
    std::uint64_t i = 0;
    double probability = 0.0;
};

struct CdfRow {
    std::string design;
    std::string scenario;
    std::string variable;
    std::uint64_t i = 0;
    std::uint64_t value = 0;
    double cdf = 0.0;
};

inline double binomial_se(double p, double r) { return std::sqrt(std::max(0.0, p * (1.0 - p)) / r); }

inline std::array<const char*, 3> rate_names(Role role) {
    if (role == Role::Null) return {"false_positive", "true_negative", "inconclusive_null"};
    return {"true_positive", "false_negative", "inconclusive_alt"};
}

namespace detail {

inline std::pair<double, double> hist_mean_se(const std::vector<std::uint64_t>& hist, double r) {
    double s = 0.0;
    double ss = 0.0;
    for (std::size_t v = 0; v < hist.size(); ++v) {
        s += static_cast<double>(v) * static_cast<double>(hist[v]);
        ss += static_cast<double>(v) * static_cast<double>(v) * static_cast<double>(hist[v]);
    }
    const double mean = s / r;
    const double var = r > 1.0 ? std::max(0.0, (ss - r * mean * mean) / (r - 1.0)) : 0.0;
    return {mean, std::sqrt(var / r)};
}

}  // namespace detail

inline std::vector<SummaryRow> summarize(const ExperimentSpec& spec, const std::vector<CellResult>& cells) {
    std::vector<SummaryRow> out;
    for (const auto& cell : cells) {
        const auto& dname = spec.designs[cell.design].label;
        const auto& sc = spec.scenarios[cell.scenario];
        const double r = static_cast<double>(cell.replicates);
        auto add = [&](std::string metric, std::uint64_t i, double value, double se) {
            out.push_back({dname, sc.label, std::move(metric), i, value, se});
        };
        const auto names = rate_names(sc.role);
        for (const auto& cp : cell.checkpoints) {
            for (std::size_t t = 0; t < cp.verdicts.size(); ++t) {
                for (std::size_t v = 0; v < 3; ++v) {
                    const double p = static_cast<double>(cp.verdicts[t][v]) / r;
                    add(spec.final_tests[t].label + "/" + names[v], cp.i, p, binomial_se(p, r));
                }
            }
            for (std::size_t v = 0; v < 3; ++v) {
                const double p = static_cast<double>(cp.drop_verdicts[v]) / r;
                add(std::string("drop/") + names[v], cp.i, p, binomial_se(p, r));
            }
            for (std::size_t k = 0; k < cp.dropped.size(); ++k) {
                const double p = static_cast<double>(cp.dropped[k]) / r;
                add("dropped_" + std::to_string(k), cp.i, p, binomial_se(p, r));
            }
            if (spec.num_arms == 2) {
                const double p = static_cast<double>(cp.imbalance) / r;
                add("imbalance", cp.i, p, binomial_se(p, r));
            }
            for (std::size_t k = 0; k < cp.assigned_hist.size(); ++k) {
                const auto [m, se] = detail::hist_mean_se(cp.assigned_hist[k], r);
                add("mean_N_" + std::to_string(k), cp.i, m, se);
            }
            if (spec.model != Model::TimeToEvent) {
                const auto [m, se] = detail::hist_mean_se(cp.success_hist, r);
                add("mean_S", cp.i, m, se);
            }
        }
        const std::uint64_t h = spec.horizon();
        for (const auto& [reason, count] : cell.stops) {
            const double p = static_cast<double>(count) / r;
            add(std::string("stop/") + to_string(reason), h, p, binomial_se(p, r));
        }
        for (std::size_t k = 0; k < cell.post_mean_sum.size(); ++k) {
            for (std::size_t at = 0; at < cell.post_mean_sum[k].size(); ++at) {
                const double m = static_cast<double>(cell.post_mean_sum[k][at]) / fixed_point_scale / r;
                const double m2 = static_cast<double>(cell.post_mean_sumsq[k][at]) / fixed_point_scale / r;
                const double var = r > 1.0 ? std::max(0.0, (m2 - m * m) * r / (r - 1.0)) : 0.0;
                add("post_mean_" + std::to_string(k), at + 1, m, std::sqrt(var / r));
            }
        }
    }
    return out;
}

inline std::vector<BandRow> band_rows(const ExperimentSpec& spec, const std::vector<CellResult>& cells) {
    std::vector<BandRow> out;
    for (const auto& cell : cells) {
        const auto& dname = spec.designs[cell.design].label;
        const auto& sname = spec.scenarios[cell.scenario].label;
        const double r = static_cast<double>(cell.replicates);
        for (const auto& [fam, events] : cell.bands) {
            for (const auto& [code, counts] : events) {
                const std::string label = band_label(fam, code, spec.num_arms);
                for (std::size_t at = 0; at < counts.size(); ++at) {
                    out.push_back({dname, sname, label, at + 1, static_cast<double>(counts[at]) / r});
                }
            }
        }
    }
    return out;
}

inline std::vector<CdfRow> cdf_rows(const ExperimentSpec& spec, const std::vector<CellResult>& cells) {
    std::vector<CdfRow> out;
    for (const auto& cell : cells) {
        const auto& dname = spec.designs[cell.design].label;
        const auto& sname = spec.scenarios[cell.scenario].label;
        const double r = static_cast<double>(cell.replicates);
        auto emit = [&](const std::string& var, std::uint64_t i, const std::vector<std::uint64_t>& hist) {
            std::uint64_t acc = 0;
            for (std::size_t v = 0; v < hist.size(); ++v) {
                acc += hist[v];
                out.push_back({dname, sname, var, i, v, static_cast<double>(acc) / r});
            }
        };
        for (const auto& cp : cell.checkpoints) {
            for (std::size_t k = 0; k < cp.assigned_hist.size(); ++k) emit("N_" + std::to_string(k), cp.i, cp.assigned_hist[k]);
            if (spec.model != Model::TimeToEvent) emit("S", cp.i, cp.success_hist);
        }
    }
    return out;
}

/// Looks up one summary value; throws if absent.
inline const SummaryRow& find_metric(const std::vector<SummaryRow>& rows, const std::string& design,
                                     const std::string& scenario, const std::string& metric, std::uint64_t i) {
    for (const auto& r : rows) {
        if (r.design == design && r.scenario == scenario && r.metric == metric && r.i == i) return r;
    }
    throw std::out_of_range("no summary value " + design + "/" + scenario + "/" + metric + " at " + std::to_string(i));
}

}  // namespace ate
