#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ate/randomization.hpp"
#include "ate/types.hpp"

namespace ate {

enum class ArmStatus : std::uint8_t { Active, Dormant, Dropped };

enum class Policy { Rule1, Rule2, Thompson, FixedBlock };

inline const char* to_string(ArmStatus s) noexcept {
    switch (s) {
        case ArmStatus::Active: return "active";
        case ArmStatus::Dormant: return "dormant";
        case ArmStatus::Dropped: return "dropped";
    }
    return "?";
}

inline const char* to_string(Policy p) noexcept {
    switch (p) {
        case Policy::Rule1: return "rule1";
        case Policy::Rule2: return "rule2";
        case Policy::Thompson: return "thompson";
        case Policy::FixedBlock: return "fixed_block";
    }
    return "?";
}

/*
 * Thresholds steering the allocation policies. The hazard-scale fields (rho,
 * theta_high) are used by the time-to-event engine in place of delta and
 * theta_low.
 */
struct DesignParams {
    std::string label;
    Policy policy = Policy::Rule1;
    double epsilon = 0.0;
    double epsilon1 = 0.0;
    double epsilon2 = 0.0;
    double delta = 0.0;
    double theta_low = 0.0;
    double kappa = 1.0;
    std::size_t burn_in = 0;
    bool continue_after_control_drop = true;
    double rho = 1.0;
    double theta_high = INFINITY;

    /// True when the policy consumes comparative probabilities at all.
    bool adaptive() const noexcept {
        switch (policy) {
            case Policy::Rule1: return epsilon > 0.0;
            case Policy::Rule2: return epsilon > 0.0 || epsilon1 > 0.0 || epsilon2 > 0.0;
            case Policy::Thompson: return kappa > 0.0;
            case Policy::FixedBlock: return false;
        }
        return false;
    }
};

inline void validate(const DesignParams& p, std::size_t num_arms, const std::string& where = "design") {
    auto unit = [&](double v, const char* name) {
        if (!(v >= 0.0 && v < 1.0)) throw ConfigError(where + "." + name, "must lie in [0, 1)");
    };
    unit(p.epsilon, "epsilon");
    unit(p.epsilon1, "epsilon1");
    unit(p.epsilon2, "epsilon2");
    const double limit = 1.0 / static_cast<double>(num_arms);
    if (p.policy == Policy::Rule1 || p.policy == Policy::Rule2) {
        if (p.epsilon >= limit)
            throw ConfigError(where + ".epsilon", "must be below 1/(K+1) so that some arm always stays active");
        if (p.epsilon2 >= limit)
            throw ConfigError(where + ".epsilon2", "must be below 1/(K+1) so that some arm always stays active");
    }
    if (!(p.delta >= 0.0 && std::isfinite(p.delta))) throw ConfigError(where + ".delta", "must be >= 0");
    if (!(p.theta_low >= 0.0 && p.theta_low <= 1.0)) throw ConfigError(where + ".theta_low", "must lie in [0, 1]");
    if (!(p.kappa >= 0.0 && p.kappa <= 1.0)) throw ConfigError(where + ".kappa", "must lie in [0, 1]");
    if (!(p.rho > 0.0 && p.rho <= 1.0)) throw ConfigError(where + ".rho", "must lie in (0, 1]");
    if (!(p.theta_high > 0.0)) throw ConfigError(where + ".theta_high", "must be > 0");
}

/// Raised when no arm is active and no patient can be assigned.
class DeadlockError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct DropRecord {
    std::uint64_t n_last = 0;  // list index of the last outcome before the drop
    std::uint64_t N_last = 0;  // patients treated at that time
};

// ---------------------------------------------------------------------------
// Rule 1

/// Experimental k dormant iff p_max[k] < epsilon, control dormant iff
/// p_ctrl_margin < epsilon.
inline std::vector<ArmStatus> rule1_update(std::span<const double> p_max, double p_ctrl_margin, double epsilon) {
    std::vector<ArmStatus> out(p_max.size(), ArmStatus::Active);
    if (p_max.empty()) return out;
    out[0] = p_ctrl_margin < epsilon ? ArmStatus::Dormant : ArmStatus::Active;
    for (std::size_t k = 1; k < p_max.size(); ++k) out[k] = p_max[k] < epsilon ? ArmStatus::Dormant : ArmStatus::Active;
    return out;
}

// ---------------------------------------------------------------------------
// Rule 2

/*
 * Probability source for rule2_update. Values are evaluated lazily because
 * the candidate set shrinks while the rule runs.
 *   best(k, T)        P(arm k is the best arm of T)
 *   control_margin(T) P(control is within the safety margin of the best of T)
 *   meets_minimum(k)  P(arm k meets the minimum required response), margin
 *                     included for the control
 */
template <class S>
concept RuleProbabilities = requires(S& s, Arm k, ArmSet t) {
    { s.best(k, t) } -> std::convertible_to<double>;
    { s.control_margin(t) } -> std::convertible_to<double>;
    { s.meets_minimum(k) } -> std::convertible_to<double>;
};

struct Rule2Result {
    std::vector<ArmStatus> statuses;
    ArmSet candidates;
    std::vector<std::pair<Arm, DropRecord>> drops;
};

template <RuleProbabilities S>
Rule2Result rule2_update(S& probs, std::span<const ArmStatus> statuses, ArmSet candidates, const DesignParams& p,
                         DropRecord now) {
    Rule2Result r{{statuses.begin(), statuses.end()}, candidates, {}};
    auto drop = [&](Arm k) {
        r.statuses[k] = ArmStatus::Dropped;
        r.candidates.erase(k);
        r.drops.emplace_back(k, now);
    };
    for (Arm k = 1; k < r.statuses.size(); ++k) {
        if (!r.candidates.contains(k)) continue;
        const bool check_min = p.epsilon1 > 0.0;
        if (check_min && probs.meets_minimum(k) < p.epsilon1) {
            drop(k);
            continue;
        }
        const double pb = probs.best(k, r.candidates);
        if (pb < p.epsilon2) {
            drop(k);
        } else {
            r.statuses[k] = pb < p.epsilon ? ArmStatus::Dormant : ArmStatus::Active;
        }
    }
    if (r.candidates.contains(0)) {
        if (p.epsilon1 > 0.0 && probs.meets_minimum(0) < p.epsilon1) {
            drop(0);
        } else {
            const double pc = probs.control_margin(r.candidates);
            if (pc < p.epsilon2) {
                drop(0);
            } else {
                r.statuses[0] = pc < p.epsilon ? ArmStatus::Dormant : ArmStatus::Active;
            }
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Thompson

/// w_k = p_k^kappa / sum_l p_l^kappa, with 0^0 = 1.
inline std::vector<double> thompson_weights(std::span<const double> p_max, double kappa) {
    std::vector<double> w(p_max.size());
    double total = 0.0;
    for (std::size_t k = 0; k < p_max.size(); ++k) {
        w[k] = kappa == 0.0 ? 1.0 : std::pow(std::max(p_max[k], 0.0), kappa);
        total += w[k];
    }
    if (!(total > 0.0)) throw std::invalid_argument("thompson_weights: all probabilities are zero");
    for (double& x : w) x /= total;
    return w;
}

/// Draws an arm from `weights` with one uniform variate.
inline Arm sample_arm(std::span<const double> weights, Stream& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    Arm last = 0;
    for (Arm k = 0; k < weights.size(); ++k) {
        if (weights[k] <= 0.0) continue;
        acc += weights[k];
        last = k;
        if (u < acc) return k;
    }
    return last;
}

// ---------------------------------------------------------------------------
// Assignment walk

struct Assignment {
    std::uint64_t n = 0;
    Arm arm = 0;
};

/// Smallest n' >= n whose listed arm is active.
inline Assignment next_assignment(const RandomizationList& list, std::uint64_t n, std::span<const ArmStatus> statuses) {
    bool any = false;
    for (ArmStatus s : statuses) any = any || s == ArmStatus::Active;
    if (!any) throw DeadlockError("no active arm left to assign");
    for (std::uint64_t m = std::max<std::uint64_t>(n, 1);; ++m) {
        const Arm a = list.arm_at(m);
        if (statuses[a] == ArmStatus::Active) return {m, a};
    }
}

/// Statuses used to assign patient i: all non-dropped arms active during
/// burn-in (i <= n0), otherwise unchanged.
inline std::vector<ArmStatus> apply_burn_in(std::uint64_t i, const DesignParams& p, std::span<const ArmStatus> statuses) {
    std::vector<ArmStatus> out(statuses.begin(), statuses.end());
    if (i <= p.burn_in) {
        for (auto& s : out) {
            if (s != ArmStatus::Dropped) s = ArmStatus::Active;
        }
    }
    return out;
}

}  // namespace ate
