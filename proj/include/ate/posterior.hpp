#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "ate/quadrature.hpp"
#include "ate/random.hpp"
#include "ate/special_functions.hpp"
#include "ate/types.hpp"

namespace ate {

/// Beta posterior of a response rate: prior (alpha, beta) plus success and
/// failure counts.
struct BetaPosterior {
    double alpha = 1.0;
    double beta = 1.0;

    double mean() const noexcept { return alpha / (alpha + beta); }
    double variance() const noexcept {
        const double s = alpha + beta;
        return alpha * beta / (s * s * (s + 1.0));
    }
    double log_norm() const { return special::log_beta(alpha, beta); }
    double cdf(double x) const { return special::ibeta(alpha, beta, x); }
    double log_density(double x) const { return special::beta_log_density(alpha, beta, x, log_norm()); }

    friend bool operator==(const BetaPosterior&, const BetaPosterior&) = default;
};

/// Gamma posterior of an exponential intensity, rate (inverse-scale) form.
struct GammaPosterior {
    double shape = 1.0;
    double rate = 1.0;

    double mean() const noexcept { return shape / rate; }
    double cdf(double x) const { return special::gamma_p(shape, rate * x); }
    double log_density(double x) const { return special::gamma_log_density(shape, rate, x); }

    friend bool operator==(const GammaPosterior&, const GammaPosterior&) = default;
};

inline BetaPosterior update_beta(BetaPosterior post, std::uint64_t successes, std::uint64_t failures) noexcept {
    post.alpha += static_cast<double>(successes);
    post.beta += static_cast<double>(failures);
    return post;
}

inline GammaPosterior update_gamma(GammaPosterior post, std::uint64_t events, double total_time_on_test) {
    if (!(total_time_on_test >= 0.0)) throw std::invalid_argument("update_gamma: total time on test must be >= 0");
    post.shape += static_cast<double>(events);
    post.rate += total_time_on_test;
    return post;
}

enum class EstimateMethod { quadrature, monte_carlo };

struct ProbabilityEstimate {
    double value = 0.0;
    EstimateMethod method = EstimateMethod::quadrature;
    std::size_t draws = 0;
    double std_error = 0.0;
};

/*
 * How comparative probabilities are evaluated.
 *   automatic    two-arm comparisons by quadrature, larger sets by Monte Carlo
 *   quadrature   one-dimensional quadrature for every set size (Beta only)
 *   monte_carlo  joint posterior draws for every set size
 */
enum class EstimatorKind { automatic, quadrature, monte_carlo };

struct EstimatorConfig {
    EstimatorKind kind = EstimatorKind::automatic;
    std::size_t draws = 16384;
    std::size_t quadrature_nodes = default_quadrature_nodes;

    const QuadratureRule& rule() const { return gauss_legendre(quadrature_nodes); }
};

namespace detail {

inline ProbabilityEstimate exact(double v) noexcept {
    return {std::clamp(v, 0.0, 1.0), EstimateMethod::quadrature, 0, 0.0};
}

inline ProbabilityEstimate from_count(std::size_t hits, std::size_t draws) noexcept {
    const double p = static_cast<double>(hits) / static_cast<double>(draws);
    return {p, EstimateMethod::monte_carlo, draws, std::sqrt(p * (1.0 - p) / static_cast<double>(draws))};
}

// Nodes whose log-density falls this far below the largest one are skipped.
inline constexpr double negligible_log_density = 46.0;

/*
 * ∫_lo^hi f(t) g(t) dt with f the Beta density of `post`, 0 <= lo < hi <= 1.
 *
 * Regular densities (alpha, beta >= 1) use the rule on [lo, hi], narrowed to
 * mean ± 40 sd when that window is smaller, so sharply peaked posteriors
 * still see enough nodes. A parameter below 1 makes f unbounded at that end;
 * if the range reaches the end, the substitutions t = w^(1/alpha) near 0 and
 * 1 - t = v^(1/beta) near 1 cancel the singular factor exactly.
 */
template <class G>
double integrate_beta(const BetaPosterior& post, G&& g, const QuadratureRule& rule, double lo = 0.0,
                      double hi = 1.0) {
    const double a = post.alpha;
    const double b = post.beta;
    const double lb = post.log_norm();
    const std::size_t n = rule.size();
    if (!(hi > lo)) return 0.0;

    if (a >= 1.0 && b >= 1.0) {
        const double sd = std::sqrt(post.variance());
        const double l = std::max(lo, post.mean() - 40.0 * sd);
        const double h = std::min(hi, post.mean() + 40.0 * sd);
        if (!(h > l)) return 0.0;
        const bool full = l == 0.0 && h == 1.0;
        const double width = h - l;
        auto node = [&](std::size_t j) { return full ? rule.nodes[j] : l + width * rule.nodes[j]; };
        auto log_f = [&](std::size_t j) {
            if (full) return (a - 1.0) * rule.log_nodes[j] + (b - 1.0) * rule.log1m_nodes[j] - lb;
            const double t = node(j);
            return (a - 1.0) * std::log(t) + (b - 1.0) * std::log1p(-t) - lb;
        };
        double peak = -INFINITY;
        for (std::size_t j = 0; j < n; ++j) peak = std::max(peak, log_f(j));
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double lf = log_f(j);
            if (lf < peak - negligible_log_density) continue;
            sum += rule.weights[j] * std::exp(lf) * g(node(j));
        }
        return sum * width;
    }

    auto plain = [&](double from, double to) {
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double t = from + (to - from) * rule.nodes[j];
            sum += rule.weights[j] * std::exp(special::beta_log_density(a, b, t, lb)) * g(t);
        }
        return sum * (to - from);
    };
    const double mid = 0.5 * (lo + hi);
    double sum = 0.0;
    if (a < 1.0 && lo == 0.0) {
        const double wmax = std::pow(mid, a);
        for (std::size_t j = 0; j < n; ++j) {
            const double w = wmax * rule.nodes[j];
            const double t = std::pow(w, 1.0 / a);
            sum += wmax * rule.weights[j] * std::exp((b - 1.0) * std::log1p(-t) - lb) / a * g(t);
        }
    } else {
        sum += plain(lo, mid);
    }
    if (b < 1.0 && hi == 1.0) {
        const double vmax = std::pow(1.0 - mid, b);
        for (std::size_t j = 0; j < n; ++j) {
            const double v = vmax * rule.nodes[j];
            const double t = 1.0 - std::pow(v, 1.0 / b);
            sum += vmax * rule.weights[j] * std::exp((a - 1.0) * std::log(t) - lb) / b * g(t);
        }
    } else {
        sum += plain(mid, hi);
    }
    return sum;
}

inline bool singular(const BetaPosterior& p) noexcept { return p.alpha < 1.0 || p.beta < 1.0; }

inline void require_member(Arm k, ArmSet set, std::size_t num_arms) {
    if (k >= num_arms || !set.contains(k)) throw std::invalid_argument("arm is not in the candidate set");
}

}  // namespace detail

/// P(theta >= theta_low) from the regularized incomplete beta function.
inline ProbabilityEstimate prob_exceeds(const BetaPosterior& post, double theta_low) {
    if (theta_low <= 0.0) return detail::exact(1.0);
    if (theta_low >= 1.0) return detail::exact(0.0);
    return detail::exact(1.0 - post.cdf(theta_low));
}

/*
 * P(theta_a + shift >= theta_b) = ∫ F_b(t + shift) f_a(t) dt by
 * Gauss-Legendre quadrature. The integrand has a kink where t + shift
 * leaves (0, 1), so only the part inside is integrated and the rest is added
 * in closed form. If f_a is unbounded and f_b is not, the equivalent form
 * ∫ (1 - F_a(u - shift)) f_b(u) du is integrated instead.
 */
inline ProbabilityEstimate pairwise_prob(const BetaPosterior& a, const BetaPosterior& b, double shift,
                                         const QuadratureRule& rule = gauss_legendre()) {
    if (shift >= 1.0) return detail::exact(1.0);
    if (shift <= -1.0) return detail::exact(0.0);
    double v = 0.0;
    if (detail::singular(a) && !detail::singular(b)) {
        const double lba = a.log_norm();
        auto g = [&](double u) { return 1.0 - special::ibeta(a.alpha, a.beta, u - shift, lba); };
        if (shift > 0.0) {
            v = detail::integrate_beta(b, g, rule, shift, 1.0) + b.cdf(shift);
        } else {
            v = detail::integrate_beta(b, g, rule, 0.0, 1.0 + shift);
        }
    } else {
        const double lbb = b.log_norm();
        auto g = [&](double t) { return special::ibeta(b.alpha, b.beta, t + shift, lbb); };
        if (shift > 0.0) {
            v = detail::integrate_beta(a, g, rule, 0.0, 1.0 - shift) + (1.0 - a.cdf(1.0 - shift));
        } else {
            v = detail::integrate_beta(a, g, rule, -shift, 1.0);
        }
    }
    return detail::exact(v);
}

namespace detail {

// Independent Beta draws for the arms in `set`, draw-major. Row j holds the
// arms of `set` in ascending order.
inline std::vector<double> beta_draws(std::span<const BetaPosterior> posts, ArmSet set, std::size_t draws,
                                      Stream& rng) {
    const auto arms = set.members();
    std::vector<double> out(draws * arms.size());
    for (std::size_t j = 0; j < draws; ++j) {
        for (std::size_t c = 0; c < arms.size(); ++c) {
            out[j * arms.size() + c] = beta_variate(rng, posts[arms[c]].alpha, posts[arms[c]].beta);
        }
    }
    return out;
}

// ∫ f_k(t) Π_{l in others} F_l(min(t + shift, 1)) dt for shift >= 0, split
// at 1 - shift where every factor reaches 1.
inline double product_integral(std::span<const BetaPosterior> posts, Arm k, ArmSet others, double shift,
                               const QuadratureRule& rule) {
    std::vector<double> log_norms(posts.size());
    others.for_each([&](Arm l) { log_norms[l] = posts[l].log_norm(); });
    auto g = [&](double t) {
        const double x = std::min(t + shift, 1.0);
        double prod = 1.0;
        others.for_each([&](Arm l) { prod *= special::ibeta(posts[l].alpha, posts[l].beta, x, log_norms[l]); });
        return prod;
    };
    if (shift <= 0.0) return integrate_beta(posts[k], g, rule);
    return integrate_beta(posts[k], g, rule, 0.0, 1.0 - shift) + (1.0 - posts[k].cdf(1.0 - shift));
}

}  // namespace detail

/*
 * P(theta_k = max over every arm of `candidates`) under independent Beta
 * posteriors, for every k in `candidates` at once (zero outside the set).
 * Monte Carlo estimates share one draw matrix, so they sum to exactly 1; ties
 * in a draw go to the smaller arm index.
 */
inline std::vector<ProbabilityEstimate> prob_is_max_all(std::span<const BetaPosterior> posts, ArmSet candidates,
                                                        const EstimatorConfig& cfg, Stream rng) {
    if (candidates.empty()) throw std::invalid_argument("prob_is_max: empty candidate set");
    std::vector<ProbabilityEstimate> out(posts.size());
    const auto arms = candidates.members();
    if (arms.back() >= posts.size()) throw std::invalid_argument("prob_is_max: candidate arm out of range");
    if (arms.size() == 1) {
        out[arms[0]] = detail::exact(1.0);
        return out;
    }
    if (arms.size() == 2 && cfg.kind != EstimatorKind::monte_carlo) {
        const double q = pairwise_prob(posts[arms[0]], posts[arms[1]], 0.0, cfg.rule()).value;
        out[arms[0]] = detail::exact(q);
        out[arms[1]] = detail::exact(1.0 - q);
        return out;
    }
    if (cfg.kind == EstimatorKind::quadrature) {
        double total = 0.0;
        for (Arm k : arms) {
            out[k].value = detail::product_integral(posts, k, candidates.without(k), 0.0, cfg.rule());
            total += out[k].value;
        }
        for (Arm k : arms) out[k] = detail::exact(out[k].value / total);
        return out;
    }
    const auto draws = detail::beta_draws(posts, candidates, cfg.draws, rng);
    std::vector<std::size_t> hits(arms.size(), 0);
    for (std::size_t j = 0; j < cfg.draws; ++j) {
        const double* row = &draws[j * arms.size()];
        std::size_t best = 0;
        for (std::size_t c = 1; c < arms.size(); ++c) {
            if (row[c] > row[best]) best = c;
        }
        ++hits[best];
    }
    for (std::size_t c = 0; c < arms.size(); ++c) out[arms[c]] = detail::from_count(hits[c], cfg.draws);
    return out;
}

inline ProbabilityEstimate prob_is_max(std::span<const BetaPosterior> posts, Arm k, ArmSet candidates,
                                       const EstimatorConfig& cfg, Stream rng) {
    detail::require_member(k, candidates, posts.size());
    return prob_is_max_all(posts, candidates, cfg, rng)[k];
}

/*
 * P(theta_0 + delta >= max over `candidates` of theta_l). Including the
 * control in `candidates` changes nothing for delta >= 0; an empty set of
 * competitors gives 1.
 */
inline ProbabilityEstimate prob_control_within_margin(std::span<const BetaPosterior> posts, double delta,
                                                      ArmSet candidates, const EstimatorConfig& cfg, Stream rng) {
    const ArmSet rivals = candidates.without(0);
    if (rivals.empty() || delta >= 1.0) return detail::exact(1.0);
    const auto arms = rivals.members();
    if (arms.back() >= posts.size()) throw std::invalid_argument("prob_control_within_margin: arm out of range");
    if (arms.size() == 1 && cfg.kind != EstimatorKind::monte_carlo) {
        return pairwise_prob(posts[0], posts[arms[0]], delta, cfg.rule());
    }
    if (cfg.kind == EstimatorKind::quadrature) {
        return detail::exact(detail::product_integral(posts, 0, rivals, delta, cfg.rule()));
    }
    ArmSet with_control = rivals;
    with_control.insert(0);
    const auto draws = detail::beta_draws(posts, with_control, cfg.draws, rng);
    const std::size_t width = arms.size() + 1;
    std::size_t hits = 0;
    for (std::size_t j = 0; j < cfg.draws; ++j) {
        const double* row = &draws[j * width];
        double best = row[1];
        for (std::size_t c = 2; c < width; ++c) best = std::max(best, row[c]);
        if (row[0] + delta >= best) ++hits;
    }
    return detail::from_count(hits, cfg.draws);
}

// ---------------------------------------------------------------------------
// Gamma (intensity) comparisons

/*
 * P(scale * theta_x <= theta_y) for independent Gamma posteriors. With
 * Y_x = rate_x theta_x and Y_y = rate_y theta_y standard Gamma,
 * W = Y_x / (Y_x + Y_y) ~ Beta(shape_x, shape_y) and the event is
 * W <= rate_x / (rate_x + scale * rate_y).
 */
inline double gamma_scaled_le(const GammaPosterior& x, double scale, const GammaPosterior& y) {
    if (scale <= 0.0) return 1.0;
    if (std::isinf(scale)) return 0.0;
    const double cut = x.rate / (x.rate + scale * y.rate);
    return special::ibeta(x.shape, y.shape, cut);
}

/// P(theta <= theta_high) for an intensity posterior.
inline ProbabilityEstimate prob_hazard_below(const GammaPosterior& post, double theta_high) {
    if (theta_high <= 0.0) return detail::exact(0.0);
    if (std::isinf(theta_high)) return detail::exact(1.0);
    return detail::exact(post.cdf(theta_high));
}

namespace detail {

inline std::vector<double> gamma_draws(std::span<const GammaPosterior> posts, ArmSet set, std::size_t draws,
                                       Stream& rng) {
    const auto arms = set.members();
    std::vector<double> out(draws * arms.size());
    for (std::size_t j = 0; j < draws; ++j) {
        for (std::size_t c = 0; c < arms.size(); ++c) {
            out[j * arms.size() + c] = gamma_variate(rng, posts[arms[c]].shape, posts[arms[c]].rate);
        }
    }
    return out;
}

}  // namespace detail

/// P(theta_k = min over `candidates`) for every k in the set; ties go to the
/// smaller index.
inline std::vector<ProbabilityEstimate> prob_is_min_hazard_all(std::span<const GammaPosterior> posts,
                                                               ArmSet candidates, const EstimatorConfig& cfg,
                                                               Stream rng) {
    if (candidates.empty()) throw std::invalid_argument("prob_is_min_hazard: empty candidate set");
    std::vector<ProbabilityEstimate> out(posts.size());
    const auto arms = candidates.members();
    if (arms.back() >= posts.size()) throw std::invalid_argument("prob_is_min_hazard: arm out of range");
    if (arms.size() == 1) {
        out[arms[0]] = detail::exact(1.0);
        return out;
    }
    if (arms.size() == 2 && cfg.kind != EstimatorKind::monte_carlo) {
        const double q = gamma_scaled_le(posts[arms[0]], 1.0, posts[arms[1]]);
        out[arms[0]] = detail::exact(q);
        out[arms[1]] = detail::exact(1.0 - q);
        return out;
    }
    const auto draws = detail::gamma_draws(posts, candidates, cfg.draws, rng);
    std::vector<std::size_t> hits(arms.size(), 0);
    for (std::size_t j = 0; j < cfg.draws; ++j) {
        const double* row = &draws[j * arms.size()];
        std::size_t best = 0;
        for (std::size_t c = 1; c < arms.size(); ++c) {
            if (row[c] < row[best]) best = c;
        }
        ++hits[best];
    }
    for (std::size_t c = 0; c < arms.size(); ++c) out[arms[c]] = detail::from_count(hits[c], cfg.draws);
    return out;
}

/*
 * P(rho * theta_0 <= min over `candidates` of theta_l): the control keeps
 * its place unless some arm's intensity is clearly below rho times its own.
 */
inline ProbabilityEstimate prob_hazard_min(std::span<const GammaPosterior> posts, double rho, ArmSet candidates,
                                           const EstimatorConfig& cfg, Stream rng) {
    if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("prob_hazard_min: rho must lie in (0, 1]");
    const ArmSet rivals = candidates.without(0);
    if (rivals.empty()) return detail::exact(1.0);
    const auto arms = rivals.members();
    if (arms.back() >= posts.size()) throw std::invalid_argument("prob_hazard_min: arm out of range");
    if (arms.size() == 1 && cfg.kind != EstimatorKind::monte_carlo) {
        return detail::exact(gamma_scaled_le(posts[0], rho, posts[arms[0]]));
    }
    ArmSet with_control = rivals;
    with_control.insert(0);
    const auto draws = detail::gamma_draws(posts, with_control, cfg.draws, rng);
    const std::size_t width = arms.size() + 1;
    std::size_t hits = 0;
    for (std::size_t j = 0; j < cfg.draws; ++j) {
        const double* row = &draws[j * width];
        double lowest = row[1];
        for (std::size_t c = 2; c < width; ++c) lowest = std::min(lowest, row[c]);
        if (rho * row[0] <= lowest) ++hits;
    }
    return detail::from_count(hits, cfg.draws);
}

/*
 * P(1 - theta_vaccine / theta_control >= ve_star) under independent Gamma
 * posteriors, i.e. P(theta_vaccine / (1 - ve_star) <= theta_control).
 */
inline ProbabilityEstimate prob_vaccine_efficacy(const GammaPosterior& control, const GammaPosterior& vaccine,
                                                 double ve_star) {
    if (!(ve_star >= 0.0 && ve_star < 1.0)) throw std::invalid_argument("prob_vaccine_efficacy: ve_star in [0, 1)");
    return detail::exact(gamma_scaled_le(vaccine, 1.0 / (1.0 - ve_star), control));
}

}  // namespace ate
