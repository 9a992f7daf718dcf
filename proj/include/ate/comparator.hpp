#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ate/posterior.hpp"
#include "ate/quadrature.hpp"
#include "ate/random.hpp"
#include "ate/special_functions.hpp"
#include "ate/types.hpp"

namespace ate {

namespace detail {

// Small cache keyed by candidate-set mask, cleared whenever data change.
template <class V>
class MaskCache {
  public:
    V* find(std::uint32_t mask) {
        for (auto& [m, v] : entries_) {
            if (m == mask) return &v;
        }
        return nullptr;
    }
    V& put(std::uint32_t mask, V v) { return entries_.emplace_back(mask, std::move(v)).second; }
    void clear() noexcept { entries_.clear(); }

  private:
    std::vector<std::pair<std::uint32_t, V>> entries_;
};

inline bool integer_step(double from, double to, std::int64_t& steps) {
    const double d = to - from;
    if (d < 0.0 || d != std::floor(d) || d > 4096.0) return false;
    steps = static_cast<std::int64_t>(d);
    return true;
}

}  // namespace detail

/*
 * Comparative probabilities for a running trial with Beta posteriors.
 *
 * Two-arm comparisons use Gauss-Legendre quadrature on (0, 1). The weighted
 * densities at the nodes and the CDF values at node + shift are kept per arm
 * and advanced with the one-step recurrences of I_x(a, b) when a posterior
 * gains a success or failure, so a comparison after an update costs a few
 * hundred exponentials instead of a fresh incomplete-beta evaluation per node.
 *
 * Larger candidate sets use Monte Carlo. Each arm keeps `draws` pairs of
 * standard Gamma variates (G_S, G_F) with shapes (alpha, beta) and
 * theta = G_S / (G_S + G_F); a success adds an Exp(1) variate to G_S, a
 * failure to G_F. Every column is an exact posterior draw at every step, and
 * only the treated arm is touched.
 */
class BetaComparator {
  public:
    BetaComparator(std::vector<BetaPosterior> posts, EstimatorConfig est, Stream draw_stream, double delta = 0.0,
                   double theta_low = 0.0)
        : posts_(std::move(posts)),
          est_(est),
          rule_(&est.rule()),
          rng_(draw_stream),
          delta_(delta),
          theta_low_(theta_low) {
        if (posts_.empty() || posts_.size() > max_arms) throw std::invalid_argument("BetaComparator: bad arm count");
    }

    std::size_t num_arms() const noexcept { return posts_.size(); }
    const std::vector<BetaPosterior>& posteriors() const noexcept { return posts_; }
    const EstimatorConfig& estimator() const noexcept { return est_; }

    void observe(Arm k, bool success) {
        if (success) {
            posts_[k].alpha += 1.0;
        } else {
            posts_[k].beta += 1.0;
        }
        if (!mc_.empty()) {
            auto& g = success ? mc_[k].gs : mc_[k].gf;
            Stream rng = rng_;  // local copy keeps the state in registers
            for (double& x : g) x += standard_exponential(rng);
            rng_ = rng;
            const double* gs = mc_[k].gs.data();
            const double* gf = mc_[k].gf.data();
            double* th = mc_[k].theta.data();
            for (std::size_t j = 0; j < g.size(); ++j) th[j] = gs[j] / (gs[j] + gf[j]);
        }
        invalidate();
    }

    /// P(theta_a + shift >= theta_b).
    double pairwise(Arm a, Arm b, double shift) {
        if (shift >= 1.0) return 1.0;
        if (shift <= -1.0) return 0.0;
        if (detail::singular(posts_[a]) || detail::singular(posts_[b])) {
            return pairwise_prob(posts_[a], posts_[b], shift, *rule_).value;
        }
        return std::clamp(product_sum(a, ArmSet::single(b), shift), 0.0, 1.0);
    }

    /// P(arm k = max over T) for every k (zero outside T).
    const std::vector<double>& best_all(ArmSet t) {
        if (auto* hit = best_cache_.find(t.mask())) return *hit;
        return best_cache_.put(t.mask(), compute_best(t));
    }

    double best(Arm k, ArmSet t) { return best_all(t)[k]; }

    /// P(theta_0 + delta >= max over T without 0).
    double control_margin(ArmSet t) {
        if (auto* hit = margin_cache_.find(t.mask())) return *hit;
        return margin_cache_.put(t.mask(), control_margin(t, delta_));
    }

    double control_margin(ArmSet t, double delta) {
        const ArmSet rivals = t.without(0);
        if (rivals.empty() || delta >= 1.0) return 1.0;
        const auto arms = rivals.members();
        if (arms.size() == 1 && est_.kind != EstimatorKind::monte_carlo) return pairwise(0, arms[0], delta);
        if (est_.kind == EstimatorKind::quadrature && all_regular(t)) {
            return std::clamp(product_sum(0, rivals, delta), 0.0, 1.0);
        }
        if (delta == delta_ && t.contains(0)) {
            scan(t);
            return *margin_cache_.find(t.mask());
        }
        ensure_draws();
        std::size_t hits = 0;
        const auto& t0 = mc_[0].theta;
        for (std::size_t j = 0; j < t0.size(); ++j) {
            double m = 0.0;
            for (Arm l : arms) m = std::max(m, mc_[l].theta[j]);
            hits += t0[j] + delta >= m;
        }
        return static_cast<double>(hits) / static_cast<double>(t0.size());
    }

    /// P(theta_k >= theta_low); for the control the margin is added.
    double meets_minimum(Arm k) {
        const double cut = k == 0 ? theta_low_ - delta_ : theta_low_;
        return prob_exceeds(posts_[k], cut).value;
    }

  private:
    struct Draws {
        std::vector<double> gs, gf, theta;
    };
    // Integration range [lo, hi] for arm a's density: the part of (0, 1)
    // where t + shift stays inside (0, 1).
    struct Range {
        double lo, hi;
    };
    static Range range(double shift) {
        if (shift > 0.0) return {0.0, 1.0 - shift};
        return {-shift, 1.0};
    }
    struct Density {
        Arm arm;
        Range r;
        BetaPosterior at;
        std::vector<double> log_t, log1m_t;
        std::vector<double> f;  // weight * density at each node
    };
    // CDF of an arm at x_j = lo + (hi - lo) node_j + shift, or at the single
    // point lo when `point` is set.
    struct GridKey {
        Arm arm;
        Range r;
        double shift;
        bool point;
        bool operator==(const GridKey& o) const {
            return arm == o.arm && r.lo == o.r.lo && r.hi == o.r.hi && shift == o.shift && point == o.point;
        }
    };
    struct Grid {
        GridKey key;
        BetaPosterior at;
        double log_beta;
        std::vector<double> x, log_x, log1m_x, F;
    };

    void invalidate() {
        best_cache_.clear();
        margin_cache_.clear();
    }

    bool all_regular(ArmSet t) const {
        bool ok = true;
        t.for_each([&](Arm k) { ok = ok && !detail::singular(posts_[k]); });
        return ok;
    }

    const std::vector<double>& density(Arm k, Range rg) {
        Density* d = nullptr;
        for (auto& cand : densities_) {
            if (cand.arm == k && cand.r.lo == rg.lo && cand.r.hi == rg.hi) d = &cand;
        }
        const auto& r = *rule_;
        if (d == nullptr) {
            Density fresh{k, rg, {-1.0, -1.0}, {}, {}, {}};
            const bool full = rg.lo == 0.0 && rg.hi == 1.0;
            for (std::size_t j = 0; j < r.size(); ++j) {
                const double t = rg.lo + (rg.hi - rg.lo) * r.nodes[j];
                fresh.log_t.push_back(full ? r.log_nodes[j] : std::log(t));
                fresh.log1m_t.push_back(full ? r.log1m_nodes[j] : std::log1p(-t));
            }
            densities_.push_back(std::move(fresh));
            d = &densities_.back();
        }
        if (d->at == posts_[k]) return d->f;
        const double a = posts_[k].alpha;
        const double b = posts_[k].beta;
        const double lb = posts_[k].log_norm();
        const double width = rg.hi - rg.lo;
        d->f.resize(r.size());
        double peak = -INFINITY;
        for (std::size_t j = 0; j < r.size(); ++j) {
            d->f[j] = (a - 1.0) * d->log_t[j] + (b - 1.0) * d->log1m_t[j] - lb;
            peak = std::max(peak, d->f[j]);
        }
        for (std::size_t j = 0; j < r.size(); ++j) {
            d->f[j] = d->f[j] < peak - detail::negligible_log_density ? 0.0 : width * r.weights[j] * std::exp(d->f[j]);
        }
        d->at = posts_[k];
        return d->f;
    }

    const std::vector<double>& cdf_grid(const GridKey& key) {
        Grid* g = nullptr;
        for (auto& cand : grids_) {
            if (cand.key == key) g = &cand;
        }
        const BetaPosterior& p = posts_[key.arm];
        if (g == nullptr) {
            Grid fresh{key, p, p.log_norm(), {}, {}, {}, {}};
            const auto& r = *rule_;
            const std::size_t n = key.point ? 1 : r.size();
            for (std::size_t j = 0; j < n; ++j) {
                const double x =
                    key.point ? key.r.lo : std::clamp(key.r.lo + (key.r.hi - key.r.lo) * r.nodes[j] + key.shift, 0.0, 1.0);
                fresh.x.push_back(x);
                fresh.log_x.push_back(x > 0.0 ? std::log(x) : -INFINITY);
                fresh.log1m_x.push_back(x < 1.0 ? std::log1p(-x) : -INFINITY);
                fresh.F.push_back(special::ibeta(p.alpha, p.beta, x, fresh.log_beta));
            }
            grids_.push_back(std::move(fresh));
            return grids_.back().F;
        }
        if (g->at == p) return g->F;
        std::int64_t da = 0;
        std::int64_t db = 0;
        if (detail::integer_step(g->at.alpha, p.alpha, da) && detail::integer_step(g->at.beta, p.beta, db) &&
            da + db <= 64) {
            advance(*g, da, db);
        } else {
            g->log_beta = p.log_norm();
            for (std::size_t j = 0; j < g->x.size(); ++j) g->F[j] = special::ibeta(p.alpha, p.beta, g->x[j], g->log_beta);
        }
        g->at = p;
        return g->F;
    }

    // I_x(a+1, b) = I_x(a, b) - x^a (1-x)^b / (a B(a, b))
    // I_x(a, b+1) = I_x(a, b) + x^a (1-x)^b / (b B(a, b))
    static void advance(Grid& g, std::int64_t da, std::int64_t db) {
        double a = g.at.alpha;
        double b = g.at.beta;
        auto step = [&](bool in_a) {
            const double lead = in_a ? a : b;
            const double c = -std::log(lead) - g.log_beta;
            for (std::size_t j = 0; j < g.x.size(); ++j) {
                if (g.x[j] <= 0.0 || g.x[j] >= 1.0) continue;
                const double term = std::exp(a * g.log_x[j] + b * g.log1m_x[j] + c);
                g.F[j] = std::clamp(in_a ? g.F[j] - term : g.F[j] + term, 0.0, 1.0);
            }
            g.log_beta += std::log(lead / (a + b));
            if (in_a) {
                a += 1.0;
            } else {
                b += 1.0;
            }
        };
        for (std::int64_t s = 0; s < da; ++s) step(true);
        for (std::int64_t s = 0; s < db; ++s) step(false);
    }

    // ∫ f_k(t) prod_{l in others} F_l(t + shift) dt over the range where
    // t + shift < 1, plus P(theta_k > 1 - shift) where every factor is 1.
    double product_sum(Arm k, ArmSet others, double shift) {
        const Range rg = range(shift);
        const auto& f = density(k, rg);
        std::vector<double> acc(f.begin(), f.end());
        others.for_each([&](Arm l) {
            const auto& F = cdf_grid({l, rg, shift, false});
            for (std::size_t j = 0; j < acc.size(); ++j) acc[j] *= F[j];
        });
        double sum = 0.0;
        for (double v : acc) sum += v;
        if (shift > 0.0) sum += 1.0 - cdf_grid({k, {1.0 - shift, 1.0 - shift}, 0.0, true})[0];
        return sum;
    }

    void ensure_draws() {
        if (!mc_.empty()) return;
        mc_.resize(posts_.size());
        for (Arm k = 0; k < posts_.size(); ++k) {
            auto& d = mc_[k];
            d.gs.resize(est_.draws);
            d.gf.resize(est_.draws);
            d.theta.resize(est_.draws);
            for (std::size_t j = 0; j < est_.draws; ++j) {
                d.gs[j] = standard_gamma(rng_, posts_[k].alpha);
                d.gf[j] = standard_gamma(rng_, posts_[k].beta);
                d.theta[j] = d.gs[j] / (d.gs[j] + d.gf[j]);
            }
        }
    }

    std::vector<double> compute_best(ArmSet t) {
        if (t.empty()) throw std::invalid_argument("best: empty candidate set");
        std::vector<double> out(posts_.size(), 0.0);
        const auto arms = t.members();
        if (arms.size() == 1) {
            out[arms[0]] = 1.0;
            return out;
        }
        if (arms.size() == 2 && est_.kind != EstimatorKind::monte_carlo) {
            const double q = pairwise(arms[0], arms[1], 0.0);
            out[arms[0]] = q;
            out[arms[1]] = 1.0 - q;
            return out;
        }
        if (est_.kind == EstimatorKind::quadrature && all_regular(t)) {
            double total = 0.0;
            for (Arm k : arms) {
                out[k] = product_sum(k, t.without(k), 0.0);
                total += out[k];
            }
            for (Arm k : arms) out[k] /= total;
            return out;
        }
        scan(t);
        return *best_cache_.find(t.mask());
    }

    // One pass over the draw matrix filling both the argmax frequencies and,
    // when the control is a candidate, the margin probability for T.
    void scan(ArmSet t) {
        ensure_draws();
        const auto arms = t.members();
        const bool margin = t.contains(0) && arms.size() > 1;
        std::vector<const double*> cols;
        for (Arm k : arms) cols.push_back(mc_[k].theta.data());
        std::vector<std::size_t> hits(arms.size(), 0);
        std::size_t margin_hits = 0;
        const std::size_t m = est_.draws;
        const std::size_t first_rival = arms[0] == 0 ? 1 : 0;
        for (std::size_t j = 0; j < m; ++j) {
            std::size_t top = 0;
            double v = cols[0][j];
            double rival = first_rival == 1 ? 0.0 : v;
            for (std::size_t c = 1; c < cols.size(); ++c) {
                const double x = cols[c][j];
                const bool gt = x > v;
                v = gt ? x : v;
                top = gt ? c : top;
                rival = std::max(rival, x);
            }
            ++hits[top];
            margin_hits += cols[0][j] + delta_ >= rival;
        }
        std::vector<double> out(posts_.size(), 0.0);
        for (std::size_t c = 0; c < arms.size(); ++c) {
            out[arms[c]] = static_cast<double>(hits[c]) / static_cast<double>(m);
        }
        if (!best_cache_.find(t.mask())) best_cache_.put(t.mask(), std::move(out));
        if (margin && !margin_cache_.find(t.mask())) {
            margin_cache_.put(t.mask(), static_cast<double>(margin_hits) / static_cast<double>(m));
        }
    }

    std::vector<BetaPosterior> posts_;
    EstimatorConfig est_;
    const QuadratureRule* rule_;
    Stream rng_;
    double delta_;
    double theta_low_;
    std::vector<Density> densities_;
    std::vector<Grid> grids_;
    std::vector<Draws> mc_;
    detail::MaskCache<std::vector<double>> best_cache_;
    detail::MaskCache<double> margin_cache_;
};

/*
 * Comparative probabilities for Gamma intensity posteriors, where a smaller
 * intensity is better. Pairs use the closed form of gamma_scaled_le. Larger
 * sets use Monte Carlo with one standard Gamma variate per arm and draw,
 * grown by Exp(1) per new event and divided by the current rate.
 */
class GammaComparator {
  public:
    GammaComparator(std::vector<GammaPosterior> posts, EstimatorConfig est, Stream draw_stream, double rho = 1.0,
                    double theta_high = INFINITY)
        : posts_(std::move(posts)), est_(est), rng_(draw_stream), rho_(rho), theta_high_(theta_high) {
        if (posts_.empty() || posts_.size() > max_arms) throw std::invalid_argument("GammaComparator: bad arm count");
    }

    std::size_t num_arms() const noexcept { return posts_.size(); }
    const std::vector<GammaPosterior>& posteriors() const noexcept { return posts_; }

    void set(Arm k, const GammaPosterior& p) {
        if (p == posts_[k]) return;
        if (!mc_.empty()) {
            std::int64_t steps = 0;
            if (detail::integer_step(posts_[k].shape, p.shape, steps)) {
                for (auto& g : mc_[k]) {
                    for (std::int64_t s = 0; s < steps; ++s) g += standard_exponential(rng_);
                }
            } else {
                for (auto& g : mc_[k]) g = standard_gamma(rng_, p.shape);
            }
        }
        posts_[k] = p;
        best_cache_.clear();
        margin_cache_.clear();
    }

    /// P(theta_k = min over T) for every k (zero outside T).
    const std::vector<double>& best_all(ArmSet t) {
        if (auto* hit = best_cache_.find(t.mask())) return *hit;
        return best_cache_.put(t.mask(), compute_best(t));
    }

    double best(Arm k, ArmSet t) { return best_all(t)[k]; }

    /// P(rho theta_0 <= min over T without 0).
    double control_margin(ArmSet t) {
        if (auto* hit = margin_cache_.find(t.mask())) return *hit;
        return margin_cache_.put(t.mask(), compute_margin(t));
    }

    /// P(theta_k <= theta_high); theta_high / rho for the control.
    double meets_minimum(Arm k) {
        const double cut = k == 0 ? theta_high_ / rho_ : theta_high_;
        return prob_hazard_below(posts_[k], cut).value;
    }

  private:
    void ensure_draws() {
        if (!mc_.empty()) return;
        mc_.resize(posts_.size());
        for (Arm k = 0; k < posts_.size(); ++k) {
            mc_[k].resize(est_.draws);
            for (auto& g : mc_[k]) g = standard_gamma(rng_, posts_[k].shape);
        }
    }

    std::vector<double> compute_best(ArmSet t) {
        if (t.empty()) throw std::invalid_argument("best: empty candidate set");
        std::vector<double> out(posts_.size(), 0.0);
        const auto arms = t.members();
        if (arms.size() == 1) {
            out[arms[0]] = 1.0;
            return out;
        }
        if (arms.size() == 2 && est_.kind != EstimatorKind::monte_carlo) {
            const double q = gamma_scaled_le(posts_[arms[0]], 1.0, posts_[arms[1]]);
            out[arms[0]] = q;
            out[arms[1]] = 1.0 - q;
            return out;
        }
        ensure_draws();
        std::vector<std::size_t> hits(posts_.size(), 0);
        for (std::size_t j = 0; j < est_.draws; ++j) {
            Arm top = arms[0];
            double v = mc_[top][j] / posts_[top].rate;
            for (std::size_t c = 1; c < arms.size(); ++c) {
                const double x = mc_[arms[c]][j] / posts_[arms[c]].rate;
                if (x < v) {
                    v = x;
                    top = arms[c];
                }
            }
            ++hits[top];
        }
        for (Arm k : arms) out[k] = static_cast<double>(hits[k]) / static_cast<double>(est_.draws);
        return out;
    }

    double compute_margin(ArmSet t) {
        const ArmSet rivals = t.without(0);
        if (rivals.empty()) return 1.0;
        const auto arms = rivals.members();
        if (arms.size() == 1 && est_.kind != EstimatorKind::monte_carlo) {
            return gamma_scaled_le(posts_[0], rho_, posts_[arms[0]]);
        }
        ensure_draws();
        std::size_t hits = 0;
        for (std::size_t j = 0; j < est_.draws; ++j) {
            double m = INFINITY;
            for (Arm l : arms) m = std::min(m, mc_[l][j] / posts_[l].rate);
            if (rho_ * mc_[0][j] / posts_[0].rate <= m) ++hits;
        }
        return static_cast<double>(hits) / static_cast<double>(est_.draws);
    }

    std::vector<GammaPosterior> posts_;
    EstimatorConfig est_;
    Stream rng_;
    double rho_;
    double theta_high_;
    std::vector<std::vector<double>> mc_;
    detail::MaskCache<std::vector<double>> best_cache_;
    detail::MaskCache<double> margin_cache_;
};

}  // namespace ate
