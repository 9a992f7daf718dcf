#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <vector>

namespace ate {

/*
 * Gauss-Legendre rule mapped to (0, 1). Besides nodes and weights it keeps
 * log(t) and log(1 - t) per node so Beta log-densities at the nodes cost two
 * multiply-adds.
 */
struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
    std::vector<double> log_nodes;
    std::vector<double> log1m_nodes;

    std::size_t size() const noexcept { return nodes.size(); }
};

inline QuadratureRule make_gauss_legendre(std::size_t n) {
    if (n < 2) throw std::invalid_argument("Gauss-Legendre rule needs at least 2 nodes");
    QuadratureRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    const std::size_t half = (n + 1) / 2;
    for (std::size_t i = 0; i < half; ++i) {
        // Newton iteration on P_n from the Tricomi initial guess.
        double z = std::cos(M_PI * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p1 = 1.0;
            double p2 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double p3 = p2;
                p2 = p1;
                p1 = ((2.0 * static_cast<double>(j) + 1.0) * z * p2 - static_cast<double>(j) * p3) /
                     (static_cast<double>(j) + 1.0);
            }
            dp = static_cast<double>(n) * (z * p1 - p2) / (z * z - 1.0);
            const double dz = p1 / dp;
            z -= dz;
            if (std::fabs(dz) < 1e-15) break;
        }
        const double w = 1.0 / ((1.0 - z * z) * dp * dp);  // 2 / (...) halved for (0, 1)
        // z runs from near +1 downward; store ascending.
        rule.nodes[i] = 0.5 * (1.0 - z);
        rule.nodes[n - 1 - i] = 0.5 * (1.0 + z);
        rule.weights[i] = w;
        rule.weights[n - 1 - i] = w;
    }
    rule.log_nodes.resize(n);
    rule.log1m_nodes.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        rule.log_nodes[i] = std::log(rule.nodes[i]);
        rule.log1m_nodes[i] = std::log1p(-rule.nodes[i]);
    }
    return rule;
}

inline constexpr std::size_t default_quadrature_nodes = 128;

/// Shared, lazily built rule for n nodes. Returned references stay valid for
/// the life of the process.
inline const QuadratureRule& gauss_legendre(std::size_t n = default_quadrature_nodes) {
    static std::mutex mutex;
    static std::map<std::size_t, std::unique_ptr<QuadratureRule>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<QuadratureRule>(make_gauss_legendre(n));
    return *slot;
}

}  // namespace ate
