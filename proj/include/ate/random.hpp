#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace ate {

// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derives a key from a master seed and an ordered list of positional tags.
/// Reordering or changing any tag gives an unrelated key.
constexpr std::uint64_t derive_key(std::uint64_t master, std::initializer_list<std::uint64_t> tags) noexcept {
    std::uint64_t h = mix64(master + 0x9e3779b97f4a7c15ULL);
    for (std::uint64_t t : tags) {
        h = mix64(h ^ mix64(t + 0x632be59bd9b4e019ULL));
    }
    return h;
}

/// Purposes of the independent random streams used by one replicate.
enum class StreamTag : std::uint64_t {
    BlockShuffle = 1,
    Outcome = 2,
    PosteriorDraws = 3,
    Thompson = 4,
    Arrival = 5,
};

/*
 * Counter-based generator: output n is mix64(key + n * gamma). Any position in
 * the stream is computable directly, and two streams with different keys are
 * unrelated. Satisfies UniformRandomBitGenerator.
 */
class Stream {
  public:
    using result_type = std::uint64_t;

    constexpr Stream() noexcept = default;
    constexpr explicit Stream(std::uint64_t key) noexcept : state_(key) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    constexpr result_type operator()() noexcept {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix64(state_);
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    /// Uniform on the open interval (0, 1).
    double uniform_open() noexcept { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

    /// Unbiased integer on [0, bound) (Lemire's multiply-and-reject).
    std::uint64_t below(std::uint64_t bound) noexcept {
        unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * bound;
        auto low = static_cast<std::uint64_t>(m);
        if (low < bound) {
            const std::uint64_t threshold = (0 - bound) % bound;
            while (low < threshold) {
                m = static_cast<unsigned __int128>((*this)()) * bound;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

  private:
    std::uint64_t state_ = 0;
};

inline Stream make_stream(std::uint64_t replicate_key, StreamTag tag) noexcept {
    return Stream{derive_key(replicate_key, {static_cast<std::uint64_t>(tag)})};
}

// Variates are written out by hand instead of using <random> distributions,
// whose algorithms differ between standard library implementations.

namespace detail {

// Layer boundaries x[0..256] and e^{-x} for the 256-layer exponential
// ziggurat (Marsaglia and Tsang).
struct ExpZiggurat {
    static constexpr double r = 7.69711747013104972;
    static constexpr double v = 3.949659822581572e-3;
    std::array<double, 257> x{};
    std::array<double, 257> f{};

    ExpZiggurat() {
        x[0] = v / std::exp(-r);
        x[1] = r;
        for (std::size_t i = 1; i < 256; ++i) {
            const double a = v / x[i] + std::exp(-x[i]);
            x[i + 1] = a < 1.0 ? -std::log(a) : 0.0;
        }
        x[256] = 0.0;
        for (std::size_t i = 0; i < 257; ++i) f[i] = std::exp(-x[i]);
    }
};

inline const ExpZiggurat& exp_ziggurat() {
    static const ExpZiggurat z;
    return z;
}

}  // namespace detail

/// Exp(1) by the ziggurat method: one 64-bit word in about 98% of calls.
inline double standard_exponential(Stream& rng) noexcept {
    const auto& z = detail::exp_ziggurat();
    for (;;) {
        const std::uint64_t bits = rng();
        const std::size_t i = bits & 0xff;
        const double u = static_cast<double>(bits >> 11) * 0x1.0p-53;
        const double x = u * z.x[i];
        if (x < z.x[i + 1]) return x;
        if (i == 0) return detail::ExpZiggurat::r - std::log(rng.uniform_open());
        if (z.f[i + 1] + (z.f[i] - z.f[i + 1]) * rng.uniform() < std::exp(-x)) return x;
    }
}

inline double exponential(Stream& rng, double rate) noexcept { return standard_exponential(rng) / rate; }

// Marsaglia polar method; the second variate is discarded so each call
// consumes a self-contained block of the stream.
inline double standard_normal(Stream& rng) noexcept {
    for (;;) {
        const double u = 2.0 * rng.uniform() - 1.0;
        const double v = 2.0 * rng.uniform() - 1.0;
        const double s = u * u + v * v;
        if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
}

/// Gamma(shape, 1) by Marsaglia-Tsang, boosted for shape < 1.
inline double standard_gamma(Stream& rng, double shape) noexcept {
    if (shape < 1.0) {
        const double g = standard_gamma(rng, shape + 1.0);
        return g * std::pow(rng.uniform_open(), 1.0 / shape);
    }
    if (shape == 1.0) return standard_exponential(rng);
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = 0.0;
        double v = 0.0;
        do {
            x = standard_normal(rng);
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = rng.uniform_open();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

inline double gamma_variate(Stream& rng, double shape, double rate) noexcept {
    return standard_gamma(rng, shape) / rate;
}

inline double beta_variate(Stream& rng, double alpha, double beta) noexcept {
    const double x = standard_gamma(rng, alpha);
    const double y = standard_gamma(rng, beta);
    return x / (x + y);
}

inline bool bernoulli(Stream& rng, double p) noexcept { return rng.uniform() < p; }

}  // namespace ate
