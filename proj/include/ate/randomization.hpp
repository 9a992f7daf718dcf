#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "ate/random.hpp"
#include "ate/types.hpp"

namespace ate {

/*
 * Sequential block randomization list r(1), r(2), ... over arms {0..K}.
 * Block b (positions b(K+1)+1 .. (b+1)(K+1)) is a Fisher-Yates shuffle drawn
 * from a stream keyed by (seed, b), so any entry is computed on demand and
 * the object is immutable after construction.
 */
class RandomizationList {
  public:
    RandomizationList(std::uint64_t seed, std::size_t num_arms) : seed_(seed), num_arms_(num_arms) {
        if (num_arms < 2) throw std::invalid_argument("randomization list needs at least 2 arms");
        if (num_arms > max_arms) throw std::invalid_argument("too many arms");
    }

    std::uint64_t seed() const noexcept { return seed_; }
    std::size_t num_arms() const noexcept { return num_arms_; }

    /// Permutation of {0..K} forming block `b` (0-based).
    std::vector<Arm> block(std::uint64_t b) const {
        std::vector<Arm> perm(num_arms_);
        std::iota(perm.begin(), perm.end(), Arm{0});
        Stream rng{derive_key(seed_, {static_cast<std::uint64_t>(StreamTag::BlockShuffle), b})};
        for (std::size_t i = num_arms_ - 1; i > 0; --i) {
            const auto j = static_cast<std::size_t>(rng.below(i + 1));
            std::swap(perm[i], perm[j]);
        }
        return perm;
    }

    /// r(n) for n >= 1.
    Arm arm_at(std::uint64_t n) const {
        if (n < 1) throw std::invalid_argument("list index starts at 1");
        const std::uint64_t b = (n - 1) / num_arms_;
        const std::size_t pos = static_cast<std::size_t>((n - 1) % num_arms_);
        return block(b)[pos];
    }

  private:
    std::uint64_t seed_;
    std::size_t num_arms_;
};

inline RandomizationList generate(std::uint64_t seed, std::size_t num_arms) { return {seed, num_arms}; }

}  // namespace ate
