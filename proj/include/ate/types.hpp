#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ate {

using Arm = std::size_t;

inline constexpr std::size_t max_arms = 32;

/// Set of arm indexes, 0 being the control. Iteration is ascending.
class ArmSet {
  public:
    constexpr ArmSet() noexcept = default;

    static constexpr ArmSet all(std::size_t num_arms) noexcept {
        return ArmSet{num_arms >= 32 ? 0xffffffffu : ((1u << num_arms) - 1u)};
    }
    static constexpr ArmSet single(Arm k) noexcept { return ArmSet{1u << k}; }
    static constexpr ArmSet from_mask(std::uint32_t mask) noexcept { return ArmSet{mask}; }

    constexpr bool contains(Arm k) const noexcept { return k < max_arms && ((bits_ >> k) & 1u) != 0; }
    constexpr void insert(Arm k) noexcept { bits_ |= (1u << k); }
    constexpr void erase(Arm k) noexcept { bits_ &= ~(1u << k); }
    constexpr std::size_t size() const noexcept { return static_cast<std::size_t>(std::popcount(bits_)); }
    constexpr bool empty() const noexcept { return bits_ == 0; }
    constexpr std::uint32_t mask() const noexcept { return bits_; }

    constexpr ArmSet without(Arm k) const noexcept { return ArmSet{bits_ & ~(1u << k)}; }

    std::vector<Arm> members() const {
        std::vector<Arm> out;
        out.reserve(size());
        for (std::uint32_t b = bits_; b != 0; b &= b - 1) out.push_back(static_cast<Arm>(std::countr_zero(b)));
        return out;
    }

    template <class F>
    constexpr void for_each(F&& f) const {
        for (std::uint32_t b = bits_; b != 0; b &= b - 1) f(static_cast<Arm>(std::countr_zero(b)));
    }

    friend constexpr bool operator==(ArmSet, ArmSet) noexcept = default;

  private:
    constexpr explicit ArmSet(std::uint32_t bits) noexcept : bits_(bits) {}
    std::uint32_t bits_ = 0;
};

/// Invalid configuration. field() names the offending parameter.
class ConfigError : public std::invalid_argument {
  public:
    ConfigError(std::string field, const std::string& what)
        : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

  private:
    std::string field_;
};

}  // namespace ate
