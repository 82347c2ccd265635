#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>

namespace cebag {

namespace detail {

// Map a finite double to an integer whose ordering matches the double's,
// so adjacent representable values differ by exactly 1.
inline std::int64_t ordered_bits(double x) {
    const std::int64_t bits = std::bit_cast<std::int64_t>(x);
    return bits >= 0 ? bits : std::numeric_limits<std::int64_t>::min() - bits;
}

} // namespace detail

// Distance in units in the last place. 0 for equal values (including -0/+0);
// max for any non-finite input.
inline std::uint64_t ulp_distance(double a, double b) {
    if (a == b) return 0;
    if (!(std::isfinite(a) && std::isfinite(b))) {
        return std::numeric_limits<std::uint64_t>::max();
    }
    const auto ua = static_cast<std::uint64_t>(detail::ordered_bits(a));
    const auto ub = static_cast<std::uint64_t>(detail::ordered_bits(b));
    return ua >= ub ? ua - ub : ub - ua;
}

} // namespace cebag
