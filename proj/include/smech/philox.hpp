#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace smech {

/// Philox 4x32-10 counter-based generator.  A (counter, key) pair maps to
/// four independent 32-bit words through ten rounds of multiply-xor mixing;
/// there is no sequential state, so any (step, unit) coordinate can be
/// evaluated independently and in any order -- the basis of the bit-exact
/// parallel determinism contract.
namespace philox {

constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
constexpr std::uint32_t kMult0 = 0xD2511F53u;
constexpr std::uint32_t kMult1 = 0xCD9E8D57u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    const std::uint64_t p = static_cast<std::uint64_t>(a) * static_cast<std::uint64_t>(b);
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

inline std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr,
                                          std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kMult0, ctr[0], hi0, lo0);
        mulhilo(kMult1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kWeyl0;
        key[1] += kWeyl1;
    }
    return ctr;
}

} // namespace philox

/// Purpose tags keep independent random uses on disjoint streams.
constexpr std::uint32_t kStreamWalkerNoise = 2u;

/// A purpose-tagged random stream addressed by (step, unit) coordinates.
/// Identical (seed, purpose, step, unit) always reproduce the same draw,
/// regardless of thread count or evaluation order.
struct RandomStream {
    std::uint64_t seed = 0;
    std::uint32_t purpose = 0;

    std::array<std::uint32_t, 4> raw(std::uint64_t step, std::uint64_t unit) const {
        const std::array<std::uint32_t, 4> ctr = {
            static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32),
            static_cast<std::uint32_t>(unit), static_cast<std::uint32_t>(unit >> 32)};
        const std::array<std::uint32_t, 2> key = {
            static_cast<std::uint32_t>(seed),
            static_cast<std::uint32_t>(seed >> 32) ^ purpose};
        return philox::block(ctr, key);
    }

    /// Two uniforms in [0, 1) with 53-bit mantissas from one block.
    std::array<double, 2> uniform_pair(std::uint64_t step, std::uint64_t unit) const {
        const auto w = raw(step, unit);
        const std::uint64_t a =
            (static_cast<std::uint64_t>(w[0]) << 32 | w[1]) >> 11;
        const std::uint64_t b =
            (static_cast<std::uint64_t>(w[2]) << 32 | w[3]) >> 11;
        constexpr double scale = 1.0 / 9007199254740992.0;  // 2^-53
        return {static_cast<double>(a) * scale, static_cast<double>(b) * scale};
    }

    /// Standard normal draw via Box-Muller on one block.
    double normal(std::uint64_t step, std::uint64_t unit) const {
        const auto u = uniform_pair(step, unit);
        const double r = std::sqrt(-2.0 * std::log(1.0 - u[0]));  // 1-u in (0,1]
        constexpr double two_pi = 6.283185307179586476925286766559;
        return r * std::cos(two_pi * u[1]);
    }
};

} // namespace smech
