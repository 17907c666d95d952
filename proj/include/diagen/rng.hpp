#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string_view>
#include <vector>

namespace diagen {

// 64-bit FNV-1a. Used for config fingerprints and seed derivation.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state = 0xcbf29ce484222325ull) {
    for (unsigned char c : bytes) {
        state ^= c;
        state *= 0x100000001b3ull;
    }
    return state;
}

inline std::uint64_t fnv1a64_u64(std::uint64_t value, std::uint64_t state) {
    for (int i = 0; i < 8; ++i) {
        state ^= static_cast<unsigned char>(value >> (8 * i));
        state *= 0x100000001b3ull;
    }
    return state;
}

// Derives a per-item seed from a master seed, a record id, an index, and a
// salt naming the consumer ("noise", "gen", ...). Order-independent across
// items, so batches can run in parallel and still reproduce exactly.
inline std::uint64_t derive_seed(std::uint64_t master_seed, std::string_view id,
                                 std::uint64_t index, std::string_view salt) {
    std::uint64_t h = fnv1a64_u64(master_seed, 0xcbf29ce484222325ull);
    h = fnv1a64(id, h);
    h = fnv1a64("\x1f", h);
    h = fnv1a64_u64(index, h);
    h = fnv1a64(salt, h);
    return h;
}

/// Seedable random source with fixed cross-platform stream semantics.
///
/// The engine is std::mt19937_64, whose output sequence is pinned by the
/// standard. uniform01() maps one engine draw to [0,1) via the top 53 bits.
/// gaussian() consumes exactly two engine draws (Box-Muller, cosine branch),
/// and vectors are filled in coordinate order: coordinate i uses draws
/// 2i and 2i+1 of the stream. The transform goes through libm, so results
/// are bit-identical for a fixed toolchain.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double gaussian() {
        const double u1 = 1.0 - uniform01();  // (0,1], keeps log finite
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::vector<double> gaussian_vector(std::size_t n) {
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = gaussian();
        return v;
    }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t uniform_below(std::uint64_t n) {
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return x % n;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace diagen
