#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace impact {

// xoshiro256** seeded through splitmix64. All derived distributions are
// implemented here rather than through <random> so that a seed produces
// the same stream on every platform and standard library.
class Rng {
public:
    static constexpr std::string_view algorithm = "xoshiro256** (splitmix64 seeding)";

    explicit Rng(std::uint64_t seed) noexcept;

    std::uint64_t next() noexcept;

    // Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept;
    // Uniform on (0, 1].
    double uniform_pos() noexcept { return 1.0 - uniform(); }
    // Uniform integer in [0, n); n must be positive.
    std::uint64_t below(std::uint64_t n) noexcept;
    // Standard normal via Box-Muller.
    double normal() noexcept;
    bool coin() noexcept { return (next() >> 63) != 0; }

private:
    std::array<std::uint64_t, 4> s_{};
};

std::uint64_t splitmix64(std::uint64_t& state) noexcept;

// Deterministic child seed for an indexed sub-stream of `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

}  // namespace impact
