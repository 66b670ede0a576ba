#pragma once

#include <cstdint>
#include <random>

namespace hypergrid {

/**
 * Seeded pseudo-random source used by every randomized operation.
 *
 * The bit stream is std::mt19937_64, whose output sequence is fixed by the
 * C++ standard. The conversions below are implemented here rather than through
 * <random> distributions (whose algorithms are implementation-defined), so a
 * given seed yields identical values on every platform:
 *
 *  - uniform():   top 53 bits of one draw, scaled by 2^-53, in [0, 1)
 *  - below(n):    Lemire's multiply-shift with rejection, unbiased in [0, n)
 *  - normal():    Box-Muller on two uniform() draws, spare value cached
 */
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t below(std::uint64_t n);

    double normal();

    /// Derives an independent seed for a named sub-stream (splitmix64 finalizer).
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace hypergrid
