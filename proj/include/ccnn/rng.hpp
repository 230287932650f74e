#pragma once

#include <cstdint>
#include <random>

namespace ccnn {

// Deterministic random source. mt19937_64 output is fixed by the standard and
// the derived draws below avoid std::*_distribution, whose results differ
// between standard libraries.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next() { return gen_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi], inclusive. Unbiased via rejection.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
        if (range == 0) return static_cast<std::int64_t>(gen_());  // full 64-bit span
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
        std::uint64_t v = gen_();
        while (v >= limit) v = gen_();
        return lo + static_cast<std::int64_t>(v % range);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Derive an independent stream, e.g. one per scene or epoch.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ULL;
        x ^= x >> 27;
        x *= 0x94d049bb133111ebULL;
        x ^= x >> 31;
        return x;
    }

  private:
    std::mt19937_64 gen_;
};

}  // namespace ccnn
