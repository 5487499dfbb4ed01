#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace pdfilter {

/// Seeded split-stream generator. The engine state is derived from
/// (seed, stream_id) through std::seed_seq, so replication r of a Monte Carlo
/// run always draws from stream r regardless of scheduling. Variates are
/// produced from raw 64-bit words with explicit formulas, which keeps draws
/// identical across standard library implementations.
class RandomSource {
public:
    RandomSource(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_(stream_id) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream_id), static_cast<std::uint32_t>(stream_id >> 32),
                          0x9e3779b9u};
        engine_.seed(seq);
    }

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_; }

    RandomSource substream(std::uint64_t stream_id) const { return RandomSource(seed_, stream_id); }

    /// Uniform on the open interval (0, 1).
    double uniform() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

    double exponential(double rate) { return -std::log(uniform()) / rate; }

    /// Index drawn from nonnegative weights summing to `total`.
    template <typename Weights>
    std::size_t categorical(const Weights& weights, double total) {
        const double u = uniform() * total;
        double acc = 0.0;
        std::size_t last_positive = 0;
        for (std::size_t k = 0; k < static_cast<std::size_t>(weights.size()); ++k) {
            if (weights[k] <= 0.0) continue;
            acc += weights[k];
            last_positive = k;
            if (u < acc) return k;
        }
        return last_positive;
    }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::mt19937_64 engine_;
};

}  // namespace pdfilter
