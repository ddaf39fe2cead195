#pragma once

#include <cstdint>
#include <stdexcept>

namespace zilcm {

/// Splittable random stream. A (seed, stream) pair identifies a unique,
/// reproducible draw sequence; distinct streams are statistically independent,
/// so each chain (or worker) can own one without coordination.
///
/// Engine: xoshiro256++ seeded through SplitMix64 over (seed, stream).
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t next_u64();

    /// Uniform on the open interval (0, 1); never returns 0 or 1.
    double uniform();

    /// Standard normal via the inverse-CDF transform (one uniform per draw).
    double normal();

    /// Exponential with rate 1.
    double exponential();

    /// Gamma(shape, rate), Marsaglia-Tsang squeeze.
    double gamma(double shape, double rate);

    /// Chi-squared with df degrees of freedom.
    double chisq(double df) { return gamma(0.5 * df, 0.5); }

    /// Inverse-gamma(shape, rate): 1/Gamma(shape, rate).
    double inverse_gamma(double shape, double rate) { return 1.0 / gamma(shape, rate); }

    double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Bernoulli(p).
    bool bernoulli(double p) { return uniform() < p; }

    /// Poisson(mean), inversion for small means and PTRS rejection for large.
    long poisson(double mean);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    struct State {
        std::uint64_t s[4];
    };
    State state() const { return State{{s_[0], s_[1], s_[2], s_[3]}}; }
    void restore(const State& st);

private:
    std::uint64_t s_[4];
    std::uint64_t seed_ = 0;
    std::uint64_t stream_ = 0;
};

}  // namespace zilcm
