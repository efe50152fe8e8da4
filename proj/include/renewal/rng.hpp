#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace renewal {

// Seed-carrying random source. Independent streams are derived from a base
// seed and a stream id, so chains and replicates never share state.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

    // Child stream for sub-task `id`; deterministic in (this stream's seed, id).
    Rng split(std::uint64_t id) const;

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }

    // Uniform on the open interval (0, 1).
    double uniform();
    double normal();
    double normal(double mean, double sd) { return mean + sd * normal(); }

    // Inversion for small means, PTRS transformed rejection above.
    long long poisson(double mean);
    long long binomial(long long n, double p);

    // Multinomial(n; probs) by sequential conditional binomials. `probs` need
    // not be normalized; the draw uses probs / sum(probs).
    void multinomial(long long n, std::span<const double> probs, std::span<long long> out);

    std::mt19937_64& engine() noexcept { return engine_; }

private:
    long long poisson_inversion(double mean);
    long long poisson_ptrs(double mean);

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::vector<double> suffix_;
};

} // namespace renewal
