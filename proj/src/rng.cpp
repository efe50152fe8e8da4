#include "renewal/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "renewal/errors.hpp"

namespace renewal {
namespace {

std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      0x9e3779b9u};
    return std::mt19937_64(seq);
}

// splitmix64 finalizer; mixes (stream, id) into a child stream id.
std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(make_engine(seed, stream)) {}

Rng Rng::split(std::uint64_t id) const { return Rng(seed_, mix(stream_ ^ mix(id + 1))); }

double Rng::uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::normal() { return normal_(engine_); }

long long Rng::poisson(double mean) {
    if (!(mean >= 0.0) || !std::isfinite(mean))
        throw ParameterError("poisson: mean must be finite and non-negative");
    if (mean == 0.0)
        return 0;
    return mean < 10.0 ? poisson_inversion(mean) : poisson_ptrs(mean);
}

long long Rng::poisson_inversion(double mean) {
    const double u = uniform();
    double p = std::exp(-mean);
    double cdf = p;
    long long k = 0;
    while (u > cdf) {
        ++k;
        p *= mean / static_cast<double>(k);
        cdf += p;
        if (p < 1e-300 && cdf >= 1.0 - 1e-15)
            break;
    }
    return k;
}

// Hoermann (1993), "The transformed rejection method for generating Poisson
// random variables".
long long Rng::poisson_ptrs(double mean) {
    const double slam = std::sqrt(mean);
    const double loglam = std::log(mean);
    const double b = 0.931 + 2.53 * slam;
    const double a = -0.059 + 0.02483 * b;
    const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
    const double vr = 0.9277 - 3.6224 / (b - 2.0);
    for (;;) {
        const double u = uniform() - 0.5;
        const double v = uniform();
        const double us = 0.5 - std::fabs(u);
        const double kd = std::floor((2.0 * a / us + b) * u + mean + 0.43);
        if (us >= 0.07 && v <= vr)
            return static_cast<long long>(kd);
        if (kd < 0.0 || (us < 0.013 && v > us))
            continue;
        if (std::log(v) + std::log(invalpha) - std::log(a / (us * us) + b) <=
            -mean + kd * loglam - std::lgamma(kd + 1.0))
            return static_cast<long long>(kd);
    }
}

long long Rng::binomial(long long n, double p) {
    if (n < 0)
        throw ParameterError("binomial: negative size");
    if (n == 0 || p <= 0.0)
        return 0;
    if (p >= 1.0)
        return n;
    std::binomial_distribution<long long> dist(n, p);
    return dist(engine_);
}

void Rng::multinomial(long long n, std::span<const double> probs, std::span<long long> out) {
    // Suffix sums are accumulated from the back so that the conditional
    // probability of the last positive category is exactly 1.
    suffix_.assign(probs.size() + 1, 0.0);
    for (std::size_t i = probs.size(); i-- > 0;)
        suffix_[i] = suffix_[i + 1] + std::max(0.0, probs[i]);
    if (n > 0 && !(suffix_[0] > 0.0))
        throw ParameterError("multinomial: no positive probability mass");
    long long remaining = n;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (remaining == 0 || probs[i] <= 0.0) {
            out[i] = 0;
            continue;
        }
        out[i] = binomial(remaining, std::min(1.0, probs[i] / suffix_[i]));
        remaining -= out[i];
    }
}

} // namespace renewal
