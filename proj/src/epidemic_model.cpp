#include "renewal/epidemic_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "renewal/errors.hpp"

namespace renewal {
namespace {

template <class T>
RenewalIntensity intensity_impl(std::span<const T> history, double r_e, const InfectivityProfile& profile) {
    const int kw = profile.horizon();
    if (history.size() < static_cast<std::size_t>(kw))
        throw DimensionError("renewal_intensity: history shorter than the infectivity horizon");
    if (!std::isfinite(r_e) || r_e < 0.0)
        throw ParameterError("renewal_intensity: reproduction number must be finite and non-negative");
    double kappa = 0.0;
    const std::size_t n = history.size();
    for (int k = 1; k <= kw; ++k) {
        const double x = static_cast<double>(history[n - static_cast<std::size_t>(k)]);
        if (x < 0.0)
            throw ParameterError("renewal_intensity: negative infection count in history");
        kappa += profile.weight(k) * x;
    }
    return {kappa, r_e * kappa};
}

void check_initial(std::span<const long long> initial, const InfectivityProfile& profile) {
    if (initial.size() != static_cast<std::size_t>(profile.horizon()))
        throw DimensionError("simulation: need exactly K_w initial infections");
    for (long long x : initial)
        if (x < 0)
            throw ParameterError("simulation: initial infections must be non-negative");
}

long long draw_infections(double lambda, Day day, const SimulationOptions& options, Rng& rng) {
    if (!(lambda <= options.intensity_cap)) {
        std::ostringstream os;
        os << "simulation: intensity " << lambda << " on day " << day << " exceeds cap " << options.intensity_cap;
        throw DivergenceError(os.str());
    }
    return rng.poisson(lambda);
}

// Infections on initial days followed by the renewal recursion.
OffsetVector<long long> renewal_recursion(const OffsetVector<double>& reproduction,
                                          std::span<const long long> initial, const InfectivityProfile& profile,
                                          Rng& rng, const SimulationOptions& options) {
    check_initial(initial, profile);
    const int kw = profile.horizon();
    const Day first = reproduction.first() - kw;
    OffsetVector<long long> infections(first, static_cast<std::size_t>(kw) + reproduction.size(), 0);
    for (int i = 0; i < kw; ++i)
        infections[first + i] = initial[static_cast<std::size_t>(i)];
    for (Day t = reproduction.first(); t <= reproduction.last(); ++t) {
        const double r = reproduction[t];
        if (!std::isfinite(r) || r < 0.0)
            throw ParameterError("simulation: reproduction numbers must be finite and non-negative");
        double kappa = 0.0;
        for (int k = 1; k <= kw; ++k)
            kappa += profile.weight(k) * static_cast<double>(infections[t - k]);
        infections[t] = draw_infections(r * kappa, t, options, rng);
    }
    return infections;
}

} // namespace

RenewalIntensity renewal_intensity(std::span<const double> history, double r_e, const InfectivityProfile& profile) {
    return intensity_impl(history, r_e, profile);
}

RenewalIntensity renewal_intensity(std::span<const long long> history, double r_e,
                                   const InfectivityProfile& profile) {
    return intensity_impl(history, r_e, profile);
}

long long EpidemicPath::allocation(Day s, Day t) const {
    const Day lag = t - s;
    if (lag < 1 || lag > static_cast<Day>(bands.size()))
        return 0;
    const auto& band = bands[static_cast<std::size_t>(lag - 1)];
    return band.contains(s) ? band[s] : 0;
}

std::vector<long long> EpidemicPath::detections_between(Day from, Day to) const {
    std::vector<long long> out;
    for (Day t = from; t <= to; ++t)
        out.push_back(detections.contains(t) ? detections[t] : 0);
    return out;
}

OffsetVector<long long> simulate_infections(const OffsetVector<double>& reproduction,
                                            std::span<const long long> initial, const InfectivityProfile& profile,
                                            Rng& rng, const SimulationOptions& options) {
    return renewal_recursion(reproduction, initial, profile, rng, options);
}

EpidemicPath simulate_path(const OffsetVector<double>& reproduction, std::span<const long long> initial,
                           const InfectivityProfile& profile, const TimeVaryingDelay& delay, Rng& rng,
                           const SimulationOptions& options) {
    EpidemicPath path;
    path.infections = renewal_recursion(reproduction, initial, profile, rng, options);
    const Day first = path.infections.first();
    const Day last = path.infections.last();
    const int km = delay.max_lag();
    const std::size_t n = path.infections.size();

    path.bands.assign(static_cast<std::size_t>(km), OffsetVector<long long>(first, n, 0));
    path.undetected = OffsetVector<long long>(first, n, 0);
    path.detections = OffsetVector<long long>(first + 1, n + static_cast<std::size_t>(km) - 1, 0);

    std::vector<double> probs(static_cast<std::size_t>(km) + 1);
    std::vector<long long> counts(probs.size());
    for (Day s = first; s <= last; ++s) {
        for (int k = 1; k <= km; ++k)
            probs[static_cast<std::size_t>(k - 1)] = delay.prob(s, k);
        probs.back() = delay.nondetect(s);
        rng.multinomial(path.infections[s], probs, counts);
        for (int k = 1; k <= km; ++k) {
            const long long a = counts[static_cast<std::size_t>(k - 1)];
            path.bands[static_cast<std::size_t>(k - 1)][s] = a;
            path.detections[s + k] += a;
        }
        path.undetected[s] = counts.back();
    }
    return path;
}

double growth_rate(double r_e, const InfectivityProfile& profile) {
    if (!std::isfinite(r_e) || !(r_e > 0.0))
        throw ParameterError("growth_rate: reproduction number must be positive and finite");
    // g(rho) = sum_k w_k rho^{-k} - 1/R is strictly decreasing in rho.
    auto g = [&](double rho) {
        double s = 0.0;
        for (int k = 1; k <= profile.horizon(); ++k)
            s += profile.weight(k) * std::pow(rho, -k);
        return s - 1.0 / r_e;
    };
    double lo = 1e-6;
    double hi = 10.0;
    if (!(g(lo) > 0.0) || !(g(hi) < 0.0)) {
        std::ostringstream os;
        os << "growth_rate: root for R=" << r_e << " lies outside [1e-6, 10]";
        throw NumericalError(os.str());
    }
    for (int i = 0; i < 200 && hi - lo > 1e-13; ++i) {
        const double mid = 0.5 * (lo + hi);
        const double v = g(mid);
        if (v == 0.0)
            return mid;
        (v > 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

VarianceGrowthReport variance_growth_check(double r_e, const InfectivityProfile& profile, int horizon,
                                           int replicates, std::span<const long long> initial, Rng& rng,
                                           const SimulationOptions& options) {
    if (horizon < 1 || replicates < 2)
        throw ParameterError("variance_growth_check: need horizon >= 1 and at least 2 replicates");
    const OffsetVector<double> reproduction(1, static_cast<std::size_t>(horizon), r_e);
    std::vector<double> sum(static_cast<std::size_t>(horizon), 0.0);
    std::vector<double> sum_sq(static_cast<std::size_t>(horizon), 0.0);
    for (int rep = 0; rep < replicates; ++rep) {
        Rng stream = rng.split(static_cast<std::uint64_t>(rep));
        const auto inf = renewal_recursion(reproduction, initial, profile, stream, options);
        for (int t = 1; t <= horizon; ++t) {
            const double x = static_cast<double>(inf[t]);
            sum[static_cast<std::size_t>(t - 1)] += x;
            sum_sq[static_cast<std::size_t>(t - 1)] += x * x;
        }
    }
    VarianceGrowthReport report;
    const double n = replicates;
    for (int i = 0; i < horizon; ++i) {
        const double mean = sum[static_cast<std::size_t>(i)] / n;
        const double var = std::max(0.0, (sum_sq[static_cast<std::size_t>(i)] - n * mean * mean) / (n - 1.0));
        report.mean.push_back(mean);
        report.variance.push_back(var);
        report.ratio.push_back(mean > 0.0 ? var / (mean * mean) : 0.0);
    }
    const int tail = std::max(2, horizon / 5);
    const auto first = report.ratio.end() - std::min(tail, horizon);
    const double m = std::accumulate(first, report.ratio.end(), 0.0) / static_cast<double>(report.ratio.end() - first);
    double ss = 0.0;
    for (auto it = first; it != report.ratio.end(); ++it)
        ss += (*it - m) * (*it - m);
    const double sd = std::sqrt(ss / std::max<double>(1.0, static_cast<double>(report.ratio.end() - first) - 1.0));
    report.tail_cv = m > 0.0 ? sd / m : 0.0;
    return report;
}

long long EpidemicState::detections() const {
    long long d = 0;
    for (long long a : allocations)
        d += a;
    return d;
}

EpidemicState predictive_step(const EpidemicState& state, double tau, const InfectivityProfile& profile,
                              const TimeVaryingDelay& delay, Rng& rng) {
    const int kw = profile.horizon();
    const int km = delay.max_lag();
    if (state.infections.size() != static_cast<std::size_t>(kw) ||
        state.allocations.size() != static_cast<std::size_t>(km) ||
        state.undetected.size() != static_cast<std::size_t>(km - 1))
        throw StateError("predictive_step: state dimensions do not match K_w and K_m");
    if (!std::isfinite(state.log_r_prev))
        throw StateError("predictive_step: log reproduction number is not finite");
    if (!std::isfinite(tau) || tau < 0.0)
        throw ParameterError("predictive_step: tau must be finite and non-negative");
    for (long long x : state.infections)
        if (x < 0)
            throw StateError("predictive_step: negative infections in state");
    for (long long x : state.allocations)
        if (x < 0)
            throw StateError("predictive_step: negative allocation in state");
    for (long long x : state.undetected)
        if (x < 0)
            throw StateError("predictive_step: U_{s,t} must be non-negative");

    const Day t = state.t;
    EpidemicState next;
    next.t = t + 1;
    next.log_r_prev = rng.normal(state.log_r_prev, tau);

    const auto intensity = renewal_intensity(std::span<const long long>(state.infections), 1.0, profile);
    const double lambda = std::exp(next.log_r_prev) * intensity.kappa;
    const long long new_inf = rng.poisson(lambda);

    next.infections.assign(state.infections.begin() + 1, state.infections.end());
    next.infections.push_back(new_inf);

    // Allocations A_{s,t+1} for s = t+1-K_m .. t; undetected U_{s,t+1} for s = t+2-K_m .. t.
    next.allocations.assign(static_cast<std::size_t>(km), 0);
    next.undetected.assign(static_cast<std::size_t>(km - 1), 0);
    for (int i = 0; i < km - 1; ++i) {
        const Day s = t + 1 - km + i;
        const long long u = state.undetected[static_cast<std::size_t>(i)];
        long long a = 0;
        if (u > 0) {
            const double rem = delay.remaining_mass(s, t + 1);
            if (!(rem > 0.0))
                throw StateError("predictive_step: undetected infections with no remaining detection mass");
            a = rng.binomial(u, std::min(1.0, delay.at(s, t + 1) / rem));
        }
        next.allocations[static_cast<std::size_t>(i)] = a;
        if (i > 0)
            next.undetected[static_cast<std::size_t>(i - 1)] = u - a;
    }
    const long long a_new = rng.binomial(new_inf, std::min(1.0, delay.at(t, t + 1)));
    next.allocations.back() = a_new;
    if (km > 1)
        next.undetected.back() = new_inf - a_new;
    return next;
}

} // namespace renewal
