#include "renewal/deconvolution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "renewal/errors.hpp"

namespace renewal {
namespace {

constexpr double kTiny = 1e-300;
constexpr double kStartFloor = 1e-3;

void check_detections(std::span<const double> d) {
    if (d.empty())
        throw DataError("deconvolution: empty detection series");
    for (double x : d)
        if (!std::isfinite(x) || x < 0.0)
            throw DataError("deconvolution: detections must be finite and non-negative");
}

void check_cover(const OffsetVector<double>& infections, int km, std::size_t T) {
    const Day first = 1 - km;
    const Day last = static_cast<Day>(T) - 1;
    if (infections.empty() || infections.first() > first || infections.last() < last) {
        std::ostringstream os;
        os << "deconvolution: infections must cover days " << first << ".." << last;
        throw DimensionError(os.str());
    }
}

} // namespace

std::vector<double> expected_detections(const OffsetVector<double>& infections, const TimeVaryingDelay& delay,
                                        std::size_t T) {
    const int km = delay.max_lag();
    check_cover(infections, km, T);
    std::vector<double> e(T, 0.0);
    for (Day s = 1 - km; s <= static_cast<Day>(T) - 1; ++s) {
        const double i = infections[s];
        if (i == 0.0)
            continue;
        const Day hi = std::min<Day>(static_cast<Day>(T), s + km);
        for (Day t = std::max<Day>(1, s + 1); t <= hi; ++t)
            e[static_cast<std::size_t>(t - 1)] += i * delay.at(s, t);
    }
    return e;
}

OffsetVector<double> em_step(const OffsetVector<double>& infections, std::span<const double> detections,
                             const TimeVaryingDelay& delay) {
    check_detections(detections);
    const std::size_t T = detections.size();
    const int km = delay.max_lag();
    const auto e = expected_detections(infections, delay, T);
    std::vector<double> ratio(T, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        if (e[t] < kTiny) {
            if (detections[t] > 0.0) {
                std::ostringstream os;
                os << "em_step: expected detections vanish on day " << t + 1 << " where D = " << detections[t];
                throw DataError(os.str());
            }
            continue;
        }
        ratio[t] = detections[t] / e[t];
    }
    OffsetVector<double> out(1 - km, T + static_cast<std::size_t>(km) - 1, 0.0);
    for (Day s = out.first(); s <= out.last(); ++s) {
        const double b = delay.observed_mass(s, static_cast<Day>(T));
        if (!(b > 0.0)) {
            out[s] = infections[s];
            continue;
        }
        double acc = 0.0;
        const Day hi = std::min<Day>(static_cast<Day>(T), s + km);
        for (Day t = std::max<Day>(1, s + 1); t <= hi; ++t)
            acc += delay.at(s, t) * ratio[static_cast<std::size_t>(t - 1)];
        out[s] = infections[s] * acc / b;
    }
    return out;
}

double pseudo_loglik(std::span<const double> expected, std::span<const double> detections) {
    if (expected.size() != detections.size())
        throw DimensionError("pseudo_loglik: length mismatch");
    double l = 0.0;
    for (std::size_t t = 0; t < expected.size(); ++t) {
        if (detections[t] > 0.0) {
            if (!(expected[t] > 0.0))
                return -std::numeric_limits<double>::infinity();
            l += detections[t] * std::log(expected[t]);
        }
        l -= expected[t];
    }
    return l;
}

double chi_squared(std::span<const double> expected, std::span<const double> detections) {
    if (expected.size() != detections.size())
        throw DimensionError("chi_squared: length mismatch");
    double c = 0.0;
    for (std::size_t t = 0; t < expected.size(); ++t) {
        const double diff = detections[t] - expected[t];
        if (expected[t] < kTiny) {
            if (detections[t] > 0.0)
                return std::numeric_limits<double>::infinity();
            continue;
        }
        c += diff * diff / expected[t];
    }
    return c;
}

OffsetVector<double> shifted_constant_start(std::span<const double> detections, int max_lag, int shift) {
    check_detections(detections);
    const Day T = static_cast<Day>(detections.size());
    OffsetVector<double> start(1 - max_lag, static_cast<std::size_t>(T + max_lag - 1), 0.0);
    for (Day s = start.first(); s <= start.last(); ++s) {
        const Day t = std::clamp<Day>(s + shift, 1, T);
        start[s] = std::max(kStartFloor, detections[static_cast<std::size_t>(t - 1)]);
    }
    return start;
}

OffsetVector<double> shifted_linear_start(std::span<const double> detections, int max_lag, int shift) {
    auto start = shifted_constant_start(detections, max_lag, shift);
    const Day T = static_cast<Day>(detections.size());
    const Day n = std::min<Day>(7, T);
    if (n < 2)
        return start;
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (Day t = T - n + 1; t <= T; ++t) {
        const double x = static_cast<double>(t);
        const double y = detections[static_cast<std::size_t>(t - 1)];
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double nd = static_cast<double>(n);
    const double slope = (nd * sxy - sx * sy) / (nd * sxx - sx * sx);
    const double icpt = (sy - slope * sx) / nd;
    for (Day s = start.first(); s <= start.last(); ++s) {
        const Day t = s + shift;
        if (t > T)
            start[s] = std::max(kStartFloor, icpt + slope * static_cast<double>(t));
    }
    return start;
}

DeconvolutionResult em_deconvolve(std::span<const double> detections, const TimeVaryingDelay& delay,
                                  const DeconvolutionConfig& config) {
    check_detections(detections);
    if (config.max_iters < 1)
        throw ParameterError("em_deconvolve: max_iters must be at least 1");
    const std::size_t T = detections.size();
    const int km = delay.max_lag();

    DeconvolutionResult res;
    res.threshold = config.chi_squared_threshold > 0.0 ? config.chi_squared_threshold : static_cast<double>(T);
    switch (config.start) {
    case StartKind::shifted_constant:
        res.infections = shifted_constant_start(detections, km, config.shift);
        break;
    case StartKind::shifted_linear:
        res.infections = shifted_linear_start(detections, km, config.shift);
        break;
    case StartKind::explicit_vector: {
        check_cover(config.start_values, km, T);
        res.infections = OffsetVector<double>(1 - km, T + static_cast<std::size_t>(km) - 1, 0.0);
        for (Day s = res.infections.first(); s <= res.infections.last(); ++s) {
            const double v = config.start_values[s];
            if (!std::isfinite(v) || v < 0.0)
                throw ParameterError("em_deconvolve: explicit start must be finite and non-negative");
            res.infections[s] = v;
        }
        break;
    }
    }

    auto record = [&] {
        const auto e = expected_detections(res.infections, delay, T);
        res.chi_squared = chi_squared(e, detections);
        res.chi_squared_trace.push_back(res.chi_squared);
        res.loglik_trace.push_back(pseudo_loglik(e, detections));
    };
    record();

    if (config.stopping == StoppingRule::fixed_iters) {
        if (config.fixed_iters < 0)
            throw ParameterError("em_deconvolve: fixed iteration count must be non-negative");
        for (int k = 0; k < config.fixed_iters; ++k) {
            res.infections = em_step(res.infections, detections, delay);
            ++res.iterations;
            record();
        }
        res.converged = true;
        return res;
    }

    if (!(res.threshold > 0.0))
        throw ParameterError("em_deconvolve: chi-squared threshold must be positive");
    while (res.chi_squared >= res.threshold && res.iterations < config.max_iters) {
        res.infections = em_step(res.infections, detections, delay);
        ++res.iterations;
        record();
    }
    res.converged = res.chi_squared < res.threshold;
    return res;
}

} // namespace renewal
