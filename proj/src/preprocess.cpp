#include "renewal/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>

#include "renewal/errors.hpp"

namespace renewal {
namespace {

constexpr int kPeriod = 7;
constexpr int kMaxInner = 50;
constexpr double kInnerTol = 1e-12;
constexpr int kRobustPasses = 2;

std::optional<double> loess_fit(std::span<const double> x, std::span<const double> y, std::span<const double> rho,
                                double x0, int span, int degree) {
    const std::size_t n = x.size();
    if (n == 0)
        return std::nullopt;
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i)
        dist[i] = std::fabs(x[i] - x0);
    double h;
    if (static_cast<std::size_t>(span) >= n) {
        h = *std::max_element(dist.begin(), dist.end());
        h += 0.5 * static_cast<double>(static_cast<std::size_t>(span) - n);
    } else {
        std::vector<double> sorted = dist;
        std::nth_element(sorted.begin(), sorted.begin() + (span - 1), sorted.end());
        h = sorted[static_cast<std::size_t>(span - 1)];
    }
    const double h_lo = 0.001 * h;
    const double h_hi = 0.999 * h;
    std::vector<double> w(n, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = dist[i];
        double k = 0.0;
        if (r <= h_lo)
            k = 1.0;
        else if (r <= h_hi) {
            const double u = r / h;
            const double c = 1.0 - u * u * u;
            k = c * c * c;
        }
        w[i] = k * rho[i];
        total += w[i];
    }
    if (!(total > 0.0))
        return std::nullopt;
    for (double& v : w)
        v /= total;
    if (degree >= 1 && h > 0.0) {
        double a = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            a += w[i] * x[i];
        double b = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            b += w[i] * (x[i] - a) * (x[i] - a);
        const double range = x[n - 1] - x[0];
        if (std::sqrt(b) > 0.001 * range) {
            const double slope = (x0 - a) / b;
            for (std::size_t i = 0; i < n; ++i)
                w[i] *= slope * (x[i] - a) + 1.0;
        }
    }
    double value = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        value += w[i] * y[i];
    return value;
}

std::vector<double> iota_positions(std::size_t n) {
    std::vector<double> x(n);
    std::iota(x.begin(), x.end(), 0.0);
    return x;
}

// Loess evaluated at every point; falls back to the observation itself when all weights vanish.
std::vector<double> loess_smooth(std::span<const double> y, std::span<const double> rho, int span, int degree) {
    const auto x = iota_positions(y.size());
    std::vector<double> out(y.size());
    for (std::size_t i = 0; i < y.size(); ++i)
        out[i] = loess_fit(x, y, rho, x[i], span, degree).value_or(y[i]);
    return out;
}

std::vector<double> moving_average(std::span<const double> v, int len) {
    std::vector<double> out;
    if (v.size() < static_cast<std::size_t>(len))
        return out;
    out.resize(v.size() - static_cast<std::size_t>(len) + 1);
    double acc = std::accumulate(v.begin(), v.begin() + len, 0.0);
    out[0] = acc / len;
    for (std::size_t i = 1; i < out.size(); ++i) {
        acc += v[i + static_cast<std::size_t>(len) - 1] - v[i - 1];
        out[i] = acc / len;
    }
    return out;
}

// Smooth each weekday subseries and extend it by one point on both sides.
// Result has length n + 14 and covers positions -7 .. n+6.
std::vector<double> cycle_subseries(std::span<const double> detrended, std::span<const double> rho,
                                    SeasonalMode mode) {
    const std::size_t n = detrended.size();
    std::vector<double> c(n + 2 * kPeriod, 0.0);
    for (int j = 0; j < kPeriod; ++j) {
        std::vector<double> ys;
        std::vector<double> ws;
        for (std::size_t i = static_cast<std::size_t>(j); i < n; i += kPeriod) {
            ys.push_back(detrended[i]);
            ws.push_back(rho[i]);
        }
        const std::size_t m = ys.size();
        std::vector<double> smooth(m + 2);
        if (mode.periodic) {
            double sw = 0.0, swy = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                sw += ws[i];
                swy += ws[i] * ys[i];
            }
            const double mean = sw > 0.0 ? swy / sw : std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(m);
            std::fill(smooth.begin(), smooth.end(), mean);
        } else {
            const auto xs = iota_positions(m);
            for (std::size_t i = 0; i < m; ++i)
                smooth[i + 1] = loess_fit(xs, ys, ws, xs[i], mode.window, 0).value_or(ys[i]);
            smooth[0] = loess_fit(xs, ys, ws, -1.0, mode.window, 0).value_or(smooth[1]);
            smooth[m + 1] = loess_fit(xs, ys, ws, static_cast<double>(m), mode.window, 0).value_or(smooth[m]);
        }
        for (std::size_t i = 0; i < m + 2; ++i)
            c[static_cast<std::size_t>(j) + i * kPeriod] = smooth[i];
    }
    return c;
}

void check_series(std::span<const double> y, int trend_window, SeasonalMode mode) {
    if (y.size() < 2 * kPeriod)
        throw DataError("decompose: need at least 14 observations");
    for (double v : y)
        if (!std::isfinite(v))
            throw DataError("decompose: non-finite value in log series (zero counts need a zero offset)");
    if (trend_window < kPeriod || trend_window % 2 == 0)
        throw ParameterError("decompose: trend window must be odd and at least 7");
    if (!mode.periodic && mode.window < 3)
        throw ParameterError("decompose: seasonal window must be at least 3");
}

double median(std::vector<double> v) {
    const std::size_t n = v.size();
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2), v.end());
    const double hi = v[n / 2];
    if (n % 2 == 1)
        return hi;
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2));
    return 0.5 * (lo + hi);
}

std::vector<double> bisquare_weights(std::span<const double> resid) {
    std::vector<double> abs_r(resid.size());
    for (std::size_t i = 0; i < resid.size(); ++i)
        abs_r[i] = std::fabs(resid[i]);
    const double cmad = 6.0 * median(abs_r);
    std::vector<double> w(resid.size(), 1.0);
    if (!(cmad > 1e-10))
        return w;
    for (std::size_t i = 0; i < resid.size(); ++i) {
        const double r = abs_r[i];
        if (r <= 0.001 * cmad)
            w[i] = 1.0;
        else if (r <= 0.999 * cmad) {
            const double u = r / cmad;
            w[i] = (1.0 - u * u) * (1.0 - u * u);
        } else
            w[i] = 0.0;
    }
    return w;
}

void inner_loop(std::span<const double> y, std::span<const double> rho, int trend_window, SeasonalMode mode,
                std::vector<double>& trend, std::vector<double>& seasonal, int& iterations) {
    const std::size_t n = y.size();
    std::vector<double> detrended(n);
    std::vector<double> deseason(n);
    const std::vector<double> ones(n + 2 * kPeriod, 1.0);
    for (int it = 0; it < kMaxInner; ++it) {
        ++iterations;
        for (std::size_t i = 0; i < n; ++i)
            detrended[i] = y[i] - trend[i];
        const auto c = cycle_subseries(detrended, rho, mode);
        const auto low = loess_smooth(moving_average(moving_average(moving_average(c, kPeriod), kPeriod), 3),
                                      std::span<const double>(ones).first(n), kPeriod, 1);
        for (std::size_t i = 0; i < n; ++i) {
            seasonal[i] = c[i + kPeriod] - low[i];
            deseason[i] = y[i] - seasonal[i];
        }
        const auto new_trend = loess_smooth(deseason, rho, trend_window, 1);
        double change = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            change = std::max(change, std::fabs(new_trend[i] - trend[i]));
        trend = new_trend;
        if (change < kInnerTol)
            break;
    }
}

} // namespace

double loess_at(std::span<const double> x, std::span<const double> y, std::span<const double> rho, double x0,
                int span, int degree) {
    if (x.size() != y.size() || x.size() != rho.size())
        throw DimensionError("loess_at: length mismatch");
    if (span < 1)
        throw ParameterError("loess_at: span must be positive");
    const auto v = loess_fit(x, y, rho, x0, span, degree);
    if (!v)
        throw NumericalError("loess_at: all local weights are zero");
    return *v;
}

DecompositionResult decompose(std::span<const double> log_counts, int trend_window, SeasonalMode seasonal,
                              bool robust) {
    check_series(log_counts, trend_window, seasonal);
    const std::size_t n = log_counts.size();
    DecompositionResult res;
    res.trend.assign(n, 0.0);
    res.weekday.assign(n, 0.0);
    res.robustness_weights.assign(n, 1.0);

    inner_loop(log_counts, res.robustness_weights, trend_window, seasonal, res.trend, res.weekday,
               res.inner_iterations);
    if (robust) {
        std::vector<double> resid(n);
        for (int pass = 0; pass < kRobustPasses; ++pass) {
            for (std::size_t i = 0; i < n; ++i)
                resid[i] = log_counts[i] - res.trend[i] - res.weekday[i];
            res.robustness_weights = bisquare_weights(resid);
            inner_loop(log_counts, res.robustness_weights, trend_window, seasonal, res.trend, res.weekday,
                       res.inner_iterations);
        }
    }

    if (seasonal.periodic) {
        std::array<double, kPeriod> sum{};
        std::array<int, kPeriod> count{};
        for (std::size_t i = 0; i < n; ++i) {
            sum[i % kPeriod] += res.weekday[i];
            ++count[i % kPeriod];
        }
        for (std::size_t i = 0; i < n; ++i)
            res.weekday[i] = sum[i % kPeriod] / count[i % kPeriod];
    }
    res.remainder.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        res.remainder[i] = log_counts[i] - res.trend[i] - res.weekday[i];
    return res;
}

SmoothedSeries smooth_with_components(std::span<const double> counts, const SmoothingOptions& options) {
    const double offset = options.zero_offset.value_or(0.0);
    if (options.zero_offset && !(offset > 0.0 && std::isfinite(offset)))
        throw ParameterError("smooth_detections: zero offset must be positive");
    std::vector<double> logs(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const double d = counts[i];
        if (!std::isfinite(d) || d < 0.0)
            throw DataError("smooth_detections: counts must be finite and non-negative");
        if (d == 0.0 && !options.zero_offset) {
            std::ostringstream os;
            os << "smooth_detections: zero count on day " << i + 1
               << "; the log-scale decomposition needs positive counts (use a zero offset, e.g. --zero-offset 0.5)";
            throw DataError(os.str());
        }
        logs[i] = std::log(d + offset);
    }
    SmoothedSeries out;
    out.decomposition = decompose(logs, options.trend_window, options.seasonal, options.robust);
    out.smoothed.resize(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i)
        out.smoothed[i] = std::max(0.0, std::exp(out.decomposition.trend[i]) - offset);
    const double raw_total = std::accumulate(counts.begin(), counts.end(), 0.0);
    const double smooth_total = std::accumulate(out.smoothed.begin(), out.smoothed.end(), 0.0);
    if (smooth_total > 0.0) {
        const double scale = raw_total / smooth_total;
        for (double& v : out.smoothed)
            v *= scale;
    }
    return out;
}

std::vector<double> smooth_detections(std::span<const double> counts, const SmoothingOptions& options) {
    return smooth_with_components(counts, options).smoothed;
}

std::array<double, 7> weekday_effect_estimates(std::span<const double> counts, int first_weekday,
                                               const SmoothingOptions& options) {
    if (first_weekday < 0 || first_weekday > 6)
        throw ParameterError("weekday_effect_estimates: weekday index must be in 0..6");
    const auto s = smooth_with_components(counts, options);
    std::array<double, 7> sum{};
    std::array<int, 7> count{};
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const std::size_t wd = (static_cast<std::size_t>(first_weekday) + i) % 7;
        sum[wd] += s.decomposition.weekday[i];
        ++count[wd];
    }
    double mean_log = 0.0;
    for (int i = 0; i < 7; ++i)
        mean_log += sum[static_cast<std::size_t>(i)] / count[static_cast<std::size_t>(i)];
    mean_log /= 7.0;
    std::array<double, 7> effects{};
    for (std::size_t i = 0; i < 7; ++i)
        effects[i] = std::exp(sum[i] / count[i] - mean_log);
    return effects;
}

} // namespace renewal
