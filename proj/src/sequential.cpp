#include "renewal/sequential.hpp"

#include <chrono>
#include <sstream>

#include "renewal/errors.hpp"

namespace renewal {

WindowQuantiles to_stream_days(const QuantileTable& table, Day window_end, Day offset) {
    WindowQuantiles w;
    w.window_end = window_end;
    w.probs = table.probs;
    w.R = OffsetVector<std::vector<double>>(table.R.first() + offset, table.R.values());
    w.I = OffsetVector<std::vector<double>>(table.I.first() + offset, table.I.values());
    return w;
}

StitchedHistory stitch(const StitchedHistory& previous, const WindowQuantiles& next, int window_len, int blend_span) {
    if (window_len < 2)
        throw ParameterError("stitch: window length must be at least 2");
    if (blend_span < 0)
        throw ParameterError("stitch: blend span must be non-negative");
    const Day t = next.window_end;
    if (next.R.empty() || next.R.last() != t - 1 || next.I.first() != next.R.first() || next.I.last() != t - 1)
        throw ConsistencyError("stitch: window quantiles must end on the day before the window end");

    StitchedHistory out;
    out.window_len = window_len;
    out.blend_span = blend_span;
    out.probs = next.probs;
    if (previous.empty()) {
        out.R = next.R;
        out.I = next.I;
        out.source = OffsetVector<Day>(next.R.first(), next.R.size(), t);
        return out;
    }
    if (previous.probs != next.probs)
        throw ConsistencyError("stitch: quantile levels differ between windows");
    if (previous.source.last() > t - 1)
        throw ConsistencyError("stitch: windows must be stitched in increasing order");

    const Day boundary = t - window_len / 2;
    // after failed windows the new fit also fills whatever the history is missing
    const Day start = std::min(boundary, previous.source.last() + 1);
    if (start < next.R.first()) {
        std::ostringstream os;
        os << "stitch: window ending on day " << t << " does not reach back to day " << start;
        throw ConsistencyError(os.str());
    }

    const Day first = previous.source.first();
    const auto n = static_cast<std::size_t>(t - first);
    out.R = OffsetVector<std::vector<double>>(first, n);
    out.I = OffsetVector<std::vector<double>>(first, n);
    out.source = OffsetVector<Day>(first, n);
    for (Day d = first; d < start; ++d) {
        out.R[d] = previous.R[d];
        out.I[d] = previous.I[d];
        out.source[d] = previous.source[d];
    }
    for (Day d = start; d <= t - 1; ++d) {
        out.R[d] = next.R[d];
        out.I[d] = next.I[d];
        out.source[d] = t;
        const Day j = d - boundary;
        if (j >= 0 && j < blend_span && previous.source.contains(d)) {
            const double w = static_cast<double>(j + 1) / static_cast<double>(blend_span + 1);
            for (std::size_t k = 0; k < out.R[d].size(); ++k) {
                out.R[d][k] = (1.0 - w) * previous.R[d][k] + w * next.R[d][k];
                out.I[d][k] = (1.0 - w) * previous.I[d][k] + w * next.I[d][k];
            }
        }
    }
    return out;
}

std::optional<OffsetVector<double>> carry_prior(const PosteriorSamples& previous, Day offset) {
    if (previous.size() == 0)
        return std::nullopt;
    const Day first = 1 - previous.K_m - previous.K_w;
    const Day last = -previous.K_m;
    const auto& I0 = previous.I.front();
    if (!I0.contains(first + offset) || !I0.contains(last + offset))
        return std::nullopt;
    OffsetVector<double> lambda0(first, static_cast<std::size_t>(previous.K_w), 0.0);
    for (Day s = first; s <= last; ++s) {
        double sum = 0.0;
        for (const auto& draw : previous.I)
            sum += static_cast<double>(draw[s + offset]);
        lambda0[s] = std::max(1e-3, sum / static_cast<double>(previous.size()));
    }
    return lambda0;
}

RollingResult rolling_fit(std::span<const double> counts, const InfectivityProfile& profile,
                          const TimeVaryingDelay& delay, const RollingConfig& config, const WindowCallback& on_window) {
    const int len = config.window_len;
    if (len < 2)
        throw ParameterError("rolling_fit: window length must be at least 2");
    if (counts.size() < static_cast<std::size_t>(len)) {
        std::ostringstream os;
        os << "rolling_fit: stream has " << counts.size() << " days, fewer than the window length " << len;
        throw DataError(os.str());
    }
    std::vector<double> full;
    if (config.smooth_full)
        full = smooth_detections(counts, config.smoothing);

    RollingResult result;
    std::optional<PosteriorSamples> previous;
    Day previous_end = 0;
    const auto n = static_cast<Day>(counts.size());
    for (Day t = len; t <= n; ++t) {
        const Day offset = t - len;
        WindowRecord rec;
        rec.window_end = t;
        const auto started = std::chrono::steady_clock::now();
        try {
            std::vector<double> smoothed;
            if (config.smooth_full)
                smoothed.assign(full.begin() + offset, full.begin() + offset + len);
            else
                smoothed = smooth_detections(counts.subspan(static_cast<std::size_t>(offset), static_cast<std::size_t>(len)),
                                             config.smoothing);
            const auto shifted = delay.shifted(offset);
            Hyperparams hyper;
            hyper.sigma = config.sigma;
            hyper.tau = config.tau;
            std::optional<OffsetVector<double>> carried;
            if (previous)
                carried = carry_prior(*previous, t - previous_end);
            if (carried) {
                hyper.lambda0 = std::move(*carried);
                rec.lambda0_source = "carried";
            } else {
                std::optional<std::vector<double>> pre;
                if (offset >= 7)
                    pre = std::vector<double>(counts.begin() + offset - 7, counts.begin() + offset);
                auto l0 = make_lambda0(pre, smoothed, shifted, profile.horizon());
                hyper.lambda0 = std::move(l0.values);
                rec.lambda0_source = l0.source;
                if (l0.floored)
                    rec.warnings.push_back("prior mean of initial infections floored at 1e-3");
            }
            const Model model(smoothed, profile, shifted, hyper);
            McmcConfig mc = config.mcmc;
            mc.seed = config.mcmc.seed ^ (static_cast<std::uint64_t>(t) * 0x9e3779b97f4a7c15ULL);
            auto samples = run_mcmc(model, mc);
            rec.telemetry = samples.telemetry;
            for (const auto& w : samples.warnings)
                rec.warnings.push_back(w);
            rec.quantiles = to_stream_days(posterior_quantiles(samples, config.probs), t, offset);
            result.history = stitch(result.history, rec.quantiles, len, config.blend_span);
            rec.ok = true;
            previous = std::move(samples);
            previous_end = t;
        } catch (const Error& e) {
            rec.ok = false;
            rec.error = e.what();
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        if (on_window)
            on_window(rec);
        result.windows.push_back(std::move(rec));
    }
    return result;
}

} // namespace renewal
