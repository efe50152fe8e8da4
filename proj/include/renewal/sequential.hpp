#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "renewal/mcmc.hpp"
#include "renewal/preprocess.hpp"

namespace renewal {

// Per-window quantiles on the stream's day axis (stream day 1 = first count).
struct WindowQuantiles {
    Day window_end = 0;
    std::vector<double> probs;
    OffsetVector<std::vector<double>> R;
    OffsetVector<std::vector<double>> I;
};

// QuantileTable from a fit whose day 0 sits at stream day `offset`.
WindowQuantiles to_stream_days(const QuantileTable& table, Day window_end, Day offset);

struct StitchedHistory {
    std::vector<double> probs;
    int window_len = 42;
    int blend_span = 3;
    OffsetVector<std::vector<double>> R;
    OffsetVector<std::vector<double>> I;
    OffsetVector<Day> source; // window end that produced each day

    bool empty() const noexcept { return source.empty(); }
};

// Days (t - floor(l/2))..(t-1) come from the new window, the first `blend_span`
// of them blended linearly with the old record; older days are kept.
StitchedHistory stitch(const StitchedHistory& previous, const WindowQuantiles& next, int window_len,
                       int blend_span = 3);

// Prior means for the initial days of a window whose day j is day j + offset of the
// previous window. Empty when the previous draws do not cover those days.
std::optional<OffsetVector<double>> carry_prior(const PosteriorSamples& previous, Day offset);

struct RollingConfig {
    int window_len = 42;
    int blend_span = 3;
    bool smooth_full = false; // smooth the whole stream once instead of each window
    SmoothingOptions smoothing;
    double sigma = 1.5;
    double tau = 0.025;
    McmcConfig mcmc;
    std::vector<double> probs{0.025, 0.5, 0.975};
};

struct WindowRecord {
    Day window_end = 0;
    bool ok = false;
    std::string error;
    std::string lambda0_source; // "carried", "pre-window" or "em-start"
    std::vector<ChainTelemetry> telemetry;
    std::vector<std::string> warnings;
    double seconds = 0.0;
    WindowQuantiles quantiles;
};

struct RollingResult {
    StitchedHistory history;
    std::vector<WindowRecord> windows;
};

using WindowCallback = std::function<void(const WindowRecord&)>;

// `delay` is expressed on the stream's day axis.
RollingResult rolling_fit(std::span<const double> counts, const InfectivityProfile& profile,
                          const TimeVaryingDelay& delay, const RollingConfig& config,
                          const WindowCallback& on_window = {});

} // namespace renewal
