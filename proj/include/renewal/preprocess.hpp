#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

namespace renewal {

struct SeasonalMode {
    bool periodic = true;
    int window = 7; // loess span over each weekday subseries when not periodic

    static SeasonalMode make_periodic() { return {true, 0}; }
    static SeasonalMode make_window(int n) { return {false, n}; }
};

struct DecompositionResult {
    std::vector<double> trend;
    std::vector<double> weekday;
    std::vector<double> remainder;
    std::vector<double> robustness_weights;
    int inner_iterations = 0; // total over all outer passes
};

struct SmoothingOptions {
    int trend_window = 15;
    SeasonalMode seasonal = SeasonalMode::make_periodic();
    bool robust = true;
    // log(D + c) instead of log(D); c is subtracted again after exponentiation.
    std::optional<double> zero_offset;
};

// Loess-based seasonal-trend decomposition with period 7 of a log-scale series.
DecompositionResult decompose(std::span<const double> log_counts, int trend_window, SeasonalMode seasonal,
                              bool robust);

// exp(trend), rescaled so that the total matches the raw counts.
std::vector<double> smooth_detections(std::span<const double> counts, const SmoothingOptions& options = {});

// Same, also returning the decomposition it was derived from.
struct SmoothedSeries {
    std::vector<double> smoothed;
    DecompositionResult decomposition;
};
SmoothedSeries smooth_with_components(std::span<const double> counts, const SmoothingOptions& options = {});

// Multiplicative weekday effects with geometric mean 1. Entry i belongs to the
// days t with (first_weekday + t - 1) mod 7 == i.
std::array<double, 7> weekday_effect_estimates(std::span<const double> counts, int first_weekday,
                                               const SmoothingOptions& options = {});

// Single loess fit (tricube weights, degree 0 or 1) at x0 from points (x_i, y_i)
// with extra weights rho_i, using the `span` nearest points.
double loess_at(std::span<const double> x, std::span<const double> y, std::span<const double> rho, double x0,
                int span, int degree);

} // namespace renewal
