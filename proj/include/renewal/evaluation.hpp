#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "renewal/deconvolution.hpp"
#include "renewal/distributions.hpp"
#include "renewal/mcmc.hpp"
#include "renewal/preprocess.hpp"

namespace renewal {

// half_level: penalty weight alpha/2 with alpha the coverage level (0.95).
// standard: penalty weight 2/(1 - alpha).
enum class ScoreConvention { half_level, standard };

double interval_score(double lower, double upper, double x, double alpha = 0.95,
                      ScoreConvention convention = ScoreConvention::half_level);

// Root mean squared error over the entries where both vectors are finite (NaN = missing).
double rmse(std::span<const double> estimates, std::span<const double> truth);
double rmse(const OffsetVector<double>& estimates, const OffsetVector<double>& truth);

// R_t = sum_{s in (t-r+1)..t} I_s / sum kappa_s, kappa from the same infections.
// Days whose window is not fully covered, or has kappa = 0, are NaN.
OffsetVector<double> sliding_window_R(const OffsetVector<double>& infections, const InfectivityProfile& profile,
                                      int window_r);

struct BaselineConfig {
    int window_r = 4;
    int n_boot = 100;
    int block = 7;
    std::uint64_t seed = 1;
    std::vector<double> probs{0.025, 0.5, 0.975};
    DeconvolutionConfig em; // shifted-constant start, chi-squared stopping
};

// Simplified two-step estimator: EM deconvolution, then sliding-window ratio
// estimates of R, with block-bootstrap intervals. Not the reference pipeline.
struct BaselineResult {
    std::vector<double> probs;
    OffsetVector<double> R_point; // fit on the original data; NaN where undefined
    OffsetVector<double> I_point;
    OffsetVector<std::vector<double>> R; // bootstrap quantiles; NaN where undefined
    OffsetVector<std::vector<double>> I;
    int failed_refits = 0;
};

BaselineResult baseline_two_step(std::span<const double> smoothed, const TimeVaryingDelay& delay,
                                 const InfectivityProfile& profile, const BaselineConfig& config = {});

// Smooth default ground truth on (1-K_m)..(T-1): cosine interpolation through
// (0, 1.2), (0.2, 1.05), (0.5, 1.35), (0.75, 1.1), (1, 0.85) on the unit interval.
OffsetVector<double> default_truth_R(int T, int max_lag);

struct MethodSpec {
    enum class Kind { mcmc, baseline, sequential };
    Kind kind = Kind::mcmc;
    std::vector<int> offsets; // sequential: estimate day s from the window ending at s + offset

    std::vector<std::string> names() const;
};

struct ExperimentConfig {
    OffsetVector<double> truth_R; // (1-K_m)..(T-1); empty = default_truth_R
    int n_replicates = 20;
    int T = 63;
    double lambda0 = 100.0;
    std::vector<MethodSpec> methods{{MethodSpec::Kind::mcmc, {}}, {MethodSpec::Kind::baseline, {}}};
    std::uint64_t seed = 1;
    InfectivityProfile profile = InfectivityProfile::standard();
    DelayKernel kernel = DelayKernel::standard();
    SmoothingOptions smoothing;        // full series (mcmc, baseline)
    SmoothingOptions window_smoothing; // each rolling window (sequential)
    double sigma = 1.5;
    double tau = 0.025;
    McmcConfig mcmc;
    BaselineConfig baseline;
    int window_len = 42;
    double alpha = 0.95;
    ScoreConvention convention = ScoreConvention::half_level;
    int threads = 1;

    void validate() const;
};

// Point estimate and 95% interval per day on (1-K_m)..(T-1); NaN = not reported.
struct MethodEstimate {
    std::string method;
    OffsetVector<double> R_point, R_lower, R_upper;
    OffsetVector<double> I_point, I_lower, I_upper;
};

struct ReplicateResult {
    int replicate = 0;
    bool ok = false;
    std::string error;
    OffsetVector<double> truth_I;
    std::vector<double> detections; // smoothed series the methods saw
    std::vector<MethodEstimate> estimates;
};

struct MetricRow {
    std::string method;
    std::string variable; // "R" or "I"
    std::string metric;   // "rmse", "interval_score", "coverage"
    std::optional<Day> day; // empty for the time average
    double value = 0.0;
};

struct MetricTable {
    std::vector<MetricRow> rows;
    Day window_first = 0, window_last = -1; // common evaluation window
    Day interior_first = 0, interior_last = -1;
    int n_effective = 0;

    // Time-averaged value; NaN if absent.
    double summary(const std::string& method, const std::string& variable, const std::string& metric) const;
};

struct ExperimentResult {
    MetricTable metrics;
    std::vector<ReplicateResult> replicates;
    std::vector<std::string> log;
};

ExperimentResult run_experiment(const ExperimentConfig& config);

// Metrics from already computed replicates (exposed for tests).
MetricTable compute_metrics(const std::vector<ReplicateResult>& replicates, const OffsetVector<double>& truth_R,
                            int T, double alpha, ScoreConvention convention);

} // namespace renewal
