#pragma once

#include <span>
#include <vector>

#include "renewal/distributions.hpp"
#include "renewal/offset_vector.hpp"

namespace renewal {

enum class StoppingRule { fixed_iters, chi_squared_below };
enum class StartKind { shifted_constant, shifted_linear, explicit_vector };

struct DeconvolutionConfig {
    int max_iters = 10000;
    StoppingRule stopping = StoppingRule::chi_squared_below;
    int fixed_iters = 10;
    // Non-positive means "use T".
    double chi_squared_threshold = 0.0;
    StartKind start = StartKind::shifted_constant;
    OffsetVector<double> start_values; // used with explicit_vector; must cover 1-K_m..T-1
    int shift = 10;
};

struct DeconvolutionResult {
    OffsetVector<double> infections; // (1-K_m)..(T-1)
    int iterations = 0;
    bool converged = false; // stopping rule met before max_iters
    double chi_squared = 0.0;
    double threshold = 0.0;
    std::vector<double> chi_squared_trace; // after each step, starting with the start value
    std::vector<double> loglik_trace;
};

// E(D_t | I) = sum_s I_s m_{s,t} for t = 1..T. `infections` must cover (1-K_m)..(T-1);
// earlier days are ignored.
std::vector<double> expected_detections(const OffsetVector<double>& infections, const TimeVaryingDelay& delay,
                                        std::size_t T);

// One multiplicative EM update on (1-K_m)..(T-1). Days with b_s = 0 are left unchanged.
OffsetVector<double> em_step(const OffsetVector<double>& infections, std::span<const double> detections,
                             const TimeVaryingDelay& delay);

// sum_t (-E_t + D_t log E_t)
double pseudo_loglik(std::span<const double> expected, std::span<const double> detections);
// sum_t (D_t - E_t)^2 / E_t
double chi_squared(std::span<const double> expected, std::span<const double> detections);

// D shifted back `shift` days onto (1-K_m)..(T-1), extended by constants at both ends.
OffsetVector<double> shifted_constant_start(std::span<const double> detections, int max_lag, int shift = 10);
// As above but the right end is extrapolated with the least-squares line through the last 7 observations.
OffsetVector<double> shifted_linear_start(std::span<const double> detections, int max_lag, int shift = 10);

DeconvolutionResult em_deconvolve(std::span<const double> detections, const TimeVaryingDelay& delay,
                                  const DeconvolutionConfig& config = {});

} // namespace renewal
