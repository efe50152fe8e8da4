#pragma once

#include <span>
#include <vector>

#include "renewal/distributions.hpp"
#include "renewal/offset_vector.hpp"
#include "renewal/rng.hpp"

namespace renewal {

struct RenewalIntensity {
    double kappa = 0.0;  // sum_k w_k I_{t-k}
    double lambda = 0.0; // R_e * kappa
};

// `history` is chronological and ends at I_{t-1}; only the last K_w entries are used.
RenewalIntensity renewal_intensity(std::span<const double> history, double r_e, const InfectivityProfile& profile);
RenewalIntensity renewal_intensity(std::span<const long long> history, double r_e, const InfectivityProfile& profile);

// Infections I_s (integer), allocations A_{s,s+k} stored by lag band, the
// undetected remainder A_{s,+}, and the implied detections D_t.
struct EpidemicPath {
    OffsetVector<long long> infections;
    std::vector<OffsetVector<long long>> bands; // bands[k-1][s] = A_{s,s+k}
    OffsetVector<long long> undetected;
    OffsetVector<long long> detections; // D_t for every t reachable from the simulated infections

    long long allocation(Day s, Day t) const;
    // D restricted to days from..to (zero outside the simulated range).
    std::vector<long long> detections_between(Day from, Day to) const;
};

struct SimulationOptions {
    double intensity_cap = 1e9;
};

// I_t ~ Poisson(R_t sum_k w_k I_{t-k}) for every day of `reproduction`, starting
// from `initial` (K_w infections on the days immediately before
// reproduction.first()), then each day's infections are split multinomially
// over detection lags and non-detection.
EpidemicPath simulate_path(const OffsetVector<double>& reproduction, std::span<const long long> initial,
                           const InfectivityProfile& profile, const TimeVaryingDelay& delay, Rng& rng,
                           const SimulationOptions& options = {});

// Infections only; same draws for I as simulate_path.
OffsetVector<long long> simulate_infections(const OffsetVector<double>& reproduction,
                                            std::span<const long long> initial, const InfectivityProfile& profile,
                                            Rng& rng, const SimulationOptions& options = {});

// Unique positive root of 1/R = sum_k w_k rho^{-k}, by bisection on [1e-6, 10].
double growth_rate(double r_e, const InfectivityProfile& profile);

struct VarianceGrowthReport {
    std::vector<double> mean;     // E(I_t), t = 1..horizon
    std::vector<double> variance; // Var(I_t)
    std::vector<double> ratio;    // Var(I_t) / E(I_t)^2
    double tail_cv = 0.0;         // coefficient of variation of `ratio` over the last fifth of the horizon
};

VarianceGrowthReport variance_growth_check(double r_e, const InfectivityProfile& profile, int horizon,
                                           int replicates, std::span<const long long> initial, Rng& rng,
                                           const SimulationOptions& options = {});

// x_t = (L_{t-1}, I_{(t-K_w):(t-1)}, A_{(t-K_m):(t-1),t}, U_{(t+1-K_m):(t-1),t}).
struct EpidemicState {
    Day t = 0;
    double log_r_prev = 0.0;              // L_{t-1}
    std::vector<long long> infections;    // I_{t-K_w} .. I_{t-1}
    std::vector<long long> allocations;   // A_{s,t} for s = t-K_m .. t-1
    std::vector<long long> undetected;    // U_{s,t} for s = t+1-K_m .. t-1

    long long detections() const; // D_t = sum of `allocations`
};

// One draw from p(x_{t+1} | x_t).
EpidemicState predictive_step(const EpidemicState& state, double tau, const InfectivityProfile& profile,
                              const TimeVaryingDelay& delay, Rng& rng);

} // namespace renewal
