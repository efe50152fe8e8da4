#pragma once

#include <array>
#include <span>
#include <vector>

#include <json.hpp>

#include "renewal/offset_vector.hpp"

namespace renewal {

// Infectivity profile w_1..w_{K_w}: non-negative, sums to one.
class InfectivityProfile {
public:
    // Validates the invariants; throws ParameterError otherwise.
    explicit InfectivityProfile(std::vector<double> weights);

    int horizon() const noexcept { return static_cast<int>(weights_.size()); }
    // 1-based lag.
    double weight(int lag) const noexcept { return weights_[static_cast<std::size_t>(lag - 1)]; }
    std::span<const double> weights() const noexcept { return weights_; }

    // Default: Gamma(mean 4.8, sd 2.3) on lags 1..12.
    static InfectivityProfile standard();

private:
    std::vector<double> weights_;
};

// Possibly defective delay distribution m_1..m_{K_m} plus non-detection mass m_+.
class DelayKernel {
public:
    DelayKernel(std::vector<double> probs, double nondetect = 0.0);

    int max_lag() const noexcept { return static_cast<int>(probs_.size()); }
    double prob(int lag) const noexcept { return probs_[static_cast<std::size_t>(lag - 1)]; }
    std::span<const double> probs() const noexcept { return probs_; }
    double nondetect() const noexcept { return nondetect_; }
    double detect_mass() const noexcept;

    // Gamma(5.3, 3.2) + Gamma(5.5, 3.8) discretized on lags 1..28, m_+ = 0.
    static DelayKernel standard();

private:
    std::vector<double> probs_;
    double nondetect_;
};

// Shift form: a detection nominally due on weekday i happens k days later
// (k = 0..6) with probability shift[i][k]. Rows are probability vectors.
struct WeekdayShift {
    std::array<std::array<double, 7>, 7> shift{};
    static WeekdayShift identity();
};

// Multiplicative form: weights w_0..w_6 whose sum equals the base kernel's detection mass.
struct WeekdayMultiplicative {
    std::array<double, 7> weights{};
};

// Delay probabilities m_{s,t} that may depend on the weekday of s. Stored as
// one row per residue of s mod period (period 1 or 7), evaluated from a base
// kernel and a weekday transform at construction.
class TimeVaryingDelay {
public:
    // Time-invariant delay.
    TimeVaryingDelay(const DelayKernel& base); // NOLINT(google-explicit-constructor)

    int max_lag() const noexcept { return max_lag_; }
    int period() const noexcept { return static_cast<int>(rows_.size()); }

    // m_{s,s+lag}; zero outside 1..max_lag.
    double prob(Day s, int lag) const noexcept {
        if (lag < 1 || lag > max_lag_)
            return 0.0;
        return rows_[residue(s)][static_cast<std::size_t>(lag - 1)];
    }
    // m_{s,t}
    double at(Day s, Day t) const noexcept { return prob(s, static_cast<int>(t - s)); }
    double nondetect(Day s) const noexcept { return nondetect_[residue(s)]; }

    // b_s = sum_{t=1..T} m_{s,t}.
    double observed_mass(Day s, Day T) const noexcept;
    // m_{s,t} + ... + m_{s,s+K_m} + m_{s,+}: mass not yet realised before day t.
    double remaining_mass(Day s, Day t) const noexcept;

    // Same delay on a time axis moved by `offset`: result.prob(s, k) == prob(s + offset, k).
    TimeVaryingDelay shifted(Day offset) const;

    static TimeVaryingDelay weekday_shift(const DelayKernel& base, const WeekdayShift& v);
    static TimeVaryingDelay weekday_multiplicative(const DelayKernel& base, const WeekdayMultiplicative& w);

private:
    TimeVaryingDelay(std::vector<std::vector<double>> rows, std::vector<double> nondetect);

    std::size_t residue(Day s) const noexcept {
        const Day p = static_cast<Day>(rows_.size());
        return static_cast<std::size_t>(((s % p) + p) % p);
    }

    int max_lag_ = 0;
    std::vector<std::vector<double>> rows_;
    std::vector<double> nondetect_;
};

// p_1 = F(1.5)/F(K+0.5), p_k = (F(k+0.5) - F(k-0.5))/F(K+0.5) with F the Gamma
// CDF parameterised by mean and standard deviation.
std::vector<double> discretize_gamma(double mean, double sd, int k_max);

// Sum of two independent Gammas, G(x) = int_0^x F2(x-y) f1(y) dy by adaptive
// Simpson, then discretized like discretize_gamma. m_+ = 0.
DelayKernel convolve_gamma_delay(double mean1, double sd1, double mean2, double sd2, int k_max,
                                 double tolerance = 1e-10);

TimeVaryingDelay weekday_shift_delay(const DelayKernel& base, const WeekdayShift& v);
TimeVaryingDelay weekday_multiplicative_delay(const DelayKernel& base, const WeekdayMultiplicative& w);

// JSON arrays: a profile is [w_1, ...]; a kernel is [m_1, ...] or
// {"probs": [...], "nondetect": m_+}.
nlohmann::json to_json(const InfectivityProfile& profile);
nlohmann::json to_json(const DelayKernel& kernel);
InfectivityProfile profile_from_json(const nlohmann::json& j);
DelayKernel kernel_from_json(const nlohmann::json& j);

} // namespace renewal
