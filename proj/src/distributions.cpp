#include "renewal/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "renewal/errors.hpp"
#include "renewal/special_functions.hpp"

namespace renewal {
namespace {

constexpr double kSumTol = 1e-12;

void require_gamma_params(double mean, double sd, const char* what) {
    if (!std::isfinite(mean) || !std::isfinite(sd) || mean <= 0.0 || sd <= 0.0) {
        std::ostringstream os;
        os << what << ": mean and sd must be positive and finite (got mean=" << mean << ", sd=" << sd << ")";
        throw ParameterError(os.str());
    }
}

std::vector<double> discretize_cdf(const std::function<double(double)>& cdf, int k_max) {
    std::vector<double> p(static_cast<std::size_t>(k_max));
    double prev = cdf(1.5);
    p[0] = prev;
    for (int k = 2; k <= k_max; ++k) {
        const double cur = cdf(k + 0.5);
        p[static_cast<std::size_t>(k - 1)] = cur - prev;
        prev = cur;
    }
    if (!(prev > 0.0))
        throw NumericalError("discretization: no probability mass below k_max + 0.5");
    for (double& x : p)
        x = std::max(0.0, x / prev);
    // Renormalize once more so the sum is 1 to rounding.
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    for (double& x : p)
        x /= total;
    return p;
}

} // namespace

InfectivityProfile::InfectivityProfile(std::vector<double> weights) : weights_(std::move(weights)) {
    if (weights_.empty())
        throw ParameterError("infectivity profile: at least one lag required");
    double total = 0.0;
    for (double w : weights_) {
        if (!std::isfinite(w) || w < 0.0)
            throw ParameterError("infectivity profile: weights must be finite and non-negative");
        total += w;
    }
    if (std::fabs(total - 1.0) > kSumTol) {
        std::ostringstream os;
        os.precision(17);
        os << "infectivity profile: weights sum to " << total << ", expected 1";
        throw ParameterError(os.str());
    }
}

InfectivityProfile InfectivityProfile::standard() { return InfectivityProfile(discretize_gamma(4.8, 2.3, 12)); }

DelayKernel::DelayKernel(std::vector<double> probs, double nondetect)
    : probs_(std::move(probs)), nondetect_(nondetect) {
    if (probs_.empty())
        throw ParameterError("delay kernel: at least one lag required");
    if (!std::isfinite(nondetect_) || nondetect_ < 0.0)
        throw ParameterError("delay kernel: non-detection mass must be finite and non-negative");
    for (double m : probs_)
        if (!std::isfinite(m) || m < 0.0)
            throw ParameterError("delay kernel: probabilities must be finite and non-negative");
    const double total = detect_mass() + nondetect_;
    if (std::fabs(total - 1.0) > kSumTol) {
        std::ostringstream os;
        os.precision(17);
        os << "delay kernel: probabilities plus non-detection sum to " << total << ", expected 1";
        throw ParameterError(os.str());
    }
}

double DelayKernel::detect_mass() const noexcept { return std::accumulate(probs_.begin(), probs_.end(), 0.0); }

DelayKernel DelayKernel::standard() { return convolve_gamma_delay(5.3, 3.2, 5.5, 3.8, 28); }

WeekdayShift WeekdayShift::identity() {
    WeekdayShift v;
    for (auto& row : v.shift)
        row[0] = 1.0;
    return v;
}

TimeVaryingDelay::TimeVaryingDelay(const DelayKernel& base)
    : max_lag_(base.max_lag()),
      rows_{std::vector<double>(base.probs().begin(), base.probs().end())},
      nondetect_{base.nondetect()} {}

TimeVaryingDelay::TimeVaryingDelay(std::vector<std::vector<double>> rows, std::vector<double> nondetect)
    : max_lag_(static_cast<int>(rows.front().size())), rows_(std::move(rows)), nondetect_(std::move(nondetect)) {}

TimeVaryingDelay TimeVaryingDelay::shifted(Day offset) const {
    std::vector<std::vector<double>> rows(rows_.size());
    std::vector<double> nd(rows_.size());
    for (std::size_t r = 0; r < rows_.size(); ++r) {
        rows[r] = rows_[residue(static_cast<Day>(r) + offset)];
        nd[r] = nondetect_[residue(static_cast<Day>(r) + offset)];
    }
    return TimeVaryingDelay(std::move(rows), std::move(nd));
}

double TimeVaryingDelay::observed_mass(Day s, Day T) const noexcept {
    double b = 0.0;
    const Day lo = std::max<Day>(1, s + 1);
    const Day hi = std::min<Day>(T, s + max_lag_);
    for (Day t = lo; t <= hi; ++t)
        b += at(s, t);
    return b;
}

double TimeVaryingDelay::remaining_mass(Day s, Day t) const noexcept {
    double r = nondetect(s);
    for (int lag = static_cast<int>(t - s); lag <= max_lag_; ++lag)
        r += prob(s, lag);
    return r;
}

TimeVaryingDelay TimeVaryingDelay::weekday_shift(const DelayKernel& base, const WeekdayShift& v) {
    for (const auto& row : v.shift) {
        double total = 0.0;
        for (double x : row) {
            if (!std::isfinite(x) || x < 0.0)
                throw ParameterError("weekday shift: entries must be non-negative");
            total += x;
        }
        if (std::fabs(total - 1.0) > kSumTol)
            throw ParameterError("weekday shift: each row must sum to 1");
    }
    const int k0 = base.max_lag();
    const int k_max = k0 + 6;
    std::vector<std::vector<double>> rows(7, std::vector<double>(static_cast<std::size_t>(k_max), 0.0));
    for (int r = 0; r < 7; ++r) {
        for (int k = 1; k <= k_max; ++k) {
            double m = 0.0;
            for (int j = std::max(1, k - 6); j <= std::min(k, k0); ++j)
                m += base.prob(j) * v.shift[static_cast<std::size_t>((r + j) % 7)][static_cast<std::size_t>(k - j)];
            rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(k - 1)] = m;
        }
    }
    return TimeVaryingDelay(std::move(rows), std::vector<double>(7, base.nondetect()));
}

TimeVaryingDelay TimeVaryingDelay::weekday_multiplicative(const DelayKernel& base, const WeekdayMultiplicative& w) {
    const double target = base.detect_mass();
    double total = 0.0;
    for (double x : w.weights) {
        if (!std::isfinite(x) || x <= 0.0)
            throw ParameterError("weekday weights: must be positive");
        total += x;
    }
    if (std::fabs(total - target) > 1e-10) {
        std::ostringstream os;
        os.precision(17);
        os << "weekday weights: sum " << total << " must equal the kernel's detection mass " << target;
        throw ParameterError(os.str());
    }
    std::array<double, 7> class_sum{};
    for (int k = 1; k <= base.max_lag(); ++k)
        class_sum[static_cast<std::size_t>(k % 7)] += base.prob(k);
    for (double c : class_sum)
        if (!(c > 0.0))
            throw ParameterError("weekday weights: every lag residue class mod 7 needs positive kernel mass");

    const int k_max = base.max_lag();
    std::vector<std::vector<double>> rows(7, std::vector<double>(static_cast<std::size_t>(k_max), 0.0));
    for (int r = 0; r < 7; ++r)
        for (int k = 1; k <= k_max; ++k)
            rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(k - 1)] =
                w.weights[static_cast<std::size_t>((r + k) % 7)] * base.prob(k) /
                class_sum[static_cast<std::size_t>(k % 7)];
    return TimeVaryingDelay(std::move(rows), std::vector<double>(7, base.nondetect()));
}

std::vector<double> discretize_gamma(double mean, double sd, int k_max) {
    require_gamma_params(mean, sd, "discretize_gamma");
    if (k_max < 1)
        throw ParameterError("discretize_gamma: k_max must be at least 1");
    const double shape = (mean / sd) * (mean / sd);
    const double rate = mean / (sd * sd);
    return discretize_cdf([&](double x) { return math::gamma_cdf(x, shape, rate); }, k_max);
}

DelayKernel convolve_gamma_delay(double mean1, double sd1, double mean2, double sd2, int k_max, double tolerance) {
    require_gamma_params(mean1, sd1, "convolve_gamma_delay (first)");
    require_gamma_params(mean2, sd2, "convolve_gamma_delay (second)");
    if (k_max < 1)
        throw ParameterError("convolve_gamma_delay: k_max must be at least 1");
    const double a1 = (mean1 / sd1) * (mean1 / sd1);
    const double r1 = mean1 / (sd1 * sd1);
    const double a2 = (mean2 / sd2) * (mean2 / sd2);
    const double r2 = mean2 / (sd2 * sd2);
    // y = z^p flattens the y^(a1-1) singularity of the first density at 0.
    const double p = std::max(1.0, 2.0 / a1);

    auto G = [&](double x) {
        if (x <= 0.0)
            return 0.0;
        const double zmax = std::pow(x, 1.0 / p);
        auto integrand = [&](double z) {
            if (z <= 0.0)
                return 0.0;
            const double y = std::pow(z, p);
            const double jac = p * std::pow(z, p - 1.0);
            return math::gamma_cdf(x - y, a2, r2) * math::gamma_pdf(y, a1, r1) * jac;
        };
        const auto res = math::adaptive_simpson(integrand, 0.0, zmax, tolerance);
        if (!res.converged) {
            std::ostringstream os;
            os << "convolve_gamma_delay: quadrature did not converge at x=" << x << " after " << res.evaluations
               << " evaluations (tolerance " << tolerance << ")";
            throw NumericalError(os.str());
        }
        return res.value;
    };
    return DelayKernel(discretize_cdf(G, k_max), 0.0);
}

TimeVaryingDelay weekday_shift_delay(const DelayKernel& base, const WeekdayShift& v) {
    return TimeVaryingDelay::weekday_shift(base, v);
}

TimeVaryingDelay weekday_multiplicative_delay(const DelayKernel& base, const WeekdayMultiplicative& w) {
    return TimeVaryingDelay::weekday_multiplicative(base, w);
}

nlohmann::json to_json(const InfectivityProfile& profile) {
    return nlohmann::json(std::vector<double>(profile.weights().begin(), profile.weights().end()));
}

nlohmann::json to_json(const DelayKernel& kernel) {
    std::vector<double> probs(kernel.probs().begin(), kernel.probs().end());
    if (kernel.nondetect() == 0.0)
        return nlohmann::json(probs);
    return nlohmann::json{{"probs", probs}, {"nondetect", kernel.nondetect()}};
}

InfectivityProfile profile_from_json(const nlohmann::json& j) {
    if (!j.is_array())
        throw ParameterError("infectivity profile: expected a JSON array");
    return InfectivityProfile(j.get<std::vector<double>>());
}

DelayKernel kernel_from_json(const nlohmann::json& j) {
    if (j.is_array())
        return DelayKernel(j.get<std::vector<double>>(), 0.0);
    if (j.is_object() && j.contains("probs"))
        return DelayKernel(j.at("probs").get<std::vector<double>>(), j.value("nondetect", 0.0));
    throw ParameterError("delay kernel: expected a JSON array or {\"probs\": [...], \"nondetect\": x}");
}

} // namespace renewal
