#include "renewal/special_functions.hpp"

#include <cmath>
#include <limits>

#include "renewal/errors.hpp"

namespace renewal::math {
namespace {

constexpr double kRelTol = 1e-12;
constexpr int kMaxIter = 10000;

double gamma_p_series(double a, double x) {
    double term = 1.0 / a;
    double sum = term;
    for (int n = 1; n < kMaxIter; ++n) {
        term *= x / (a + n);
        sum += term;
        if (std::fabs(term) < std::fabs(sum) * kRelTol)
            return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
    }
    throw NumericalError("gamma_p: series did not converge");
}

// Upper tail Q(a, x) by modified Lentz.
double gamma_q_fraction(double a, double x) {
    constexpr double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < kMaxIter; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny)
            d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny)
            c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::fabs(delta - 1.0) < kRelTol)
            return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
    }
    throw NumericalError("gamma_p: continued fraction did not converge");
}

struct SimpsonState {
    const std::function<double(double)>& f;
    int evaluations = 0;
    bool converged = true;
    int max_depth;
};

double simpson_step(SimpsonState& st, double a, double fa, double m, double fm, double b, double fb,
                    double whole, double tol, int depth) {
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const double flm = st.f(lm);
    const double frm = st.f(rm);
    st.evaluations += 2;
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double diff = left + right - whole;
    if (std::fabs(diff) <= 15.0 * tol)
        return left + right + diff / 15.0;
    if (depth >= st.max_depth) {
        st.converged = false;
        return left + right + diff / 15.0;
    }
    return simpson_step(st, a, fa, lm, flm, m, fm, left, 0.5 * tol, depth + 1) +
           simpson_step(st, m, fm, rm, frm, b, fb, right, 0.5 * tol, depth + 1);
}

} // namespace

double gamma_p(double a, double x) {
    if (!(a > 0.0) || !std::isfinite(a))
        throw ParameterError("gamma_p: shape must be positive and finite");
    if (std::isnan(x))
        throw ParameterError("gamma_p: x is NaN");
    if (x <= 0.0)
        return 0.0;
    if (std::isinf(x))
        return 1.0;
    if (x < a + 1.0)
        return gamma_p_series(a, x);
    return 1.0 - gamma_q_fraction(a, x);
}

double gamma_pdf(double x, double shape, double rate) {
    if (x < 0.0)
        return 0.0;
    if (x == 0.0)
        return shape < 1.0 ? std::numeric_limits<double>::infinity() : (shape == 1.0 ? rate : 0.0);
    return std::exp(shape * std::log(rate) + (shape - 1.0) * std::log(x) - rate * x - std::lgamma(shape));
}

double gamma_cdf(double x, double shape, double rate) { return gamma_p(shape, rate * x); }

QuadratureResult adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol,
                                  int max_depth) {
    SimpsonState st{f, 0, true, max_depth};
    if (a == b)
        return {0.0, 0, true};
    const double fa = f(a);
    const double fb = f(b);
    const double m = 0.5 * (a + b);
    const double fm = f(m);
    st.evaluations = 3;
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    const double value = simpson_step(st, a, fa, m, fm, b, fb, whole, tol, 0);
    return {value, st.evaluations, st.converged};
}

double poisson_log_pmf(long long x, double mean) {
    if (x < 0)
        return -std::numeric_limits<double>::infinity();
    if (x == 0)
        return -mean;
    if (mean <= 0.0)
        return -std::numeric_limits<double>::infinity();
    const double xd = static_cast<double>(x);
    return xd * std::log(mean) - mean - std::lgamma(xd + 1.0);
}

} // namespace renewal::math
