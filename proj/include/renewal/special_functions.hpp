#pragma once

#include <functional>

namespace renewal::math {

// Regularized lower incomplete gamma P(a, x): series for x < a + 1, Lentz
// continued fraction otherwise. Relative tolerance 1e-12.
double gamma_p(double a, double x);

double gamma_pdf(double x, double shape, double rate);
double gamma_cdf(double x, double shape, double rate);

struct QuadratureResult {
    double value = 0.0;
    int evaluations = 0;
    bool converged = true;
};

// Adaptive Simpson on [a, b] to absolute tolerance `tol`.
QuadratureResult adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol,
                                  int max_depth = 50);

// Poisson log-probability; x * log(mean) is taken as 0 when x == 0.
double poisson_log_pmf(long long x, double mean);

} // namespace renewal::math
