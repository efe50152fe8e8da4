#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <numeric>
#include <random>

#include "renewal/deconvolution.hpp"
#include "renewal/errors.hpp"

using namespace renewal;

namespace {

DelayKernel random_kernel(std::mt19937_64& gen, int km) {
    std::uniform_real_distribution<double> u(0.05, 1.0);
    std::vector<double> p(static_cast<std::size_t>(km));
    for (double& x : p)
        x = u(gen);
    const double s = std::accumulate(p.begin(), p.end(), 0.0);
    for (double& x : p)
        x /= s;
    p.back() = 1.0 - std::accumulate(p.begin(), p.end() - 1, 0.0);
    return DelayKernel(p);
}

OffsetVector<double> random_infections(std::mt19937_64& gen, int km, int T, double lo = 1.0, double hi = 100.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    OffsetVector<double> inf(1 - km, static_cast<std::size_t>(T + km - 1));
    for (double& x : inf)
        x = u(gen);
    return inf;
}

// Oracle: for each t, sum over every s in the window, relying on at() being zero off the band.
std::vector<double> naive_convolution(const OffsetVector<double>& inf, const TimeVaryingDelay& d, int T) {
    std::vector<double> e(static_cast<std::size_t>(T), 0.0);
    for (int t = 1; t <= T; ++t)
        for (Day s = inf.first(); s <= inf.last(); ++s)
            e[static_cast<std::size_t>(t - 1)] += inf[s] * d.at(s, t);
    return e;
}

} // namespace

TEST_CASE("expected detections") {
    const auto kernel = DelayKernel::standard();
    const TimeVaryingDelay delay(kernel);
    const OffsetVector<double> zero(-27, 47, 0.0);
    for (double e : expected_detections(zero, delay, 20))
        CHECK(e == 0.0);

    const TimeVaryingDelay unit(DelayKernel({1.0}));
    OffsetVector<double> inf(0, 10);
    std::iota(inf.begin(), inf.end(), 3.0);
    const auto e = expected_detections(inf, unit, 10);
    for (int t = 1; t <= 10; ++t)
        CHECK(e[static_cast<std::size_t>(t - 1)] == inf[t - 1]);

    std::mt19937_64 gen(5);
    for (int rep = 0; rep < 20; ++rep) {
        const int km = 2 + rep % 6;
        WeekdayShift v = WeekdayShift::identity();
        v.shift[static_cast<std::size_t>(rep % 7)] = {0.6, 0.4, 0, 0, 0, 0, 0};
        const auto d = weekday_shift_delay(random_kernel(gen, km), v);
        const auto x = random_infections(gen, d.max_lag(), 20);
        const auto got = expected_detections(x, d, 20);
        const auto want = naive_convolution(x, d, 20);
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(std::fabs(got[i] - want[i]) <= 1e-12 * std::max(1.0, want[i]));
    }

    const OffsetVector<double> too_short(0, 5, 1.0);
    CHECK_THROWS_AS(expected_detections(too_short, delay, 20), DimensionError);
}

TEST_CASE("em_step basics") {
    std::mt19937_64 gen(9);
    const TimeVaryingDelay d(random_kernel(gen, 4));
    const auto inf = random_infections(gen, 4, 15);
    const auto e = expected_detections(inf, d, 15);
    const auto same = em_step(inf, e, d);
    for (Day s = same.first(); s <= same.last(); ++s)
        CHECK(same[s] == doctest::Approx(inf[s]).epsilon(1e-12));

    const TimeVaryingDelay unit(DelayKernel({1.0}));
    const std::vector<double> dets{3, 0, 7, 12, 5};
    const OffsetVector<double> start(0, 5, 2.5);
    const auto one = em_step(start, dets, unit);
    for (Day s = 0; s <= 4; ++s)
        CHECK(one[s] == doctest::Approx(dets[static_cast<std::size_t>(s)]));

    const OffsetVector<double> zero(0, 5, 0.0);
    CHECK_THROWS_AS(em_step(zero, dets, unit), DataError);
}

TEST_CASE("pseudo-likelihood never decreases") {
    std::mt19937_64 gen(13);
    std::uniform_real_distribution<double> u(1.0, 200.0);
    for (int rep = 0; rep < 100; ++rep) {
        const int km = 2 + rep % 8;
        const TimeVaryingDelay d(random_kernel(gen, km));
        std::vector<double> dets(30);
        for (double& x : dets)
            x = std::round(u(gen));
        auto inf = random_infections(gen, km, 30);
        auto loglik = [&](const OffsetVector<double>& x) {
            // independent recomputation of sum_t (-E_t + D_t log E_t)
            const auto e = naive_convolution(x, d, 30);
            double l = 0.0;
            for (int t = 0; t < 30; ++t)
                l += -e[static_cast<std::size_t>(t)] + dets[static_cast<std::size_t>(t)] * std::log(e[static_cast<std::size_t>(t)]);
            return l;
        };
        double prev = loglik(inf);
        for (int step = 0; step < 50; ++step) {
            inf = em_step(inf, dets, d);
            for (double x : inf)
                REQUIRE(x > 0.0);
            const double cur = loglik(inf);
            CHECK(cur >= prev - 1e-10 * std::max(1.0, std::fabs(prev)));
            prev = cur;
        }
    }
}

TEST_CASE("em_deconvolve recovers a solution of the convolution equation") {
    std::mt19937_64 gen(21);
    const TimeVaryingDelay d(DelayKernel({0.3, 0.4, 0.3}));
    const auto truth = random_infections(gen, 3, 20, 20.0, 60.0);
    const auto dets = expected_detections(truth, d, 20);
    DeconvolutionConfig cfg;
    cfg.chi_squared_threshold = 1e-6;
    cfg.max_iters = 1000000;
    const auto res = em_deconvolve(dets, d, cfg);
    CHECK(res.converged);
    CHECK(res.chi_squared < 1e-6);
    CHECK(res.chi_squared_trace.size() == static_cast<std::size_t>(res.iterations) + 1);

    // a chi-squared of 1e-6 still allows residuals near 1e-3 per day; go further for 1e-6 residuals
    cfg.chi_squared_threshold = 1e-14;
    const auto tight = em_deconvolve(dets, d, cfg);
    CHECK(tight.converged);
    const auto fit = expected_detections(tight.infections, d, 20);
    for (std::size_t t = 0; t < fit.size(); ++t)
        CHECK(std::fabs(fit[t] - dets[t]) < 1e-6);
}

TEST_CASE("em_deconvolve on all-zero detections") {
    const TimeVaryingDelay d(DelayKernel::standard());
    const std::vector<double> dets(30, 0.0);
    DeconvolutionConfig cfg;
    cfg.stopping = StoppingRule::fixed_iters;
    cfg.fixed_iters = 3;
    cfg.start = StartKind::explicit_vector;
    cfg.start_values = OffsetVector<double>(-27, 57, 5.0);
    const auto res = em_deconvolve(dets, d, cfg);
    for (double x : res.infections)
        CHECK(x == 0.0);
    CHECK(res.iterations == 3);
}

TEST_CASE("starting values") {
    const std::vector<double> dets{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
    const auto c = shifted_constant_start(dets, 4, 10);
    CHECK(c.first() == -3);
    CHECK(c.last() == 11);
    CHECK(c[-3] == 7.0); // D_7
    CHECK(c[0] == 10.0);
    CHECK(c[2] == 12.0);
    CHECK(c[11] == 12.0);
    const auto l = shifted_linear_start(dets, 4, 10);
    CHECK(l[2] == doctest::Approx(12.0));
    CHECK(l[5] == doctest::Approx(15.0));
    CHECK(l[11] == doctest::Approx(21.0));
}

TEST_CASE("two starts: both below threshold, differences concentrated at the edges") {
    const auto kernel = DelayKernel::standard();
    const TimeVaryingDelay d(kernel);
    const int T = 42, km = kernel.max_lag();
    OffsetVector<double> truth(1 - km, static_cast<std::size_t>(T + km - 1));
    for (Day s = truth.first(); s <= truth.last(); ++s)
        truth[s] = 1000.0 * std::exp(0.03 * static_cast<double>(s)) * (1.0 + 0.2 * std::sin(0.15 * static_cast<double>(s)));
    const auto dets = expected_detections(truth, d, T);

    DeconvolutionConfig a;
    a.start = StartKind::shifted_constant;
    DeconvolutionConfig b = a;
    b.start = StartKind::shifted_linear;
    const auto ra = em_deconvolve(dets, d, a);
    const auto rb = em_deconvolve(dets, d, b);
    CHECK(ra.converged);
    CHECK(rb.converged);
    CHECK(ra.chi_squared < T);
    CHECK(rb.chi_squared < T);

    double edge = 0.0, interior = 0.0;
    for (Day s = 1 - km; s <= T - 1; ++s) {
        const double rel = std::fabs(ra.infections[s] - rb.infections[s]) / truth[s];
        if (s < 1 || s > T - 1 - km)
            edge = std::max(edge, rel);
        else
            interior = std::max(interior, rel);
    }
    CHECK(edge > 0.0);
    CHECK(interior < edge);
}

TEST_CASE("solution space of the moment equations has dimension K_m - 1") {
    const int T = 10, km = 4;
    const TimeVaryingDelay d(DelayKernel({0.1, 0.4, 0.3, 0.2}));
    Eigen::MatrixXd m(T, T + km - 1);
    for (int t = 1; t <= T; ++t)
        for (Day s = 1 - km; s <= T - 1; ++s)
            m(t - 1, s - (1 - km)) = d.at(s, t);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
    CHECK(lu.rank() == T);
    CHECK(lu.dimensionOfKernel() == km - 1);
}

TEST_CASE("moment residual is small on interior days at a tight threshold") {
    const TimeVaryingDelay d(DelayKernel({0.2, 0.5, 0.3}));
    std::vector<double> dets;
    for (int t = 1; t <= 40; ++t)
        dets.push_back(100.0 + 30.0 * std::sin(0.2 * t));
    DeconvolutionConfig cfg;
    cfg.chi_squared_threshold = 1e-4;
    cfg.max_iters = 200000;
    const auto res = em_deconvolve(dets, d, cfg);
    const auto fit = expected_detections(res.infections, d, 40);
    for (std::size_t t = 3; t + 3 < fit.size(); ++t)
        CHECK(std::fabs(fit[t] - dets[t]) < 0.05);
}

TEST_CASE("invalid configuration") {
    const TimeVaryingDelay d(DelayKernel({1.0}));
    const std::vector<double> dets{1, 2, 3};
    DeconvolutionConfig cfg;
    cfg.max_iters = 0;
    CHECK_THROWS_AS(em_deconvolve(dets, d, cfg), ParameterError);
    const std::vector<double> negative{1, -2, 3};
    CHECK_THROWS_AS(em_deconvolve(negative, d), DataError);
}
