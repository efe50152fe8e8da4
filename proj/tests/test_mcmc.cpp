#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "renewal/errors.hpp"
#include "renewal/mcmc.hpp"

using namespace renewal;

namespace {

std::vector<double> random_simplex(std::mt19937_64& gen, int n, double total) {
    std::uniform_real_distribution<double> u(0.05, 1.0);
    std::vector<double> p(static_cast<std::size_t>(n));
    for (double& x : p)
        x = u(gen);
    const double s = std::accumulate(p.begin(), p.end(), 0.0);
    for (double& x : p)
        x *= total / s;
    return p;
}

Hyperparams hyper_const(int km, int kw, double c, double sigma = 1.5, double tau = 0.025) {
    Hyperparams h;
    h.sigma = sigma;
    h.tau = tau;
    h.lambda0 = OffsetVector<double>(1 - km - kw, static_cast<std::size_t>(kw), c);
    return h;
}

struct Tiny {
    Model model;
    OffsetVector<double> L;
};

// Small random instance for the density oracles: T <= 8, K_m <= 3, counts <= 5.
Tiny tiny_instance(std::mt19937_64& gen) {
    std::uniform_int_distribution<int> km_d(1, 3), kw_d(1, 3), d_d(0, 5);
    const int km = km_d(gen), kw = kw_d(gen);
    std::uniform_int_distribution<int> t_d(km, 8);
    const int T = t_d(gen);
    std::uniform_real_distribution<double> nd(0.0, 0.4);
    const double nondetect = nd(gen);
    const DelayKernel kernel(random_simplex(gen, km, 1.0 - nondetect), nondetect);
    const InfectivityProfile profile(random_simplex(gen, kw, 1.0));
    std::vector<double> dets(static_cast<std::size_t>(T));
    for (double& x : dets)
        x = d_d(gen);
    std::uniform_real_distribution<double> lam(0.5, 3.0);
    Hyperparams h = hyper_const(km, kw, 1.0, 1.0, 0.3);
    for (double& x : h.lambda0)
        x = lam(gen);
    Model m(dets, profile, TimeVaryingDelay(kernel), h);
    std::normal_distribution<double> z(0.3, 0.5);
    OffsetVector<double> L(m.first(), m.latent_size());
    for (double& x : L)
        x = z(gen);
    return {std::move(m), std::move(L)};
}

OffsetVector<double> random_psi(std::mt19937_64& gen, const Model& m) {
    std::uniform_real_distribution<double> u(0.2, 4.0);
    OffsetVector<double> psi(m.first_init(), m.latent_size() + static_cast<std::size_t>(m.K_w()));
    for (double& x : psi)
        x = u(gen);
    return psi;
}

double log_pois(long long x, double mean) {
    if (x == 0)
        return -mean;
    if (!(mean > 0.0))
        return -std::numeric_limits<double>::infinity();
    return static_cast<double>(x) * std::log(mean) - mean - std::lgamma(static_cast<double>(x) + 1.0);
}

// log p(I_init) + log p(I | L, I_init) + log p(A | I) - log q(I, A, I_init | L, D, psi),
// evaluated term by term from the factorized densities.
double log_p_over_q(const Model& m, const OffsetVector<double>& L, const IACandidate& x, const OffsetVector<double>& psi) {
    const int km = m.K_m(), kw = m.K_w();
    const auto& delay = m.delay();
    double lp = 0.0, lq = 0.0;
    for (Day s = m.first_init(); s < m.first(); ++s) {
        lp += log_pois(x.I[s], m.hyper().lambda0[s]);
        lq += log_pois(x.I[s], m.hyper().lambda0[s]);
    }
    OffsetVector<long long> B(m.first(), m.latent_size(), 0);
    for (Day t = 1; t <= m.T(); ++t)
        for (int k = 1; k <= km; ++k)
            B[t - k] += x.columns[t][static_cast<std::size_t>(k - 1)];
    for (Day s = m.first(); s <= m.last(); ++s) {
        double kappa = 0.0;
        for (int j = 1; j <= kw; ++j)
            kappa += m.profile().weight(j) * static_cast<double>(x.I[s - j]);
        const double lambda = std::exp(L[s]) * kappa;
        double b = 0.0;
        for (Day t = 1; t <= m.T(); ++t)
            b += delay.at(s, t);
        lp += log_pois(x.I[s], lambda);
        const long long u = x.I[s] - B[s];
        lp += std::lgamma(static_cast<double>(x.I[s]) + 1.0) - std::lgamma(static_cast<double>(u) + 1.0);
        if (u > 0)
            lp += static_cast<double>(u) * std::log(1.0 - b);
        lq += log_pois(u, (1.0 - b) * lambda);
    }
    for (Day t = 1; t <= m.T(); ++t) {
        double pi = 0.0;
        for (int k = 1; k <= km; ++k)
            pi += psi[t - k] * delay.at(t - k, t);
        const long long d = m.detection(t);
        lq += std::lgamma(static_cast<double>(d) + 1.0);
        for (int k = 1; k <= km; ++k) {
            const long long a = x.columns[t][static_cast<std::size_t>(k - 1)];
            const double mst = delay.at(t - k, t);
            if (a == 0)
                continue;
            lp += static_cast<double>(a) * std::log(mst) - std::lgamma(static_cast<double>(a) + 1.0);
            lq += static_cast<double>(a) * std::log(psi[t - k] * mst / pi) - std::lgamma(static_cast<double>(a) + 1.0);
        }
    }
    return lp - lq;
}

// Dense Gaussian log-density with precision Q and mean Q^{-1} b.
double dense_log_density(const TridiagonalSystem& sys, const OffsetVector<double>& x) {
    const auto n = static_cast<Eigen::Index>(sys.diag.size());
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd b(n), v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        Q(i, i) = sys.diag[static_cast<std::size_t>(i)];
        if (i + 1 < n)
            Q(i, i + 1) = Q(i + 1, i) = sys.off;
        b(i) = sys.rhs[static_cast<std::size_t>(i)];
        v(i) = x.values()[static_cast<std::size_t>(i)];
    }
    const Eigen::LLT<Eigen::MatrixXd> llt(Q);
    const Eigen::VectorXd mu = llt.solve(b);
    const Eigen::VectorXd r = v - mu;
    const Eigen::MatrixXd Lc = llt.matrixL();
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        logdet += 2.0 * std::log(Lc(i, i));
    return 0.5 * logdet - 0.5 * r.dot(Q * r) - 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
}

double target_oracle(const OffsetVector<double>& L, const OffsetVector<double>& kappa, const OffsetVector<long long>& I,
                     const Hyperparams& h) {
    double lp = -0.5 * L[L.first()] * L[L.first()] / (h.sigma * h.sigma);
    for (Day s = L.first(); s <= L.last(); ++s) {
        if (s > L.first())
            lp -= 0.5 * std::pow((L[s] - L[s - 1]) / h.tau, 2);
        lp += static_cast<double>(I[s]) * L[s] - std::exp(L[s]) * kappa[s];
    }
    return lp;
}

// Constant incidence c with every infection detected: D_t = c.
Model constant_model(int T, double c, const std::vector<double>& m, const std::vector<double>& w) {
    return Model(std::vector<double>(static_cast<std::size_t>(T), c), InfectivityProfile(w),
                 TimeVaryingDelay(DelayKernel(m)), hyper_const(static_cast<int>(m.size()), static_cast<int>(w.size()), c));
}

} // namespace

TEST_CASE("model setup") {
    const Model m(std::vector<double>{1.5, 2.5, 3.49, 0.0}, InfectivityProfile({0.5, 0.5}),
                  TimeVaryingDelay(DelayKernel({0.6, 0.4})), hyper_const(2, 2, 3.0));
    CHECK(m.detections() == std::vector<long long>{2, 2, 3, 0});
    CHECK(m.first_init() == -3);
    CHECK(m.first() == -1);
    CHECK(m.last() == 3);
    CHECK(m.observed_mass()[-1] == doctest::Approx(0.4));
    CHECK(m.observed_mass()[0] == doctest::Approx(1.0));
    CHECK(m.observed_mass()[3] == doctest::Approx(0.6));
    CHECK_THROWS_AS(Model(std::vector<double>{1.0, -1.0}, InfectivityProfile({1.0}), TimeVaryingDelay(DelayKernel({1.0})),
                          hyper_const(1, 1, 1.0)),
                    DataError);
    CHECK_THROWS_AS(Model(std::vector<double>{1.0}, InfectivityProfile({1.0}), TimeVaryingDelay(DelayKernel({1.0})),
                          hyper_const(2, 1, 1.0)),
                    DimensionError);
    auto bad = hyper_const(1, 1, 1.0);
    bad.tau = 0.0;
    CHECK_THROWS_AS(Model(std::vector<double>{1.0}, InfectivityProfile({1.0}), TimeVaryingDelay(DelayKernel({1.0})), bad),
                    ParameterError);
}

TEST_CASE("make_lambda0") {
    const TimeVaryingDelay delay(DelayKernel({0.5, 0.3, 0.2}));
    const auto a = make_lambda0(std::vector<double>{70, 80, 90, 100, 110, 120, 130}, {}, delay, 4);
    CHECK(a.values.first() == -6);
    CHECK(a.values.size() == 4);
    for (double x : a.values)
        CHECK(x == doctest::Approx(100.0));
    CHECK_FALSE(a.floored);

    const std::vector<double> fallback(20, 50.0);
    const auto b = make_lambda0(std::nullopt, fallback, delay, 4);
    const auto start = em_starting_incidence(fallback, delay);
    const double want = std::accumulate(start.begin(), start.begin() + 7, 0.0) / 7.0;
    for (double x : b.values)
        CHECK(x == doctest::Approx(want).epsilon(1e-12));
    CHECK(b.source == "em-start");

    const auto c = make_lambda0(std::vector<double>(7, 0.0), {}, delay, 2);
    CHECK(c.floored);
    for (double x : c.values)
        CHECK(x == 1e-3);
    CHECK_THROWS_AS(make_lambda0(std::nullopt, {}, delay, 2), DataError);
}

TEST_CASE("init_chain") {
    const double c = 400.0;
    const Model m = constant_model(30, c, {0.2, 0.3, 0.3, 0.2}, {0.3, 0.4, 0.3});
    Rng rng(11);
    const auto st = init_chain(m, rng);
    for (Day s = m.first() + m.K_w() + 2; s <= m.last(); ++s) {
        CHECK(st.I[s] == static_cast<long long>(c));
        CHECK(std::fabs(st.L[s]) < 5e-3);
    }
    // L starts at its conditional mode given the initial I
    const auto newton = GaussianProposal(l_proposal_system(st.L, st.kappa, st.I, m.hyper(), RateLink::exponential())).mean();
    for (std::size_t i = 0; i < newton.size(); ++i)
        CHECK(newton[i] == doctest::Approx(st.L.values()[i]).epsilon(1e-8).scale(1.0));
    for (Day s = m.first(); s <= m.last(); ++s) {
        CHECK(st.B[s] >= 0);
        CHECK(st.B[s] <= st.I[s]);
        CHECK(st.lambda[s] == doctest::Approx(std::exp(st.L[s]) * st.kappa[s]).epsilon(1e-12));
    }
    for (Day t = st.A_tail.first(); t <= m.T(); ++t)
        CHECK(std::accumulate(st.A_tail[t].begin(), st.A_tail[t].end(), 0LL) == m.detection(t));

    Rng again(11);
    const auto st2 = init_chain(m, again);
    CHECK(st2.I == st.I);
    CHECK(st2.L == st.L);
    CHECK(st2.B == st.B);

    // prior draws of zero before a positive count must not leave kappa = 0
    Hyperparams h = hyper_const(2, 2, 1e-3);
    const Model z(std::vector<double>{0, 5, 5, 5, 5, 5}, InfectivityProfile({0.5, 0.5}),
                  TimeVaryingDelay(DelayKernel({0.5, 0.5})), h);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng r(seed);
        const auto s = init_chain(z, r);
        for (Day d = z.first(); d <= z.last(); ++d) {
            if (s.I[d] > 0)
                CHECK(s.kappa[d] > 0.0);
            CHECK(std::isfinite(s.L[d]));
        }
    }
}

TEST_CASE("proposal scaffold") {
    const double c = 100.0;
    const Model m = constant_model(12, c, {0.2, 0.5, 0.3}, {0.25, 0.5, 0.25});
    const OffsetVector<double> zero(m.first(), m.latent_size(), 0.0);
    const auto sc = build_proposal_scaffold(m, zero);
    for (Day s = sc.psi.first(); s <= sc.psi.last(); ++s)
        CHECK(sc.psi[s] == doctest::Approx(c).epsilon(1e-12));
    for (double p : sc.pi)
        CHECK(p == doctest::Approx(c).epsilon(1e-12));
    CHECK(sc.floored == 0);

    std::mt19937_64 gen(4);
    for (int rep = 0; rep < 50; ++rep) {
        const auto inst = tiny_instance(gen);
        const auto s = build_proposal_scaffold(inst.model, inst.L);
        for (Day t = 1; t <= inst.model.T(); ++t) {
            double col = 0.0;
            for (int k = 1; k <= inst.model.K_m(); ++k)
                col += s.nu(inst.model.delay(), t - k, t);
            CHECK(std::fabs(col - 1.0) <= 1e-12);
        }
        for (double x : s.psi)
            CHECK(x >= 1e-12);
    }

    // a very negative L drives psi below the floor
    const OffsetVector<double> low(m.first(), m.latent_size(), -40.0);
    CHECK(build_proposal_scaffold(m, low).floored > 0);
}

TEST_CASE("proposal moments agree with the delay when pi matches the data") {
    // psi = c solves the renewal map at L = 0 and pi = D, so E(A*_{s,t}) = m_{s,t} E(I*_s).
    const double c = 20.0;
    const Model m = constant_model(6, c, {0.5, 0.3, 0.2}, {0.6, 0.4});
    const OffsetVector<double> L(m.first(), m.latent_size(), 0.0);
    const auto sc = build_proposal_scaffold(m, L);
    Rng rng(99);
    const int n = 100000;
    OffsetVector<double> sum_i(m.first(), m.latent_size(), 0.0);
    std::vector<std::vector<double>> sum_a(6, std::vector<double>(3, 0.0)), sq_a = sum_a;
    for (int r = 0; r < n; ++r) {
        const auto x = propose_IA(m, sc, L, rng);
        for (Day s = m.first(); s <= m.last(); ++s)
            sum_i[s] += static_cast<double>(x.I[s]);
        for (Day t = 1; t <= 6; ++t)
            for (int k = 0; k < 3; ++k) {
                const auto a = static_cast<double>(x.columns[t][static_cast<std::size_t>(k)]);
                sum_a[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(k)] += a;
                sq_a[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(k)] += a * a;
            }
    }
    for (Day t = 1; t <= 6; ++t)
        for (int k = 1; k <= 3; ++k) {
            const double mean = sum_a[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(k - 1)] / n;
            const double var = sq_a[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(k - 1)] / n - mean * mean;
            const double want = m.delay().at(t - k, t) * sum_i[t - k] / n;
            CHECK(std::fabs(mean - want) < 4.0 * std::sqrt(var / n) + 0.02);
        }
}

TEST_CASE("propose_IA support") {
    SUBCASE("no detections") {
        const Model m(std::vector<double>(8, 0.0), InfectivityProfile({0.5, 0.5}), TimeVaryingDelay(DelayKernel({0.5, 0.5})),
                      hyper_const(2, 2, 5.0));
        const OffsetVector<double> L(m.first(), m.latent_size(), 0.0);
        Rng rng(1);
        const auto x = propose_IA(m, build_proposal_scaffold(m, L), L, rng);
        for (long long b : x.B)
            CHECK(b == 0);
        long long total = 0;
        for (Day s = m.first(); s <= m.last(); ++s)
            total += x.I[s];
        CHECK(total > 0);
    }
    SUBCASE("unit delay") {
        const std::vector<double> d{4, 9, 0, 13, 2};
        const Model m(d, InfectivityProfile({1.0}), TimeVaryingDelay(DelayKernel({1.0})), hyper_const(1, 1, 5.0));
        const OffsetVector<double> L(m.first(), m.latent_size(), 0.1);
        Rng rng(2);
        const auto x = propose_IA(m, build_proposal_scaffold(m, L), L, rng);
        for (Day t = 1; t <= 5; ++t) {
            CHECK(x.B[t - 1] == static_cast<long long>(d[static_cast<std::size_t>(t - 1)]));
            CHECK(x.I[t - 1] == x.B[t - 1]);
        }
    }
    SUBCASE("column sums equal the data on every draw") {
        std::mt19937_64 gen(17);
        for (int rep = 0; rep < 200; ++rep) {
            const auto inst = tiny_instance(gen);
            Rng rng(static_cast<std::uint64_t>(rep));
            const auto x = propose_IA(inst.model, build_proposal_scaffold(inst.model, inst.L), inst.L, rng);
            for (Day t = 1; t <= inst.model.T(); ++t)
                CHECK(std::accumulate(x.columns[t].begin(), x.columns[t].end(), 0LL) == inst.model.detection(t));
            for (Day s = inst.model.first(); s <= inst.model.last(); ++s)
                CHECK(x.B[s] <= x.I[s]);
        }
    }
}

TEST_CASE("IA acceptance ratio") {
    std::mt19937_64 gen(2024);
    int compared = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        const auto inst = tiny_instance(gen);
        const auto& m = inst.model;
        const auto psi = scaffold_from_psi(m, random_psi(gen, m));
        const auto psi_star = scaffold_from_psi(m, random_psi(gen, m));
        Rng rng(static_cast<std::uint64_t>(rep) + 7);
        const auto cur = propose_IA(m, psi, inst.L, rng);
        const auto cand = propose_IA(m, psi_star, inst.L, rng);
        const IAView vc{cur.B, cur.lambda, psi}, vs{cand.B, cand.lambda, psi_star};
        // a proposal outside the posterior support cannot serve as a current state
        const double cur_weight = log_p_over_q(m, inst.L, cur, psi.psi);
        if (!std::isfinite(cur_weight))
            continue;

        CHECK(log_accept_IA(m, vc, vc) == 0.0);

        const double lr = log_accept_IA(m, vc, vs);
        const double alt = log_accept_IA_alternative(m, vc, vs);
        const double brute = log_p_over_q(m, inst.L, cand, psi_star.psi) - cur_weight;
        if (!std::isfinite(brute)) {
            CHECK(lr == -std::numeric_limits<double>::infinity());
            CHECK(alt == -std::numeric_limits<double>::infinity());
            continue;
        }
        ++compared;
        CHECK(std::fabs(lr - alt) <= 1e-10 * std::max(1.0, std::fabs(lr)));
        CHECK(std::fabs(lr - brute) <= 1e-8 * std::max(1.0, std::fabs(brute)));
    }
    CHECK(compared > 700);
}

TEST_CASE("IA acceptance ratio rejects an impossible current state") {
    const Model m(std::vector<double>{3, 3}, InfectivityProfile({1.0}), TimeVaryingDelay(DelayKernel({1.0})),
                  hyper_const(1, 1, 2.0));
    const OffsetVector<double> L(0, 2, 0.0);
    const auto sc = build_proposal_scaffold(m, L);
    const OffsetVector<long long> B(0, std::vector<long long>{3, 3});
    const OffsetVector<double> lambda(0, std::vector<double>{0.0, 2.0});
    const IAView bad{B, lambda, sc};
    const OffsetVector<double> ok_lambda(0, std::vector<double>{2.0, 2.0});
    const IAView good{B, ok_lambda, sc};
    CHECK_THROWS_AS(log_accept_IA(m, bad, good), NumericalError);
    CHECK(log_accept_IA(m, good, bad) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("L proposal moments") {
    const int n = 9;
    Hyperparams h = hyper_const(1, 1, 1.0, 1.5, 0.2);
    OffsetVector<double> L(0, static_cast<std::size_t>(n)), kappa(0, static_cast<std::size_t>(n));
    OffsetVector<long long> I(0, static_cast<std::size_t>(n));
    std::mt19937_64 gen(8);
    std::uniform_real_distribution<double> u(0.5, 20.0);
    for (Day s = 0; s < n; ++s) {
        L[s] = 0.1 * static_cast<double>(s % 3) - 0.05;
        kappa[s] = u(gen);
        I[s] = static_cast<long long>(std::round(kappa[s] * std::exp(L[s]) * 1.1));
    }
    const auto sys = l_proposal_system(L, kappa, I, h, RateLink::exponential());
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd b(n);
    for (int i = 0; i < n; ++i) {
        Q(i, i) = sys.diag[static_cast<std::size_t>(i)];
        if (i + 1 < n)
            Q(i, i + 1) = Q(i + 1, i) = sys.off;
        b(i) = sys.rhs[static_cast<std::size_t>(i)];
    }
    // direct checks of the matrix entries
    const double s2 = 1.0 / (h.sigma * h.sigma), t2 = 1.0 / (h.tau * h.tau);
    CHECK(Q(0, 0) == doctest::Approx(s2 + t2 + std::exp(L[0]) * kappa[0]));
    CHECK(Q(4, 4) == doctest::Approx(2.0 * t2 + std::exp(L[4]) * kappa[4]));
    CHECK(Q(n - 1, n - 1) == doctest::Approx(t2 + std::exp(L[n - 1]) * kappa[n - 1]));
    CHECK(b(3) == doctest::Approx(static_cast<double>(I[3]) - (1.0 - L[3]) * std::exp(L[3]) * kappa[3]));

    const Eigen::VectorXd mu = Q.ldlt().solve(b);
    const Eigen::MatrixXd cov = Q.inverse();
    const GaussianProposal g(sys);
    const auto gm = g.mean();
    for (int i = 0; i < n; ++i)
        CHECK(gm[static_cast<std::size_t>(i)] == doctest::Approx(mu(i)).epsilon(1e-10));

    Rng rng(5);
    const int draws = 100000;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(n);
    Eigen::MatrixXd outer = Eigen::MatrixXd::Zero(n, n);
    for (int r = 0; r < draws; ++r) {
        double lq = 0.0;
        const auto x = g.sample(rng, lq);
        const Eigen::Map<const Eigen::VectorXd> v(x.data(), n);
        sum += v;
        outer += (v - mu) * (v - mu).transpose();
        if (r < 100)
            CHECK(lq == doctest::Approx(g.log_density(x)).epsilon(1e-12));
    }
    const Eigen::VectorXd mean = sum / draws;
    const Eigen::MatrixXd ecov = outer / draws;
    for (int i = 0; i < n; ++i) {
        CHECK(std::fabs(mean(i) - mu(i)) < 4.0 * std::sqrt(cov(i, i) / draws));
        CHECK(std::fabs(ecov(i, i) / cov(i, i) - 1.0) < 0.05);
    }
}

TEST_CASE("L proposal without likelihood information is the prior smoother") {
    Hyperparams h = hyper_const(1, 1, 1.0, 1.5, 0.1);
    const OffsetVector<double> L(0, 6, 0.7), kappa(0, 6, 0.0);
    const OffsetVector<long long> I(0, 6, 0);
    const auto sys = l_proposal_system(L, kappa, I, h, RateLink::exponential());
    for (double r : sys.rhs)
        CHECK(r == 0.0);
    CHECK(sys.diag[0] == doctest::Approx(1.0 / (1.5 * 1.5) + 100.0));
    CHECK(sys.diag[3] == doctest::Approx(200.0));
    for (double x : GaussianProposal(sys).mean())
        CHECK(x == 0.0);
    const OffsetVector<double> one(0, 1, 0.0), k1(0, 1, 0.0);
    const OffsetVector<long long> i1(0, 1, 0);
    CHECK(l_proposal_system(one, k1, i1, h, RateLink::exponential()).diag[0] == doctest::Approx(1.0 / (1.5 * 1.5)));
}

TEST_CASE("L acceptance ratio") {
    std::mt19937_64 gen(31);
    std::uniform_real_distribution<double> u(0.5, 50.0);
    std::normal_distribution<double> z(0.0, 0.3);
    for (int rep = 0; rep < 200; ++rep) {
        const int n = 3 + rep % 10;
        Hyperparams h = hyper_const(1, 1, 1.0, 1.5, 0.05 + 0.01 * (rep % 5));
        OffsetVector<double> L(-2, static_cast<std::size_t>(n)), kappa(-2, static_cast<std::size_t>(n));
        OffsetVector<long long> I(-2, static_cast<std::size_t>(n));
        for (Day s = L.first(); s <= L.last(); ++s) {
            L[s] = z(gen);
            kappa[s] = u(gen);
            I[s] = static_cast<long long>(std::round(u(gen)));
        }
        Rng rng(static_cast<std::uint64_t>(rep));
        const auto p = propose_L(L, kappa, I, h, rng);
        const double fwd = dense_log_density(l_proposal_system(L, kappa, I, h, RateLink::exponential()), p.L_star);
        const double rev = dense_log_density(l_proposal_system(p.L_star, kappa, I, h, RateLink::exponential()), L);
        CHECK(p.log_q_forward == doctest::Approx(fwd).epsilon(1e-9));
        CHECK(p.log_q_reverse == doctest::Approx(rev).epsilon(1e-9));
        const double want = target_oracle(p.L_star, kappa, I, h) - target_oracle(L, kappa, I, h) + rev - fwd;
        CHECK(std::fabs(log_accept_L(L, p, kappa, I, h) - want) <= 1e-9 * std::max(1.0, std::fabs(want)));

        LProposal same;
        same.L_star = L;
        same.log_q_forward = same.log_q_reverse =
            GaussianProposal(l_proposal_system(L, kappa, I, h, RateLink::exponential())).log_density(L.view());
        CHECK(log_accept_L(L, same, kappa, I, h) == 0.0);

        // exactly Gaussian target: the proposal is the conditional itself
        const auto link = RateLink::quadratic_about(z(gen));
        const auto g = propose_L(L, kappa, I, h, rng, link);
        CHECK(std::fabs(log_accept_L(L, g, kappa, I, h, link)) < 1e-8 * std::max(1.0, std::fabs(g.log_q_forward)));
    }
}

TEST_CASE("conditional mode of L") {
    std::mt19937_64 gen(37);
    std::uniform_real_distribution<double> u(0.5, 50.0);
    std::normal_distribution<double> z(0.0, 2.0);
    for (int rep = 0; rep < 50; ++rep) {
        const int n = 3 + rep % 20;
        Hyperparams h = hyper_const(1, 1, 1.0, 1.5, 0.025 + 0.02 * (rep % 5));
        OffsetVector<double> L(-2, static_cast<std::size_t>(n)), kappa(-2, static_cast<std::size_t>(n));
        OffsetVector<long long> I(-2, static_cast<std::size_t>(n));
        for (Day s = L.first(); s <= L.last(); ++s) {
            L[s] = z(gen); // far from the mode
            kappa[s] = rep % 3 == 0 && s == L.last() ? 0.0 : u(gen);
            I[s] = kappa[s] > 0.0 ? static_cast<long long>(std::round(u(gen))) : 0;
        }
        const auto mode = conditional_mode_L(L, kappa, I, h);
        CHECK(target_oracle(mode, kappa, I, h) >= target_oracle(L, kappa, I, h));
        // central-difference gradient of the target vanishes at the mode
        for (Day s = mode.first(); s <= mode.last(); ++s) {
            auto up = mode, down = mode;
            up[s] += 1e-5;
            down[s] -= 1e-5;
            const double grad = (target_oracle(up, kappa, I, h) - target_oracle(down, kappa, I, h)) / 2e-5;
            CHECK(std::fabs(grad) < 1e-3);
        }

        // Gaussian target: one full Newton step lands on Q^{-1} b
        const auto link = RateLink::quadratic_about(0.3);
        const auto exact = GaussianProposal(l_proposal_system(L, kappa, I, h, link)).mean();
        const auto g = conditional_mode_L(L, kappa, I, h, link);
        for (std::size_t i = 0; i < exact.size(); ++i)
            CHECK(g.values()[i] == doctest::Approx(exact[i]).epsilon(1e-9).scale(1.0));
    }
}

TEST_CASE("non-positive-definite precision is reported") {
    TridiagonalSystem sys;
    sys.diag = {1.0, 0.5};
    sys.off = -2.0;
    sys.rhs = {0.0, 0.0};
    CHECK_THROWS_AS(GaussianProposal{sys}, NumericalError);
}

TEST_CASE("sample quantiles") {
    CHECK(sample_quantile({3.5}, 0.025) == 3.5);
    CHECK(sample_quantile({3.5}, 0.975) == 3.5);
    CHECK(sample_quantile({1, 2, 3, 4}, 0.5) == 2.5);
    CHECK(sample_quantile({-1, 1}, 0.5) == 0.0);
    CHECK_THROWS_AS(sample_quantile({1, 2}, 1.0), ParameterError);
    CHECK_THROWS_AS(sample_quantile({1, 2}, 0.0), ParameterError);

    std::mt19937_64 gen(3);
    std::uniform_int_distribution<int> len(1, 60);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> pu(0.001, 0.999);
    for (int rep = 0; rep < 500; ++rep) {
        std::vector<double> v(static_cast<std::size_t>(len(gen)));
        for (double& x : v)
            x = z(gen);
        const double p = pu(gen);
        auto s = v;
        std::sort(s.begin(), s.end());
        // oracle: the value at position 1 + (n-1)p of the sorted sample, interpolated
        const double pos = 1.0 + (static_cast<double>(s.size()) - 1.0) * p;
        const auto j = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(j);
        const double want = j >= s.size() ? s.back() : s[j - 1] + frac * (s[j] - s[j - 1]);
        CHECK(sample_quantile(v, p) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("run_mcmc") {
    std::mt19937_64 gen(5);
    const InfectivityProfile w({0.2, 0.5, 0.3});
    const DelayKernel kernel({0.1, 0.3, 0.3, 0.2, 0.1});
    const OffsetVector<double> R(-4, 30, 1.1);
    Rng sim(12);
    const std::vector<long long> init{80, 90, 100};
    const auto path = simulate_path(R, init, w, TimeVaryingDelay(kernel), sim);
    std::vector<double> dets;
    for (long long d : path.detections_between(1, 20))
        dets.push_back(static_cast<double>(d));
    const Model m(dets, w, TimeVaryingDelay(kernel), hyper_const(5, 3, 90.0, 1.5, 0.05));

    McmcConfig cfg;
    cfg.iters = 600;
    cfg.burn_in = 200;
    cfg.thin = 4;
    cfg.seed = 3;
    const auto a = run_mcmc(m, cfg);
    CHECK(a.size() == 2u * 100u);
    CHECK(a.final_states.size() == a.size());
    CHECK(a.telemetry.size() == 2);
    for (const auto& t : a.telemetry) {
        CHECK(t.ia_acceptance > 0.0);
        CHECK(t.l_acceptance > 0.5);
    }
    const auto b = run_mcmc(m, cfg);
    CHECK(a.L == b.L);
    CHECK(a.I == b.I);
    cfg.threads = 1;
    const auto serial = run_mcmc(m, cfg);
    CHECK(serial.L == a.L);

    for (const auto& x : a.final_states) {
        CHECK(x.t == 20);
        CHECK(x.allocations.size() == 5);
        CHECK(x.undetected.size() == 4);
        CHECK(x.detections() == m.detection(20));
        for (long long u : x.undetected)
            CHECK(u >= 0);
    }

    const auto q = posterior_quantiles(a, std::vector<double>{0.025, 0.5, 0.975});
    for (Day s = q.R.first(); s <= q.R.last(); ++s) {
        CHECK(q.R[s][0] <= q.R[s][1]);
        CHECK(q.R[s][1] <= q.R[s][2]);
        CHECK(q.I[s][0] <= q.I[s][2]);
    }
    CHECK_THROWS_AS(posterior_quantiles(a, std::vector<double>{1.5}), ParameterError);

    McmcConfig none = cfg;
    none.iters = 200;
    none.burn_in = 199;
    none.thin = 5;
    CHECK_THROWS_AS(run_mcmc(m, none), ParameterError);
    none.iters = 100;
    none.burn_in = 100;
    CHECK_THROWS_AS(run_mcmc(m, none), ParameterError);

    // chains from different seeds agree
    McmcConfig longer;
    longer.iters = 6000;
    longer.burn_in = 1000;
    longer.thin = 5;
    longer.n_chains = 3;
    longer.seed = 77;
    const auto rhat = gelman_rubin(run_mcmc(m, longer));
    for (double r : rhat)
        CHECK(r < 1.05);
}

TEST_CASE("state invariants hold along a chain") {
    const InfectivityProfile w({0.4, 0.6});
    const TimeVaryingDelay delay(DelayKernel({0.2, 0.5, 0.2}, 0.1));
    const std::vector<double> dets{12, 15, 11, 18, 20, 17, 25, 22, 30, 28};
    const Model m(dets, w, delay, hyper_const(3, 2, 15.0, 1.5, 0.1));
    Rng rng(4);
    auto st = init_chain(m, rng);
    int accepted = 0;
    for (int it = 0; it < 300; ++it) {
        const auto sc = build_proposal_scaffold(m, st.L);
        const auto cand = propose_IA(m, sc, st.L, rng);
        if (std::log(rng.uniform()) < log_accept_IA(m, {st.B, st.lambda, sc}, {cand.B, cand.lambda, sc})) {
            ++accepted;
            st.I = cand.I;
            st.B = cand.B;
            st.kappa = cand.kappa;
            st.lambda = cand.lambda;
            OffsetVector<long long> B(m.first(), m.latent_size(), 0);
            for (Day t = 1; t <= m.T(); ++t) {
                CHECK(std::accumulate(cand.columns[t].begin(), cand.columns[t].end(), 0LL) == m.detection(t));
                for (int k = 1; k <= 3; ++k)
                    B[t - k] += cand.columns[t][static_cast<std::size_t>(k - 1)];
            }
            CHECK(B == st.B);
        }
        const auto p = propose_L(st.L, st.kappa, st.I, m.hyper(), rng);
        if (std::log(rng.uniform()) < log_accept_L(st.L, p, st.kappa, st.I, m.hyper())) {
            st.L = p.L_star;
            for (Day s = m.first(); s <= m.last(); ++s)
                st.lambda[s] = std::exp(st.L[s]) * st.kappa[s];
        }
        auto fresh = st;
        refresh_caches(m, fresh);
        CHECK(fresh.kappa == st.kappa);
        for (Day s = m.first(); s <= m.last(); ++s) {
            CHECK(std::fabs(fresh.lambda[s] - st.lambda[s]) <= 1e-9 * std::max(1.0, st.lambda[s]));
            CHECK(st.B[s] <= st.I[s]);
        }
    }
    CHECK(accepted > 0);
}

TEST_CASE("posterior predictive") {
    const InfectivityProfile w({1.0});
    const TimeVaryingDelay unit(DelayKernel({1.0}));
    std::vector<EpidemicState> zeros(50, EpidemicState{10, 0.0, {0}, {0}, {}});
    Rng rng(1);
    const auto z = posterior_predict(zeros, 3, 0.1, w, unit, rng, std::vector<double>{0.025, 0.5, 0.975});
    for (Day d = 10; d <= 12; ++d)
        for (double x : z.I[d])
            CHECK(x == 0.0);
    for (Day d = 11; d <= 13; ++d)
        for (double x : z.D[d])
            CHECK(x == 0.0);
    CHECK_THROWS_AS(posterior_predict(zeros, 0, 0.1, w, unit, rng, std::vector<double>{0.5}), ParameterError);

    // horizon 1 with m_1 = 1: D_{T+1} = I_T, so E(D_{T+1}) = exp(L_{T-1} + tau^2/2) I_{T-1}
    const double tau = 0.05, lprev = 0.2;
    const long long prev = 300;
    std::vector<EpidemicState> states(40000, EpidemicState{10, lprev, {prev}, {250}, {}});
    const auto draws = predictive_draws(states, 1, tau, w, unit, rng);
    double sum = 0.0, sq = 0.0;
    for (const auto& d : draws.D) {
        sum += static_cast<double>(d[0]);
        sq += static_cast<double>(d[0]) * static_cast<double>(d[0]);
    }
    const double n = static_cast<double>(draws.D.size());
    const double mean = sum / n;
    const double se = std::sqrt((sq / n - mean * mean) / n);
    const double want = std::exp(lprev + 0.5 * tau * tau) * static_cast<double>(prev);
    CHECK(std::fabs(mean - want) < 4.0 * se);

    const auto tab = posterior_predict(states, 5, tau, w, unit, rng, std::vector<double>{0.025, 0.5, 0.975});
    for (Day d = 10; d <= 14; ++d) {
        CHECK(tab.R[d][0] <= tab.R[d][1]);
        CHECK(tab.R[d][1] <= tab.R[d][2]);
        CHECK(tab.I[d][0] <= tab.I[d][2]);
        CHECK(tab.D[d + 1][0] <= tab.D[d + 1][2]);
    }
}
