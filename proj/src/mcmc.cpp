#include "renewal/mcmc.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <limits>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <thread>

#include "renewal/deconvolution.hpp"
#include "renewal/errors.hpp"

namespace renewal {
namespace {

constexpr double kPsiFloor = 1e-12;
constexpr double kLambda0Floor = 1e-3;

double round_half_even(double x) { return std::nearbyint(x); }

// Poisson log-likelihood ratio x log(a/b) - (a - b), with 0 log 0 = 0.
double pois_llr(long long x, double a, double b) {
    if (x == 0)
        return -(a - b);
    return static_cast<double>(x) * (std::log(a) - std::log(b)) - (a - b);
}

// Largest-remainder apportionment of n over nonnegative weights.
std::vector<long long> apportion(long long n, const std::vector<double>& weights) {
    std::vector<long long> out(weights.size(), 0);
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (n == 0 || !(total > 0.0))
        return out;
    std::vector<std::pair<double, std::size_t>> rem;
    long long used = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double share = static_cast<double>(n) * weights[i] / total;
        out[i] = static_cast<long long>(std::floor(share));
        used += out[i];
        rem.emplace_back(share - std::floor(share), i);
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t j = 0; used < n; ++j, ++used)
        ++out[rem[j % rem.size()].second];
    return out;
}

double log_accept_current_term(long long B, double lambda, double psi) {
    if (B == 0)
        return 0.0;
    if (!(lambda > 0.0))
        throw NumericalError("log_accept_IA: current state has lambda = 0 where B > 0");
    return static_cast<double>(B) * std::log(lambda / psi);
}

} // namespace

void Hyperparams::validate(int max_lag, int horizon) const {
    if (!(sigma > 0.0) || !std::isfinite(sigma))
        throw ParameterError("hyperparameters: sigma must be positive");
    if (!(tau > 0.0) || !std::isfinite(tau))
        throw ParameterError("hyperparameters: tau must be positive");
    if (lambda0.first() != 1 - max_lag - horizon || lambda0.size() != static_cast<std::size_t>(horizon))
        throw DimensionError("hyperparameters: lambda0 must cover (1-K_m-K_w)..(-K_m)");
    for (double x : lambda0)
        if (!(x > 0.0) || !std::isfinite(x))
            throw ParameterError("hyperparameters: lambda0 must be positive");
}

RateLink RateLink::exponential() {
    auto e = [](double x) { return std::exp(x); };
    return {e, e, e};
}

RateLink RateLink::quadratic_about(double c) {
    const double ec = std::exp(c);
    return {[=](double x) { return ec * (1.0 + (x - c) + 0.5 * (x - c) * (x - c)); },
            [=](double x) { return ec * (1.0 + (x - c)); },
            [=](double) { return ec; }};
}

Model::Model(std::span<const double> smoothed, InfectivityProfile profile, TimeVaryingDelay delay, Hyperparams hyper)
    : profile_(std::move(profile)), delay_(std::move(delay)), hyper_(std::move(hyper)) {
    if (smoothed.empty())
        throw DataError("model: need at least one observation");
    for (std::size_t i = 0; i < smoothed.size(); ++i) {
        if (!std::isfinite(smoothed[i]) || smoothed[i] < 0.0) {
            std::ostringstream os;
            os << "model: detection on day " << i + 1 << " is negative or not finite";
            throw DataError(os.str());
        }
        detections_.push_back(static_cast<long long>(round_half_even(smoothed[i])));
    }
    hyper_.validate(K_m(), K_w());
    b_ = OffsetVector<double>(first(), latent_size());
    for (Day s = first(); s <= last(); ++s)
        b_[s] = std::min(1.0, delay_.observed_mass(s, T()));
}

OffsetVector<double> Model::kappa(const OffsetVector<long long>& infections) const {
    OffsetVector<double> k(first(), latent_size(), 0.0);
    const int kw = K_w();
    for (Day s = first(); s <= last(); ++s) {
        double acc = 0.0;
        for (int j = 1; j <= kw; ++j)
            acc += profile_.weight(j) * static_cast<double>(infections[s - j]);
        k[s] = acc;
    }
    return k;
}

void refresh_caches(const Model& model, LatentState& state) {
    state.kappa = model.kappa(state.I);
    state.lambda = OffsetVector<double>(model.first(), model.latent_size());
    for (Day s = model.first(); s <= model.last(); ++s)
        state.lambda[s] = std::exp(state.L[s]) * state.kappa[s];
}

OffsetVector<double> em_starting_incidence(std::span<const double> detections, const TimeVaryingDelay& delay) {
    DeconvolutionConfig cfg;
    cfg.stopping = StoppingRule::fixed_iters;
    cfg.fixed_iters = 10;
    cfg.start = StartKind::shifted_constant;
    return em_deconvolve(detections, delay, cfg).infections;
}

Lambda0 make_lambda0(const std::optional<std::vector<double>>& pre_window, std::span<const double> fallback,
                     const TimeVaryingDelay& delay, int horizon) {
    const int km = delay.max_lag();
    Lambda0 out;
    double mean = 0.0;
    if (pre_window && !pre_window->empty()) {
        for (double x : *pre_window)
            if (!std::isfinite(x) || x < 0.0)
                throw DataError("make_lambda0: pre-window counts must be non-negative");
        mean = std::accumulate(pre_window->begin(), pre_window->end(), 0.0) / static_cast<double>(pre_window->size());
        out.source = "pre-window";
    } else {
        if (fallback.empty())
            throw DataError("make_lambda0: no counts to derive the prior mean from");
        const auto start = em_starting_incidence(fallback, delay);
        const std::size_t n = std::min<std::size_t>(7, start.size());
        mean = std::accumulate(start.begin(), start.begin() + static_cast<std::ptrdiff_t>(n), 0.0) /
               static_cast<double>(n);
        out.source = "em-start";
    }
    if (!(mean >= kLambda0Floor)) {
        mean = kLambda0Floor;
        out.floored = true;
    }
    out.values = OffsetVector<double>(1 - km - horizon, static_cast<std::size_t>(horizon), mean);
    return out;
}

LatentState init_chain(const Model& model, Rng& rng) {
    const int km = model.K_m();
    const Day T = model.T();
    std::vector<double> dets(model.detections().begin(), model.detections().end());
    const auto em = em_starting_incidence(dets, model.delay());

    OffsetVector<double> real(model.first_init(), model.latent_size() + static_cast<std::size_t>(model.K_w()));
    for (Day s = model.first_init(); s < model.first(); ++s)
        real[s] = static_cast<double>(rng.poisson(model.hyper().lambda0[s]));
    for (Day s = model.first(); s <= model.last(); ++s)
        real[s] = em[s];

    // log-linear blend across the junction of prior draws and EM values
    const Day a = std::max<Day>(-km - 1, model.first_init());
    const Day c = std::min<Day>(2 - km, model.last());
    if (c - a >= 2) {
        const double la = std::log(std::max(real[a], 0.5));
        const double lc = std::log(std::max(real[c], 0.5));
        for (Day d = a + 1; d < c; ++d) {
            const double w = static_cast<double>(d - a) / static_cast<double>(c - a);
            real[d] = std::exp((1.0 - w) * la + w * lc);
        }
    }

    LatentState st;
    st.I = OffsetVector<long long>(real.first(), real.size());
    for (Day s = real.first(); s <= real.last(); ++s)
        st.I[s] = std::max(0LL, static_cast<long long>(round_half_even(real[s])));

    // no positive count may follow an all-zero infectivity window; walking backwards
    // re-checks every day whose count gets raised
    const int kw = model.K_w();
    for (Day s = model.last(); s >= model.first(); --s) {
        if (st.I[s] == 0)
            continue;
        double k = 0.0;
        for (int j = 1; j <= kw; ++j)
            k += model.profile().weight(j) * static_cast<double>(st.I[s - j]);
        if (k > 0.0)
            continue;
        for (int j = 1; j <= kw; ++j)
            st.I[s - j] = std::max(st.I[s - j], 1LL);
    }

    st.kappa = model.kappa(st.I);
    st.L = OffsetVector<double>(model.first(), model.latent_size());
    st.B = OffsetVector<long long>(model.first(), model.latent_size());
    for (Day s = model.first(); s <= model.last(); ++s) {
        st.L[s] = std::log(std::max(static_cast<double>(st.I[s]), 0.5) / std::max(st.kappa[s], 0.5));
        const auto b = static_cast<long long>(round_half_even(static_cast<double>(st.I[s]) * model.observed_mass()[s]));
        st.B[s] = std::clamp(b, 0LL, st.I[s]);
    }
    st.L = conditional_mode_L(st.L, st.kappa, st.I, model.hyper());
    refresh_caches(model, st);

    const Day tail_first = std::max<Day>(1, T - km + 1);
    st.A_tail = OffsetVector<std::vector<long long>>(tail_first, static_cast<std::size_t>(T - tail_first + 1));
    for (Day t = tail_first; t <= T; ++t) {
        std::vector<double> w(static_cast<std::size_t>(km)), m(static_cast<std::size_t>(km));
        for (int k = 1; k <= km; ++k) {
            m[static_cast<std::size_t>(k - 1)] = model.delay().at(t - k, t);
            w[static_cast<std::size_t>(k - 1)] = static_cast<double>(st.I[t - k]) * m[static_cast<std::size_t>(k - 1)];
        }
        const bool any = std::any_of(w.begin(), w.end(), [](double x) { return x > 0.0; });
        st.A_tail[t] = apportion(model.detection(t), any ? w : m);
    }
    return st;
}

ProposalScaffold scaffold_from_psi(const Model& model, OffsetVector<double> psi) {
    ProposalScaffold sc;
    for (double& x : psi) {
        if (!(x >= kPsiFloor)) {
            x = kPsiFloor;
            ++sc.floored;
        }
    }
    sc.psi = std::move(psi);
    const int km = model.K_m();
    sc.pi.assign(static_cast<std::size_t>(model.T()), 0.0);
    for (Day t = 1; t <= model.T(); ++t) {
        double acc = 0.0;
        for (int k = 1; k <= km; ++k)
            acc += sc.psi[t - k] * model.delay().at(t - k, t);
        sc.pi[static_cast<std::size_t>(t - 1)] = acc;
    }
    return sc;
}

ProposalScaffold build_proposal_scaffold(const Model& model, const OffsetVector<double>& L) {
    const int kw = model.K_w();
    OffsetVector<double> psi(model.first_init(), model.latent_size() + static_cast<std::size_t>(kw));
    for (Day s = model.first_init(); s < model.first(); ++s)
        psi[s] = model.hyper().lambda0[s];
    int floored = 0;
    for (Day s = model.first(); s <= model.last(); ++s) {
        double acc = 0.0;
        for (int j = 1; j <= kw; ++j)
            acc += model.profile().weight(j) * psi[s - j];
        psi[s] = std::exp(L[s]) * acc;
        if (!(psi[s] >= kPsiFloor)) {
            psi[s] = kPsiFloor;
            ++floored;
        }
    }
    std::vector<double> dets(model.detections().begin(), model.detections().end());
    const auto refined = em_step(psi, dets, model.delay());
    for (Day s = model.first(); s <= model.last(); ++s)
        psi[s] = refined[s];
    auto sc = scaffold_from_psi(model, std::move(psi));
    sc.floored += floored;
    return sc;
}

IACandidate propose_IA(const Model& model, const ProposalScaffold& scaffold, const OffsetVector<double>& L, Rng& rng) {
    const int km = model.K_m();
    const int kw = model.K_w();
    const Day T = model.T();
    IACandidate c;
    c.B = OffsetVector<long long>(model.first(), model.latent_size(), 0);
    c.columns = OffsetVector<std::vector<long long>>(1, static_cast<std::size_t>(T));
    std::vector<double> probs(static_cast<std::size_t>(km));
    for (Day t = 1; t <= T; ++t) {
        for (int k = 1; k <= km; ++k)
            probs[static_cast<std::size_t>(k - 1)] = scaffold.psi[t - k] * model.delay().at(t - k, t);
        auto& col = c.columns[t];
        col.assign(static_cast<std::size_t>(km), 0);
        rng.multinomial(model.detection(t), probs, col);
        for (int k = 1; k <= km; ++k)
            c.B[t - k] += col[static_cast<std::size_t>(k - 1)];
    }
    c.I = OffsetVector<long long>(model.first_init(), model.latent_size() + static_cast<std::size_t>(kw));
    for (Day s = model.first_init(); s < model.first(); ++s)
        c.I[s] = rng.poisson(model.hyper().lambda0[s]);
    c.kappa = OffsetVector<double>(model.first(), model.latent_size());
    c.lambda = OffsetVector<double>(model.first(), model.latent_size());
    for (Day s = model.first(); s <= model.last(); ++s) {
        double acc = 0.0;
        for (int j = 1; j <= kw; ++j)
            acc += model.profile().weight(j) * static_cast<double>(c.I[s - j]);
        c.kappa[s] = acc;
        c.lambda[s] = std::exp(L[s]) * acc;
        const double rest = std::max(0.0, 1.0 - model.observed_mass()[s]) * c.lambda[s];
        c.I[s] = c.B[s] + rng.poisson(rest);
    }
    return c;
}

double log_accept_IA(const Model& model, const IAView& current, const IAView& candidate) {
    double lr = 0.0;
    for (Day s = model.first(); s <= model.last(); ++s) {
        const double b = model.observed_mass()[s];
        const long long bs = candidate.B[s];
        if (bs > 0) {
            if (!(candidate.lambda[s] > 0.0))
                return -std::numeric_limits<double>::infinity();
            lr += static_cast<double>(bs) * std::log(candidate.lambda[s] / candidate.scaffold.psi[s]);
        }
        lr -= log_accept_current_term(current.B[s], current.lambda[s], current.scaffold.psi[s]);
        lr -= b * (candidate.lambda[s] - current.lambda[s]);
    }
    for (Day t = 1; t <= model.T(); ++t) {
        const long long d = model.detection(t);
        if (d > 0)
            lr += static_cast<double>(d) * std::log(candidate.scaffold.pi[static_cast<std::size_t>(t - 1)] /
                                                    current.scaffold.pi[static_cast<std::size_t>(t - 1)]);
    }
    return lr;
}

double log_accept_IA_alternative(const Model& model, const IAView& current, const IAView& candidate) {
    double lr = 0.0;
    for (Day s = model.first(); s <= model.last(); ++s) {
        const double b = model.observed_mass()[s];
        if (current.B[s] > 0 && !(current.lambda[s] > 0.0))
            throw NumericalError("log_accept_IA: current state has lambda = 0 where B > 0");
        if (candidate.B[s] > 0 && !(candidate.lambda[s] > 0.0))
            return -std::numeric_limits<double>::infinity();
        lr += pois_llr(candidate.B[s], b * candidate.lambda[s], b * candidate.scaffold.psi[s]);
        lr += pois_llr(current.B[s], b * current.scaffold.psi[s], b * current.lambda[s]);
    }
    for (Day t = 1; t <= model.T(); ++t) {
        const auto i = static_cast<std::size_t>(t - 1);
        lr += pois_llr(model.detection(t), candidate.scaffold.pi[i], current.scaffold.pi[i]);
    }
    return lr;
}

TridiagonalSystem l_proposal_system(const OffsetVector<double>& L, const OffsetVector<double>& kappa,
                                    const OffsetVector<long long>& I, const Hyperparams& hyper,
                                    const RateLink& link) {
    const std::size_t n = L.size();
    const double s2 = 1.0 / (hyper.sigma * hyper.sigma);
    const double t2 = 1.0 / (hyper.tau * hyper.tau);
    TridiagonalSystem sys;
    sys.diag.assign(n, 0.0);
    sys.rhs.assign(n, 0.0);
    sys.off = -t2;
    for (std::size_t i = 0; i < n; ++i) {
        const Day s = L.first() + static_cast<Day>(i);
        const double x = L[s];
        const double k = kappa[s];
        double prior = 2.0 * t2;
        if (n == 1)
            prior = s2;
        else if (i == 0)
            prior = s2 + t2;
        else if (i + 1 == n)
            prior = t2;
        sys.diag[i] = prior + link.d2f(x) * k;
        sys.rhs[i] = static_cast<double>(I[s]) - k * (link.df(x) - link.d2f(x) * x);
    }
    return sys;
}

GaussianProposal::GaussianProposal(const TridiagonalSystem& system) {
    const std::size_t n = system.diag.size();
    if (n == 0 || system.rhs.size() != n)
        throw DimensionError("GaussianProposal: empty or mismatched system");
    u_diag_.assign(n, 0.0);
    u_super_.assign(n > 0 ? n - 1 : 0, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double d = system.diag[i];
        if (i > 0)
            d -= u_super_[i - 1] * u_super_[i - 1];
        if (!(d > 0.0) || !std::isfinite(d))
            throw NumericalError("L proposal: precision matrix is not positive definite");
        u_diag_[i] = std::sqrt(d);
        if (i + 1 < n)
            u_super_[i] = system.off / u_diag_[i];
        log_det_half_ += std::log(u_diag_[i]);
    }
    y_.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double v = system.rhs[i];
        if (i > 0)
            v -= u_super_[i - 1] * y_[i - 1];
        y_[i] = v / u_diag_[i];
    }
}

std::vector<double> GaussianProposal::back_solve(std::vector<double> v) const {
    const std::size_t n = v.size();
    for (std::size_t i = n; i-- > 0;) {
        if (i + 1 < n)
            v[i] -= u_super_[i] * v[i + 1];
        v[i] /= u_diag_[i];
    }
    return v;
}

std::vector<double> GaussianProposal::mean() const { return back_solve(y_); }

double GaussianProposal::log_density(std::span<const double> x) const {
    if (x.size() != size())
        throw DimensionError("GaussianProposal: dimension mismatch");
    double q = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double r = u_diag_[i] * x[i] - y_[i];
        if (i + 1 < x.size())
            r += u_super_[i] * x[i + 1];
        q += r * r;
    }
    return log_det_half_ - 0.5 * q - 0.5 * static_cast<double>(size()) * std::log(2.0 * std::numbers::pi);
}

std::vector<double> GaussianProposal::sample(Rng& rng, double& log_q) const {
    std::vector<double> v(size());
    double zz = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double z = rng.normal();
        zz += z * z;
        v[i] = z + y_[i];
    }
    log_q = log_det_half_ - 0.5 * zz - 0.5 * static_cast<double>(size()) * std::log(2.0 * std::numbers::pi);
    return back_solve(std::move(v));
}

LProposal propose_L(const OffsetVector<double>& L, const OffsetVector<double>& kappa, const OffsetVector<long long>& I,
                    const Hyperparams& hyper, Rng& rng, const RateLink& link) {
    const GaussianProposal fwd(l_proposal_system(L, kappa, I, hyper, link));
    LProposal p;
    p.L_star = OffsetVector<double>(L.first(), fwd.sample(rng, p.log_q_forward));
    const GaussianProposal rev(l_proposal_system(p.L_star, kappa, I, hyper, link));
    p.log_q_reverse = rev.log_density(L.view());
    return p;
}

double log_target_L(const OffsetVector<double>& L, const OffsetVector<double>& kappa,
                    const OffsetVector<long long>& I, const Hyperparams& hyper, const RateLink& link) {
    const Day a = L.first();
    double lp = -L[a] * L[a] / (2.0 * hyper.sigma * hyper.sigma);
    for (Day s = a + 1; s <= L.last(); ++s) {
        const double d = L[s] - L[s - 1];
        lp -= d * d / (2.0 * hyper.tau * hyper.tau);
    }
    for (Day s = a; s <= L.last(); ++s)
        lp += static_cast<double>(I[s]) * L[s] - link.f(L[s]) * kappa[s];
    return lp;
}

OffsetVector<double> conditional_mode_L(const OffsetVector<double>& start, const OffsetVector<double>& kappa,
                                        const OffsetVector<long long>& I, const Hyperparams& hyper,
                                        const RateLink& link) {
    OffsetVector<double> L = start;
    double current = log_target_L(L, kappa, I, hyper, link);
    for (int it = 0; it < 100; ++it) {
        const auto target = GaussianProposal(l_proposal_system(L, kappa, I, hyper, link)).mean();
        double step = 1.0, change = 0.0;
        for (int half = 0; half < 40; ++half, step *= 0.5) {
            OffsetVector<double> next = L;
            change = 0.0;
            for (std::size_t i = 0; i < target.size(); ++i) {
                const double d = step * (target[i] - L.values()[i]);
                next.values()[i] += d;
                change = std::max(change, std::fabs(d));
            }
            const double value = log_target_L(next, kappa, I, hyper, link);
            if (value >= current) {
                L = std::move(next);
                current = value;
                break;
            }
        }
        if (change < 1e-10)
            break;
    }
    return L;
}

double log_accept_L(const OffsetVector<double>& L, const LProposal& proposal, const OffsetVector<double>& kappa,
                    const OffsetVector<long long>& I, const Hyperparams& hyper, const RateLink& link) {
    return log_target_L(proposal.L_star, kappa, I, hyper, link) - log_target_L(L, kappa, I, hyper, link) +
           proposal.log_q_reverse - proposal.log_q_forward;
}

EpidemicState final_state(const Model& model, const LatentState& state) {
    const int km = model.K_m();
    const int kw = model.K_w();
    const Day T = model.T();
    if (T < km)
        throw DimensionError("final_state: need T >= K_m");
    EpidemicState x;
    x.t = T;
    x.log_r_prev = state.L[T - 1];
    for (Day s = T - kw; s <= T - 1; ++s)
        x.infections.push_back(state.I[s]);
    const auto& col = state.A_tail[T];
    for (Day s = T - km; s <= T - 1; ++s)
        x.allocations.push_back(col[static_cast<std::size_t>(T - s - 1)]);
    for (Day s = T + 1 - km; s <= T - 1; ++s)
        x.undetected.push_back(state.I[s] - state.B[s]);
    return x;
}

namespace {

struct ChainOutput {
    std::vector<OffsetVector<double>> L;
    std::vector<OffsetVector<long long>> I;
    std::vector<EpidemicState> finals;
    ChainTelemetry telemetry;
};

ChainOutput run_chain(const Model& model, const McmcConfig& cfg, Rng rng) {
    ChainOutput out;
    out.telemetry.stream = rng.stream();
    LatentState st = init_chain(model, rng);
    const bool keep_finals = model.T() >= model.K_m();
    long long ia_acc = 0, ia_acc_burn = 0, l_acc = 0;
    for (int it = 0; it < cfg.iters; ++it) {
        const auto scaffold = build_proposal_scaffold(model, st.L);
        out.telemetry.psi_floor_events += scaffold.floored;
        auto cand = propose_IA(model, scaffold, st.L, rng);
        const double lr = log_accept_IA(model, {st.B, st.lambda, scaffold}, {cand.B, cand.lambda, scaffold});
        if (std::log(rng.uniform()) < lr) {
            st.I = std::move(cand.I);
            st.B = std::move(cand.B);
            st.kappa = std::move(cand.kappa);
            st.lambda = std::move(cand.lambda);
            const Day tail_first = st.A_tail.first();
            for (Day t = tail_first; t <= model.T(); ++t)
                st.A_tail[t] = std::move(cand.columns[t]);
            ++ia_acc;
            if (it < cfg.burn_in)
                ++ia_acc_burn;
        }

        const auto prop = propose_L(st.L, st.kappa, st.I, model.hyper(), rng);
        if (std::log(rng.uniform()) < log_accept_L(st.L, prop, st.kappa, st.I, model.hyper())) {
            st.L = prop.L_star;
            for (Day s = model.first(); s <= model.last(); ++s)
                st.lambda[s] = std::exp(st.L[s]) * st.kappa[s];
            ++l_acc;
        }

        if (it >= cfg.burn_in && (it - cfg.burn_in + 1) % cfg.thin == 0) {
            out.L.push_back(st.L);
            out.I.push_back(st.I);
            if (keep_finals)
                out.finals.push_back(final_state(model, st));
        }
    }
    out.telemetry.ia_acceptance = static_cast<double>(ia_acc) / cfg.iters;
    out.telemetry.l_acceptance = static_cast<double>(l_acc) / cfg.iters;
    out.telemetry.ia_acceptance_burn_in = cfg.burn_in > 0 ? static_cast<double>(ia_acc_burn) / cfg.burn_in : 0.0;
    return out;
}

} // namespace

PosteriorSamples run_mcmc(const Model& model, const McmcConfig& cfg) {
    if (cfg.iters <= 0 || cfg.burn_in < 0 || cfg.iters <= cfg.burn_in)
        throw ParameterError("run_mcmc: need iters > burn_in >= 0");
    if (cfg.thin < 1)
        throw ParameterError("run_mcmc: thin must be at least 1");
    if (cfg.n_chains < 1)
        throw ParameterError("run_mcmc: need at least one chain");
    if ((cfg.iters - cfg.burn_in) / cfg.thin == 0)
        throw ParameterError("run_mcmc: no draws are retained after burn-in and thinning");

    std::vector<ChainOutput> outputs(static_cast<std::size_t>(cfg.n_chains));
    std::vector<std::exception_ptr> errors(outputs.size());
    const Rng base(cfg.seed);
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int c = next++; c < cfg.n_chains; c = next++) {
            try {
                outputs[static_cast<std::size_t>(c)] = run_chain(model, cfg, base.split(static_cast<std::uint64_t>(c)));
            } catch (...) {
                errors[static_cast<std::size_t>(c)] = std::current_exception();
            }
        }
    };
    const int n_threads = std::clamp(cfg.threads > 0 ? cfg.threads : cfg.n_chains, 1, cfg.n_chains);
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int i = 0; i < n_threads; ++i)
            pool.emplace_back(worker);
    }
    for (const auto& e : errors)
        if (e)
            std::rethrow_exception(e);

    PosteriorSamples ps;
    ps.T = model.T();
    ps.K_m = model.K_m();
    ps.K_w = model.K_w();
    ps.seed = cfg.seed;
    ps.iters = cfg.iters;
    ps.burn_in = cfg.burn_in;
    ps.thin = cfg.thin;
    for (std::size_t c = 0; c < outputs.size(); ++c) {
        auto& o = outputs[c];
        for (auto& x : o.L) {
            ps.L.push_back(std::move(x));
            ps.chain.push_back(static_cast<int>(c));
        }
        for (auto& x : o.I)
            ps.I.push_back(std::move(x));
        for (auto& x : o.finals)
            ps.final_states.push_back(std::move(x));
        ps.telemetry.push_back(o.telemetry);
        if (cfg.burn_in > 0 && o.telemetry.ia_acceptance_burn_in < 1e-3) {
            std::ostringstream os;
            os << "chain " << c << ": infection-block acceptance rate " << o.telemetry.ia_acceptance_burn_in
               << " during burn-in is below 0.1%; the proposal may be mistuned";
            ps.warnings.push_back(os.str());
        }
    }
    return ps;
}

OffsetVector<double> gelman_rubin(const PosteriorSamples& samples) {
    if (samples.size() == 0)
        throw StateError("gelman_rubin: no draws");
    const int n_chains = *std::max_element(samples.chain.begin(), samples.chain.end()) + 1;
    std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(n_chains));
    for (std::size_t i = 0; i < samples.size(); ++i)
        groups[static_cast<std::size_t>(samples.chain[i])].push_back(i);
    if (n_chains == 1) {
        const auto all = groups[0];
        const std::size_t half = all.size() / 2;
        groups = {std::vector<std::size_t>(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(half)),
                  std::vector<std::size_t>(all.end() - static_cast<std::ptrdiff_t>(half), all.end())};
    }
    std::size_t n = groups[0].size();
    for (const auto& g : groups)
        n = std::min(n, g.size());
    const auto& L0 = samples.L.front();
    OffsetVector<double> rhat(L0.first(), L0.size(), 1.0);
    if (n < 2)
        return rhat;
    const double m = static_cast<double>(groups.size());
    const double nn = static_cast<double>(n);
    for (Day s = L0.first(); s <= L0.last(); ++s) {
        std::vector<double> means;
        double w = 0.0;
        for (const auto& g : groups) {
            double mu = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                mu += samples.L[g[j]][s];
            mu /= nn;
            double v = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                v += (samples.L[g[j]][s] - mu) * (samples.L[g[j]][s] - mu);
            w += v / (nn - 1.0);
            means.push_back(mu);
        }
        w /= m;
        const double grand = std::accumulate(means.begin(), means.end(), 0.0) / m;
        double b = 0.0;
        for (double mu : means)
            b += (mu - grand) * (mu - grand);
        b *= nn / (m - 1.0);
        if (!(w > 0.0)) {
            rhat[s] = b > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
            continue;
        }
        rhat[s] = std::sqrt(((nn - 1.0) / nn * w + b / nn) / w);
    }
    return rhat;
}

double sample_quantile(std::vector<double> values, double p) {
    if (values.empty())
        throw StateError("quantile of an empty sample");
    if (!(p > 0.0 && p < 1.0))
        throw ParameterError("quantile probabilities must lie in (0, 1)");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace {

void check_probs(std::span<const double> probs) {
    if (probs.empty())
        throw ParameterError("quantiles: no probabilities given");
    for (double p : probs)
        if (!(p > 0.0 && p < 1.0))
            throw ParameterError("quantile probabilities must lie in (0, 1)");
}

std::vector<double> quantiles_of(const std::vector<double>& values, std::span<const double> probs) {
    std::vector<double> q;
    for (double p : probs)
        q.push_back(sample_quantile(values, p));
    return q;
}

} // namespace

QuantileTable posterior_quantiles(const PosteriorSamples& samples, std::span<const double> probs) {
    check_probs(probs);
    if (samples.size() == 0)
        throw StateError("posterior_quantiles: no draws");
    const auto& L0 = samples.L.front();
    QuantileTable tab;
    tab.probs.assign(probs.begin(), probs.end());
    tab.R = OffsetVector<std::vector<double>>(L0.first(), L0.size());
    tab.I = OffsetVector<std::vector<double>>(L0.first(), L0.size());
    std::vector<double> r(samples.size()), inf(samples.size());
    for (Day s = L0.first(); s <= L0.last(); ++s) {
        for (std::size_t i = 0; i < samples.size(); ++i) {
            r[i] = std::exp(samples.L[i][s]);
            inf[i] = static_cast<double>(samples.I[i][s]);
        }
        tab.R[s] = quantiles_of(r, probs);
        tab.I[s] = quantiles_of(inf, probs);
    }
    return tab;
}

PredictiveDraws predictive_draws(std::span<const EpidemicState> states, int horizon, double tau,
                                 const InfectivityProfile& profile, const TimeVaryingDelay& delay, Rng& rng) {
    if (horizon < 1)
        throw ParameterError("posterior_predict: horizon must be at least 1");
    if (states.empty())
        throw StateError("posterior_predict: no posterior states (T < K_m or empty sample)");
    PredictiveDraws out;
    out.first_latent = states.front().t;
    const Rng base = rng.split(0x70726564ULL);
    for (std::size_t j = 0; j < states.size(); ++j) {
        Rng r = base.split(j);
        EpidemicState x = states[j];
        std::vector<double> rr;
        std::vector<long long> ii, dd;
        for (int h = 0; h < horizon; ++h) {
            x = predictive_step(x, tau, profile, delay, r);
            rr.push_back(std::exp(x.log_r_prev));
            ii.push_back(x.infections.back());
            dd.push_back(x.detections());
        }
        out.R.push_back(std::move(rr));
        out.I.push_back(std::move(ii));
        out.D.push_back(std::move(dd));
    }
    return out;
}

PredictiveTable posterior_predict(std::span<const EpidemicState> states, int horizon, double tau,
                                  const InfectivityProfile& profile, const TimeVaryingDelay& delay, Rng& rng,
                                  std::span<const double> probs) {
    check_probs(probs);
    const auto draws = predictive_draws(states, horizon, tau, profile, delay, rng);
    PredictiveTable tab;
    tab.probs.assign(probs.begin(), probs.end());
    const Day T = draws.first_latent;
    const auto h = static_cast<std::size_t>(horizon);
    tab.R = OffsetVector<std::vector<double>>(T, h);
    tab.I = OffsetVector<std::vector<double>>(T, h);
    tab.D = OffsetVector<std::vector<double>>(T + 1, h);
    std::vector<double> r(draws.R.size()), inf(draws.R.size()), d(draws.R.size());
    for (std::size_t k = 0; k < h; ++k) {
        for (std::size_t j = 0; j < draws.R.size(); ++j) {
            r[j] = draws.R[j][k];
            inf[j] = static_cast<double>(draws.I[j][k]);
            d[j] = static_cast<double>(draws.D[j][k]);
        }
        const Day day = T + static_cast<Day>(k);
        tab.R[day] = quantiles_of(r, probs);
        tab.I[day] = quantiles_of(inf, probs);
        tab.D[day + 1] = quantiles_of(d, probs);
    }
    return tab;
}

} // namespace renewal
