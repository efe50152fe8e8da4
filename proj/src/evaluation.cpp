#include "renewal/evaluation.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>
#include <thread>

#include "renewal/epidemic_model.hpp"
#include "renewal/errors.hpp"
#include "renewal/sequential.hpp"

namespace renewal {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = seed ^ (a * 0x9e3779b97f4a7c15ULL) ^ (b * 0xbf58476d1ce4e5b9ULL);
    x = (x ^ (x >> 31)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 29);
}

OffsetVector<double> missing(Day first, std::size_t n) { return OffsetVector<double>(first, n, kNaN); }

} // namespace

double interval_score(double lower, double upper, double x, double alpha, ScoreConvention convention) {
    if (!(lower <= upper))
        throw ParameterError("interval_score: lower endpoint exceeds upper endpoint");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw ParameterError("interval_score: alpha must lie in (0, 1)");
    const double weight = convention == ScoreConvention::half_level ? alpha / 2.0 : 2.0 / (1.0 - alpha);
    double s = upper - lower;
    if (x < lower)
        s += weight * (lower - x);
    else if (x > upper)
        s += weight * (x - upper);
    return s;
}

double rmse(std::span<const double> estimates, std::span<const double> truth) {
    if (estimates.size() != truth.size())
        throw ParameterError("rmse: vectors are not aligned");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < estimates.size(); ++i) {
        if (!std::isfinite(estimates[i]) || !std::isfinite(truth[i]))
            continue;
        const double d = estimates[i] - truth[i];
        sum += d * d;
        ++n;
    }
    if (n == 0)
        throw ParameterError("rmse: no overlapping days");
    return std::sqrt(sum / static_cast<double>(n));
}

double rmse(const OffsetVector<double>& estimates, const OffsetVector<double>& truth) {
    const Day lo = std::max(estimates.first(), truth.first());
    const Day hi = std::min(estimates.last(), truth.last());
    if (hi < lo)
        throw ParameterError("rmse: no overlapping days");
    std::vector<double> a, b;
    for (Day d = lo; d <= hi; ++d) {
        a.push_back(estimates[d]);
        b.push_back(truth[d]);
    }
    return rmse(a, b);
}

OffsetVector<double> sliding_window_R(const OffsetVector<double>& infections, const InfectivityProfile& profile,
                                      int window_r) {
    if (window_r < 1)
        throw ParameterError("sliding_window_R: window must be at least 1 day");
    const int kw = profile.horizon();
    auto out = missing(infections.first(), infections.size());
    OffsetVector<double> kappa = missing(infections.first(), infections.size());
    for (Day s = infections.first() + kw; s <= infections.last(); ++s) {
        double k = 0.0;
        for (int j = 1; j <= kw; ++j)
            k += profile.weight(j) * infections[s - j];
        kappa[s] = k;
    }
    for (Day t = infections.first() + kw + window_r - 1; t <= infections.last(); ++t) {
        double num = 0.0, den = 0.0;
        for (Day s = t - window_r + 1; s <= t; ++s) {
            num += infections[s];
            den += kappa[s];
        }
        if (den > 0.0)
            out[t] = num / den;
    }
    return out;
}

BaselineResult baseline_two_step(std::span<const double> smoothed, const TimeVaryingDelay& delay,
                                 const InfectivityProfile& profile, const BaselineConfig& config) {
    if (config.window_r < 1)
        throw ParameterError("baseline: window_r must be at least 1");
    if (config.n_boot < 1)
        throw ParameterError("baseline: n_boot must be at least 1");
    if (config.block < 1)
        throw ParameterError("baseline: block length must be at least 1");
    for (double p : config.probs)
        if (!(p > 0.0 && p < 1.0))
            throw ParameterError("baseline: quantile probabilities must lie in (0, 1)");

    const auto fit = em_deconvolve(smoothed, delay, config.em);
    BaselineResult res;
    res.probs = config.probs;
    res.I_point = fit.infections;
    res.R_point = sliding_window_R(fit.infections, profile, config.window_r);

    const std::size_t T = smoothed.size();
    const auto expected = expected_detections(fit.infections, delay, T);
    std::vector<double> z(T, 0.0);
    for (std::size_t t = 0; t < T; ++t)
        if (expected[t] > 0.0)
            z[t] = (smoothed[t] - expected[t]) / std::sqrt(expected[t]);

    const std::size_t block = std::min<std::size_t>(static_cast<std::size_t>(config.block), T);
    Rng rng(config.seed);
    std::vector<OffsetVector<double>> boot_R, boot_I;
    std::vector<double> star(T);
    for (int b = 0; b < config.n_boot; ++b) {
        std::vector<double> zs;
        while (zs.size() < T) {
            const auto start = static_cast<std::size_t>(rng.uniform() * static_cast<double>(T - block + 1));
            for (std::size_t j = 0; j < block && zs.size() < T; ++j)
                zs.push_back(z[std::min(start, T - block) + j]);
        }
        for (std::size_t t = 0; t < T; ++t)
            star[t] = std::max(0.0, expected[t] + zs[t] * std::sqrt(std::max(expected[t], 0.0)));
        try {
            const auto refit = em_deconvolve(star, delay, config.em);
            boot_I.push_back(refit.infections);
            boot_R.push_back(sliding_window_R(refit.infections, profile, config.window_r));
        } catch (const Error&) {
            ++res.failed_refits;
        }
    }

    const Day first = res.I_point.first();
    const std::size_t n = res.I_point.size();
    res.R = OffsetVector<std::vector<double>>(first, n);
    res.I = OffsetVector<std::vector<double>>(first, n);
    auto summarize = [&](const std::vector<OffsetVector<double>>& draws, Day d) {
        std::vector<double> v;
        for (const auto& x : draws)
            if (std::isfinite(x[d]))
                v.push_back(x[d]);
        std::vector<double> q;
        for (double p : config.probs)
            q.push_back(v.empty() ? kNaN : sample_quantile(v, p));
        return q;
    };
    for (Day d = first; d < first + static_cast<Day>(n); ++d) {
        res.R[d] = std::isfinite(res.R_point[d]) ? summarize(boot_R, d) : std::vector<double>(config.probs.size(), kNaN);
        res.I[d] = summarize(boot_I, d);
    }
    return res;
}

OffsetVector<double> default_truth_R(int T, int max_lag) {
    const std::array<std::pair<double, double>, 5> knots{{{0.0, 1.2}, {0.2, 1.05}, {0.5, 1.35}, {0.75, 1.1}, {1.0, 0.85}}};
    const Day first = 1 - max_lag;
    const Day last = T - 1;
    OffsetVector<double> r(first, static_cast<std::size_t>(last - first + 1));
    for (Day s = first; s <= last; ++s) {
        const double x = last > first ? static_cast<double>(s - first) / static_cast<double>(last - first) : 0.0;
        std::size_t k = 0;
        while (k + 2 < knots.size() && x > knots[k + 1].first)
            ++k;
        const auto [x0, y0] = knots[k];
        const auto [x1, y1] = knots[k + 1];
        const double u = std::clamp((x - x0) / (x1 - x0), 0.0, 1.0);
        r[s] = y0 + (y1 - y0) * (1.0 - std::cos(std::numbers::pi * u)) / 2.0;
    }
    return r;
}

std::vector<std::string> MethodSpec::names() const {
    switch (kind) {
    case Kind::mcmc:
        return {"mcmc"};
    case Kind::baseline:
        return {"baseline"};
    case Kind::sequential: {
        std::vector<std::string> out;
        for (int o : offsets)
            out.push_back("sequential+" + std::to_string(o));
        return out;
    }
    }
    return {};
}

void ExperimentConfig::validate() const {
    if (n_replicates < 1)
        throw ConfigError("experiment: n_replicates must be at least 1");
    if (T < 1)
        throw ConfigError("experiment: T must be at least 1");
    if (!(lambda0 > 0.0))
        throw ConfigError("experiment: lambda0 must be positive");
    if (methods.empty())
        throw ConfigError("experiment: no methods configured");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw ConfigError("experiment: alpha must lie in (0, 1)");
    const int km = kernel.max_lag();
    if (!truth_R.empty() &&
        (truth_R.first() != 1 - km || truth_R.last() != T - 1))
        throw ConfigError("experiment: truth_R must cover (1-K_m)..(T-1)");
    for (const auto& m : methods) {
        if (m.kind == MethodSpec::Kind::sequential) {
            if (m.offsets.empty())
                throw ConfigError("experiment: sequential method needs at least one offset");
            if (T < window_len)
                throw ConfigError("experiment: sequential method needs T >= window length");
            for (int o : m.offsets)
                if (o < 1)
                    throw ConfigError("experiment: sequential offsets must be at least 1");
        }
    }
}

double MetricTable::summary(const std::string& method, const std::string& variable, const std::string& metric) const {
    for (const auto& r : rows)
        if (!r.day && r.method == method && r.variable == variable && r.metric == metric)
            return r.value;
    return kNaN;
}

namespace {

MethodEstimate from_quantiles(std::string name, const OffsetVector<std::vector<double>>& R,
                              const OffsetVector<std::vector<double>>& I, Day first, std::size_t n) {
    MethodEstimate e;
    e.method = std::move(name);
    e.R_point = missing(first, n);
    e.R_lower = missing(first, n);
    e.R_upper = missing(first, n);
    e.I_point = missing(first, n);
    e.I_lower = missing(first, n);
    e.I_upper = missing(first, n);
    for (Day d = first; d < first + static_cast<Day>(n); ++d) {
        if (R.contains(d)) {
            e.R_lower[d] = R[d][0];
            e.R_point[d] = R[d][1];
            e.R_upper[d] = R[d][2];
        }
        if (I.contains(d)) {
            e.I_lower[d] = I[d][0];
            e.I_point[d] = I[d][1];
            e.I_upper[d] = I[d][2];
        }
    }
    return e;
}

ReplicateResult run_replicate(const ExperimentConfig& cfg, const OffsetVector<double>& truth_R, int r) {
    ReplicateResult out;
    out.replicate = r;
    const int km = cfg.kernel.max_lag();
    const int kw = cfg.profile.horizon();
    const TimeVaryingDelay delay(cfg.kernel);
    const Day first = 1 - km;
    const auto n = static_cast<std::size_t>(cfg.T + km - 1);
    const std::vector<double> probs{(1.0 - cfg.alpha) / 2.0, 0.5, (1.0 + cfg.alpha) / 2.0};

    Rng rng = Rng(cfg.seed).split(static_cast<std::uint64_t>(r));
    std::vector<long long> init(static_cast<std::size_t>(kw));
    for (auto& x : init)
        x = rng.poisson(cfg.lambda0);
    const auto path = simulate_path(truth_R, init, cfg.profile, delay, rng);
    out.truth_I = OffsetVector<double>(first, n);
    for (Day s = first; s <= cfg.T - 1; ++s)
        out.truth_I[s] = static_cast<double>(path.infections[s]);
    std::vector<double> raw;
    for (long long d : path.detections_between(1, cfg.T))
        raw.push_back(static_cast<double>(d));
    out.detections = smooth_detections(raw, cfg.smoothing);

    for (const auto& m : cfg.methods) {
        switch (m.kind) {
        case MethodSpec::Kind::mcmc: {
            Hyperparams h;
            h.sigma = cfg.sigma;
            h.tau = cfg.tau;
            h.lambda0 = OffsetVector<double>(1 - km - kw, static_cast<std::size_t>(kw), cfg.lambda0);
            const Model model(out.detections, cfg.profile, delay, h);
            McmcConfig mc = cfg.mcmc;
            mc.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(r), 1);
            mc.threads = 1;
            const auto q = posterior_quantiles(run_mcmc(model, mc), probs);
            out.estimates.push_back(from_quantiles("mcmc", q.R, q.I, first, n));
            break;
        }
        case MethodSpec::Kind::baseline: {
            BaselineConfig bc = cfg.baseline;
            bc.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(r), 2);
            bc.probs = probs;
            const auto b = baseline_two_step(out.detections, delay, cfg.profile, bc);
            auto e = from_quantiles("baseline", b.R, b.I, first, n);
            // the point estimate is the fit on the original data
            for (Day d = first; d < first + static_cast<Day>(n); ++d) {
                e.R_point[d] = b.R_point.contains(d) ? b.R_point[d] : kNaN;
                e.I_point[d] = b.I_point.contains(d) ? b.I_point[d] : kNaN;
            }
            out.estimates.push_back(std::move(e));
            break;
        }
        case MethodSpec::Kind::sequential: {
            RollingConfig rc;
            rc.window_len = cfg.window_len;
            rc.smoothing = cfg.window_smoothing;
            rc.sigma = cfg.sigma;
            rc.tau = cfg.tau;
            rc.mcmc = cfg.mcmc;
            rc.mcmc.threads = 1;
            rc.mcmc.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(r), 3);
            rc.probs = probs;
            const auto roll = rolling_fit(raw, cfg.profile, delay, rc);
            for (int o : m.offsets) {
                OffsetVector<std::vector<double>> R(first, n), I(first, n);
                for (Day d = first; d < first + static_cast<Day>(n); ++d) {
                    const Day end = d + o;
                    const std::vector<double> none(3, kNaN);
                    R[d] = none;
                    I[d] = none;
                    if (end < cfg.window_len || end > cfg.T)
                        continue;
                    const auto& rec = roll.windows[static_cast<std::size_t>(end - cfg.window_len)];
                    if (rec.ok && rec.quantiles.R.contains(d)) {
                        R[d] = rec.quantiles.R[d];
                        I[d] = rec.quantiles.I[d];
                    }
                }
                out.estimates.push_back(from_quantiles("sequential+" + std::to_string(o), R, I, first, n));
            }
            break;
        }
        }
    }
    out.ok = true;
    return out;
}

} // namespace

MetricTable compute_metrics(const std::vector<ReplicateResult>& replicates, const OffsetVector<double>& truth_R,
                            int T, double alpha, ScoreConvention convention) {
    MetricTable tab;
    std::vector<const ReplicateResult*> ok;
    for (const auto& r : replicates)
        if (r.ok)
            ok.push_back(&r);
    tab.n_effective = static_cast<int>(ok.size());
    if (ok.empty())
        return tab;
    const std::size_t n_methods = ok.front()->estimates.size();
    const Day first = truth_R.first();
    const Day last = truth_R.last();

    // common window: every method reports a finite interval and point on every replicate
    auto reported = [&](Day d) {
        for (const auto* r : ok)
            for (const auto& e : r->estimates)
                for (const auto* v : {&e.R_point, &e.R_lower, &e.R_upper, &e.I_point, &e.I_lower, &e.I_upper})
                    if (!v->contains(d) || !std::isfinite((*v)[d]))
                        return false;
        return true;
    };
    std::vector<Day> days;
    for (Day d = first; d <= last; ++d)
        if (reported(d))
            days.push_back(d);
    if (days.empty())
        return tab;
    tab.window_first = days.front();
    tab.window_last = days.back();
    tab.interior_first = std::max<Day>(tab.window_first, 1);
    tab.interior_last = std::min<Day>(tab.window_last, T - 8);

    for (std::size_t m = 0; m < n_methods; ++m) {
        const std::string name = ok.front()->estimates[m].method;
        for (const std::string var : {"R", "I"}) {
            double sum_rmse = 0.0, sum_is = 0.0, sum_cov = 0.0, sum_interior = 0.0;
            int n_interior = 0;
            for (Day d : days) {
                double se = 0.0, is = 0.0, cov = 0.0;
                for (const auto* r : ok) {
                    const auto& e = r->estimates[m];
                    const bool isR = var == "R";
                    const double truth = isR ? truth_R[d] : r->truth_I[d];
                    const double point = isR ? e.R_point[d] : e.I_point[d];
                    const double lo = isR ? e.R_lower[d] : e.I_lower[d];
                    const double hi = isR ? e.R_upper[d] : e.I_upper[d];
                    se += (point - truth) * (point - truth);
                    is += interval_score(lo, hi, truth, alpha, convention);
                    cov += (truth >= lo && truth <= hi) ? 1.0 : 0.0;
                }
                const double k = static_cast<double>(ok.size());
                const double day_rmse = std::sqrt(se / k);
                tab.rows.push_back({name, var, "rmse", d, day_rmse});
                tab.rows.push_back({name, var, "interval_score", d, is / k});
                tab.rows.push_back({name, var, "coverage", d, cov / k});
                sum_rmse += day_rmse;
                sum_is += is / k;
                sum_cov += cov / k;
                if (d >= tab.interior_first && d <= tab.interior_last) {
                    sum_interior += cov / k;
                    ++n_interior;
                }
            }
            const double nd = static_cast<double>(days.size());
            tab.rows.push_back({name, var, "rmse", std::nullopt, sum_rmse / nd});
            tab.rows.push_back({name, var, "interval_score", std::nullopt, sum_is / nd});
            tab.rows.push_back({name, var, "coverage", std::nullopt, sum_cov / nd});
            tab.rows.push_back({name, var, "interior_coverage", std::nullopt,
                                n_interior > 0 ? sum_interior / n_interior : kNaN});
        }
    }
    return tab;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
    config.validate();
    const auto truth_R = config.truth_R.empty() ? default_truth_R(config.T, config.kernel.max_lag()) : config.truth_R;
    ExperimentResult res;
    res.replicates.resize(static_cast<std::size_t>(config.n_replicates));
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int r = next++; r < config.n_replicates; r = next++) {
            auto& slot = res.replicates[static_cast<std::size_t>(r)];
            try {
                slot = run_replicate(config, truth_R, r);
            } catch (const Error& e) {
                slot.replicate = r;
                slot.ok = false;
                slot.error = e.what();
            }
        }
    };
    const int n_threads = std::clamp(config.threads, 1, config.n_replicates);
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int i = 0; i < n_threads; ++i)
            pool.emplace_back(worker);
    }
    for (const auto& r : res.replicates)
        if (!r.ok)
            res.log.push_back("replicate " + std::to_string(r.replicate) + " skipped: " + r.error);
    res.metrics = compute_metrics(res.replicates, truth_R, config.T, config.alpha, config.convention);
    return res;
}

} // namespace renewal
