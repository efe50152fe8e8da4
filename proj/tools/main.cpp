#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "renewal/config.hpp"
#include "renewal/deconvolution.hpp"
#include "renewal/distributions.hpp"
#include "renewal/epidemic_model.hpp"
#include "renewal/errors.hpp"
#include "renewal/evaluation.hpp"
#include "renewal/io.hpp"
#include "renewal/mcmc.hpp"
#include "renewal/preprocess.hpp"
#include "renewal/sequential.hpp"

#ifndef RENEWAL_VERSION
#define RENEWAL_VERSION "0.0.0"
#endif

using namespace renewal;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kPredictStream = 0x7072656469637421ULL;

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::string output_dir;
};

int resolve_threads(const std::optional<int>& flag) {
    if (flag)
        return *flag;
    if (const char* env = std::getenv("RENEWAL_MCMC_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1)
            throw ConfigError("RENEWAL_MCMC_THREADS must be a positive integer, got '" + std::string(env) + "'");
        return static_cast<int>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

json user_config(const Common& c) {
    if (c.config_path.empty())
        return json::object();
    try {
        auto j = json::parse(read_file(c.config_path));
        if (!j.is_object())
            throw ConfigError("config /: expected a JSON object");
        return j;
    } catch (const json::parse_error& e) {
        throw ConfigError(c.config_path + ": invalid JSON: " + e.what());
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
}

// Runs `body` against a fresh output directory and writes the manifest last.
struct Outputs {
    std::vector<std::string> files;
    json extra = json::object();
    json timing = json::object();
};

void run_in_dir(const std::string& command, const Common& common, const RunConfig& cfg,
                const std::vector<std::string>& inputs, json seeds, const std::function<Outputs(const fs::path&)>& body) {
    const fs::path dir = common.output_dir;
    fs::create_directories(dir);
    fs::remove(dir / "manifest.json");
    const auto started = std::chrono::steady_clock::now();
    Outputs out = body(dir);
    RunManifest m;
    m.command = command;
    m.config = cfg.resolved;
    m.seeds = std::move(seeds);
    for (const auto& in : inputs)
        m.inputs.push_back({fs::absolute(in).lexically_normal().string(), sha256_file(in)});
    m.version = RENEWAL_VERSION;
    m.timing = std::move(out.timing);
    m.timing["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    m.extra = std::move(out.extra);
    write_manifest(dir, std::move(m), out.files);
}

std::vector<std::string> quantile_header(const std::string& first, const std::vector<double>& probs) {
    std::vector<std::string> h{first};
    for (double p : probs)
        h.push_back(quantile_column(p));
    return h;
}

void write_quantiles(const fs::path& path, const CaseSeries& series, const OffsetVector<std::vector<double>>& q,
                     const std::vector<double>& probs) {
    CsvTable t(quantile_header("date", probs));
    for (Day d = q.first(); d <= q.last(); ++d) {
        std::vector<std::string> row{format_date(series.date_of(d))};
        for (double x : q[d])
            row.push_back(format_number(x));
        t.add_row(std::move(row));
    }
    write_file_atomic(path, t.str());
}

void write_predictive(const fs::path& path, const CaseSeries& series, const PredictiveTable& p) {
    auto h = quantile_header("variable", p.probs);
    h.insert(h.begin() + 1, "date");
    CsvTable t(h);
    auto add = [&](const std::string& var, const OffsetVector<std::vector<double>>& q) {
        for (Day d = q.first(); d <= q.last(); ++d) {
            std::vector<std::string> row{var, format_date(series.date_of(d))};
            for (double x : q[d])
                row.push_back(format_number(x));
            t.add_row(std::move(row));
        }
    };
    add("R", p.R);
    add("I", p.I);
    add("D", p.D);
    write_file_atomic(path, t.str());
}

json telemetry_json(const std::vector<ChainTelemetry>& tel) {
    json a = json::array();
    for (std::size_t c = 0; c < tel.size(); ++c)
        a.push_back({{"chain", c},
                     {"stream", tel[c].stream},
                     {"ia_acceptance", tel[c].ia_acceptance},
                     {"ia_acceptance_burn_in", tel[c].ia_acceptance_burn_in},
                     {"l_acceptance", tel[c].l_acceptance},
                     {"psi_floor_events", tel[c].psi_floor_events}});
    return a;
}

Hyperparams hyperparams(const RunConfig& cfg, std::span<const double> smoothed, const TimeVaryingDelay& delay,
                        std::string& source, bool& floored) {
    Hyperparams h;
    h.sigma = cfg.sigma;
    h.tau = cfg.tau;
    const int km = cfg.kernel.max_lag();
    const int kw = cfg.profile.horizon();
    if (cfg.lambda0) {
        h.lambda0 = OffsetVector<double>(1 - km - kw, *cfg.lambda0);
        source = "config";
        floored = false;
    } else {
        auto l0 = make_lambda0(std::nullopt, smoothed, delay, kw);
        h.lambda0 = std::move(l0.values);
        source = l0.source;
        floored = l0.floored;
    }
    return h;
}

// ---- distributions ----

struct DistributionsArgs {
    double profile_mean = 4.8, profile_sd = 2.3;
    int profile_k = 12;
    double mean1 = 5.3, sd1 = 3.2, mean2 = 5.5, sd2 = 3.8;
    int delay_k = 28;
    std::optional<int> k_max;
    std::string table = "both";
    std::string output;
};

int cmd_distributions(const DistributionsArgs& a) {
    const int pk = a.k_max.value_or(a.profile_k);
    const int dk = a.k_max.value_or(a.delay_k);
    CsvTable t({"table", "k", "prob", "rounded"});
    auto add = [&](const std::string& name, std::span<const double> p) {
        for (std::size_t k = 0; k < p.size(); ++k)
            t.add_row({name, std::to_string(k + 1), format_number(p[k]), format_number(std::round(p[k] * 1000.0) / 1000.0)});
    };
    if (a.table == "profile" || a.table == "both")
        add("infectivity", discretize_gamma(a.profile_mean, a.profile_sd, pk));
    if (a.table == "delay" || a.table == "both") {
        const auto kernel = convolve_gamma_delay(a.mean1, a.sd1, a.mean2, a.sd2, dk);
        add("delay", kernel.probs());
    }
    if (a.output.empty())
        std::cout << t.str();
    else
        write_file_atomic(a.output, t.str());
    return 0;
}

// ---- preprocess ----

struct PreprocessArgs {
    std::string input;
    std::optional<int> trend_window;
    std::optional<std::string> seasonal;
    std::optional<bool> robust;
    std::optional<double> zero_offset;
};

int cmd_preprocess(const Common& common, const PreprocessArgs& a) {
    auto user = user_config(common);
    if (a.trend_window)
        user["smoothing"]["trend_window"] = *a.trend_window;
    if (a.seasonal) {
        if (*a.seasonal == "periodic" || *a.seasonal == "auto") {
            user["smoothing"]["seasonal"] = *a.seasonal;
        } else {
            int n = 0;
            try {
                std::size_t used = 0;
                n = std::stoi(*a.seasonal, &used);
                if (used != a.seasonal->size())
                    throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw ConfigError("--seasonal: expected 'periodic' or an integer window, got '" + *a.seasonal + "'");
            }
            user["smoothing"]["seasonal"] = n;
        }
    }
    if (a.robust)
        user["smoothing"]["robust"] = *a.robust;
    if (a.zero_offset)
        user["smoothing"]["zero_offset"] = *a.zero_offset;
    const auto cfg = load_config(user);
    const auto series = read_case_csv(a.input);
    run_in_dir("preprocess", common, cfg, {a.input}, json::object(), [&](const fs::path& dir) {
        const auto s = smooth_with_components(series.counts, cfg.smoothing_for(series.counts.size()));
        CsvTable t({"date", "raw", "smoothed", "weekday_effect", "remainder"});
        for (std::size_t i = 0; i < series.counts.size(); ++i)
            t.add_row({format_date(series.date_of(static_cast<Day>(i) + 1)), format_number(series.counts[i]),
                       format_number(s.smoothed[i]), format_number(std::exp(s.decomposition.weekday[i])),
                       format_number(std::exp(s.decomposition.remainder[i]))});
        write_file_atomic(dir / "preprocessed.csv", t.str());
        Outputs o;
        o.files = {"preprocessed.csv"};
        o.extra = {{"start_date", format_date(series.start)}, {"T", series.T()},
                   {"inner_iterations", s.decomposition.inner_iterations}};
        return o;
    });
    return 0;
}

// ---- deconvolve ----

int cmd_deconvolve(const Common& common, const std::string& input, bool smooth) {
    const auto cfg = load_config(user_config(common));
    const auto series = read_case_csv(input);
    run_in_dir("deconvolve", common, cfg, {input}, json::object(), [&](const fs::path& dir) {
        const auto d = smooth ? smooth_detections(series.counts, cfg.smoothing_for(series.counts.size())) : series.counts;
        const auto res = em_deconvolve(d, TimeVaryingDelay(cfg.kernel), cfg.deconvolution);
        CsvTable t({"date", "I_hat"});
        for (Day s = res.infections.first(); s <= res.infections.last(); ++s)
            t.add_row({format_date(series.date_of(s)), format_number(res.infections[s])});
        write_file_atomic(dir / "deconvolved.csv", t.str());
        const json meta{{"iterations", res.iterations},
                        {"converged", res.converged},
                        {"chi_squared", res.chi_squared},
                        {"threshold", res.threshold},
                        {"smoothed_input", smooth},
                        {"chi_squared_trace", res.chi_squared_trace},
                        {"loglik_trace", res.loglik_trace}};
        write_file_atomic(dir / "deconvolve.json", meta.dump(2) + "\n");
        Outputs o;
        o.files = {"deconvolved.csv", "deconvolve.json"};
        return o;
    });
    return 0;
}

// ---- fit ----

struct FitArgs {
    std::string input;
    bool no_smooth = false;
    bool write_samples = false;
};

int cmd_fit(const Common& common, const FitArgs& a) {
    auto user = user_config(common);
    if (common.seed)
        user["mcmc"]["seed"] = *common.seed;
    const auto cfg = load_config(user);
    const auto series = read_case_csv(a.input);
    const int threads = resolve_threads(common.threads);
    const json seeds{{"mcmc", cfg.mcmc.seed}, {"predict", cfg.mcmc.seed}};
    run_in_dir("fit", common, cfg, {a.input}, seeds, [&](const fs::path& dir) {
        const TimeVaryingDelay delay(cfg.kernel);
        const auto smoothed =
            a.no_smooth ? series.counts : smooth_detections(series.counts, cfg.smoothing_for(series.counts.size()));
        std::string l0_source;
        bool l0_floored = false;
        const auto hyper = hyperparams(cfg, smoothed, delay, l0_source, l0_floored);
        const Model model(smoothed, cfg.profile, delay, hyper);
        McmcConfig mc = cfg.mcmc;
        mc.threads = threads;
        const auto samples = run_mcmc(model, mc);
        const auto q = posterior_quantiles(samples, cfg.quantiles);

        CsvTable sm({"date", "raw", "smoothed"});
        for (std::size_t i = 0; i < smoothed.size(); ++i)
            sm.add_row({format_date(series.date_of(static_cast<Day>(i) + 1)), format_number(series.counts[i]),
                        format_number(smoothed[i])});
        write_file_atomic(dir / "smoothed.csv", sm.str());
        write_quantiles(dir / "quantiles_R.csv", series, q.R, cfg.quantiles);
        write_quantiles(dir / "quantiles_I.csv", series, q.I, cfg.quantiles);
        std::vector<std::string> files{"smoothed.csv", "quantiles_R.csv", "quantiles_I.csv"};

        if (!samples.final_states.empty()) {
            Rng rng = Rng(cfg.mcmc.seed).split(kPredictStream);
            const auto p = posterior_predict(samples.final_states, cfg.predict_horizon, cfg.tau, cfg.profile, delay,
                                             rng, cfg.quantiles);
            write_predictive(dir / "predictive.csv", series, p);
            write_final_states(dir / "final_states.bin", samples.final_states, model.K_m(), model.K_w());
            files.push_back("predictive.csv");
            files.push_back("final_states.bin");
        }

        const auto rhat = gelman_rubin(samples);
        json per_day = json::array();
        double rmax = 0.0;
        for (Day d = rhat.first(); d <= rhat.last(); ++d) {
            per_day.push_back({{"date", format_date(series.date_of(d))}, {"rhat", rhat[d]}});
            if (std::isfinite(rhat[d]))
                rmax = std::max(rmax, rhat[d]);
        }
        const json diag{{"draws", samples.size()},
                        {"iters", mc.iters},
                        {"burn_in", mc.burn_in},
                        {"thin", mc.thin},
                        {"chains", mc.n_chains},
                        {"seed", mc.seed},
                        {"lambda0_source", l0_source},
                        {"lambda0_floored", l0_floored},
                        {"chain_telemetry", telemetry_json(samples.telemetry)},
                        {"rhat_max", rmax},
                        {"rhat", per_day},
                        {"warnings", samples.warnings}};
        write_file_atomic(dir / "diagnostics.json", diag.dump(2) + "\n");
        files.push_back("diagnostics.json");
        if (a.write_samples) {
            write_samples(dir / "samples.bin", samples);
            files.push_back("samples.bin");
        }
        for (const auto& w : samples.warnings)
            std::cerr << "warning: " << w << "\n";

        Outputs o;
        o.files = files;
        o.extra = {{"start_date", format_date(series.start)}, {"T", series.T()}, {"K_m", model.K_m()},
                   {"K_w", model.K_w()}, {"smoothed_input", !a.no_smooth}};
        o.timing["threads"] = threads;
        return o;
    });
    return 0;
}

// ---- predict ----

int cmd_predict(const Common& common, const std::string& fit_dir, std::optional<int> horizon) {
    const auto fit = read_manifest(fit_dir);
    if (fit.command != "fit")
        throw DataError(fit_dir + ": manifest belongs to '" + fit.command + "', not 'fit'");
    auto user = fit.config;
    if (horizon)
        user["predict"]["horizon"] = *horizon;
    if (common.seed)
        user["mcmc"]["seed"] = *common.seed;
    const auto cfg = load_config(user);
    const fs::path states_path = fs::path(fit_dir) / "final_states.bin";
    if (!fs::exists(states_path))
        throw DataError(fit_dir + ": no final_states.bin (the fit needs T >= K_m)");
    const auto states = read_final_states(states_path);
    if (states.empty())
        throw DataError(states_path.string() + ": no states");
    CaseSeries series;
    try {
        series.start = parse_date(fit.extra.at("start_date").get<std::string>());
    } catch (const json::exception&) {
        throw DataError(fit_dir + ": manifest lacks the fit start date");
    }
    run_in_dir("predict", common, cfg, {states_path.string()}, json{{"predict", cfg.mcmc.seed}},
               [&](const fs::path& dir) {
                   Rng rng = Rng(cfg.mcmc.seed).split(kPredictStream);
                   const auto p = posterior_predict(states, cfg.predict_horizon, cfg.tau, cfg.profile,
                                                    TimeVaryingDelay(cfg.kernel), rng, cfg.quantiles);
                   write_predictive(dir / "predictive.csv", series, p);
                   Outputs o;
                   o.files = {"predictive.csv"};
                   o.extra = {{"fit_dir", fs::absolute(fit_dir).lexically_normal().string()},
                              {"horizon", cfg.predict_horizon}};
                   return o;
               });
    return 0;
}

// ---- sequential ----

struct SequentialArgs {
    std::string input;
    std::optional<int> window;
    std::optional<int> blend_span;
    bool smooth_full = false;
};

int cmd_sequential(const Common& common, const SequentialArgs& a) {
    auto user = user_config(common);
    if (common.seed)
        user["mcmc"]["seed"] = *common.seed;
    if (a.window)
        user["sequential"]["window"] = *a.window;
    if (a.blend_span)
        user["sequential"]["blend_span"] = *a.blend_span;
    if (a.smooth_full)
        user["sequential"]["smooth_full"] = true;
    const auto cfg = load_config(user);
    const auto series = read_case_csv(a.input);
    const int threads = resolve_threads(common.threads);
    run_in_dir("sequential", common, cfg, {a.input}, json{{"mcmc", cfg.mcmc.seed}}, [&](const fs::path& dir) {
        RollingConfig rc;
        rc.window_len = cfg.window;
        rc.blend_span = cfg.blend_span;
        rc.smooth_full = cfg.smooth_full;
        rc.smoothing = cfg.smoothing_for(cfg.smooth_full ? series.counts.size() : static_cast<std::size_t>(cfg.window));
        rc.sigma = cfg.sigma;
        rc.tau = cfg.tau;
        rc.mcmc = cfg.mcmc;
        rc.mcmc.threads = threads;
        rc.probs = cfg.quantiles;
        const auto n_windows = series.T() - cfg.window + 1;
        const auto res = rolling_fit(series.counts, cfg.profile, TimeVaryingDelay(cfg.kernel), rc,
                                     [&](const WindowRecord& r) {
                                         std::cerr << "window " << r.window_end - cfg.window + 1 << "/" << n_windows
                                                   << " ending " << format_date(series.date_of(r.window_end))
                                                   << (r.ok ? " ok" : " FAILED: " + r.error) << "\n";
                                     });
        const auto& h = res.history;
        if (h.empty())
            throw NumericalError("sequential: every window failed");
        for (const auto& [name, q] : {std::pair{"history_R.csv", &h.R}, std::pair{"history_I.csv", &h.I}}) {
            auto head = quantile_header("date", h.probs);
            head.push_back("source_window_end");
            CsvTable t(head);
            for (Day d = q->first(); d <= q->last(); ++d) {
                std::vector<std::string> row{format_date(series.date_of(d))};
                for (double x : (*q)[d])
                    row.push_back(format_number(x));
                row.push_back(format_date(series.date_of(h.source[d])));
                t.add_row(std::move(row));
            }
            write_file_atomic(dir / name, t.str());
        }
        json windows = json::array();
        json seconds = json::array();
        for (const auto& r : res.windows) {
            windows.push_back({{"window_end", format_date(series.date_of(r.window_end))},
                               {"window_start", format_date(series.date_of(r.window_end - cfg.window + 1))},
                               {"ok", r.ok},
                               {"error", r.error},
                               {"lambda0_source", r.lambda0_source},
                               {"chain_telemetry", telemetry_json(r.telemetry)},
                               {"warnings", r.warnings}});
            seconds.push_back(r.seconds);
        }
        write_file_atomic(dir / "windows.json", windows.dump(2) + "\n");
        Outputs o;
        o.files = {"history_R.csv", "history_I.csv", "windows.json"};
        o.extra = {{"start_date", format_date(series.start)}, {"T", series.T()}, {"windows", res.windows.size()}};
        o.timing["window_seconds"] = seconds;
        o.timing["threads"] = threads;
        return o;
    });
    return 0;
}

// ---- simulate ----

int cmd_simulate(const Common& common, std::optional<int> T) {
    auto user = user_config(common);
    if (common.seed)
        user["mcmc"]["seed"] = *common.seed;
    if (T)
        user["simulate"]["T"] = *T;
    const auto cfg = load_config(user);
    const auto& sim = cfg.simulate;
    const int km = cfg.kernel.max_lag();
    const int kw = cfg.profile.horizon();
    run_in_dir("simulate", common, cfg, {}, json{{"simulate", cfg.mcmc.seed}}, [&](const fs::path& dir) {
        const auto truth = sim.truth_R ? OffsetVector<double>(1 - km, *sim.truth_R) : default_truth_R(sim.T, km);
        Rng rng(cfg.mcmc.seed);
        std::vector<long long> init(static_cast<std::size_t>(kw));
        for (auto& x : init)
            x = rng.poisson(sim.lambda0);
        const TimeVaryingDelay delay(cfg.kernel);
        const auto path = simulate_path(truth, init, cfg.profile, delay, rng);
        CaseSeries series;
        series.start = parse_date(sim.start_date);
        for (long long d : path.detections_between(1, sim.T))
            series.counts.push_back(static_cast<double>(d));
        write_case_csv(dir / "cases.csv", series);

        CsvTable t({"date", "R", "I", "D"});
        const double na = std::numeric_limits<double>::quiet_NaN();
        for (Day s = 1 - km - kw; s <= sim.T; ++s) {
            const double r = truth.contains(s) ? truth[s] : na;
            const double i = path.infections.contains(s) ? static_cast<double>(path.infections[s]) : na;
            const double d = s >= 1 ? series.counts[static_cast<std::size_t>(s - 1)] : na;
            t.add_row({format_date(series.date_of(s)), format_number(r), format_number(i), format_number(d)});
        }
        write_file_atomic(dir / "simulated.csv", t.str());
        Outputs o;
        o.files = {"cases.csv", "simulated.csv"};
        o.extra = {{"start_date", sim.start_date}, {"T", sim.T}};
        return o;
    });
    return 0;
}

// ---- evaluate ----

int cmd_evaluate(const Common& common, std::optional<int> replicates) {
    auto user = user_config(common);
    if (common.seed)
        user["mcmc"]["seed"] = *common.seed;
    if (replicates)
        user["experiment"]["n_replicates"] = *replicates;
    const auto cfg = load_config(user);
    const int threads = resolve_threads(common.threads);
    run_in_dir("evaluate", common, cfg, {}, json{{"experiment", cfg.experiment.seed}}, [&](const fs::path& dir) {
        ExperimentConfig ec = cfg.experiment;
        ec.threads = threads;
        const auto res = run_experiment(ec);
        const auto& tab = res.metrics;

        CsvTable m({"method", "variable", "metric", "day", "value"});
        for (const auto& r : tab.rows)
            m.add_row({r.method, r.variable, r.metric, r.day ? std::to_string(*r.day) : "all", format_number(r.value)});
        write_file_atomic(dir / "metrics.csv", m.str());

        CsvTable s({"method", "description", "rmse_R", "interval_score_R", "coverage_R", "interior_coverage_R",
                    "rmse_I", "interval_score_I", "coverage_I", "interior_coverage_I", "n_effective", "window_first",
                    "window_last"});
        std::vector<std::string> names;
        for (const auto& spec : ec.methods)
            for (const auto& n : spec.names())
                names.push_back(n);
        for (const auto& n : names) {
            const std::string desc = n == "baseline"   ? "simplified two-step baseline (EM + sliding-window ratio)"
                                     : n == "mcmc"     ? "joint MCMC posterior median and 95% interval"
                                                       : "rolling-window MCMC, window ending " + n.substr(11) +
                                                         " days after the estimated day";
            std::vector<std::string> row{n, desc};
            for (const char* var : {"R", "I"})
                for (const char* metric : {"rmse", "interval_score", "coverage", "interior_coverage"})
                    row.push_back(format_number(tab.summary(n, var, metric)));
            row.push_back(std::to_string(tab.n_effective));
            row.push_back(std::to_string(tab.window_first));
            row.push_back(std::to_string(tab.window_last));
            s.add_row(std::move(row));
        }
        write_file_atomic(dir / "metrics_summary.csv", s.str());
        std::vector<std::string> files{"metrics.csv", "metrics_summary.csv"};

        fs::create_directories(dir / "replicates");
        const auto truth = ec.truth_R.empty() ? default_truth_R(ec.T, ec.kernel.max_lag()) : ec.truth_R;
        for (const auto& rep : res.replicates) {
            if (!rep.ok)
                continue;
            CsvTable t({"method", "day", "truth_R", "R_point", "R_lower", "R_upper", "truth_I", "I_point", "I_lower",
                        "I_upper"});
            for (const auto& e : rep.estimates)
                for (Day d = truth.first(); d <= truth.last(); ++d)
                    t.add_row({e.method, std::to_string(d), format_number(truth[d]), format_number(e.R_point[d]),
                               format_number(e.R_lower[d]), format_number(e.R_upper[d]),
                               format_number(rep.truth_I[d]), format_number(e.I_point[d]),
                               format_number(e.I_lower[d]), format_number(e.I_upper[d])});
            std::ostringstream name;
            name << "replicates/replicate_" << std::setfill('0') << std::setw(3) << rep.replicate << ".csv";
            write_file_atomic(dir / name.str(), t.str());
            files.push_back(name.str());
        }
        for (const auto& line : res.log)
            std::cerr << line << "\n";
        Outputs o;
        o.files = files;
        o.extra = {{"n_effective", tab.n_effective}, {"log", res.log}};
        o.timing["threads"] = threads;
        return o;
    });
    return 0;
}

void add_common(CLI::App* sub, Common& c, bool config, bool seed, bool threads, bool output) {
    if (config)
        sub->add_option("--config", c.config_path, "JSON configuration (see config/schema.json)")
            ->check(CLI::ExistingFile);
    if (seed)
        sub->add_option("--seed", c.seed, "Random seed (overrides /mcmc/seed)");
    if (threads)
        sub->add_option("--threads", c.threads,
                        "Worker threads for chains or replicates (default: RENEWAL_MCMC_THREADS, else all cores)")
            ->check(CLI::PositiveNumber);
    if (output)
        sub->add_option("--output-dir", c.output_dir, "Directory for outputs and manifest.json")->required();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Joint Bayesian estimation of daily infections and effective reproduction numbers"};
    app.set_version_flag("--version", RENEWAL_VERSION);
    app.require_subcommand(1);

    DistributionsArgs dist;
    auto* d = app.add_subcommand("distributions", "Print the discretized infectivity profile and delay tables as CSV");
    d->add_option("--profile-mean", dist.profile_mean, "Infectivity Gamma mean")->check(CLI::PositiveNumber);
    d->add_option("--profile-sd", dist.profile_sd, "Infectivity Gamma standard deviation")->check(CLI::PositiveNumber);
    d->add_option("--profile-k-max", dist.profile_k, "Infectivity horizon K_w")->check(CLI::PositiveNumber);
    d->add_option("--delay-mean1", dist.mean1, "Mean of the first delay component")->check(CLI::PositiveNumber);
    d->add_option("--delay-sd1", dist.sd1, "Standard deviation of the first delay component")
        ->check(CLI::PositiveNumber);
    d->add_option("--delay-mean2", dist.mean2, "Mean of the second delay component")->check(CLI::PositiveNumber);
    d->add_option("--delay-sd2", dist.sd2, "Standard deviation of the second delay component")
        ->check(CLI::PositiveNumber);
    d->add_option("--delay-k-max", dist.delay_k, "Delay horizon K_m")->check(CLI::PositiveNumber);
    d->add_option("--k-max", dist.k_max, "Horizon for every emitted table")->check(CLI::PositiveNumber);
    d->add_option("--table", dist.table, "Which table to emit")->check(CLI::IsMember({"profile", "delay", "both"}));
    d->add_option("--output", dist.output, "Write to this file instead of stdout");

    Common pre_c;
    PreprocessArgs pre;
    auto* p = app.add_subcommand("preprocess", "Remove the weekday pattern with a robust seasonal-trend decomposition");
    p->add_option("--input", pre.input, "CSV with header date,count")->required()->check(CLI::ExistingFile);
    add_common(p, pre_c, true, false, false, true);
    p->add_option("--trend-window", pre.trend_window, "Trend loess span (odd, >= 7)");
    p->add_option("--seasonal", pre.seasonal, "'auto', 'periodic' or a weekday-subseries loess span");
    p->add_flag("--robust,!--no-robust", pre.robust, "Robustness iterations against outliers (default on)");
    p->add_option("--zero-offset", pre.zero_offset, "Decompose log(D + c) so zero counts are allowed")
        ->check(CLI::PositiveNumber);

    Common dec_c;
    std::string dec_input;
    bool dec_smooth = false;
    auto* dc = app.add_subcommand("deconvolve", "EM deconvolution of detections into infections");
    dc->add_option("--input", dec_input, "CSV with header date,count")->required()->check(CLI::ExistingFile);
    dc->add_flag("--smooth", dec_smooth, "Remove the weekday pattern before deconvolving");
    add_common(dc, dec_c, true, false, false, true);

    Common fit_c;
    FitArgs fit;
    auto* f = app.add_subcommand("fit", "Sample the joint posterior of infections and reproduction numbers");
    f->add_option("--input", fit.input, "CSV with header date,count")->required()->check(CLI::ExistingFile);
    f->add_flag("--no-smooth", fit.no_smooth, "Use the counts as given instead of the weekday-smoothed series");
    f->add_flag("--write-samples", fit.write_samples, "Also write every retained draw to samples.bin");
    add_common(f, fit_c, true, true, true, true);

    Common pred_c;
    std::string pred_fit_dir;
    std::optional<int> pred_horizon;
    auto* pr = app.add_subcommand("predict", "Posterior predictive quantiles from a finished fit");
    pr->add_option("--fit-dir", pred_fit_dir, "Output directory of a fit run")->required()->check(CLI::ExistingDirectory);
    pr->add_option("--horizon", pred_horizon, "Days to predict (default /predict/horizon)")->check(CLI::PositiveNumber);
    add_common(pr, pred_c, false, true, false, true);

    Common seq_c;
    SequentialArgs seq;
    auto* sq = app.add_subcommand("sequential", "Rolling-window fits stitched into one history");
    sq->add_option("--input", seq.input, "CSV with header date,count")->required()->check(CLI::ExistingFile);
    sq->add_option("--window", seq.window, "Window length in days (default /sequential/window)")
        ->check(CLI::Range(2, 100000));
    sq->add_option("--blend-span", seq.blend_span, "Days blended at each stitch boundary")
        ->check(CLI::NonNegativeNumber);
    sq->add_flag("--smooth-full", seq.smooth_full, "Smooth the whole series once instead of per window");
    add_common(sq, seq_c, true, true, true, true);

    Common sim_c;
    std::optional<int> sim_T;
    auto* sm = app.add_subcommand("simulate", "Simulate infections and detections from a reproduction-number path");
    sm->add_option("--T", sim_T, "Observation days (default /simulate/T)")->check(CLI::PositiveNumber);
    add_common(sm, sim_c, true, true, false, true);

    Common ev_c;
    std::optional<int> ev_reps;
    auto* ev = app.add_subcommand("evaluate", "Simulation experiment comparing estimators");
    ev->add_option("--replicates", ev_reps, "Number of simulated series (default /experiment/n_replicates)")
        ->check(CLI::PositiveNumber);
    add_common(ev, ev_c, true, true, true, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*d)
            return cmd_distributions(dist);
        if (*p)
            return cmd_preprocess(pre_c, pre);
        if (*dc)
            return cmd_deconvolve(dec_c, dec_input, dec_smooth);
        if (*f)
            return cmd_fit(fit_c, fit);
        if (*pr)
            return cmd_predict(pred_c, pred_fit_dir, pred_horizon);
        if (*sq)
            return cmd_sequential(seq_c, seq);
        if (*sm)
            return cmd_simulate(sim_c, sim_T);
        if (*ev)
            return cmd_evaluate(ev_c, ev_reps);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 2;
}
