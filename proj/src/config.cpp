#include "renewal/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "renewal/errors.hpp"
#include "renewal/io.hpp"
#include "renewal/schema_text.hpp"

namespace renewal {

using nlohmann::json;

namespace {

std::string child(const std::string& pointer, const std::string& key) {
    std::string escaped;
    for (char c : key) {
        if (c == '~')
            escaped += "~0";
        else if (c == '/')
            escaped += "~1";
        else
            escaped += c;
    }
    return pointer + "/" + escaped;
}

std::string where(const std::string& pointer) { return pointer.empty() ? "/" : pointer; }

bool has_type(const json& v, const std::string& type) {
    if (type == "object")
        return v.is_object();
    if (type == "array")
        return v.is_array();
    if (type == "string")
        return v.is_string();
    if (type == "boolean")
        return v.is_boolean();
    if (type == "null")
        return v.is_null();
    if (type == "integer")
        return v.is_number_integer();
    if (type == "number")
        return v.is_number();
    return false;
}

// Returns an empty string when `v` conforms, else "pointer: message".
std::string check(const json& v, const json& schema, const std::string& pointer) {
    if (schema.contains("type")) {
        const auto& t = schema["type"];
        bool ok = false;
        if (t.is_string())
            ok = has_type(v, t.get<std::string>());
        else
            for (const auto& alt : t)
                ok = ok || has_type(v, alt.get<std::string>());
        if (!ok)
            return where(pointer) + ": expected " + (t.is_string() ? t.get<std::string>() : t.dump()) + ", got " +
                   v.type_name();
    }
    if (schema.contains("enum")) {
        bool found = false;
        for (const auto& e : schema["enum"])
            found = found || e == v;
        if (!found)
            return where(pointer) + ": must be one of " + schema["enum"].dump();
    }
    if (v.is_number()) {
        const double x = v.get<double>();
        auto fmt = [](const json& bound) { return bound.dump(); };
        if (schema.contains("minimum") && x < schema["minimum"].get<double>())
            return where(pointer) + ": must be >= " + fmt(schema["minimum"]);
        if (schema.contains("maximum") && x > schema["maximum"].get<double>())
            return where(pointer) + ": must be <= " + fmt(schema["maximum"]);
        if (schema.contains("exclusiveMinimum") && x <= schema["exclusiveMinimum"].get<double>())
            return where(pointer) + ": must be > " + fmt(schema["exclusiveMinimum"]);
        if (schema.contains("exclusiveMaximum") && x >= schema["exclusiveMaximum"].get<double>())
            return where(pointer) + ": must be < " + fmt(schema["exclusiveMaximum"]);
    }
    if (v.is_object()) {
        if (schema.contains("required"))
            for (const auto& key : schema["required"])
                if (!v.contains(key.get<std::string>()))
                    return child(pointer, key.get<std::string>()) + ": required property missing";
        const json* props = schema.contains("properties") ? &schema["properties"] : nullptr;
        for (const auto& [key, value] : v.items()) {
            if (props && props->contains(key)) {
                auto err = check(value, (*props)[key], child(pointer, key));
                if (!err.empty())
                    return err;
            } else if (schema.contains("additionalProperties") && schema["additionalProperties"] == false) {
                return child(pointer, key) + ": unknown property";
            }
        }
    }
    if (v.is_array()) {
        if (schema.contains("minItems") && v.size() < schema["minItems"].get<std::size_t>())
            return where(pointer) + ": needs at least " + schema["minItems"].dump() + " items";
        if (schema.contains("maxItems") && v.size() > schema["maxItems"].get<std::size_t>())
            return where(pointer) + ": allows at most " + schema["maxItems"].dump() + " items";
        if (schema.contains("items"))
            for (std::size_t i = 0; i < v.size(); ++i) {
                auto err = check(v[i], schema["items"], pointer + "/" + std::to_string(i));
                if (!err.empty())
                    return err;
            }
    }
    for (const char* kw : {"oneOf", "anyOf"}) {
        if (!schema.contains(kw))
            continue;
        std::vector<std::string> errors;
        int matched = 0;
        for (const auto& alt : schema[kw]) {
            auto err = check(v, alt, pointer);
            if (err.empty())
                ++matched;
            else
                errors.push_back(err);
        }
        if (matched == 0) {
            std::string msg = where(pointer) + ": matches none of the allowed forms (";
            for (std::size_t i = 0; i < errors.size(); ++i)
                msg += (i ? "; " : "") + errors[i];
            return msg + ")";
        }
        if (std::string(kw) == "oneOf" && matched > 1)
            return where(pointer) + ": matches more than one allowed form";
    }
    return {};
}

// Objects merge key by key; anything else in `user` replaces the default.
// Profile and delay are alternatives, so they are replaced whole.
void merge(json& base, const json& user, bool top) {
    for (const auto& [key, value] : user.items()) {
        const bool whole = top && (key == "profile" || key == "delay");
        if (!whole && value.is_object() && base.contains(key) && base[key].is_object())
            merge(base[key], value, false);
        else
            base[key] = value;
    }
}

[[noreturn]] void fail(const std::string& pointer, const std::string& message) {
    throw ConfigError("config " + pointer + ": " + message);
}

std::vector<double> numbers(const json& a) { return a.get<std::vector<double>>(); }

} // namespace

const json& config_schema() {
    static const json schema = json::parse(kConfigSchemaText);
    return schema;
}

void validate_against_schema(const json& doc, const json& schema) {
    const auto err = check(doc, schema, "");
    if (!err.empty())
        throw ConfigError("config " + err);
}

json default_config_json() {
    return {
        {"profile", {{"mean", 4.8}, {"sd", 2.3}, {"k_max", 12}}},
        {"delay", {{"mean1", 5.3}, {"sd1", 3.2}, {"mean2", 5.5}, {"sd2", 3.8}, {"k_max", 28}}},
        {"smoothing", {{"trend_window", 15}, {"seasonal", "auto"}, {"robust", true}}},
        {"prior", {{"sigma", 1.5}, {"tau", 0.025}}},
        {"mcmc", {{"iters", 20000}, {"burn_in", 5000}, {"thin", 10}, {"chains", 2}, {"seed", 1}}},
        {"quantiles", {0.025, 0.5, 0.975}},
        {"predict", {{"horizon", 7}}},
        {"deconvolution",
         {{"max_iters", 10000},
          {"stopping", "chi_squared"},
          {"fixed_iters", 10},
          {"threshold", 0.0},
          {"start", "shifted_constant"},
          {"shift", 10}}},
        {"sequential", {{"window", 42}, {"blend_span", 3}, {"smooth_full", false}}},
        {"simulate", {{"T", 63}, {"lambda0", 100.0}, {"start_date", "2020-03-02"}}},
        {"experiment",
         {{"n_replicates", 20},
          {"T", 63},
          {"lambda0", 100.0},
          {"methods", {"mcmc", "baseline"}},
          {"alpha", 0.95},
          {"convention", "half_level"},
          {"window", 42},
          {"baseline", {{"window_r", 4}, {"n_boot", 100}, {"block", 7}}}}},
    };
}

RunConfig load_config(const json& user) {
    if (!user.is_object())
        fail("/", "expected a JSON object");
    validate_against_schema(user, config_schema());
    json r = default_config_json();
    merge(r, user, true);
    validate_against_schema(r, config_schema());

    RunConfig c;
    c.resolved = r;
    try {
        const auto& p = r["profile"];
        c.profile = p.contains("weights") ? InfectivityProfile(numbers(p["weights"]))
                                          : InfectivityProfile(discretize_gamma(p["mean"].get<double>(),
                                                                                p["sd"].get<double>(),
                                                                                p["k_max"].get<int>()));
    } catch (const ParameterError& e) {
        fail("/profile", e.what());
    }
    try {
        const auto& d = r["delay"];
        c.kernel = d.contains("probs")
                       ? DelayKernel(numbers(d["probs"]), d.value("nondetect", 0.0))
                       : convolve_gamma_delay(d["mean1"].get<double>(), d["sd1"].get<double>(),
                                              d["mean2"].get<double>(), d["sd2"].get<double>(), d["k_max"].get<int>());
    } catch (const ParameterError& e) {
        fail("/delay", e.what());
    }
    const int km = c.kernel.max_lag();
    const int kw = c.profile.horizon();

    const auto& s = r["smoothing"];
    c.smoothing.trend_window = s["trend_window"].get<int>();
    if (c.smoothing.trend_window % 2 == 0)
        fail("/smoothing/trend_window", "must be odd");
    c.seasonal_auto = s["seasonal"] == "auto";
    c.smoothing.seasonal = s["seasonal"].is_string() ? SeasonalMode::make_periodic()
                                                     : SeasonalMode::make_window(s["seasonal"].get<int>());
    c.smoothing.robust = s["robust"].get<bool>();
    if (s.contains("zero_offset"))
        c.smoothing.zero_offset = s["zero_offset"].get<double>();

    const auto& pr = r["prior"];
    c.sigma = pr["sigma"].get<double>();
    c.tau = pr["tau"].get<double>();
    if (pr.contains("lambda0")) {
        c.lambda0 = numbers(pr["lambda0"]);
        if (c.lambda0->size() != static_cast<std::size_t>(kw))
            fail("/prior/lambda0", "needs one entry per infectivity lag (" + std::to_string(kw) + ")");
    }

    const auto& m = r["mcmc"];
    c.mcmc.iters = m["iters"].get<int>();
    c.mcmc.burn_in = m["burn_in"].get<int>();
    c.mcmc.thin = m["thin"].get<int>();
    c.mcmc.n_chains = m["chains"].get<int>();
    c.mcmc.seed = m["seed"].get<std::uint64_t>();
    if (c.mcmc.burn_in >= c.mcmc.iters)
        fail("/mcmc/burn_in", "must be less than /mcmc/iters");
    if (c.mcmc.iters - c.mcmc.burn_in < c.mcmc.thin)
        fail("/mcmc/thin", "no draw would be retained after burn-in");

    c.quantiles = numbers(r["quantiles"]);
    for (std::size_t i = 1; i < c.quantiles.size(); ++i)
        if (c.quantiles[i] <= c.quantiles[i - 1])
            fail("/quantiles/" + std::to_string(i), "quantile levels must be strictly increasing");
    c.predict_horizon = r["predict"]["horizon"].get<int>();

    const auto& dc = r["deconvolution"];
    c.deconvolution.max_iters = dc["max_iters"].get<int>();
    c.deconvolution.stopping =
        dc["stopping"] == "fixed" ? StoppingRule::fixed_iters : StoppingRule::chi_squared_below;
    c.deconvolution.fixed_iters = dc["fixed_iters"].get<int>();
    c.deconvolution.chi_squared_threshold = dc["threshold"].get<double>();
    c.deconvolution.start = dc["start"] == "shifted_linear" ? StartKind::shifted_linear : StartKind::shifted_constant;
    c.deconvolution.shift = dc["shift"].get<int>();

    const auto& sq = r["sequential"];
    c.window = sq["window"].get<int>();
    c.blend_span = sq["blend_span"].get<int>();
    c.smooth_full = sq["smooth_full"].get<bool>();

    const auto& sim = r["simulate"];
    c.simulate.T = sim["T"].get<int>();
    c.simulate.lambda0 = sim["lambda0"].get<double>();
    c.simulate.start_date = sim["start_date"].get<std::string>();
    try {
        (void)parse_date(c.simulate.start_date);
    } catch (const DataError& e) {
        fail("/simulate/start_date", e.what());
    }
    if (sim.contains("truth_R")) {
        c.simulate.truth_R = numbers(sim["truth_R"]);
        const auto want = static_cast<std::size_t>(c.simulate.T + km - 1);
        if (c.simulate.truth_R->size() != want)
            fail("/simulate/truth_R", "needs T + K_m - 1 = " + std::to_string(want) + " entries");
    }

    const auto& ex = r["experiment"];
    auto& e = c.experiment;
    e.n_replicates = ex["n_replicates"].get<int>();
    e.T = ex["T"].get<int>();
    e.lambda0 = ex["lambda0"].get<double>();
    if (ex.contains("truth_R")) {
        const auto v = numbers(ex["truth_R"]);
        if (v.size() != static_cast<std::size_t>(e.T + km - 1))
            fail("/experiment/truth_R", "needs T + K_m - 1 = " + std::to_string(e.T + km - 1) + " entries");
        e.truth_R = OffsetVector<double>(1 - km, v);
    }
    e.methods.clear();
    for (const auto& mj : ex["methods"]) {
        if (mj.is_string())
            e.methods.push_back({mj == "mcmc" ? MethodSpec::Kind::mcmc : MethodSpec::Kind::baseline, {}});
        else
            e.methods.push_back({MethodSpec::Kind::sequential, mj["sequential"].get<std::vector<int>>()});
    }
    e.seed = c.mcmc.seed;
    e.profile = c.profile;
    e.kernel = c.kernel;
    e.smoothing = c.smoothing_for(static_cast<std::size_t>(e.T));
    e.sigma = c.sigma;
    e.tau = c.tau;
    e.mcmc = c.mcmc;
    e.baseline.window_r = ex["baseline"]["window_r"].get<int>();
    e.baseline.n_boot = ex["baseline"]["n_boot"].get<int>();
    e.baseline.block = ex["baseline"]["block"].get<int>();
    e.baseline.em = c.deconvolution;
    e.window_len = ex["window"].get<int>();
    e.window_smoothing = c.smoothing_for(static_cast<std::size_t>(e.window_len));
    e.alpha = ex["alpha"].get<double>();
    e.convention = ex["convention"] == "standard" ? ScoreConvention::standard : ScoreConvention::half_level;
    try {
        e.validate();
    } catch (const Error& err) {
        fail("/experiment", err.what());
    }
    return c;
}

SmoothingOptions RunConfig::smoothing_for(std::size_t n) const {
    SmoothingOptions o = smoothing;
    if (seasonal_auto)
        o.seasonal = n > 42 ? SeasonalMode::make_window(7) : SeasonalMode::make_periodic();
    return o;
}

RunConfig load_config_file(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": invalid JSON: " + e.what());
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    return load_config(j);
}

} // namespace renewal
