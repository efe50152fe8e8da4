#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "renewal/deconvolution.hpp"
#include "renewal/distributions.hpp"
#include "renewal/evaluation.hpp"
#include "renewal/mcmc.hpp"
#include "renewal/preprocess.hpp"

namespace renewal {

// The schema shipped as config/schema.json.
const nlohmann::json& config_schema();

// Checks `doc` against a JSON Schema (draft-07 subset: type, enum, properties,
// required, additionalProperties, items, min/maxItems, (exclusive)minimum/maximum,
// oneOf, anyOf). Throws ConfigError naming the JSON pointer of the first violation.
void validate_against_schema(const nlohmann::json& doc, const nlohmann::json& schema);

struct SimulateSettings {
    int T = 63;
    double lambda0 = 100.0;
    std::optional<std::vector<double>> truth_R; // (1-K_m)..(T-1); default_truth_R when absent
    std::string start_date = "2020-03-02";
};

struct RunConfig {
    InfectivityProfile profile = InfectivityProfile::standard();
    DelayKernel kernel = DelayKernel::standard();
    SmoothingOptions smoothing;
    bool seasonal_auto = true; // weekday-subseries window 7 above 42 days, periodic otherwise
    double sigma = 1.5;
    double tau = 0.025;
    std::optional<std::vector<double>> lambda0; // K_w prior means; EM-derived when absent
    McmcConfig mcmc;
    std::vector<double> quantiles{0.025, 0.5, 0.975};
    int predict_horizon = 7;
    DeconvolutionConfig deconvolution;
    int window = 42;
    int blend_span = 3;
    bool smooth_full = false;
    SimulateSettings simulate;
    ExperimentConfig experiment;

    nlohmann::json resolved; // the full configuration with every default filled in

    // Smoothing options for a series of n days.
    SmoothingOptions smoothing_for(std::size_t n) const;
};

nlohmann::json default_config_json();

// Validates against the schema, fills defaults, then checks cross-field
// constraints (also reported by JSON pointer).
RunConfig load_config(const nlohmann::json& user);
RunConfig load_config_file(const std::filesystem::path& path);

} // namespace renewal
