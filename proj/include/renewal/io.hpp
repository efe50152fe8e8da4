#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "renewal/epidemic_model.hpp"
#include "renewal/mcmc.hpp"
#include "renewal/offset_vector.hpp"

namespace renewal {

using Date = std::chrono::sys_days;

// ISO-8601 calendar date (YYYY-MM-DD). Throws DataError on anything else.
Date parse_date(std::string_view text);
std::string format_date(Date d);
// Monday = 0 ... Sunday = 6.
int weekday_index(Date d);

// Daily counts; counts[0] is observation day t = 1 on `start`.
struct CaseSeries {
    Date start{};
    std::vector<double> counts;

    int T() const noexcept { return static_cast<int>(counts.size()); }
    Date date_of(Day t) const { return start + std::chrono::days(t - 1); }
    Day day_of(Date d) const { return static_cast<Day>((d - start).count()) + 1; }
};

// Header `date,count`, one row per consecutive day. Malformed rows are reported
// with their line number, gaps with the list of missing dates.
CaseSeries parse_case_csv(std::istream& in, const std::string& source);
CaseSeries read_case_csv(const std::filesystem::path& path);
void write_case_csv(const std::filesystem::path& path, const CaseSeries& series);

// Shortest text that reads back to the same double; NaN as "NA".
std::string format_number(double x);

class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header);
    void add_row(std::vector<std::string> cells);
    std::string str() const;

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

// Writes to a sibling temporary file, then renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

// "q0.025", "q0.5", ...
std::string quantile_column(double p);

// samples.bin, little-endian:
//   char[4] "RNMC", u32 version (1), u32 T, u32 K_m, u32 K_w, u64 n_draws,
//   then n_draws rows of f64 L over (1-K_m)..(T-1),
//   then n_draws rows of i64 I over (1-K_m-K_w)..(T-1).
void write_samples(const std::filesystem::path& path, const PosteriorSamples& samples);
PosteriorSamples read_samples(const std::filesystem::path& path);

// final_states.bin, little-endian:
//   char[4] "RNFS", u32 version (1), u32 K_m, u32 K_w, i64 t, u64 n_states,
//   then per state: f64 L_{t-1}, K_w x i64 infections, K_m x i64 allocations,
//   (K_m - 1) x i64 undetected.
void write_final_states(const std::filesystem::path& path, std::span<const EpidemicState> states, int K_m, int K_w);
std::vector<EpidemicState> read_final_states(const std::filesystem::path& path);

struct FileDigest {
    std::string path;
    std::string sha256;
};

struct RunManifest {
    std::string command;
    nlohmann::json config;
    nlohmann::json seeds;
    std::vector<FileDigest> inputs;
    std::vector<FileDigest> outputs;
    std::string version;
    nlohmann::json timing;
    nlohmann::json extra; // command-specific facts later commands rely on

    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
};

// Digests every file in `outputs` (relative to dir), then writes dir/manifest.json atomically.
void write_manifest(const std::filesystem::path& dir, RunManifest manifest, const std::vector<std::string>& outputs);
RunManifest read_manifest(const std::filesystem::path& dir);

} // namespace renewal
