#include "renewal/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "renewal/errors.hpp"

namespace renewal {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"'))
        s.remove_suffix(1);
    return s;
}

template <class T>
bool parse_whole(std::string_view s, T& out) {
    const auto* end = s.data() + s.size();
    const auto r = std::from_chars(s.data(), end, out);
    return r.ec == std::errc{} && r.ptr == end;
}

std::string at_line(const std::string& source, std::size_t line) {
    std::ostringstream os;
    os << source << ":" << line << ": ";
    return os.str();
}

// Little-endian binary helpers.
template <class T>
void put(std::string& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(bytes, bytes + sizeof(T));
    out.append(bytes, sizeof(T));
}

class Reader {
public:
    Reader(std::string data, std::string source) : data_(std::move(data)), source_(std::move(source)) {}

    template <class T>
    T get() {
        if (pos_ + sizeof(T) > data_.size())
            throw DataError(source_ + ": truncated binary file");
        char bytes[sizeof(T)];
        std::memcpy(bytes, data_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big)
            std::reverse(bytes, bytes + sizeof(T));
        pos_ += sizeof(T);
        T v;
        std::memcpy(&v, bytes, sizeof(T));
        return v;
    }
    void expect_magic(std::string_view magic) {
        if (data_.size() < magic.size() || std::string_view(data_).substr(0, magic.size()) != magic)
            throw DataError(source_ + ": not a " + std::string(magic) + " file");
        pos_ = magic.size();
    }
    void expect_end() const {
        if (pos_ != data_.size())
            throw DataError(source_ + ": trailing bytes in binary file");
    }

private:
    std::string data_;
    std::string source_;
    std::size_t pos_ = 0;
};

} // namespace

Date parse_date(std::string_view text) {
    int y = 0;
    unsigned m = 0, d = 0;
    const bool shape = text.size() == 10 && text[4] == '-' && text[7] == '-';
    if (!shape || !parse_whole(text.substr(0, 4), y) || !parse_whole(text.substr(5, 2), m) ||
        !parse_whole(text.substr(8, 2), d))
        throw DataError("invalid date '" + std::string(text) + "' (expected YYYY-MM-DD)");
    const std::chrono::year_month_day ymd{std::chrono::year(y), std::chrono::month(m), std::chrono::day(d)};
    if (!ymd.ok())
        throw DataError("invalid calendar date '" + std::string(text) + "'");
    return Date(ymd);
}

std::string format_date(Date d) {
    const std::chrono::year_month_day ymd(d);
    std::ostringstream os;
    os << std::setfill('0') << std::setw(4) << static_cast<int>(ymd.year()) << '-' << std::setw(2)
       << static_cast<unsigned>(ymd.month()) << '-' << std::setw(2) << static_cast<unsigned>(ymd.day());
    return os.str();
}

int weekday_index(Date d) { return static_cast<int>(std::chrono::weekday(d).iso_encoding()) - 1; }

CaseSeries parse_case_csv(std::istream& in, const std::string& source) {
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    std::vector<std::pair<Date, std::size_t>> dates;
    CaseSeries out;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view row = line;
        if (lineno == 1 && row.substr(0, 3) == "\xEF\xBB\xBF")
            row.remove_prefix(3);
        if (trim(row).empty())
            continue;
        const auto comma = row.find(',');
        if (comma == std::string_view::npos || row.find(',', comma + 1) != std::string_view::npos)
            throw DataError(at_line(source, lineno) + "expected two comma-separated fields");
        const auto a = trim(row.substr(0, comma));
        const auto b = trim(row.substr(comma + 1));
        if (!header) {
            if (a != "date" || b != "count")
                throw DataError(at_line(source, lineno) + "header must be 'date,count'");
            header = true;
            continue;
        }
        Date d;
        try {
            d = parse_date(a);
        } catch (const DataError& e) {
            throw DataError(at_line(source, lineno) + e.what());
        }
        double c = 0.0;
        if (!parse_whole(b, c) || !std::isfinite(c) || c < 0.0)
            throw DataError(at_line(source, lineno) + "count '" + std::string(b) +
                            "' is not a finite non-negative number");
        if (!dates.empty() && d <= dates.back().first)
            throw DataError(at_line(source, lineno) + "date " + format_date(d) + " is not after " +
                            format_date(dates.back().first) + " (line " + std::to_string(dates.back().second) +
                            ")");
        dates.emplace_back(d, lineno);
        out.counts.push_back(c);
    }
    if (!header)
        throw DataError(source + ": empty file (expected header 'date,count')");
    if (dates.empty())
        throw DataError(source + ": no data rows");

    std::vector<Date> missing;
    for (std::size_t i = 1; i < dates.size(); ++i)
        for (Date d = dates[i - 1].first + std::chrono::days(1); d < dates[i].first; d += std::chrono::days(1))
            missing.push_back(d);
    if (!missing.empty()) {
        std::ostringstream os;
        os << source << ": " << missing.size() << " missing date" << (missing.size() == 1 ? "" : "s") << ":";
        const std::size_t shown = std::min<std::size_t>(missing.size(), 50);
        for (std::size_t i = 0; i < shown; ++i)
            os << ' ' << format_date(missing[i]);
        if (shown < missing.size())
            os << " ... (" << missing.size() - shown << " more)";
        throw DataError(os.str());
    }
    out.start = dates.front().first;
    return out;
}

CaseSeries read_case_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open " + path.string());
    return parse_case_csv(in, path.string());
}

void write_case_csv(const std::filesystem::path& path, const CaseSeries& series) {
    CsvTable t({"date", "count"});
    for (Day i = 1; i <= series.T(); ++i)
        t.add_row({format_date(series.date_of(i)), format_number(series.counts[static_cast<std::size_t>(i - 1)])});
    write_file_atomic(path, t.str());
}

std::string format_number(double x) {
    if (std::isnan(x))
        return "NA";
    if (std::isinf(x))
        return x > 0 ? "Inf" : "-Inf";
    if (x == 0.0)
        return "0";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, r.ptr);
}

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

void CsvTable::add_row(std::vector<std::string> cells) {
    if (cells.size() != header_.size())
        throw DimensionError("csv row has " + std::to_string(cells.size()) + " cells, header has " +
                             std::to_string(header_.size()));
    rows_.push_back(std::move(cells));
}

std::string CsvTable::str() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i > 0)
                out += ',';
            out += cells[i];
        }
        out += '\n';
    };
    line(header_);
    for (const auto& r : rows_)
        line(r);
    return out;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw DataError("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out)
            throw DataError("write failed: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec)
        throw DataError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::string sha256_hex(std::string_view bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw NumericalError("sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

std::string quantile_column(double p) { return "q" + format_number(p); }

void write_samples(const std::filesystem::path& path, const PosteriorSamples& samples) {
    std::string out = "RNMC";
    put<std::uint32_t>(out, 1);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(samples.T));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(samples.K_m));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(samples.K_w));
    put<std::uint64_t>(out, samples.size());
    for (const auto& l : samples.L)
        for (double x : l)
            put<double>(out, x);
    for (const auto& i : samples.I)
        for (long long x : i)
            put<std::int64_t>(out, x);
    write_file_atomic(path, out);
}

PosteriorSamples read_samples(const std::filesystem::path& path) {
    Reader r(read_file(path), path.string());
    r.expect_magic("RNMC");
    if (r.get<std::uint32_t>() != 1)
        throw DataError(path.string() + ": unsupported samples version");
    PosteriorSamples s;
    s.T = static_cast<int>(r.get<std::uint32_t>());
    s.K_m = static_cast<int>(r.get<std::uint32_t>());
    s.K_w = static_cast<int>(r.get<std::uint32_t>());
    const auto n = r.get<std::uint64_t>();
    const auto nl = static_cast<std::size_t>(s.T + s.K_m - 1);
    const auto ni = nl + static_cast<std::size_t>(s.K_w);
    for (std::uint64_t d = 0; d < n; ++d) {
        OffsetVector<double> l(1 - s.K_m, nl);
        for (auto& x : l)
            x = r.get<double>();
        s.L.push_back(std::move(l));
    }
    for (std::uint64_t d = 0; d < n; ++d) {
        OffsetVector<long long> i(1 - s.K_m - s.K_w, ni);
        for (auto& x : i)
            x = r.get<std::int64_t>();
        s.I.push_back(std::move(i));
    }
    r.expect_end();
    s.chain.assign(s.L.size(), 0);
    return s;
}

void write_final_states(const std::filesystem::path& path, std::span<const EpidemicState> states, int K_m, int K_w) {
    std::string out = "RNFS";
    put<std::uint32_t>(out, 1);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(K_m));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(K_w));
    put<std::int64_t>(out, states.empty() ? 0 : states.front().t);
    put<std::uint64_t>(out, states.size());
    for (const auto& s : states) {
        if (s.infections.size() != static_cast<std::size_t>(K_w) || s.allocations.size() != static_cast<std::size_t>(K_m) ||
            s.undetected.size() != static_cast<std::size_t>(K_m - 1))
            throw DimensionError("final state does not match K_m/K_w");
        put<double>(out, s.log_r_prev);
        for (long long x : s.infections)
            put<std::int64_t>(out, x);
        for (long long x : s.allocations)
            put<std::int64_t>(out, x);
        for (long long x : s.undetected)
            put<std::int64_t>(out, x);
    }
    write_file_atomic(path, out);
}

std::vector<EpidemicState> read_final_states(const std::filesystem::path& path) {
    Reader r(read_file(path), path.string());
    r.expect_magic("RNFS");
    if (r.get<std::uint32_t>() != 1)
        throw DataError(path.string() + ": unsupported final-state version");
    const auto km = r.get<std::uint32_t>();
    const auto kw = r.get<std::uint32_t>();
    const auto t = r.get<std::int64_t>();
    const auto n = r.get<std::uint64_t>();
    std::vector<EpidemicState> out;
    for (std::uint64_t i = 0; i < n; ++i) {
        EpidemicState s;
        s.t = static_cast<Day>(t);
        s.log_r_prev = r.get<double>();
        s.infections.resize(kw);
        for (auto& x : s.infections)
            x = r.get<std::int64_t>();
        s.allocations.resize(km);
        for (auto& x : s.allocations)
            x = r.get<std::int64_t>();
        s.undetected.resize(km - 1);
        for (auto& x : s.undetected)
            x = r.get<std::int64_t>();
        out.push_back(std::move(s));
    }
    r.expect_end();
    return out;
}

nlohmann::json RunManifest::to_json() const {
    auto digests = [](const std::vector<FileDigest>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& d : v)
            a.push_back({{"path", d.path}, {"sha256", d.sha256}});
        return a;
    };
    return {{"command", command}, {"config", config},     {"seeds", seeds},   {"inputs", digests(inputs)},
            {"outputs", digests(outputs)}, {"version", version}, {"timing", timing}, {"extra", extra}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
    RunManifest m;
    try {
        m.command = j.at("command").get<std::string>();
        m.config = j.at("config");
        m.seeds = j.value("seeds", nlohmann::json::object());
        for (const auto& d : j.at("inputs"))
            m.inputs.push_back({d.at("path").get<std::string>(), d.at("sha256").get<std::string>()});
        for (const auto& d : j.at("outputs"))
            m.outputs.push_back({d.at("path").get<std::string>(), d.at("sha256").get<std::string>()});
        m.version = j.value("version", "");
        m.timing = j.value("timing", nlohmann::json::object());
        m.extra = j.value("extra", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed manifest: ") + e.what());
    }
    return m;
}

void write_manifest(const std::filesystem::path& dir, RunManifest manifest, const std::vector<std::string>& outputs) {
    manifest.outputs.clear();
    for (const auto& name : outputs)
        manifest.outputs.push_back({name, sha256_file(dir / name)});
    write_file_atomic(dir / "manifest.json", manifest.to_json().dump(2) + "\n");
}

RunManifest read_manifest(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return RunManifest::from_json(j);
}

} // namespace renewal
