// SPDX-License-Identifier: Apache-2.0
//
// OHLCV ingestion, 5-step weekly framing, sliding-window sample
// construction, train-only min-max scaling with symmetric headroom, and
// seeded synthetic series for desk-scale experiments.
//
// A "week" is any 5 consecutive records; the feed's calendar alignment is
// deliberately not interpreted. Trailing partial weeks are dropped with a
// warning, never silently.

#pragma once

#include <array>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>

#include "granite/train.hpp"

namespace granite {

constexpr std::size_t kWeekLen = 5;
constexpr const char* kCsvHeader = "timestamp,open,high,low,close,volume";
constexpr std::size_t kFeatureCount = 5;

inline const char* feature_name(std::size_t f) {
    constexpr const char* names[] = {"open", "high", "low", "close", "volume"};
    return f < 5 ? names[f] : "?";
}

struct OhlcvRecord {
    std::string timestamp;  // ISO-8601, lexicographically ordered
    double open = 0.0, high = 0.0, low = 0.0, close = 0.0, volume = 0.0;
};

inline double field(const OhlcvRecord& r, std::size_t f) {
    switch (f) {
        case 0: return r.open;
        case 1: return r.high;
        case 2: return r.low;
        case 3: return r.close;
        case 4: return r.volume;
    }
    throw ConfigError("feature index " + std::to_string(f) + " out of range");
}

// ---------------------------------------------------------------------------
// CSV

struct LoadResult {
    std::vector<OhlcvRecord> records;
    std::vector<std::string> warnings;
};

namespace detail {

inline double parse_number(std::string_view text, std::size_t line, const char* column) {
    double value = 0.0;
    const char* begin = text.data();
    const char* end = begin + text.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end || text.empty()) {
        throw DataError("line " + std::to_string(line) + ": non-numeric " + column + " '" +
                        std::string(text) + "'");
    }
    return value;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return out;
}

}  // namespace detail

/// Strict CSV reader: exact header, six numeric-or-timestamp fields per row,
/// timestamps in order. Price-band violations (low/high inconsistent) are
/// warnings, not errors; real feeds contain them.
inline LoadResult load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    LoadResult res;
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw DataError("'" + path + "' is empty");
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kCsvHeader) {
        throw DataError("line 1: header must be '" + std::string(kCsvHeader) + "', got '" + line +
                        "'");
    }
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = detail::split_fields(line);
        if (fields.size() != 6) {
            throw DataError("line " + std::to_string(lineno) + ": expected 6 columns, got " +
                            std::to_string(fields.size()));
        }
        OhlcvRecord r;
        r.timestamp = std::string(fields[0]);
        if (r.timestamp.empty()) {
            throw DataError("line " + std::to_string(lineno) + ": empty timestamp");
        }
        r.open = detail::parse_number(fields[1], lineno, "open");
        r.high = detail::parse_number(fields[2], lineno, "high");
        r.low = detail::parse_number(fields[3], lineno, "low");
        r.close = detail::parse_number(fields[4], lineno, "close");
        r.volume = detail::parse_number(fields[5], lineno, "volume");
        for (std::size_t f = 0; f < 4; ++f) {
            if (field(r, f) <= 0.0) {
                throw DataError("line " + std::to_string(lineno) + ": non-positive " +
                                feature_name(f));
            }
        }
        if (r.volume < 0.0) {
            throw DataError("line " + std::to_string(lineno) + ": negative volume");
        }
        if (!res.records.empty() && r.timestamp < res.records.back().timestamp) {
            throw DataError("line " + std::to_string(lineno) + ": timestamp '" + r.timestamp +
                            "' out of order after '" + res.records.back().timestamp + "'");
        }
        if (r.low > std::min(r.open, r.close) || r.high < std::max(r.open, r.close)) {
            res.warnings.push_back("line " + std::to_string(lineno) +
                                   ": low/high band does not contain open/close");
        }
        res.records.push_back(std::move(r));
    }
    return res;
}

inline void write_csv(const std::string& path, const std::vector<OhlcvRecord>& records) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << kCsvHeader << '\n';
    char buf[256];
    for (const OhlcvRecord& r : records) {
        std::snprintf(buf, sizeof buf, "%s,%.10g,%.10g,%.10g,%.10g,%.10g", r.timestamp.c_str(),
                      r.open, r.high, r.low, r.close, r.volume);
        out << buf << '\n';
    }
    if (!out) throw DataError("write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// weekly framing

/// Consecutive non-overlapping groups of 5 records; the trailing remainder
/// is dropped and reported through *warning.
inline std::vector<std::vector<OhlcvRecord>> partition_weeks(const std::vector<OhlcvRecord>& records,
                                                             std::string* warning = nullptr) {
    if (records.size() < kWeekLen) {
        throw DataError("need at least " + std::to_string(kWeekLen) + " records, got " +
                        std::to_string(records.size()));
    }
    const std::size_t weeks = records.size() / kWeekLen;
    const std::size_t dropped = records.size() - weeks * kWeekLen;
    if (warning) {
        *warning = dropped == 0 ? std::string()
                                : "dropped " + std::to_string(dropped) + " trailing records short of a week";
    }
    std::vector<std::vector<OhlcvRecord>> out(weeks);
    for (std::size_t w = 0; w < weeks; ++w) {
        out[w].assign(records.begin() + static_cast<std::ptrdiff_t>(w * kWeekLen),
                      records.begin() + static_cast<std::ptrdiff_t>((w + 1) * kWeekLen));
    }
    return out;
}

// ---------------------------------------------------------------------------
// scaling

/// Per-feature min-max scaling fitted on training rows only, with 5%
/// symmetric headroom so mildly out-of-range test values stay inside (0,1).
struct MinMaxScaler {
    struct Range {
        double lo = 0.0, hi = 1.0;
    };
    std::array<Range, kFeatureCount> ranges;

    static MinMaxScaler fit(const std::vector<OhlcvRecord>& records, std::size_t row_count,
                            double headroom = 0.05) {
        if (row_count == 0 || row_count > records.size()) {
            throw DataError("scaler fit: invalid training row count " + std::to_string(row_count));
        }
        MinMaxScaler s;
        for (std::size_t f = 0; f < kFeatureCount; ++f) {
            double mn = field(records[0], f), mx = mn;
            for (std::size_t i = 1; i < row_count; ++i) {
                mn = std::min(mn, field(records[i], f));
                mx = std::max(mx, field(records[i], f));
            }
            if (mn == mx) {
                throw DataError("scaler fit: feature '" + std::string(feature_name(f)) +
                                "' is constant over the training rows");
            }
            const double span = mx - mn;
            s.ranges[f] = {mn - headroom * span, mx + headroom * span};
        }
        return s;
    }

    double apply(double v, std::size_t f) const {
        const Range& r = ranges.at(f);
        return (v - r.lo) / (r.hi - r.lo);
    }
    double invert(double v, std::size_t f) const {
        const Range& r = ranges.at(f);
        return v * (r.hi - r.lo) + r.lo;
    }
};

// ---------------------------------------------------------------------------
// dataset

struct SeriesDataset {
    std::vector<OhlcvRecord> records;
    std::size_t num_weeks = 0;   // complete weeks
    std::size_t split_week = 0;  // first test week
    MinMaxScaler scaler;
    std::vector<std::string> warnings;

    const OhlcvRecord& at(std::size_t week, std::size_t day) const {
        return records.at(week * kWeekLen + day);
    }
};

/// Partitions records into weeks and fits the scaler on the training rows
/// (weeks before split_week) only.
inline SeriesDataset make_dataset(std::vector<OhlcvRecord> records, std::size_t split_week) {
    SeriesDataset ds;
    std::string warning;
    const auto weeks = partition_weeks(records, &warning);
    if (!warning.empty()) ds.warnings.push_back(warning);
    ds.num_weeks = weeks.size();
    if (split_week < 1 || split_week >= ds.num_weeks) {
        throw ConfigError("split week " + std::to_string(split_week) + " must lie in [1, " +
                          std::to_string(ds.num_weeks) + ")");
    }
    ds.split_week = split_week;
    ds.records = std::move(records);
    ds.scaler = MinMaxScaler::fit(ds.records, split_week * kWeekLen);
    return ds;
}

// ---------------------------------------------------------------------------
// windowing

struct WindowedSamples {
    Tensor X;  // [N, 5*lookback, C], scaled
    Tensor y;  // [N, 5], next week's open values, scaled
    std::vector<std::size_t> week_index;  // target week per sample

    Samples samples() const { return {X, y}; }
};

/// Sliding windows with a stride of one week. X carries the open column
/// (C=1) or all five features (C=5); y is the following week's 5 opens.
/// Samples whose target week lies in [first_target, last_target) are kept.
inline WindowedSamples make_windows(const SeriesDataset& ds, std::size_t lookback_weeks,
                                    bool multivariate, std::size_t first_target,
                                    std::size_t last_target) {
    if (lookback_weeks < 1) throw ConfigError("lookback must be >= 1 week");
    first_target = std::max(first_target, lookback_weeks);
    last_target = std::min(last_target, ds.num_weeks);
    if (first_target >= last_target) {
        throw DataError("insufficient history: no windows with lookback " +
                        std::to_string(lookback_weeks) + " in range");
    }
    const std::size_t n = last_target - first_target;
    const std::size_t t_len = lookback_weeks * kWeekLen;
    const std::size_t c = multivariate ? kFeatureCount : 1;
    WindowedSamples out;
    out.X = Tensor({n, t_len, c});
    out.y = Tensor({n, kWeekLen});
    for (std::size_t s = 0; s < n; ++s) {
        const std::size_t target = first_target + s;
        out.week_index.push_back(target);
        const std::size_t base = (target - lookback_weeks) * kWeekLen;
        for (std::size_t t = 0; t < t_len; ++t) {
            for (std::size_t f = 0; f < c; ++f) {
                out.X.at(s, t, f) = ds.scaler.apply(field(ds.records[base + t], f), f);
            }
        }
        for (std::size_t d = 0; d < kWeekLen; ++d) {
            out.y.at(s, d) = ds.scaler.apply(ds.at(target, d).open, 0);
        }
    }
    return out;
}

/// Windows over the full dataset.
inline WindowedSamples make_windows(const SeriesDataset& ds, std::size_t lookback_weeks,
                                    bool multivariate) {
    return make_windows(ds, lookback_weeks, multivariate, lookback_weeks, ds.num_weeks);
}

// ---------------------------------------------------------------------------
// synthetic series

enum class SynthKind { Sine, RandomWalk, LinearTrend };

inline const char* to_string(SynthKind k) {
    switch (k) {
        case SynthKind::Sine: return "sine";
        case SynthKind::RandomWalk: return "random_walk";
        case SynthKind::LinearTrend: return "linear_trend";
    }
    return "?";
}

inline std::optional<SynthKind> parse_synth_kind(const std::string& name) {
    for (SynthKind k : {SynthKind::Sine, SynthKind::RandomWalk, SynthKind::LinearTrend}) {
        if (name == to_string(k)) return k;
    }
    return std::nullopt;
}

struct SynthParams {
    double amplitude = 10.0;  // sine
    double offset = 100.0;    // sine level
    double period = 50.0;     // sine period in steps
    double start = 100.0;     // random walk / linear trend start price
    double drift = 0.0;       // random walk per-step drift
    double sigma = 1.0;       // random walk per-step stddev
    double slope = 0.1;       // linear trend per-step increment
};

namespace detail {

inline std::string day_stamp(std::size_t i) {
    using namespace std::chrono;
    const sys_days base = sys_days(year{2020} / January / 6);
    const year_month_day ymd(base + days(static_cast<int>(i)));
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

}  // namespace detail

/// Deterministic synthetic OHLCV series. Prices stay positive; volume varies
/// so the scaler never sees a constant feature.
inline std::vector<OhlcvRecord> synth_series(SynthKind kind, std::size_t n, std::uint64_t seed,
                                             const SynthParams& p = {}) {
    if (n < kWeekLen) throw ConfigError("synthetic series needs n >= 5");
    std::mt19937_64 rng(mix_seed(seed, 99));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<OhlcvRecord> out;
    out.reserve(n);

    switch (kind) {
        case SynthKind::Sine: {
            if (p.amplitude <= 0.0 || p.offset - p.amplitude <= 0.0) {
                throw ConfigError("sine: need amplitude > 0 and offset - amplitude > 0, got A=" +
                                  std::to_string(p.amplitude) + " B=" + std::to_string(p.offset));
            }
            if (p.period <= 0.0) throw ConfigError("sine: period must be > 0");
            const double two_pi = 2.0 * 3.14159265358979323846;
            auto level = [&](double t) { return p.amplitude * std::sin(two_pi * t / p.period) + p.offset; };
            for (std::size_t i = 0; i < n; ++i) {
                OhlcvRecord r;
                r.timestamp = detail::day_stamp(i);
                r.open = level(static_cast<double>(i));
                r.close = level(static_cast<double>(i) + 0.5);
                const double spread = 0.005 * p.amplitude * (0.5 + u(rng));
                r.high = std::max(r.open, r.close) + spread;
                r.low = std::max(std::min(r.open, r.close) - spread, 1e-9);
                r.volume = 1e5 * (0.5 + u(rng));
                out.push_back(std::move(r));
            }
            break;
        }
        case SynthKind::RandomWalk: {
            if (p.start <= 0.0) throw ConfigError("random_walk: start price must be > 0");
            if (p.sigma < 0.0) throw ConfigError("random_walk: sigma must be >= 0");
            double level = p.start;
            for (std::size_t i = 0; i < n; ++i) {
                OhlcvRecord r;
                r.timestamp = detail::day_stamp(i);
                r.open = level;
                r.close = std::max(level + 0.5 * p.sigma * gauss(rng), 1e-9);
                const double wick = std::abs(0.25 * p.sigma * gauss(rng)) + 1e-12;
                r.high = std::max(r.open, r.close) + wick;
                r.low = std::max(std::min(r.open, r.close) - wick, 1e-9);
                r.volume = 1e5 * (0.5 + u(rng));
                out.push_back(std::move(r));
                level = std::max(level + p.drift + p.sigma * gauss(rng), 1e-9);
            }
            break;
        }
        case SynthKind::LinearTrend: {
            const double last = p.start + p.slope * static_cast<double>(n - 1);
            if (p.start <= 0.0 || last <= 0.0) {
                throw ConfigError("linear_trend: prices must stay positive (start " +
                                  std::to_string(p.start) + ", final " + std::to_string(last) + ")");
            }
            for (std::size_t i = 0; i < n; ++i) {
                OhlcvRecord r;
                r.timestamp = detail::day_stamp(i);
                r.open = p.start + p.slope * static_cast<double>(i);
                r.close = p.start + p.slope * (static_cast<double>(i) + 0.5);
                const double spread = std::abs(p.slope) * 0.25 + 1e-6;
                r.high = std::max(r.open, r.close) + spread;
                r.low = std::max(std::min(r.open, r.close) - spread, 1e-9);
                r.volume = 1e5 + 1e3 * static_cast<double>(i % 7);
                out.push_back(std::move(r));
            }
            break;
        }
    }
    return out;
}

}  // namespace granite
