#include "bae/csv.hpp"
#include "bae/errors.hpp"
#include "bae/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <optional>

namespace bae::harness {

namespace {

double quantile_sorted(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct Metric {
    const char* name;
    double TrialRow::*field;
};

constexpr Metric kMetrics[] = {
    {"x_st", &TrialRow::x_st},
    {"x_bae", &TrialRow::x_bae},
    {"x_alt", &TrialRow::x_alt},
    {"dx_bae", &TrialRow::dx_bae},
    {"dx_alt", &TrialRow::dx_alt},
    {"err_cg", &TrialRow::err_cg},
    {"err_cg_iter", &TrialRow::err_cg_iter},
    {"err_gp", &TrialRow::err_gp},
    {"err_map", &TrialRow::err_map},
    {"err_alt", &TrialRow::err_alt},
};

constexpr Metric kSigmaEstimates[] = {
    {"cg", &TrialRow::sigma_cg},
    {"cg_iter", &TrialRow::sigma_cg_iter},
    {"gp", &TrialRow::sigma_gp},
    {"map_a2", &TrialRow::sigma_map},
    {"alt", &TrialRow::sigma_alt},
};

constexpr Metric kHistogramMetrics[] = {
    {"x_st", &TrialRow::x_st},
    {"x_bae", &TrialRow::x_bae},
    {"x_alt", &TrialRow::x_alt},
};

// Distinct values of one row coordinate in first-seen order.
std::vector<double> levels(const std::vector<TrialRow>& rows, double TrialRow::*field) {
    std::vector<double> out;
    for (const TrialRow& r : rows) {
        if (std::find(out.begin(), out.end(), r.*field) == out.end()) out.push_back(r.*field);
    }
    return out;
}

// Group key: a level value, or nullopt for "all".
using Level = std::optional<double>;

std::vector<Level> with_all(const std::vector<double>& values) {
    std::vector<Level> out(values.begin(), values.end());
    out.push_back(std::nullopt);
    return out;
}

std::string level_text(const Level& level) { return level ? csv::format(*level) : "all"; }

bool matches(const TrialRow& r, const Level& sigma, const Level& amplitude, const Level& snr) {
    return (!sigma || r.sigma_true == *sigma) && (!amplitude || r.amplitude == *amplitude) &&
           (!snr || r.snr_db == *snr);
}

std::vector<double> collect(const std::vector<TrialRow>& rows, double TrialRow::*field,
                            const std::function<bool(const TrialRow&)>& keep) {
    std::vector<double> out;
    for (const TrialRow& r : rows) {
        if (r.error.empty() && keep(r) && std::isfinite(r.*field)) out.push_back(r.*field);
    }
    return out;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.close();
    if (!out) throw IoError("failed writing " + path.string());
}

// Column order of trials.csv. Readers and writers both go through this table.
struct Column {
    const char* name;
    std::function<std::string(const TrialRow&)> write;
    std::function<void(TrialRow&, const std::string&)> read;
};

template <class T>
Column numeric(const char* name, T TrialRow::*field) {
    if constexpr (std::is_floating_point_v<T>) {
        return {name, [field](const TrialRow& r) { return csv::format(r.*field); },
                [field](TrialRow& r, const std::string& s) { r.*field = csv::parse_double(s); }};
    } else {
        return {name, [field](const TrialRow& r) { return std::to_string(r.*field); },
                [field](TrialRow& r, const std::string& s) { r.*field = static_cast<T>(csv::parse_long(s)); }};
    }
}

Column text(const char* name, std::string TrialRow::*field) {
    return {name, [field](const TrialRow& r) { return r.*field; },
            [field](TrialRow& r, const std::string& s) { r.*field = s; }};
}

const std::vector<Column>& columns() {
    static const std::vector<Column> cols = {
        numeric("trial", &TrialRow::trial),
        numeric("location", &TrialRow::location),
        numeric("x", &TrialRow::x),
        numeric("y", &TrialRow::y),
        numeric("sigma_true", &TrialRow::sigma_true),
        numeric("amplitude", &TrialRow::amplitude),
        numeric("snr_db", &TrialRow::snr_db),
        numeric("realization", &TrialRow::realization),
        numeric("noise_scale", &TrialRow::noise_scale),
        numeric("std_location", &TrialRow::std_location),
        numeric("bae_location", &TrialRow::bae_location),
        numeric("alt_location", &TrialRow::alt_location),
        numeric("x_st_mm", &TrialRow::x_st),
        numeric("x_bae_mm", &TrialRow::x_bae),
        numeric("x_alt_mm", &TrialRow::x_alt),
        numeric("dx_bae_mm", &TrialRow::dx_bae),
        numeric("dx_alt_mm", &TrialRow::dx_alt),
        numeric("alpha", &TrialRow::alpha),
        numeric("sigma_cg", &TrialRow::sigma_cg),
        numeric("sigma_cg_iter", &TrialRow::sigma_cg_iter),
        numeric("sigma_gp", &TrialRow::sigma_gp),
        numeric("sigma_map", &TrialRow::sigma_map),
        numeric("sigma_alt", &TrialRow::sigma_alt),
        numeric("err_cg_pct", &TrialRow::err_cg),
        numeric("err_cg_iter_pct", &TrialRow::err_cg_iter),
        numeric("err_gp_pct", &TrialRow::err_gp),
        numeric("err_map_pct", &TrialRow::err_map),
        numeric("err_alt_pct", &TrialRow::err_alt),
        numeric("cg_iter_converged", &TrialRow::cg_iter_converged),
        numeric("alt_converged", &TrialRow::alt_converged),
        numeric("gp_variance", &TrialRow::gp_variance),
        text("notes", &TrialRow::notes),
        text("error", &TrialRow::error),
    };
    return cols;
}

}  // namespace

BoxStats box_stats(std::vector<double> values) {
    std::erase_if(values, [](double v) { return !std::isfinite(v); });
    if (values.empty()) throw DataError("box statistics of an empty sample");
    std::sort(values.begin(), values.end());
    BoxStats s;
    s.count = values.size();
    s.min = values.front();
    s.max = values.back();
    s.q1 = quantile_sorted(values, 0.25);
    s.median = quantile_sorted(values, 0.5);
    s.q3 = quantile_sorted(values, 0.75);
    const double iqr = s.q3 - s.q1;
    const double lo = s.q1 - 1.5 * iqr;
    const double hi = s.q3 + 1.5 * iqr;
    s.whisker_low = *std::find_if(values.begin(), values.end(), [lo](double v) { return v >= lo; });
    s.whisker_high = *std::find_if(values.rbegin(), values.rend(), [hi](double v) { return v <= hi; });
    return s;
}

double fraction_above(const std::vector<double>& values, double threshold) {
    std::size_t finite = 0;
    std::size_t above = 0;
    for (double v : values) {
        if (!std::isfinite(v)) continue;
        ++finite;
        if (v > threshold) ++above;
    }
    return finite == 0 ? 0.0 : static_cast<double>(above) / static_cast<double>(finite);
}

std::vector<SummaryRow> aggregate(const ExperimentReport& report) {
    if (report.rows.empty()) throw DataError("cannot aggregate an empty report");
    const auto sigmas = with_all(levels(report.rows, &TrialRow::sigma_true));
    const auto amplitudes = with_all(levels(report.rows, &TrialRow::amplitude));
    const auto snrs = with_all(levels(report.rows, &TrialRow::snr_db));
    std::vector<SummaryRow> out;
    for (const Level& s : sigmas) {
        for (const Level& a : amplitudes) {
            for (const Level& n : snrs) {
                for (const Metric& metric : kMetrics) {
                    const auto values = collect(report.rows, metric.field,
                                                [&](const TrialRow& r) { return matches(r, s, a, n); });
                    if (values.empty()) continue;
                    SummaryRow row;
                    row.sigma_true = level_text(s);
                    row.amplitude = level_text(a);
                    row.snr_db = level_text(n);
                    row.metric = metric.name;
                    row.stats = box_stats(values);
                    row.fraction_positive = fraction_above(values, 0.0);
                    for (double t : report.thresholds_mm) row.fraction_above.push_back(fraction_above(values, t));
                    out.push_back(std::move(row));
                }
            }
        }
    }
    return out;
}

std::string trials_csv(const ExperimentReport& report) {
    const auto& cols = columns();
    std::vector<std::string> fields;
    for (const Column& c : cols) fields.emplace_back(c.name);
    std::string out = csv::record(fields);
    for (const TrialRow& r : report.rows) {
        fields.clear();
        for (const Column& c : cols) fields.push_back(c.write(r));
        out += csv::record(fields);
    }
    return out;
}

std::vector<TrialRow> parse_trials_csv(const std::string& content) {
    const auto records = csv::parse(content);
    if (records.empty()) throw DataError("trials CSV has no header");
    const auto& cols = columns();
    const auto& header = records.front();
    if (header.size() != cols.size()) throw DataError("trials CSV header has the wrong number of columns");
    for (std::size_t i = 0; i < cols.size(); ++i) {
        if (header[i] != cols[i].name) throw DataError("unexpected trials CSV column '" + header[i] + "'");
    }
    std::vector<TrialRow> rows;
    for (std::size_t k = 1; k < records.size(); ++k) {
        const auto& rec = records[k];
        if (rec.size() == 1 && rec[0].empty()) continue;
        if (rec.size() != cols.size()) {
            throw DataError("trials CSV record " + std::to_string(k) + " has " + std::to_string(rec.size()) +
                            " fields");
        }
        TrialRow row;
        for (std::size_t i = 0; i < cols.size(); ++i) cols[i].read(row, rec[i]);
        rows.push_back(std::move(row));
    }
    return rows;
}

void emit_report(const ExperimentReport& report, const std::filesystem::path& dir, bool overwrite) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (fs::exists(dir, ec)) {
        if (!fs::is_directory(dir, ec)) throw IoError(dir.string() + " exists and is not a directory");
        if (!fs::is_empty(dir, ec) && !overwrite) {
            throw IoError(dir.string() + " is not empty; pass overwrite to reuse it");
        }
    } else if (!fs::create_directories(dir, ec)) {
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
    }

    write_file(dir / "trials.csv", trials_csv(report));

    {
        std::vector<std::string> head{"sigma_true", "amplitude", "snr_db", "metric", "count", "median", "q1",
                                      "q3",         "min",       "max",    "whisker_low", "whisker_high",
                                      "fraction_positive"};
        for (double t : report.thresholds_mm) head.push_back("fraction_above_" + csv::format(t));
        std::string out = csv::record(head);
        if (!report.rows.empty()) {
            for (const SummaryRow& r : aggregate(report)) {
                std::vector<std::string> f{r.sigma_true,
                                           r.amplitude,
                                           r.snr_db,
                                           r.metric,
                                           std::to_string(r.stats.count),
                                           csv::format(r.stats.median),
                                           csv::format(r.stats.q1),
                                           csv::format(r.stats.q3),
                                           csv::format(r.stats.min),
                                           csv::format(r.stats.max),
                                           csv::format(r.stats.whisker_low),
                                           csv::format(r.stats.whisker_high),
                                           csv::format(r.fraction_positive)};
                for (double v : r.fraction_above) f.push_back(csv::format(v));
                out += csv::record(f);
            }
        }
        write_file(dir / "summary.csv", out);
    }

    const auto sigmas = levels(report.rows, &TrialRow::sigma_true);
    const auto amplitudes = levels(report.rows, &TrialRow::amplitude);
    const auto snrs = levels(report.rows, &TrialRow::snr_db);

    // Localization-error histograms: 1 mm bins over [0, 30] with an
    // overflow bin, one line per (sigma_true, amplitude, snr) group.
    {
        constexpr int kBins = 30;
        std::string out = csv::record({"sigma_true", "amplitude", "snr_db", "metric", "bin_low_mm", "bin_high_mm",
                                       "count"});
        for (double s : sigmas) {
            for (double a : amplitudes) {
                for (double n : snrs) {
                    for (const Metric& metric : kHistogramMetrics) {
                        const auto values = collect(report.rows, metric.field, [&](const TrialRow& r) {
                            return matches(r, s, a, n);
                        });
                        if (values.empty()) continue;
                        std::vector<std::size_t> counts(kBins + 2, 0);  // underflow, bins, overflow
                        for (double v : values) {
                            if (v < 0.0) {
                                ++counts[0];
                            } else if (v >= kBins) {
                                ++counts[kBins + 1];
                            } else {
                                ++counts[1 + static_cast<std::size_t>(std::floor(v))];
                            }
                        }
                        for (int b = 0; b < kBins + 2; ++b) {
                            const double lo = b == 0 ? -HUGE_VAL : static_cast<double>(b - 1);
                            const double hi = b == kBins + 1 ? HUGE_VAL : static_cast<double>(b == 0 ? 0 : b);
                            out += csv::record({csv::format(s), csv::format(a), csv::format(n), metric.name,
                                                csv::format(lo), csv::format(hi), std::to_string(counts[b])});
                        }
                    }
                }
            }
        }
        write_file(dir / "histogram.csv", out);
    }

    // Box-plot data of the conductivity estimates per method and amplitude.
    {
        std::string out = csv::record({"sigma_true", "amplitude", "snr_db", "method", "count", "median", "q1", "q3",
                                       "whisker_low", "whisker_high", "min", "max"});
        for (double s : sigmas) {
            for (double a : amplitudes) {
                for (double n : snrs) {
                    for (const Metric& method : kSigmaEstimates) {
                        const auto values = collect(report.rows, method.field, [&](const TrialRow& r) {
                            return matches(r, s, a, n);
                        });
                        if (values.empty()) continue;
                        const BoxStats b = box_stats(values);
                        out += csv::record({csv::format(s), csv::format(a), csv::format(n), method.name,
                                            std::to_string(b.count), csv::format(b.median), csv::format(b.q1),
                                            csv::format(b.q3), csv::format(b.whisker_low),
                                            csv::format(b.whisker_high), csv::format(b.min), csv::format(b.max)});
                    }
                }
            }
        }
        write_file(dir / "boxplot.csv", out);
    }
}

}  // namespace bae::harness
