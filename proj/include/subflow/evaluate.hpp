#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "subflow/errors.hpp"
#include "subflow/io.hpp"
#include "subflow/parallel.hpp"
#include "subflow/rng.hpp"
#include "subflow/surrogate.hpp"
#include "subflow/training.hpp"

namespace subflow {

struct EvalRow {
    std::uint64_t seed = 0;
    double extraction_rate = 0.0;   ///< [m^3/s]
    double critical_pressure = 0.0; ///< [Pa]
    bool ok = true;
};

struct EvalSummary {
    int samples = 0;
    int failures = 0;
    double rate_mean = 0.0;
    double rate_median = 0.0;
    double rate_p90 = 0.0;          ///< nearest-rank 90th percentile
    double pressure_rmse = 0.0;     ///< vs the target pressure [Pa]
    double fraction_within = 0.0;   ///< |pressure - target| <= threshold
    double target_pressure = 0.0;
    double pressure_threshold = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    EvalSummary summary;
};

/// Statistics over the successful rows; recomputable from the CSV.
inline EvalSummary summarize_rows(const std::vector<EvalRow>& rows, double target_pressure,
                                  double pressure_threshold) {
    EvalSummary s;
    s.samples = static_cast<int>(rows.size());
    s.target_pressure = target_pressure;
    s.pressure_threshold = pressure_threshold;

    std::vector<double> rates;
    rates.reserve(rows.size());
    double sq_sum = 0.0;
    int within = 0;
    for (const auto& row : rows) {
        if (!row.ok) {
            ++s.failures;
            continue;
        }
        rates.push_back(row.extraction_rate);
        const double err = row.critical_pressure - target_pressure;
        sq_sum += err * err;
        if (std::abs(err) <= pressure_threshold) {
            ++within;
        }
    }
    const int n_ok = static_cast<int>(rates.size());
    if (n_ok == 0) {
        return s;
    }
    std::sort(rates.begin(), rates.end());
    double sum = 0.0;
    for (double r : rates) {
        sum += r;
    }
    s.rate_mean = sum / n_ok;
    s.rate_median = n_ok % 2 == 1 ? rates[static_cast<std::size_t>(n_ok / 2)]
                                  : 0.5 * (rates[static_cast<std::size_t>(n_ok / 2 - 1)] +
                                           rates[static_cast<std::size_t>(n_ok / 2)]);
    const int p90_rank = static_cast<int>(std::ceil(0.9 * n_ok));
    s.rate_p90 = rates[static_cast<std::size_t>(std::max(p90_rank - 1, 0))];
    s.pressure_rmse = std::sqrt(sq_sum / n_ok);
    s.fraction_within = static_cast<double>(within) / n_ok;
    return s;
}

/// Push n freshly sampled fields through the surrogate and the simulator.
/// Field seeds come from the evaluation stream, disjoint from training and
/// validation. Per-sample simulator failures are recorded, not fatal.
inline EvalReport evaluate_ensemble(const RateSurrogate& surrogate, const FieldSampler& sampler,
                                    PressureResponse& physics, int n_samples,
                                    std::uint64_t master_seed, double target_pressure,
                                    double pressure_threshold, int threads) {
    if (n_samples < 1) {
        throw std::invalid_argument("evaluate_ensemble: n_samples must be >= 1");
    }
    EvalReport report;
    report.rows.assign(static_cast<std::size_t>(n_samples), EvalRow{});
    parallel_for(n_samples, threads, [&](int i) {
        EvalRow& row = report.rows[static_cast<std::size_t>(i)];
        row.seed = derive_seed(master_seed, SeedStream::evaluation, static_cast<std::uint64_t>(i));
        try {
            const PermeabilityField field = sampler.sample(row.seed);
            row.extraction_rate = surrogate.predict_rate(field);
            row.critical_pressure = physics.evaluate(field, row.extraction_rate);
            row.ok = std::isfinite(row.critical_pressure);
        } catch (const std::exception&) {
            row.ok = false;
            row.extraction_rate = std::numeric_limits<double>::quiet_NaN();
            row.critical_pressure = std::numeric_limits<double>::quiet_NaN();
        }
    });
    report.summary = summarize_rows(report.rows, target_pressure, pressure_threshold);
    return report;
}

/// CSV schema: seed,extraction_rate_m3_s,critical_pressure_pa,status.
/// One row per requested sample; failed simulations carry status=failed and
/// empty numeric cells.
inline void write_eval_csv(const std::string& path, const EvalReport& report) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("write_eval_csv: cannot open '" + path + "'");
    }
    out << "seed,extraction_rate_m3_s,critical_pressure_pa,status\n";
    for (const auto& row : report.rows) {
        out << row.seed << ",";
        if (row.ok) {
            out << format_double(row.extraction_rate) << "," << format_double(row.critical_pressure)
                << ",ok\n";
        } else {
            out << ",,failed\n";
        }
    }
}

inline std::vector<EvalRow> read_eval_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("read_eval_csv: cannot open '" + path + "'");
    }
    std::string line;
    if (!std::getline(in, line) || line != "seed,extraction_rate_m3_s,critical_pressure_pa,status") {
        throw Error("read_eval_csv: unexpected header in '" + path + "'");
    }
    std::vector<EvalRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        std::size_t start = 0;
        for (;;) {
            const std::size_t comma = line.find(',', start);
            cells.push_back(line.substr(start, comma == std::string::npos ? comma : comma - start));
            if (comma == std::string::npos) {
                break;
            }
            start = comma + 1;
        }
        if (cells.size() != 4) {
            throw Error("read_eval_csv: malformed row '" + line + "'");
        }
        EvalRow row;
        row.seed = std::stoull(cells[0]);
        row.ok = cells[3] == "ok";
        if (row.ok) {
            row.extraction_rate = parse_double(cells[1], "read_eval_csv rate");
            row.critical_pressure = parse_double(cells[2], "read_eval_csv pressure");
        } else {
            row.extraction_rate = std::numeric_limits<double>::quiet_NaN();
            row.critical_pressure = std::numeric_limits<double>::quiet_NaN();
        }
        rows.push_back(row);
    }
    return rows;
}

/// Minimal static histogram as an SVG file. Plots are artifacts for humans;
/// the CSV remains the interface.
inline void write_histogram_svg(const std::string& path, const std::vector<double>& values,
                                int n_bins, const std::string& title, const std::string& x_label) {
    if (n_bins < 1) {
        throw std::invalid_argument("write_histogram_svg: need at least one bin");
    }
    std::vector<double> finite;
    finite.reserve(values.size());
    for (double v : values) {
        if (std::isfinite(v)) {
            finite.push_back(v);
        }
    }
    double lo = 0.0, hi = 1.0;
    if (!finite.empty()) {
        lo = *std::min_element(finite.begin(), finite.end());
        hi = *std::max_element(finite.begin(), finite.end());
    }
    if (hi <= lo) {
        hi = lo + 1.0;  // degenerate range: single bar
    }
    std::vector<int> counts(static_cast<std::size_t>(n_bins), 0);
    for (double v : finite) {
        int bin = static_cast<int>((v - lo) / (hi - lo) * n_bins);
        bin = std::clamp(bin, 0, n_bins - 1);
        ++counts[static_cast<std::size_t>(bin)];
    }
    const int max_count = counts.empty() ? 1 : std::max(1, *std::max_element(counts.begin(), counts.end()));

    const double width = 640.0, height = 400.0;
    const double ml = 60.0, mr = 20.0, mt = 40.0, mb = 50.0;
    const double plot_w = width - ml - mr;
    const double plot_h = height - mt - mb;

    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("write_histogram_svg: cannot open '" + path + "'");
    }
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"16\">" << title << "</text>\n";
    for (int b = 0; b < n_bins; ++b) {
        const double frac = static_cast<double>(counts[static_cast<std::size_t>(b)]) / max_count;
        const double bar_h = frac * plot_h;
        const double x = ml + plot_w * b / n_bins;
        const double y = mt + plot_h - bar_h;
        out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << plot_w / n_bins * 0.92
            << "\" height=\"" << bar_h << "\" fill=\"#4477aa\"/>\n";
    }
    out << "<line x1=\"" << ml << "\" y1=\"" << mt + plot_h << "\" x2=\"" << ml + plot_w << "\" y2=\""
        << mt + plot_h << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + plot_h
        << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << ml << "\" y=\"" << height - 16 << "\" font-family=\"sans-serif\" "
           "font-size=\"12\">" << format_double(lo) << "</text>\n";
    out << "<text x=\"" << ml + plot_w << "\" y=\"" << height - 16
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">" << format_double(hi)
        << "</text>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"" << height - 16
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << x_label
        << "</text>\n";
    out << "<text x=\"" << ml - 8 << "\" y=\"" << mt + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">" << max_count
        << "</text>\n";
    out << "</svg>\n";
}

/// Write the per-sample CSV and the rate/pressure histograms.
inline void emit_report(const EvalReport& report, const std::string& out_dir) {
    write_eval_csv(out_dir + "/eval.csv", report);
    std::vector<double> rates, pressures;
    for (const auto& row : report.rows) {
        if (row.ok) {
            rates.push_back(row.extraction_rate);
            pressures.push_back(row.critical_pressure);
        }
    }
    write_histogram_svg(out_dir + "/extraction_rate_hist.svg", rates, 40,
                        "Predicted extraction rate", "extraction rate [m^3/s]");
    write_histogram_svg(out_dir + "/critical_pressure_hist.svg", pressures, 40,
                        "Critical-location pressure", "pressure [Pa]");
}

}  // namespace subflow
