#pragma once

// Aggregation of finished runs into a comparison table: runs are grouped by
// their (delta, gamma) weights and summarized by the median final student
// accuracy over seeds. The table is recomputed from the metrics CSVs (not
// copied from the summaries), plus a small self-contained SVG of the
// accuracy trajectories.

#include <algorithm>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ddad/metrics.hpp"

namespace ddad {

inline double median(std::vector<double> values) {
    if (values.empty()) throw ValueError("median of an empty list");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// One finished run, as read back from its artifact directory. The accuracy
// trajectory comes from metrics.csv; delta/gamma/seed come from summary.json.
struct RunRecord {
    std::string dir;
    double delta = 0.0;
    double gamma = 0.0;
    long seed = 0;
    std::vector<double> accuracy_curve;

    double final_accuracy() const {
        return accuracy_curve.empty() ? 0.0 : accuracy_curve.back();
    }
};

inline RunRecord read_run_dir(const std::string& dir) {
    RunRecord run;
    run.dir = dir;
    const nlohmann::json summary = read_json_file(dir + "/summary.json");
    try {
        run.delta = summary.at("delta").get<double>();
        run.gamma = summary.at("gamma").get<double>();
        run.seed = summary.at("seed").get<long>();
    } catch (const std::exception& e) {
        throw IoError("run directory '" + dir + "' has an incomplete summary.json: " + e.what());
    }
    for (const MetricsRecord& r : read_metrics_csv(dir + "/metrics.csv")) {
        run.accuracy_curve.push_back(r.student_test_accuracy);
    }
    return run;
}

struct ReportRow {
    double delta = 0.0;
    double gamma = 0.0;
    int runs = 0;
    double median_acc = 0.0;
    double mean_acc = 0.0;
    double min_acc = 0.0;
    double max_acc = 0.0;
};

inline constexpr const char* kReportCsvHeader =
    "delta,gamma,runs,median_acc,mean_acc,min_acc,max_acc";

// Groups runs by (delta, gamma) — exact comparison is correct here because
// the values round-trip through the same config text — and orders groups by
// descending median accuracy.
inline std::vector<ReportRow> aggregate_runs(const std::vector<RunRecord>& runs) {
    if (runs.empty()) throw ValueError("aggregate_runs: no runs given");
    std::map<std::pair<double, double>, std::vector<double>> groups;
    for (const RunRecord& run : runs) {
        groups[{run.delta, run.gamma}].push_back(run.final_accuracy());
    }
    std::vector<ReportRow> rows;
    for (const auto& [key, accs] : groups) {
        ReportRow row;
        row.delta = key.first;
        row.gamma = key.second;
        row.runs = static_cast<int>(accs.size());
        row.median_acc = median(accs);
        double sum = 0.0, lo = accs[0], hi = accs[0];
        for (double a : accs) {
            sum += a;
            lo = std::min(lo, a);
            hi = std::max(hi, a);
        }
        row.mean_acc = sum / accs.size();
        row.min_acc = lo;
        row.max_acc = hi;
        rows.push_back(row);
    }
    std::sort(rows.begin(), rows.end(),
              [](const ReportRow& a, const ReportRow& b) { return a.median_acc > b.median_acc; });
    return rows;
}

inline std::string report_csv_string(const std::vector<ReportRow>& rows) {
    std::ostringstream out;
    out << kReportCsvHeader << "\n";
    for (const ReportRow& r : rows) {
        out << detail::csv_real(r.delta) << "," << detail::csv_real(r.gamma) << "," << r.runs << ","
            << detail::csv_real(r.median_acc) << "," << detail::csv_real(r.mean_acc) << ","
            << detail::csv_real(r.min_acc) << "," << detail::csv_real(r.max_acc) << "\n";
    }
    return out.str();
}

// Minimal self-contained line plot of the accuracy trajectories, one
// polyline per run, y fixed to [0,1].
inline std::string accuracy_svg(const std::vector<RunRecord>& runs) {
    const int width = 640, height = 400, margin = 40;
    std::size_t max_epochs = 1;
    for (const RunRecord& run : runs) max_epochs = std::max(max_epochs, run.accuracy_curve.size());

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin
        << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\""
        << height - margin << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << margin << "\" y=\"" << margin - 10
        << "\" font-size=\"12\">student test accuracy by epoch</text>\n";

    const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const std::vector<double>& curve = runs[i].accuracy_curve;
        if (curve.empty()) continue;
        svg << "<polyline fill=\"none\" stroke=\"" << palette[i % 6] << "\" points=\"";
        for (std::size_t e = 0; e < curve.size(); ++e) {
            const double fx = max_epochs > 1 ? static_cast<double>(e) / (max_epochs - 1) : 0.0;
            const double x = margin + fx * (width - 2 * margin);
            const double y = height - margin - curve[e] * (height - 2 * margin);
            svg << x << "," << y << " ";
        }
        svg << "\"/>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace ddad
