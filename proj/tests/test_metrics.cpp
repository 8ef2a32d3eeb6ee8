// Metrics CSV schema (pinned header, %.17g round trip), run summaries, and
// the report aggregation (grouping, medians, CSV, SVG).

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ddad/metrics.hpp"
#include "ddad/report.hpp"

using namespace ddad;

namespace {

MetricsRecord make_record(int epoch, double acc, long seed = 1) {
    MetricsRecord r;
    r.epoch = epoch;
    r.generator_loss = 0.125 - epoch;
    r.bn_term = 1.0 / 3.0;
    r.discrepancy_term = -0.07;
    r.student_loss = 0.01 * epoch;
    r.student_test_accuracy = acc;
    r.wallclock_seconds = 1.5 * epoch;
    r.seed = seed;
    return r;
}

std::string temp_path(const std::string& name) { return ::testing::TempDir() + "/" + name; }

}  // namespace

TEST(Metrics, HeaderIsPinned) {
    EXPECT_STREQ(kMetricsCsvHeader, "epoch,gen_loss,bn_term,disc_term,student_loss,test_acc,seconds,seed");
    EXPECT_EQ(metrics_csv_string({}), std::string(kMetricsCsvHeader) + "\n");
}

TEST(Metrics, CsvRoundTripIsExact) {
    std::vector<MetricsRecord> records = {make_record(0, 0.25), make_record(1, 1.0 / 7.0, -42)};
    records[1].generator_loss = 1e-300;       // extreme magnitudes survive %.17g
    records[1].bn_term = 123456789.123456789;
    const std::string path = temp_path("metrics_roundtrip.csv");
    write_metrics_csv(path, records);
    std::vector<MetricsRecord> back = read_metrics_csv(path);
    ASSERT_EQ(back.size(), records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        EXPECT_EQ(back[i].epoch, records[i].epoch);
        EXPECT_EQ(back[i].generator_loss, records[i].generator_loss);
        EXPECT_EQ(back[i].bn_term, records[i].bn_term);
        EXPECT_EQ(back[i].discrepancy_term, records[i].discrepancy_term);
        EXPECT_EQ(back[i].student_loss, records[i].student_loss);
        EXPECT_EQ(back[i].student_test_accuracy, records[i].student_test_accuracy);
        EXPECT_EQ(back[i].wallclock_seconds, records[i].wallclock_seconds);
        EXPECT_EQ(back[i].seed, records[i].seed);
    }
    EXPECT_FALSE(std::filesystem::exists(path + ".tmp"));
    std::remove(path.c_str());
}

TEST(Metrics, ReadRejectsBadFiles) {
    EXPECT_THROW(read_metrics_csv(temp_path("missing.csv")), IoError);

    const std::string bad_header = temp_path("bad_header.csv");
    {
        std::ofstream out(bad_header);
        out << "epoch,loss\n0,1\n";
    }
    EXPECT_THROW(read_metrics_csv(bad_header), IoError);
    std::remove(bad_header.c_str());

    const std::string bad_fields = temp_path("bad_fields.csv");
    {
        std::ofstream out(bad_fields);
        out << kMetricsCsvHeader << "\n0,1,2\n";
    }
    EXPECT_THROW(read_metrics_csv(bad_fields), IoError);
    std::remove(bad_fields.c_str());

    const std::string bad_number = temp_path("bad_number.csv");
    {
        std::ofstream out(bad_number);
        out << kMetricsCsvHeader << "\n0,x,0,0,0,0,0,1\n";
    }
    EXPECT_THROW(read_metrics_csv(bad_number), IoError);
    std::remove(bad_number.c_str());
}

TEST(Metrics, WallclockExclusionMasksOnlyTiming) {
    std::vector<MetricsRecord> a = {make_record(0, 0.5), make_record(1, 0.75)};
    std::vector<MetricsRecord> b = a;
    b[0].wallclock_seconds = 99.0;
    EXPECT_NE(metrics_csv_string(a), metrics_csv_string(b));
    EXPECT_EQ(metrics_csv_excluding_wallclock(a), metrics_csv_excluding_wallclock(b));
    b[1].student_test_accuracy = 0.8;
    EXPECT_NE(metrics_csv_excluding_wallclock(a), metrics_csv_excluding_wallclock(b));
}

TEST(Metrics, RunSummaryJsonFields) {
    RunArtifacts artifacts;
    artifacts.config.delta = 0.01;
    artifacts.config.gamma = 0.1;
    artifacts.config.seed = 3;
    artifacts.teacher_fingerprint_before = "aaaa";
    artifacts.teacher_fingerprint_after = "aaaa";
    artifacts.metrics = {make_record(0, 0.5), make_record(1, 0.9)};
    artifacts.final_student_checkpoint = "run/student.ckpt";
    artifacts.sample_dump = "run/samples.pgm";

    nlohmann::json j = run_summary_json(artifacts, 0.98);
    EXPECT_DOUBLE_EQ(j["delta"].get<double>(), 0.01);
    EXPECT_DOUBLE_EQ(j["gamma"].get<double>(), 0.1);
    EXPECT_EQ(j["seed"].get<long>(), 3);
    EXPECT_DOUBLE_EQ(j["final_student_accuracy"].get<double>(), 0.9);
    EXPECT_DOUBLE_EQ(j["teacher_test_accuracy"].get<double>(), 0.98);
    EXPECT_EQ(j["epochs_run"].get<int>(), 2);
    EXPECT_EQ(j["teacher_fingerprint_before"], "aaaa");

    const std::string path = temp_path("summary_roundtrip.json");
    write_json_file(path, j);
    nlohmann::json back = read_json_file(path);
    EXPECT_EQ(back, j);
    std::remove(path.c_str());
}

TEST(Report, MedianOddEvenAndErrors) {
    EXPECT_DOUBLE_EQ(median({3.0, 1.0, 2.0}), 2.0);
    EXPECT_DOUBLE_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
    EXPECT_DOUBLE_EQ(median({7.0}), 7.0);
    EXPECT_THROW(median({}), ValueError);
}

TEST(Report, AggregatesByWeightsAndRanksByMedian) {
    auto run = [](double delta, double gamma, long seed, double final_acc) {
        RunRecord r;
        r.delta = delta;
        r.gamma = gamma;
        r.seed = seed;
        r.accuracy_curve = {0.3, final_acc};
        return r;
    };
    std::vector<RunRecord> runs = {
        run(0.01, 0.1, 1, 0.95), run(0.01, 0.1, 2, 0.91), run(0.01, 0.1, 3, 0.99),
        run(0.0, 0.1, 1, 0.70),  run(0.0, 0.1, 2, 0.80),  run(0.0, 0.1, 3, 0.60),
        run(0.01, 0.0, 1, 0.85), run(0.01, 0.0, 2, 0.83),
    };
    std::vector<ReportRow> rows = aggregate_runs(runs);
    ASSERT_EQ(rows.size(), 3u);
    // Ranked by descending median accuracy.
    EXPECT_DOUBLE_EQ(rows[0].median_acc, 0.95);
    EXPECT_EQ(rows[0].runs, 3);
    EXPECT_DOUBLE_EQ(rows[0].delta, 0.01);
    EXPECT_DOUBLE_EQ(rows[0].gamma, 0.1);
    EXPECT_DOUBLE_EQ(rows[1].median_acc, 0.84);  // even group: mean of 0.83, 0.85
    EXPECT_DOUBLE_EQ(rows[2].median_acc, 0.70);
    EXPECT_DOUBLE_EQ(rows[2].min_acc, 0.60);
    EXPECT_DOUBLE_EQ(rows[2].max_acc, 0.80);
    EXPECT_NEAR(rows[2].mean_acc, 0.70, 1e-12);
    EXPECT_THROW(aggregate_runs({}), ValueError);
}

TEST(Report, CsvStringFormat) {
    ReportRow row;
    row.delta = 0.01;
    row.gamma = 0.1;
    row.runs = 3;
    row.median_acc = 0.5;
    row.mean_acc = 0.5;
    row.min_acc = 0.25;
    row.max_acc = 0.75;
    const std::string csv = report_csv_string({row});
    EXPECT_EQ(csv, std::string(kReportCsvHeader) +
                       "\n0.01,0.10000000000000001,3,0.5,0.5,0.25,0.75\n");
}

// A run directory written with the library functions reads back through
// read_run_dir, and the aggregate matches an independent recomputation.
TEST(Report, ReadsRunDirectoryAndMatchesIndependentRecount) {
    const std::string dir = temp_path("report_run_dir");
    std::filesystem::create_directories(dir);
    RunArtifacts artifacts;
    artifacts.config.delta = 0.25;
    artifacts.config.gamma = 0.5;
    artifacts.config.seed = 9;
    artifacts.metrics = {make_record(0, 0.4, 9), make_record(1, 0.65, 9)};
    write_metrics_csv(dir + "/metrics.csv", artifacts.metrics);
    write_json_file(dir + "/summary.json", run_summary_json(artifacts, 0.9));

    RunRecord run = read_run_dir(dir);
    EXPECT_DOUBLE_EQ(run.delta, 0.25);
    EXPECT_DOUBLE_EQ(run.gamma, 0.5);
    EXPECT_EQ(run.seed, 9);
    ASSERT_EQ(run.accuracy_curve.size(), 2u);
    EXPECT_DOUBLE_EQ(run.final_accuracy(), 0.65);

    // Independent recomputation straight from the CSV.
    std::vector<MetricsRecord> raw = read_metrics_csv(dir + "/metrics.csv");
    EXPECT_DOUBLE_EQ(raw.back().student_test_accuracy, run.final_accuracy());

    EXPECT_THROW(read_run_dir(temp_path("no_such_run_dir")), IoError);
    std::filesystem::remove_all(dir);
}

TEST(Report, AccuracySvgIsWellFormed) {
    RunRecord a;
    a.accuracy_curve = {0.1, 0.5, 0.9};
    RunRecord b;
    b.accuracy_curve = {0.2, 0.4};
    const std::string svg = accuracy_svg({a, b});
    EXPECT_NE(svg.find("<svg"), std::string::npos);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
    EXPECT_EQ(std::count(svg.begin(), svg.end(), '\n') > 4, true);
    // one polyline per run
    std::size_t count = 0, pos = 0;
    while ((pos = svg.find("<polyline", pos)) != std::string::npos) {
        ++count;
        ++pos;
    }
    EXPECT_EQ(count, 2u);
}
