#pragma once

// Per-epoch training metrics and run-level artifacts. The CSV schema is
// pinned (fixed header, %.17g numbers) so that two deterministic runs can be
// compared byte-for-byte after dropping the wallclock column.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddad/config.hpp"
#include "ddad/tensor.hpp"

namespace ddad {

struct MetricsRecord {
  int epoch = 0;
  double generator_loss = 0.0;
  double bn_term = 0.0;
  double discrepancy_term = 0.0;
  double student_loss = 0.0;
  double student_test_accuracy = 0.0;
  double wallclock_seconds = 0.0;
  long seed = 0;
};

inline constexpr const char* kMetricsCsvHeader =
    "epoch,gen_loss,bn_term,disc_term,student_loss,test_acc,seconds,seed";

namespace detail {

inline std::string csv_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Atomic file write: stage into <path>.tmp, then rename over the target so a
// crash can never leave a half-written artifact under the final name.
inline void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("failed while writing '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw IoError("failed to move '" + tmp + "' into place at '" + path + "'");
  }
}

}  // namespace detail

inline std::string metrics_csv_string(const std::vector<MetricsRecord>& records) {
  std::ostringstream out;
  out << kMetricsCsvHeader << "\n";
  for (const MetricsRecord& r : records) {
    out << r.epoch << "," << detail::csv_real(r.generator_loss) << ","
        << detail::csv_real(r.bn_term) << "," << detail::csv_real(r.discrepancy_term) << ","
        << detail::csv_real(r.student_loss) << "," << detail::csv_real(r.student_test_accuracy)
        << "," << detail::csv_real(r.wallclock_seconds) << "," << r.seed << "\n";
  }
  return out.str();
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records) {
  detail::write_file_atomic(path, metrics_csv_string(records));
}

inline std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("metrics file '" + path + "' is empty");
  if (line == std::string(kMetricsCsvHeader) + "\r") line.pop_back();
  if (line != kMetricsCsvHeader) {
    throw IoError("metrics file '" + path + "' has an unexpected header: '" + line + "'");
  }
  std::vector<MetricsRecord> records;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 8) {
      throw IoError("metrics file '" + path + "' line " + std::to_string(line_no) +
                    ": expected 8 fields, got " + std::to_string(fields.size()));
    }
    MetricsRecord r;
    try {
      r.epoch = std::stoi(fields[0]);
      r.generator_loss = std::stod(fields[1]);
      r.bn_term = std::stod(fields[2]);
      r.discrepancy_term = std::stod(fields[3]);
      r.student_loss = std::stod(fields[4]);
      r.student_test_accuracy = std::stod(fields[5]);
      r.wallclock_seconds = std::stod(fields[6]);
      r.seed = std::stol(fields[7]);
    } catch (const std::exception&) {
      throw IoError("metrics file '" + path + "' line " + std::to_string(line_no) +
                    ": unparsable field");
    }
    records.push_back(r);
  }
  return records;
}

// Serialization of the CSV with the wallclock column blanked out — the form
// used for byte-level determinism comparisons.
inline std::string metrics_csv_excluding_wallclock(const std::vector<MetricsRecord>& records) {
  std::vector<MetricsRecord> scrubbed = records;
  for (MetricsRecord& r : scrubbed) r.wallclock_seconds = 0.0;
  return metrics_csv_string(scrubbed);
}

// Everything a single distillation run leaves behind.
struct RunArtifacts {
  DistillConfig config;
  std::string teacher_fingerprint_before;
  std::string teacher_fingerprint_after;
  std::vector<MetricsRecord> metrics;
  std::string final_student_checkpoint;
  std::string sample_dump;

  double final_accuracy() const {
    return metrics.empty() ? 0.0 : metrics.back().student_test_accuracy;
  }
};

inline nlohmann::json run_summary_json(const RunArtifacts& artifacts, double teacher_accuracy) {
  nlohmann::json j;
  j["delta"] = artifacts.config.delta;
  j["gamma"] = artifacts.config.gamma;
  j["tau"] = artifacts.config.tau;
  j["seed"] = artifacts.config.seed;
  j["epochs"] = artifacts.config.epochs;
  j["steps_per_epoch"] = artifacts.config.steps_per_epoch;
  j["batch_size"] = artifacts.config.batch_size;
  j["noise_dim"] = artifacts.config.noise_dim;
  j["teacher_fingerprint_before"] = artifacts.teacher_fingerprint_before;
  j["teacher_fingerprint_after"] = artifacts.teacher_fingerprint_after;
  j["teacher_test_accuracy"] = teacher_accuracy;
  j["final_student_accuracy"] = artifacts.final_accuracy();
  j["epochs_run"] = artifacts.metrics.size();
  j["final_student_checkpoint"] = artifacts.final_student_checkpoint;
  j["sample_dump"] = artifacts.sample_dump;
  return j;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  detail::write_file_atomic(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open JSON file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw IoError("failed to parse JSON file '" + path + "': " + e.what());
  }
  return j;
}

}  // namespace ddad
