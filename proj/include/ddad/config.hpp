#pragma once

// Experiment configuration: a flat key=value text format with typed parsing,
// defaults for every field, and hard errors on unknown keys. Command-line
// flags are applied on top of file values (flags > file > defaults), and the
// fully-resolved config is echoed into each run directory so any output can
// be regenerated from its echo alone.

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ddad/dataset.hpp"
#include "ddad/tensor.hpp"

namespace ddad {

// Which loss drives the student stage: mean-absolute-error between softened
// probability rows (default), or KL between them (comparison variant).
enum class StudentObjective {
  Mae,
  SoftKl,
};

inline std::string to_string(StudentObjective obj) {
  return obj == StudentObjective::Mae ? "mae" : "soft_kl";
}

inline StudentObjective student_objective_from_string(const std::string& name) {
  if (name == "mae") return StudentObjective::Mae;
  if (name == "soft_kl") return StudentObjective::SoftKl;
  throw ConfigError("unknown student_objective '" + name + "' (expected mae or soft_kl)");
}

// Student capacity relative to the teacher: half-width (default) or an exact
// copy of the teacher architecture (self-distillation setting).
enum class StudentArch {
  Half,
  Teacher,
};

inline std::string to_string(StudentArch arch) {
  return arch == StudentArch::Half ? "half" : "teacher";
}

inline StudentArch student_arch_from_string(const std::string& name) {
  if (name == "half") return StudentArch::Half;
  if (name == "teacher") return StudentArch::Teacher;
  throw ConfigError("unknown student_arch '" + name + "' (expected half or teacher)");
}

// Hyper-parameters of one distillation run.
struct DistillConfig {
  double tau = 1.0;        // softmax temperature
  double lambda = 1.0;     // weight of the KL term in the labeled-data loss
  double delta = 0.01;     // weight of the statistics-matching generator term
  double gamma = 0.1;      // weight of the discrepancy generator term
  int batch_size = 64;
  int noise_dim = 64;
  int epochs = 200;
  int steps_per_epoch = 50;  // applies to both stages of each epoch
  double lr_student = 0.05;
  double lr_generator = 1e-3;
  long seed = 1;

  // allow_degenerate permits delta == gamma == 0 (used by the ablation grid,
  // where the (0,0) corner is an intentional no-signal control).
  void validate(bool allow_degenerate = false) const {
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
    if (delta < 0.0) throw ConfigError("delta must be >= 0");
    if (gamma < 0.0) throw ConfigError("gamma must be >= 0");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (batch statistics need spread)");
    if (noise_dim < 1) throw ConfigError("noise_dim must be >= 1");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be >= 1");
    if (!(lr_student > 0.0)) throw ConfigError("lr_student must be > 0");
    if (!(lr_generator > 0.0)) throw ConfigError("lr_generator must be > 0");
    if (!allow_degenerate && delta == 0.0 && gamma == 0.0) {
      throw ConfigError("delta and gamma must not both be 0 for a distillation run");
    }
  }
};

// Full experiment description: task + data parameters + distillation
// hyper-parameters + orchestration fields.
struct ExperimentConfig {
  TaskKind task = TaskKind::Blobs;
  int classes = 4;
  int train_per_class = 250;
  int test_per_class = 100;
  double noise = 0.08;
  long data_seed = 7;  // dataset synthesis seed, shared by every run of an experiment

  DistillConfig distill;

  int pretrain_epochs = 60;
  double lr_teacher = 0.05;
  StudentObjective student_objective = StudentObjective::Mae;
  StudentArch student_arch = StudentArch::Half;
  bool gen_deconv = false;           // image generator: strided deconv vs upsample+conv
  int early_stop_patience = 0;       // epochs without test-accuracy gain; 0 disables

  std::string output_dir = "runs";
  std::vector<long> seeds = {1, 2, 3};

  DatasetConfig dataset_config() const {
    DatasetConfig cfg;
    cfg.task = task;
    cfg.classes = classes;
    cfg.train_per_class = train_per_class;
    cfg.test_per_class = test_per_class;
    cfg.noise = noise;
    return cfg;
  }

  void validate(bool allow_degenerate = false) const {
    if (classes < 2) throw ConfigError("classes must be >= 2");
    if (train_per_class < 1) throw ConfigError("train_per_class must be >= 1");
    if (test_per_class < 1) throw ConfigError("test_per_class must be >= 1");
    if (noise < 0.0) throw ConfigError("noise must be >= 0");
    if (pretrain_epochs < 0) throw ConfigError("pretrain_epochs must be >= 0");
    if (!(lr_teacher > 0.0)) throw ConfigError("lr_teacher must be > 0");
    if (early_stop_patience < 0) throw ConfigError("early_stop_patience must be >= 0");
    if (seeds.empty()) throw ConfigError("seeds must list at least one seed");
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
    distill.validate(allow_degenerate);
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline long parse_long(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  long parsed = 0;
  try {
    parsed = std::stol(value, &pos);
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + value + "'");
  }
  if (pos != value.size()) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + value + "'");
  }
  return parsed;
}

inline int parse_int(const std::string& key, const std::string& value) {
  return static_cast<int>(parse_long(key, value));
}

inline double parse_real(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double parsed = 0.0;
  try {
    parsed = std::stod(value, &pos);
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + value + "'");
  }
  if (pos != value.size()) {
    throw ConfigError("key '" + key + "': expected a number, got '" + value + "'");
  }
  return parsed;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + value + "'");
}

inline std::vector<long> parse_seed_list(const std::string& key, const std::string& value) {
  std::vector<long> seeds;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    seeds.push_back(parse_long(key, item));
  }
  if (seeds.empty()) throw ConfigError("key '" + key + "': expected a comma-separated list");
  return seeds;
}

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// Applies one key=value assignment. Unknown keys are a hard error so a typo
// in a config file can never silently fall back to a default.
inline void config_set(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_int;
  using detail::parse_long;
  using detail::parse_real;

  if (key == "task") {
    try {
      cfg.task = task_from_string(value);
    } catch (const ValueError& e) {
      throw ConfigError(e.what());
    }
  } else if (key == "classes") {
    cfg.classes = parse_int(key, value);
  } else if (key == "train_per_class") {
    cfg.train_per_class = parse_int(key, value);
  } else if (key == "test_per_class") {
    cfg.test_per_class = parse_int(key, value);
  } else if (key == "noise") {
    cfg.noise = parse_real(key, value);
  } else if (key == "data_seed") {
    cfg.data_seed = parse_long(key, value);
  } else if (key == "tau") {
    cfg.distill.tau = parse_real(key, value);
  } else if (key == "lambda") {
    cfg.distill.lambda = parse_real(key, value);
  } else if (key == "delta") {
    cfg.distill.delta = parse_real(key, value);
  } else if (key == "gamma") {
    cfg.distill.gamma = parse_real(key, value);
  } else if (key == "batch_size") {
    cfg.distill.batch_size = parse_int(key, value);
  } else if (key == "noise_dim") {
    cfg.distill.noise_dim = parse_int(key, value);
  } else if (key == "epochs") {
    cfg.distill.epochs = parse_int(key, value);
  } else if (key == "steps_per_epoch") {
    cfg.distill.steps_per_epoch = parse_int(key, value);
  } else if (key == "lr_student") {
    cfg.distill.lr_student = parse_real(key, value);
  } else if (key == "lr_generator") {
    cfg.distill.lr_generator = parse_real(key, value);
  } else if (key == "seed") {
    cfg.distill.seed = parse_long(key, value);
  } else if (key == "pretrain_epochs") {
    cfg.pretrain_epochs = parse_int(key, value);
  } else if (key == "lr_teacher") {
    cfg.lr_teacher = parse_real(key, value);
  } else if (key == "student_objective") {
    cfg.student_objective = student_objective_from_string(value);
  } else if (key == "student_arch") {
    cfg.student_arch = student_arch_from_string(value);
  } else if (key == "gen_deconv") {
    cfg.gen_deconv = parse_bool(key, value);
  } else if (key == "early_stop_patience") {
    cfg.early_stop_patience = parse_int(key, value);
  } else if (key == "output_dir") {
    cfg.output_dir = value;
  } else if (key == "seeds") {
    cfg.seeds = detail::parse_seed_list(key, value);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

// Parses "key = value" lines; '#' starts a comment; blank lines are ignored.
inline ExperimentConfig parse_config_text(const std::string& text,
                                          const std::string& origin = "<string>") {
  ExperimentConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) +
                        ": expected key=value, got '" + line + "'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    }
    try {
      config_set(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str(), path);
}

// Serializes every field in a fixed order; parse_config_text(render) is an
// exact round trip, which is what makes the per-run config echo sufficient
// to reproduce the run.
inline std::string render_config(const ExperimentConfig& cfg) {
  using detail::format_real;
  std::ostringstream out;
  out << "task = " << to_string(cfg.task) << "\n";
  out << "classes = " << cfg.classes << "\n";
  out << "train_per_class = " << cfg.train_per_class << "\n";
  out << "test_per_class = " << cfg.test_per_class << "\n";
  out << "noise = " << format_real(cfg.noise) << "\n";
  out << "data_seed = " << cfg.data_seed << "\n";
  out << "tau = " << format_real(cfg.distill.tau) << "\n";
  out << "lambda = " << format_real(cfg.distill.lambda) << "\n";
  out << "delta = " << format_real(cfg.distill.delta) << "\n";
  out << "gamma = " << format_real(cfg.distill.gamma) << "\n";
  out << "batch_size = " << cfg.distill.batch_size << "\n";
  out << "noise_dim = " << cfg.distill.noise_dim << "\n";
  out << "epochs = " << cfg.distill.epochs << "\n";
  out << "steps_per_epoch = " << cfg.distill.steps_per_epoch << "\n";
  out << "lr_student = " << format_real(cfg.distill.lr_student) << "\n";
  out << "lr_generator = " << format_real(cfg.distill.lr_generator) << "\n";
  out << "seed = " << cfg.distill.seed << "\n";
  out << "pretrain_epochs = " << cfg.pretrain_epochs << "\n";
  out << "lr_teacher = " << format_real(cfg.lr_teacher) << "\n";
  out << "student_objective = " << to_string(cfg.student_objective) << "\n";
  out << "student_arch = " << to_string(cfg.student_arch) << "\n";
  out << "gen_deconv = " << (cfg.gen_deconv ? "true" : "false") << "\n";
  out << "early_stop_patience = " << cfg.early_stop_patience << "\n";
  out << "output_dir = " << cfg.output_dir << "\n";
  out << "seeds = ";
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    if (i) out << ",";
    out << cfg.seeds[i];
  }
  out << "\n";
  return out.str();
}

// Resolves the effective output directory: the DDAD_OUTPUT_ROOT environment
// variable, when set, is prefixed to relative output_dir values so batch
// jobs can redirect all artifacts without editing configs.
inline std::string resolved_output_dir(const ExperimentConfig& cfg) {
  const char* root = std::getenv("DDAD_OUTPUT_ROOT");
  if (root != nullptr && root[0] != '\0' && !cfg.output_dir.empty() && cfg.output_dir[0] != '/') {
    std::string prefix(root);
    if (prefix.back() != '/') prefix += '/';
    return prefix + cfg.output_dir;
  }
  return cfg.output_dir;
}

}  // namespace ddad
