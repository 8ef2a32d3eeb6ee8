// ddad — data-free distillation experiments on synthetic tasks.
//
// Subcommands:
//   pretrain --config F                       train + checkpoint the teacher
//   distill  --config F [--delta --gamma --seed]   one run per seed (or one run)
//   eval     --ckpt P --config F              accuracy of a checkpoint on the test split
//   ablate   --config F                       {0,delta} x {0,gamma} grid over all seeds
//   report   DIR... [--out DIR]               aggregate finished runs into a table
//
// Every failure exits nonzero with a one-line cause on stderr. All artifacts
// are written under the config's output_dir (DDAD_OUTPUT_ROOT prefixes
// relative paths).

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <CLI11.hpp>

#include "ddad/report.hpp"
#include "ddad/trainer.hpp"

namespace {

using namespace ddad;

std::string format_weight(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

std::string run_dir_name(const std::string& root, double delta, double gamma, long seed,
                         const char* prefix) {
    return root + "/" + prefix + "_d" + format_weight(delta) + "_g" + format_weight(gamma) + "_s" +
           std::to_string(seed);
}

std::string teacher_checkpoint_path(const std::string& root) {
    return root + "/teacher/teacher.ckpt";
}

NetworkSpec teacher_spec_for_task(const ExperimentConfig& cfg) {
    if (cfg.task == TaskKind::TinyImages) return teacher_image_spec(kImageChannels, cfg.classes);
    return teacher_vector_spec(task_input_dim(cfg.task), cfg.classes);
}

int cmd_pretrain(const std::string& config_path) {
    ExperimentConfig cfg = load_config_file(config_path);
    cfg.validate(/*allow_degenerate=*/true);  // distillation weights are not used here
    const std::string root = resolved_output_dir(cfg);
    std::filesystem::create_directories(root + "/teacher");

    auto [train, test] = make_dataset(cfg.dataset_config(), cfg.data_seed);
    PretrainResult result =
        pretrain_teacher(train, test, teacher_spec_for_task(cfg), cfg.pretrain_epochs,
                         cfg.lr_teacher, cfg.distill.batch_size, cfg.data_seed);

    const std::string ckpt = teacher_checkpoint_path(root);
    save_checkpoint(result.teacher, ckpt);
    detail::write_file_atomic(root + "/teacher/resolved.cfg", render_config(cfg));

    nlohmann::json summary;
    summary["train_accuracy"] = result.train_accuracy;
    summary["test_accuracy"] = result.test_accuracy;
    summary["checkpoint"] = ckpt;
    summary["fingerprint"] = param_fingerprint(result.teacher);
    summary["task"] = to_string(cfg.task);
    summary["classes"] = cfg.classes;
    write_json_file(root + "/teacher/pretrain.json", summary);

    std::printf("teacher: train=%.4f test=%.17g -> %s\n", result.train_accuracy,
                result.test_accuracy, ckpt.c_str());
    return 0;
}

int run_one_distill(const ExperimentConfig& cfg, const std::string& root, long seed,
                    bool allow_degenerate, const char* prefix) {
    ExperimentConfig run_cfg = cfg;
    run_cfg.distill.seed = seed;
    RunOptions opts;
    opts.allow_degenerate = allow_degenerate;
    opts.run_dir =
        run_dir_name(root, run_cfg.distill.delta, run_cfg.distill.gamma, seed, prefix);
    RunArtifacts artifacts = run_ddad(teacher_checkpoint_path(root), run_cfg, opts);
    const nlohmann::json summary = read_json_file(opts.run_dir + "/summary.json");
    std::printf("run delta=%s gamma=%s seed=%ld: student=%.4f teacher=%.4f -> %s\n",
                format_weight(run_cfg.distill.delta).c_str(),
                format_weight(run_cfg.distill.gamma).c_str(), seed, artifacts.final_accuracy(),
                summary["teacher_test_accuracy"].get<double>(), opts.run_dir.c_str());
    return 0;
}

int cmd_distill(const std::string& config_path, const double* delta, const double* gamma,
                const long* seed) {
    ExperimentConfig cfg = load_config_file(config_path);
    if (delta) cfg.distill.delta = *delta;
    if (gamma) cfg.distill.gamma = *gamma;
    cfg.validate();
    const std::string root = resolved_output_dir(cfg);

    if (seed) return run_one_distill(cfg, root, *seed, /*allow_degenerate=*/false, "distill");
    for (long s : cfg.seeds) {
        const int rc = run_one_distill(cfg, root, s, /*allow_degenerate=*/false, "distill");
        if (rc != 0) return rc;
    }
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& config_path) {
    ExperimentConfig cfg = load_config_file(config_path);
    cfg.validate(/*allow_degenerate=*/true);
    NetworkState net = load_checkpoint(ckpt_path);
    auto [train, test] = make_dataset(cfg.dataset_config(), cfg.data_seed);
    const double accuracy = evaluate_accuracy(net, test);
    std::printf("accuracy=%.17g\n", accuracy);
    return 0;
}

int cmd_ablate(const std::string& config_path) {
    ExperimentConfig cfg = load_config_file(config_path);
    cfg.validate();
    const std::string root = resolved_output_dir(cfg);

    const std::vector<double> deltas = {0.0, cfg.distill.delta};
    const std::vector<double> gammas = {0.0, cfg.distill.gamma};
    std::vector<RunRecord> runs;
    for (double d : deltas) {
        for (double g : gammas) {
            for (long s : cfg.seeds) {
                ExperimentConfig point = cfg;
                point.distill.delta = d;
                point.distill.gamma = g;
                // The (0,0) corner is the intentional no-signal control.
                const int rc = run_one_distill(point, root, s, /*allow_degenerate=*/true, "ablate");
                if (rc != 0) return rc;
                runs.push_back(read_run_dir(run_dir_name(root, d, g, s, "ablate")));
            }
        }
    }

    const std::vector<ReportRow> rows = aggregate_runs(runs);
    detail::write_file_atomic(root + "/ablation_summary.csv", report_csv_string(rows));
    std::printf("%s\n", kReportCsvHeader);
    for (const ReportRow& row : rows) {
        std::printf("%s,%s,%d,%.4f,%.4f,%.4f,%.4f\n", format_weight(row.delta).c_str(),
                    format_weight(row.gamma).c_str(), row.runs, row.median_acc, row.mean_acc,
                    row.min_acc, row.max_acc);
    }
    std::printf("ablation summary -> %s\n", (root + "/ablation_summary.csv").c_str());
    return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    std::vector<RunRecord> runs;
    for (const std::string& dir : run_dirs) runs.push_back(read_run_dir(dir));
    const std::vector<ReportRow> rows = aggregate_runs(runs);

    std::filesystem::create_directories(out_dir);
    detail::write_file_atomic(out_dir + "/report.csv", report_csv_string(rows));
    detail::write_file_atomic(out_dir + "/report.svg", accuracy_svg(runs));

    std::printf("%s\n", kReportCsvHeader);
    for (const ReportRow& row : rows) {
        std::printf("%s,%s,%d,%.4f,%.4f,%.4f,%.4f\n", format_weight(row.delta).c_str(),
                    format_weight(row.gamma).c_str(), row.runs, row.median_acc, row.mean_acc,
                    row.min_acc, row.max_acc);
    }
    std::printf("report -> %s\n", (out_dir + "/report.csv").c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
    // Training frees the whole step's activation buffers (~hundreds of MB) at once; keep
    // that memory on the heap for the next step instead of returning it to the kernel and
    // re-faulting every page.
    mallopt(M_MMAP_THRESHOLD, 64 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    CLI::App app{"data-free distillation experiments on synthetic tasks"};
    app.require_subcommand(1);

    std::string config_path, ckpt_path, report_out = ".";
    std::vector<std::string> run_dirs;
    double delta = 0.0, gamma = 0.0;
    long seed = 0;

    CLI::App* pretrain = app.add_subcommand("pretrain", "train and checkpoint the teacher");
    pretrain->add_option("--config", config_path, "experiment config file")->required();

    CLI::App* distill = app.add_subcommand("distill", "run distillation for the configured seeds");
    distill->add_option("--config", config_path, "experiment config file")->required();
    CLI::Option* delta_opt = distill->add_option("--delta", delta, "override the statistics-term weight");
    CLI::Option* gamma_opt = distill->add_option("--gamma", gamma, "override the discrepancy-term weight");
    CLI::Option* seed_opt = distill->add_option("--seed", seed, "run a single specific seed");

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint to evaluate")->required();
    eval_cmd->add_option("--config", config_path, "experiment config file")->required();

    CLI::App* ablate = app.add_subcommand("ablate", "run the {0,delta} x {0,gamma} grid");
    ablate->add_option("--config", config_path, "experiment config file")->required();

    CLI::App* report = app.add_subcommand("report", "aggregate finished run directories");
    report->add_option("dirs", run_dirs, "run directories (each with metrics.csv + summary.json)")
        ->required();
    report->add_option("--out", report_out, "directory for report.csv/report.svg");

    CLI11_PARSE(app, argc, argv);

    try {
        if (pretrain->parsed()) return cmd_pretrain(config_path);
        if (distill->parsed()) {
            return cmd_distill(config_path, delta_opt->count() ? &delta : nullptr,
                               gamma_opt->count() ? &gamma : nullptr,
                               seed_opt->count() ? &seed : nullptr);
        }
        if (eval_cmd->parsed()) return cmd_eval(ckpt_path, config_path);
        if (ablate->parsed()) return cmd_ablate(config_path);
        if (report->parsed()) return cmd_report(run_dirs, report_out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "ddad: %s\n", e.what());
        return 1;
    }
    return 2;
}
