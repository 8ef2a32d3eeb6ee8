#pragma once

// The two-stage alternating training loop plus teacher pretraining and
// evaluation. Each epoch runs steps_per_epoch generator updates (statistics
// matching + discrepancy maximization against frozen teacher and student)
// followed by steps_per_epoch student updates (discrepancy minimization
// against the frozen teacher on freshly generated samples). No real data is
// ever visible to the generator or the student; the held-out test split is
// used only to evaluate the student after each epoch.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ddad/checkpoint.hpp"
#include "ddad/config.hpp"
#include "ddad/dataset.hpp"
#include "ddad/image_io.hpp"
#include "ddad/losses.hpp"
#include "ddad/metrics.hpp"
#include "ddad/network.hpp"
#include "ddad/optim.hpp"
#include "ddad/ops.hpp"
#include "ddad/random.hpp"
#include "ddad/tape.hpp"

namespace ddad {

// Standard-normal noise batch from the given stream.
inline Tensor sample_noise(int batch, int d_z, Rng& rng) {
    if (batch < 1) throw ValueError("sample_noise: batch must be >= 1");
    if (d_z < 1) throw ValueError("sample_noise: noise dimension must be >= 1");
    std::vector<double> values(static_cast<std::size_t>(batch) * d_z);
    rng.fill_normal(values);
    return Tensor::from_values({batch, d_z}, values);
}

// Fraction of argmax-correct predictions over the whole dataset. Runs in
// inference mode (no graph recording, stored batch statistics) and restores
// the network's previous mode afterwards.
inline double evaluate_accuracy(NetworkState& net, const SyntheticDataset& ds) {
    if (ds.size() == 0) throw ValueError("evaluate_accuracy: dataset is empty");
    const Mode saved = net.mode();
    net.set_mode(Mode::Inference);
    int correct = 0;
    const int chunk = 256;
    for (int begin = 0; begin < ds.size(); begin += chunk) {
        const int count = std::min(chunk, ds.size() - begin);
        Tensor logits = net.forward(dataset_batch(ds, begin, count));
        const int k = logits.shape()[1];
        for (int i = 0; i < count; ++i) {
            int best = 0;
            for (int c = 1; c < k; ++c) {
                if (logits.values()[static_cast<std::size_t>(i) * k + c] >
                    logits.values()[static_cast<std::size_t>(i) * k + best]) {
                    best = c;
                }
            }
            if (best == ds.label_at(begin + i)) ++correct;
        }
    }
    net.set_mode(saved);
    return static_cast<double>(correct) / ds.size();
}

// Step-rate schedule shared by teacher pretraining and the student stage:
// base rate, then x0.1 at 60% and again at 85% of the epoch budget.
inline double lr_decay_factor(int epoch, int total_epochs) {
    if (total_epochs <= 0) return 1.0;
    double factor = 1.0;
    if (epoch >= static_cast<int>(std::floor(0.60 * total_epochs))) factor *= 0.1;
    if (epoch >= static_cast<int>(std::floor(0.85 * total_epochs))) factor *= 0.1;
    return factor;
}

namespace detail {

inline std::pair<Tensor, std::vector<int>> gather_batch(const SyntheticDataset& ds,
                                                        const std::vector<int>& order, int begin,
                                                        int count) {
    const Shape& full = ds.inputs.shape();
    int dim = 1;
    for (std::size_t d = 1; d < full.size(); ++d) dim *= full[d];
    Shape batch_shape = full;
    batch_shape[0] = count;
    std::vector<double> values(static_cast<std::size_t>(count) * dim);
    std::vector<int> labels(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const int src = order[static_cast<std::size_t>(begin + i)];
        std::copy(ds.inputs.values().begin() + static_cast<std::size_t>(src) * dim,
                  ds.inputs.values().begin() + static_cast<std::size_t>(src + 1) * dim,
                  values.begin() + static_cast<std::size_t>(i) * dim);
        labels[static_cast<std::size_t>(i)] = ds.label_at(src);
    }
    return {Tensor::from_values(batch_shape, values), std::move(labels)};
}

}  // namespace detail

struct PretrainResult {
    NetworkState teacher;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
};

// Supervised training of the teacher with cross-entropy, SGD momentum 0.9,
// weight decay 5e-4, and the shared step-rate schedule. This is the only
// routine in the project that trains on real data.
inline PretrainResult pretrain_teacher(const SyntheticDataset& train_set,
                                       const SyntheticDataset& test_set, const NetworkSpec& spec,
                                       int epochs, double lr, int batch_size, long seed) {
    if (epochs < 0) throw ValueError("pretrain_teacher: epochs must be >= 0");
    if (batch_size < 2) throw ValueError("pretrain_teacher: batch_size must be >= 2");
    if (!(lr > 0.0)) throw ValueError("pretrain_teacher: lr must be > 0");

    NetworkState net(spec, mix_seed(static_cast<std::uint64_t>(seed), 11));
    Sgd opt(net.params(), lr, 0.9, 5e-4);
    Rng order_rng(static_cast<std::uint64_t>(seed), 12);

    for (int epoch = 0; epoch < epochs; ++epoch) {
        opt.set_lr(lr * lr_decay_factor(epoch, epochs));
        std::vector<int> order = order_rng.permutation(train_set.size());
        net.set_mode(Mode::Training);
        for (int begin = 0; begin + batch_size <= train_set.size(); begin += batch_size) {
            auto [x, labels] = detail::gather_batch(train_set, order, begin, batch_size);
            // A divergent run can surface either as a non-finite loss value or
            // as a non-finite intermediate inside some op; both mean the same
            // thing here.
            try {
                Tape tape;
                {
                    Tape::Scope scope(tape);
                    Tensor logits = net.forward(x);
                    Tensor loss =
                        nll_from_log_probs(log_softmax_with_temperature(logits, 1.0), labels);
                    if (!all_finite(loss.values())) throw NonFiniteError("non-finite loss");
                    net.zero_grad();
                    tape.backward(loss);
                }
                opt.step();
            } catch (const NonFiniteError& e) {
                throw DivergenceError("teacher pretraining diverged at epoch " +
                                      std::to_string(epoch) + ": " + e.what());
            }
        }
    }

    PretrainResult result{std::move(net), 0.0, 0.0};
    result.train_accuracy = evaluate_accuracy(result.teacher, train_set);
    result.test_accuracy = evaluate_accuracy(result.teacher, test_set);
    return result;
}

struct GeneratorStepResult {
    double generator_loss = 0.0;
    double bn_term = 0.0;
    double discrepancy_term = 0.0;
};

// One generator update. The teacher runs a training-mode forward with frozen
// running statistics so its per-batch statistics are observable; the student
// runs in inference mode. Both have requires_grad disabled, so the only
// parameters the tape updates are the generator's — gradient still flows
// through both frozen forwards back to the generated samples.
inline GeneratorStepResult generator_step(NetworkState& gen, NetworkState& teacher,
                                          NetworkState& student, Adam& opt,
                                          const DistillConfig& cfg, Rng& noise_rng) {
    gen.set_mode(Mode::Training);
    gen.set_frozen(false);
    gen.set_requires_grad(true);
    teacher.set_mode(Mode::Training);
    teacher.set_frozen(true);
    teacher.set_requires_grad(false);
    student.set_mode(Mode::Inference);
    student.set_requires_grad(false);

    GeneratorStepResult result;
    Tape tape;
    {
        Tape::Scope scope(tape);
        Tensor z = sample_noise(cfg.batch_size, cfg.noise_dim, noise_rng);
        Tensor x = gen.forward(z);
        auto [teacher_logits, records] = teacher.forward_with_bn_capture(x);
        Tensor student_logits = student.forward(x);
        Tensor bn_term = bn_divergence_loss(records);
        Tensor disc_term = discrepancy_loss(softmax_with_temperature(teacher_logits, cfg.tau),
                                            softmax_with_temperature(student_logits, cfg.tau));
        Tensor loss = generator_loss(bn_term, disc_term, cfg.delta, cfg.gamma);
        if (!all_finite(loss.values())) {
            throw NonFiniteError("generator step produced a non-finite loss (bn_term=" +
                                 std::to_string(bn_term.item()) + ", discrepancy_term=" +
                                 std::to_string(disc_term.item()) + ")");
        }
        result.generator_loss = loss.item();
        result.bn_term = bn_term.item();
        result.discrepancy_term = disc_term.item();
        gen.zero_grad();
        tape.backward(loss);
    }
    opt.step();
    return result;
}

// One student update on freshly generated samples. Generator and teacher
// forwards run outside the tape (their outputs are constants of this stage);
// the teacher uses a training-mode forward with frozen statistics — the same
// normalization it exposes to the generator stage — so a student that is an
// exact parameter copy of the teacher sees a loss of exactly zero.
inline double student_step(NetworkState& student, NetworkState& teacher, NetworkState& gen,
                           Sgd& opt, const DistillConfig& cfg, Rng& noise_rng,
                           StudentObjective objective = StudentObjective::Mae) {
    gen.set_mode(Mode::Inference);
    gen.set_requires_grad(false);
    teacher.set_mode(Mode::Training);
    teacher.set_frozen(true);
    teacher.set_requires_grad(false);
    student.set_mode(Mode::Training);
    student.set_frozen(false);
    student.set_requires_grad(true);

    Tensor z = sample_noise(cfg.batch_size, cfg.noise_dim, noise_rng);
    Tensor x = gen.forward(z);
    Tensor teacher_probs = softmax_with_temperature(teacher.forward(x), cfg.tau);

    double loss_value = 0.0;
    Tape tape;
    {
        Tape::Scope scope(tape);
        Tensor student_probs = softmax_with_temperature(student.forward(x), cfg.tau);
        Tensor loss;
        if (objective == StudentObjective::Mae) {
            loss = student_distill_loss(teacher_probs, student_probs);
        } else {
            // KL(P_t || P_s) averaged over the batch; teacher side constant.
            const int n = student_probs.shape()[0];
            Tensor log_pt = log(teacher_probs);
            Tensor log_ps = log(student_probs);
            loss = scalar_mul(sum(mul(teacher_probs, sub(log_pt, log_ps))), 1.0 / n);
        }
        if (!all_finite(loss.values())) {
            throw NonFiniteError("student step produced a non-finite loss");
        }
        loss_value = loss.item();
        student.zero_grad();
        tape.backward(loss);
    }
    opt.step();
    return loss_value;
}

struct StepEvent {
    enum class Stage { Generator, Student };
    Stage stage;
    int epoch = 0;
    int index = 0;  // step index within the stage
    double loss = 0.0;
};

struct RunOptions {
    std::function<void(const StepEvent&)> step_observer;  // called after every step
    std::string run_dir;          // when non-empty, all artifacts are written here
    bool allow_degenerate = false;  // permit delta == gamma == 0 (ablation control)
    double teacher_accuracy = -1.0;  // recorded in the summary; computed if < 0
};

// The full alternating run: loads the teacher, builds a fresh student and
// generator, alternates the two stages for cfg.distill.epochs epochs,
// evaluates the student on the held-out test split each epoch, and (when a
// run directory is given) leaves behind metrics.csv, summary.json, the final
// student/generator checkpoints, a generated-sample image, and an echo of
// the fully-resolved config. Throws on non-finite losses after writing the
// metrics collected so far.
inline RunArtifacts run_ddad(const std::string& teacher_ckpt_path, const ExperimentConfig& cfg,
                             const RunOptions& opts = {}) {
    cfg.validate(opts.allow_degenerate);
    const DistillConfig& d = cfg.distill;
    const long seed = d.seed;

    NetworkState teacher = load_checkpoint(teacher_ckpt_path);
    const Shape expected_input = task_input_shape(cfg.task);
    if (teacher.spec().input_shape != expected_input) {
        throw ConfigError("teacher checkpoint expects input " +
                          shape_str(teacher.spec().input_shape) + " but task '" +
                          to_string(cfg.task) + "' provides " + shape_str(expected_input));
    }
    const int num_classes = teacher.spec().output_shape().back();
    if (num_classes != cfg.classes) {
        throw ConfigError("teacher checkpoint has " + std::to_string(num_classes) +
                          " output classes but the config asks for " + std::to_string(cfg.classes));
    }
    teacher.set_requires_grad(false);
    const std::string fingerprint_before = param_fingerprint(teacher);

    auto [train_set, test_set] = make_dataset(cfg.dataset_config(), cfg.data_seed);
    (void)train_set;  // distillation never touches the training split

    // Student: half-width counterpart by default, or the teacher's own
    // architecture in the self-distillation setting.
    NetworkSpec student_spec;
    if (cfg.student_arch == StudentArch::Teacher) {
        student_spec = teacher.spec();
        student_spec.name = "student";
    } else if (cfg.task == TaskKind::TinyImages) {
        student_spec = student_image_spec(kImageChannels, num_classes);
    } else {
        student_spec = student_vector_spec(task_input_dim(cfg.task), num_classes);
    }
    NetworkSpec gen_spec = cfg.task == TaskKind::TinyImages
                               ? generator_image_spec(d.noise_dim, kImageChannels, cfg.gen_deconv)
                               : generator_vector_spec(d.noise_dim, task_input_dim(cfg.task));

    NetworkState student(student_spec, mix_seed(static_cast<std::uint64_t>(seed), 21));
    NetworkState gen(gen_spec, mix_seed(static_cast<std::uint64_t>(seed), 22));

    Sgd student_opt(student.params(), d.lr_student, 0.9, 5e-4);
    Adam gen_opt(gen.params(), d.lr_generator);
    Rng noise_rng(static_cast<std::uint64_t>(seed), 23);

    double teacher_accuracy = opts.teacher_accuracy;
    if (teacher_accuracy < 0.0) teacher_accuracy = evaluate_accuracy(teacher, test_set);

    RunArtifacts artifacts;
    artifacts.config = d;
    artifacts.teacher_fingerprint_before = fingerprint_before;

    const bool write = !opts.run_dir.empty();
    if (write) std::filesystem::create_directories(opts.run_dir);

    const auto started = std::chrono::steady_clock::now();
    double best_accuracy = -1.0;
    int epochs_since_best = 0;

    try {
        for (int epoch = 0; epoch < d.epochs; ++epoch) {
            student_opt.set_lr(d.lr_student * lr_decay_factor(epoch, d.epochs));

            double gen_loss_sum = 0.0, bn_sum = 0.0, disc_sum = 0.0, student_loss_sum = 0.0;
            for (int step = 0; step < d.steps_per_epoch; ++step) {
                GeneratorStepResult r = generator_step(gen, teacher, student, gen_opt, d, noise_rng);
                gen_loss_sum += r.generator_loss;
                bn_sum += r.bn_term;
                disc_sum += r.discrepancy_term;
                if (opts.step_observer) {
                    opts.step_observer({StepEvent::Stage::Generator, epoch, step, r.generator_loss});
                }
            }
            for (int step = 0; step < d.steps_per_epoch; ++step) {
                const double loss = student_step(student, teacher, gen, student_opt, d, noise_rng,
                                                 cfg.student_objective);
                student_loss_sum += loss;
                if (opts.step_observer) {
                    opts.step_observer({StepEvent::Stage::Student, epoch, step, loss});
                }
            }

            MetricsRecord record;
            record.epoch = epoch;
            record.generator_loss = gen_loss_sum / d.steps_per_epoch;
            record.bn_term = bn_sum / d.steps_per_epoch;
            record.discrepancy_term = disc_sum / d.steps_per_epoch;
            record.student_loss = student_loss_sum / d.steps_per_epoch;
            record.student_test_accuracy = evaluate_accuracy(student, test_set);
            record.wallclock_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
            record.seed = seed;
            artifacts.metrics.push_back(record);

            if (record.student_test_accuracy > best_accuracy) {
                best_accuracy = record.student_test_accuracy;
                epochs_since_best = 0;
            } else if (cfg.early_stop_patience > 0 &&
                       ++epochs_since_best >= cfg.early_stop_patience) {
                break;
            }
        }
    } catch (...) {
        if (write) write_metrics_csv(opts.run_dir + "/metrics.csv", artifacts.metrics);
        throw;
    }

    artifacts.teacher_fingerprint_after = param_fingerprint(teacher);
    if (artifacts.teacher_fingerprint_after != artifacts.teacher_fingerprint_before) {
        throw Error("teacher parameters changed during a distillation run");
    }

    if (write) {
        ExperimentConfig echo = cfg;
        echo.distill.seed = seed;
        detail::write_file_atomic(opts.run_dir + "/resolved.cfg", render_config(echo));
        write_metrics_csv(opts.run_dir + "/metrics.csv", artifacts.metrics);

        artifacts.final_student_checkpoint = opts.run_dir + "/student.ckpt";
        save_checkpoint(student, artifacts.final_student_checkpoint);
        save_checkpoint(gen, opts.run_dir + "/generator.ckpt");

        gen.set_mode(Mode::Inference);
        Rng dump_rng(static_cast<std::uint64_t>(seed), 24);
        Tensor dump_batch = gen.forward(sample_noise(64, d.noise_dim, dump_rng));
        artifacts.sample_dump = write_sample_dump(opts.run_dir + "/samples", dump_batch);

        write_json_file(opts.run_dir + "/summary.json",
                        run_summary_json(artifacts, teacher_accuracy));
    }
    return artifacts;
}

}  // namespace ddad
