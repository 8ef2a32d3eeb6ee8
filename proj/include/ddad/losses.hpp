#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ddad/bn.hpp"
#include "ddad/ops.hpp"
#include "ddad/tensor.hpp"

// The five training objectives. All are pure functions building small graphs
// on the active tape; freezing a player is the caller's job (requires_grad on
// its parameters), except where a contract explicitly severs a path with
// detach.

namespace ddad {

class StaleStatisticsError : public Error {
public:
    using Error::Error;
};

// Exact closed-form KL(N(mu_p, var_p) || N(mu_q, var_q)) on plain doubles.
// This is the reference the statistic-matching loss is cross-checked against
// (and, in tests, what numerical quadrature verifies).
inline double gaussian_kl(double mu_p, double var_p, double mu_q, double var_q) {
    if (!(var_p > 0.0) || !(var_q > 0.0))
        throw ValueError("gaussian_kl: variances must be positive");
    double d = mu_p - mu_q;
    return 0.5 * std::log(var_q / var_p) + (var_p + d * d) / (2.0 * var_q) - 0.5;
}

// Per BN layer: per-channel KL(N(stored) || N(batch)) in closed form, summed
// over channels; layers averaged. Both variances get +eps so a constant
// channel in an adversarial batch stays finite. Differentiable through the
// batch statistics, which are live graph nodes into whatever produced the
// batch.
inline Tensor bn_divergence_loss(const std::vector<BNLayerRecord*>& records) {
    if (records.empty()) throw ValueError("bn_divergence_loss: no BN layers supplied");
    Tensor total;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const BNLayerRecord* rec = records[i];
        if (!rec->batch_fresh)
            throw StaleStatisticsError("bn_divergence_loss: layer " + std::to_string(i) +
                                       " has no batch statistics from a current forward");
        Tensor vt = scalar_add(rec->stored_var, kBnEps);   // constants
        Tensor vb = scalar_add(rec->batch_var, kBnEps);    // graph node
        Tensor log_ratio = scalar_mul(ddad::log(div(vb, vt)), 0.5);
        Tensor dmu = sub(rec->stored_mean, rec->batch_mean);
        Tensor frac = scalar_mul(div(add(vt, mul(dmu, dmu)), vb), 0.5);
        Tensor layer = sum(scalar_add(add(log_ratio, frac), -0.5));
        total = total.defined() ? add(total, layer) : layer;
    }
    return scalar_mul(total, 1.0 / static_cast<double>(records.size()));
}

namespace detail {

inline Tensor mean_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("probability tensors differ in shape: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    return mean(ddad::abs(sub(a, b)));
}

}  // namespace detail

// Mean absolute teacher-student disagreement, negated: the generator descends
// this to push samples where the two disagree most. Gradient flows through
// both probability tensors' graphs.
inline Tensor discrepancy_loss(const Tensor& teacher_probs, const Tensor& student_probs) {
    return scalar_mul(detail::mean_abs_diff(teacher_probs, student_probs), -1.0);
}

// The same disagreement, positive, for the student to descend. The teacher is
// a fixed target here, so its graph is cut.
inline Tensor student_distill_loss(const Tensor& teacher_probs, const Tensor& student_probs) {
    return detail::mean_abs_diff(teacher_probs.detach(), student_probs);
}

inline Tensor generator_loss(const Tensor& bn_term, const Tensor& discrepancy_term, double delta,
                             double gamma) {
    if (delta < 0.0 || gamma < 0.0)
        throw ValueError("generator_loss: weights must be non-negative");
    if (bn_term.numel() != 1 || discrepancy_term.numel() != 1)
        throw ShapeError("generator_loss: both terms must be scalars");
    return add(scalar_mul(bn_term, delta), scalar_mul(discrepancy_term, gamma));
}

// Data-driven baseline objective: cross-entropy on hard labels plus
// lambda-weighted KL between softened teacher and student rows (averaged over
// the batch). Only the student side carries gradient.
inline Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                      const std::vector<int>& labels, double tau, double lambda) {
    if (student_logits.shape() != teacher_logits.shape())
        throw ShapeError("kd_loss: logit shapes differ, " + shape_str(student_logits.shape()) +
                         " vs " + shape_str(teacher_logits.shape()));
    if (lambda < 0.0) throw ValueError("kd_loss: lambda must be non-negative");
    const int n = student_logits.shape()[0];
    Tensor ce = nll_from_log_probs(log_softmax_with_temperature(student_logits, 1.0), labels);
    Tensor t = teacher_logits.detach();
    Tensor pt = softmax_with_temperature(t, tau);
    Tensor lpt = log_softmax_with_temperature(t, tau);
    Tensor lps = log_softmax_with_temperature(student_logits, tau);
    Tensor kl = scalar_mul(sum(mul(pt, sub(lpt, lps))), 1.0 / n);
    return add(ce, scalar_mul(kl, lambda));
}

}  // namespace ddad
