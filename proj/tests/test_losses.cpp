#include <gtest/gtest.h>

#include <cmath>

#include "ddad/bn.hpp"
#include "ddad/losses.hpp"
#include "ddad/tape.hpp"
#include "test_support.hpp"

using namespace ddad;
using ddad::testing::expect_grad_matches;
using ddad::testing::gaussian_kl_quadrature;
using ddad::testing::random_tensor;

namespace {

Tensor random_probs(int n, int k, std::uint64_t salt, bool requires_grad = false) {
    Tensor logits = random_tensor({n, k}, salt, -3, 3, requires_grad);
    return softmax_with_temperature(logits, 1.0);
}

BNLayerRecord fresh_record(int channels, std::uint64_t salt) {
    BNLayerRecord rec = BNLayerRecord::make(channels);
    Rng rng(salt, 21);
    rng.fill_uniform(rec.stored_mean.values(), -1.0, 1.0);
    rng.fill_uniform(rec.stored_var.values(), 0.2, 3.0);
    rec.batch_mean = Tensor({channels});
    rec.batch_var = Tensor({channels});
    rng.fill_uniform(rec.batch_mean.values(), -1.0, 1.0);
    rng.fill_uniform(rec.batch_var.values(), 0.2, 3.0);
    rec.batch_fresh = true;
    return rec;
}

}  // namespace

// ---- closed-form Gaussian KL ----

TEST(GaussianKl, HandOracles) {
    EXPECT_DOUBLE_EQ(gaussian_kl(0.7, 1.3, 0.7, 1.3), 0.0);
    EXPECT_NEAR(gaussian_kl(0, 1, 1, 1), 0.5, 1e-15);
    EXPECT_NEAR(gaussian_kl(0, 1, 0, 4), std::log(2.0) + 0.125 - 0.5, 1e-15);
}

TEST(GaussianKl, RejectsBadVariances) {
    EXPECT_THROW(gaussian_kl(0, 0, 0, 1), ValueError);
    EXPECT_THROW(gaussian_kl(0, 1, 0, -2), ValueError);
}

TEST(GaussianKl, MatchesNumericalQuadrature) {
    Rng rng(77, 5);
    for (int i = 0; i < 60; ++i) {
        double mu_p = rng.uniform(-3, 3), mu_q = rng.uniform(-3, 3);
        double var_p = rng.uniform(0.05, 10), var_q = rng.uniform(0.05, 10);
        double closed = gaussian_kl(mu_p, var_p, mu_q, var_q);
        double quad = gaussian_kl_quadrature(mu_p, var_p, mu_q, var_q);
        EXPECT_NEAR(closed, quad, 1e-6)
            << "mu_p=" << mu_p << " var_p=" << var_p << " mu_q=" << mu_q << " var_q=" << var_q;
        EXPECT_GE(closed, -1e-12);
    }
}

TEST(GaussianKl, NotSymmetric) {
    EXPECT_NE(gaussian_kl(0, 1, 0, 4), gaussian_kl(0, 4, 0, 1));
}

// ---- BN statistic divergence ----

TEST(BnDivergence, ZeroWhenStatsAgree) {
    BNLayerRecord rec = fresh_record(3, 101);
    rec.batch_mean = rec.stored_mean.clone();
    rec.batch_var = rec.stored_var.clone();
    std::vector<BNLayerRecord*> records{&rec};
    EXPECT_DOUBLE_EQ(bn_divergence_loss(records).item(), 0.0);
}

TEST(BnDivergence, MatchesClosedFormPerChannel) {
    BNLayerRecord a = fresh_record(4, 102);
    BNLayerRecord b = fresh_record(2, 103);
    std::vector<BNLayerRecord*> records{&a, &b};
    double expected = 0.0;
    for (BNLayerRecord* rec : records) {
        double layer = 0.0;
        for (int c = 0; c < rec->channels; ++c)
            layer += gaussian_kl(rec->stored_mean.values()[c], rec->stored_var.values()[c] + kBnEps,
                                 rec->batch_mean.values()[c], rec->batch_var.values()[c] + kBnEps);
        expected += layer;
    }
    expected /= 2.0;
    EXPECT_NEAR(bn_divergence_loss(records).item(), expected, 1e-12);
}

TEST(BnDivergence, HandValueSingleChannel) {
    // stored N(0,1), batch N(1,1): closed form gives 0.5 (up to the eps fold)
    BNLayerRecord rec = BNLayerRecord::make(1);
    rec.batch_mean = Tensor::from_values({1}, {1.0});
    rec.batch_var = Tensor::from_values({1}, {1.0});
    rec.batch_fresh = true;
    std::vector<BNLayerRecord*> records{&rec};
    EXPECT_NEAR(bn_divergence_loss(records).item(), 0.5, 1e-4);

    rec.batch_mean.values()[0] = 0.0;
    rec.batch_var.values()[0] = 4.0;
    EXPECT_NEAR(bn_divergence_loss(records).item(), std::log(2.0) + 0.125 - 0.5, 1e-4);
}

TEST(BnDivergence, NonNegativeOverRandomStats) {
    for (int i = 0; i < 30; ++i) {
        BNLayerRecord rec = fresh_record(5, 200 + i);
        std::vector<BNLayerRecord*> records{&rec};
        EXPECT_GE(bn_divergence_loss(records).item(), -1e-12);
    }
}

TEST(BnDivergence, StaleOrMissingRecordsRejected) {
    BNLayerRecord rec = fresh_record(2, 104);
    rec.batch_fresh = false;
    std::vector<BNLayerRecord*> records{&rec};
    EXPECT_THROW(bn_divergence_loss(records), StaleStatisticsError);
    EXPECT_THROW(bn_divergence_loss({}), ValueError);
}

TEST(BnDivergence, SurvivesZeroVarianceBatch) {
    BNLayerRecord rec = fresh_record(2, 105);
    rec.batch_var.values() = {0.0, 0.0};  // constant channels, eps-stabilized
    std::vector<BNLayerRecord*> records{&rec};
    EXPECT_TRUE(std::isfinite(bn_divergence_loss(records).item()));
}

TEST(BnDivergence, GradientFlowsThroughRealForward) {
    // x -> BN forward -> statistic divergence: gradient vs finite differences
    Tensor x = random_tensor({6, 3}, 106, -2, 2, true);
    BNLayerRecord rec = BNLayerRecord::make(3);
    Rng rng(107, 23);
    rng.fill_uniform(rec.stored_mean.values(), -0.5, 0.5);
    rng.fill_uniform(rec.stored_var.values(), 0.5, 2.0);
    auto make_out = [&] {
        batchnorm_forward(x, rec, true, /*frozen=*/true);
        std::vector<BNLayerRecord*> records{&rec};
        return bn_divergence_loss(records);
    };
    expect_grad_matches(make_out, {x}, 2e-4);
}

// ---- discrepancy / distill pair ----

TEST(Discrepancy, HandOracle) {
    Tensor pt = Tensor::from_values({1, 2}, {0.7, 0.3});
    Tensor ps = Tensor::from_values({1, 2}, {0.5, 0.5});
    EXPECT_NEAR(discrepancy_loss(pt, ps).item(), -0.2, 1e-15);
    EXPECT_NEAR(student_distill_loss(pt, ps).item(), 0.2, 1e-15);
    EXPECT_DOUBLE_EQ(discrepancy_loss(pt, pt).item(), 0.0);
}

TEST(Discrepancy, AntisymmetryIsBitExact) {
    for (int i = 0; i < 25; ++i) {
        Tensor pt = random_probs(4, 5, 300 + i);
        Tensor ps = random_probs(4, 5, 400 + i);
        double a = student_distill_loss(pt, ps).item();
        double b = discrepancy_loss(pt, ps).item();
        EXPECT_EQ(a, -b);  // to the last bit — shared implementation, exact negation
    }
}

TEST(Discrepancy, BoundedByClassCount) {
    for (int i = 0; i < 20; ++i) {
        int k = 2 + i % 6;
        Tensor pt = random_probs(3, k, 500 + i);
        Tensor ps = random_probs(3, k, 600 + i);
        double v = discrepancy_loss(pt, ps).item();
        EXPECT_LE(v, 0.0);
        EXPECT_GE(v, -2.0 / k);  // row L1 distance of two distributions is at most 2
    }
}

TEST(Discrepancy, ShapeMismatchRejected) {
    Tensor a = random_probs(2, 3, 700);
    Tensor b = random_probs(2, 4, 701);
    EXPECT_THROW(discrepancy_loss(a, b), ShapeError);
    EXPECT_THROW(student_distill_loss(a, b), ShapeError);
}

TEST(Discrepancy, GradientSidesDiffer) {
    // generator objective: both prob tensors carry gradient; student
    // objective: only the student side does
    Tensor tl = random_tensor({3, 4}, 702, -2, 2, true);
    Tensor sl = random_tensor({3, 4}, 703, -2, 2, true);
    {
        Tape tape;
        Tape::Scope scope(tape);
        Tensor loss = discrepancy_loss(softmax_with_temperature(tl, 1.0),
                                       softmax_with_temperature(sl, 1.0));
        tape.backward(loss);
    }
    EXPECT_TRUE(tl.has_grad());
    EXPECT_TRUE(sl.has_grad());

    tl.zero_grad();
    sl.zero_grad();
    {
        Tape tape;
        Tape::Scope scope(tape);
        Tensor loss = student_distill_loss(softmax_with_temperature(tl, 1.0),
                                           softmax_with_temperature(sl, 1.0));
        tape.backward(loss);
    }
    EXPECT_FALSE(tl.has_grad());  // teacher path severed
    EXPECT_TRUE(sl.has_grad());
}

TEST(Discrepancy, GradientsMatchFiniteDifferences) {
    Tensor tl = random_tensor({4, 3}, 704, -2, 2, true);
    Tensor sl = random_tensor({4, 3}, 705, -2, 2, true);
    expect_grad_matches(
        [&] {
            return discrepancy_loss(softmax_with_temperature(tl, 2.0),
                                    softmax_with_temperature(sl, 2.0));
        },
        {tl, sl}, 2e-4);
    expect_grad_matches(
        [&] {
            return student_distill_loss(softmax_with_temperature(tl, 1.0),
                                        softmax_with_temperature(sl, 1.0));
        },
        {sl}, 2e-4);
}

// ---- combined generator objective ----

TEST(GeneratorLoss, LinearCombination) {
    Tensor bn = Tensor::scalar(2.0);
    Tensor disc = Tensor::scalar(-0.3);
    EXPECT_NEAR(generator_loss(bn, disc, 0.01, 0.1).item(), -0.01, 1e-15);
    EXPECT_DOUBLE_EQ(generator_loss(bn, disc, 0.0, 0.0).item(), 0.0);
    // delta=0: pure discrepancy objective
    EXPECT_DOUBLE_EQ(generator_loss(bn, disc, 0.0, 1.0).item(), disc.item());
}

TEST(GeneratorLoss, Validation) {
    Tensor bn = Tensor::scalar(1.0);
    Tensor disc = Tensor::scalar(-1.0);
    EXPECT_THROW(generator_loss(bn, disc, -0.01, 0.1), ValueError);
    EXPECT_THROW(generator_loss(bn, disc, 0.01, -0.1), ValueError);
    Tensor vec = Tensor::from_values({2}, {1, 2});
    EXPECT_THROW(generator_loss(vec, disc, 0.01, 0.1), ShapeError);
}

TEST(GeneratorLoss, GradientWeightsAreExact) {
    Tensor bn = Tensor::scalar(2.0, true);
    Tensor disc = Tensor::scalar(-0.3, true);
    Tape tape;
    Tape::Scope scope(tape);
    tape.backward(generator_loss(bn, disc, 0.01, 0.1));
    EXPECT_DOUBLE_EQ(bn.grad()[0], 0.01);
    EXPECT_DOUBLE_EQ(disc.grad()[0], 0.1);
}

// ---- data-driven baseline objective ----

TEST(KdLoss, IdenticalLogitsZeroKlTerm) {
    Tensor logits = random_tensor({3, 4}, 800, -2, 2, false);
    std::vector<int> labels{0, 2, 3};
    double with = kd_loss(logits, logits, labels, 2.0, 5.0).item();
    double without = kd_loss(logits, logits, labels, 2.0, 0.0).item();
    EXPECT_DOUBLE_EQ(with, without);
}

TEST(KdLoss, LambdaZeroIsPlainCrossEntropy) {
    Tensor sl = random_tensor({3, 4}, 801, -2, 2, false);
    Tensor tl = random_tensor({3, 4}, 802, -2, 2, false);
    std::vector<int> labels{1, 0, 3};
    double got = kd_loss(sl, tl, labels, 3.0, 0.0).item();
    double ce = nll_from_log_probs(log_softmax_with_temperature(sl, 1.0), labels).item();
    EXPECT_DOUBLE_EQ(got, ce);
}

TEST(KdLoss, KlTermHandOracle) {
    // teacher softens to [0.75, 0.25], student to [0.5, 0.5] at tau=1
    Tensor tl = Tensor::from_values({1, 2}, {std::log(0.75), std::log(0.25)});
    Tensor sl = Tensor::from_values({1, 2}, {std::log(0.5), std::log(0.5)});
    std::vector<int> labels{0};
    double kl = kd_loss(sl, tl, labels, 1.0, 1.0).item() - kd_loss(sl, tl, labels, 1.0, 0.0).item();
    EXPECT_NEAR(kl, 0.75 * std::log(1.5) + 0.25 * std::log(0.5), 1e-12);
}

TEST(KdLoss, Validation) {
    Tensor sl = random_tensor({2, 3}, 803, -1, 1, false);
    Tensor tl = random_tensor({2, 3}, 804, -1, 1, false);
    EXPECT_THROW(kd_loss(sl, tl, {0, 3}, 1.0, 1.0), ValueError);   // label range
    EXPECT_THROW(kd_loss(sl, tl, {0}, 1.0, 1.0), ShapeError);      // label count
    EXPECT_THROW(kd_loss(sl, tl, {0, 1}, 1.0, -1.0), ValueError);  // negative lambda
    Tensor wide = random_tensor({2, 4}, 805, -1, 1, false);
    EXPECT_THROW(kd_loss(sl, wide, {0, 1}, 1.0, 1.0), ShapeError);
}

TEST(KdLoss, OnlyStudentSideCarriesGradient) {
    Tensor sl = random_tensor({3, 4}, 806, -2, 2, true);
    Tensor tl = random_tensor({3, 4}, 807, -2, 2, true);
    std::vector<int> labels{0, 1, 2};
    {
        Tape tape;
        Tape::Scope scope(tape);
        tape.backward(kd_loss(sl, tl, labels, 2.0, 1.0));
    }
    EXPECT_TRUE(sl.has_grad());
    EXPECT_FALSE(tl.has_grad());
    sl.zero_grad();
    expect_grad_matches([&] { return kd_loss(sl, tl, labels, 2.0, 0.7); }, {sl}, 2e-4);
}
