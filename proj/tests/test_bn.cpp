#include <gtest/gtest.h>

#include <cmath>

#include "ddad/bn.hpp"
#include "ddad/tape.hpp"
#include "test_support.hpp"

using namespace ddad;
using ddad::testing::expect_grad_matches;
using ddad::testing::random_tensor;

namespace {

// per-channel mean/biased variance computed by a plain loop, independent of
// the op implementations under test
void reference_stats(const Tensor& x, std::vector<double>& mean, std::vector<double>& var) {
    const int n = x.shape()[0], c = x.shape()[1];
    std::int64_t inner = x.numel() / (static_cast<std::int64_t>(n) * c);
    mean.assign(c, 0.0);
    var.assign(c, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j)
            for (std::int64_t k = 0; k < inner; ++k)
                mean[j] += x.values()[(static_cast<std::size_t>(i) * c + j) * inner + k];
    for (int j = 0; j < c; ++j) mean[j] /= static_cast<double>(n * inner);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j)
            for (std::int64_t k = 0; k < inner; ++k) {
                double d = x.values()[(static_cast<std::size_t>(i) * c + j) * inner + k] - mean[j];
                var[j] += d * d;
            }
    for (int j = 0; j < c; ++j) var[j] /= static_cast<double>(n * inner);
}

}  // namespace

TEST(BatchNorm, TrainingNormalizesToZeroMeanUnitVariance) {
    Tensor x = random_tensor({16, 3}, 31, -2, 3, false);
    BNLayerRecord rec = BNLayerRecord::make(3);
    Tensor y = batchnorm_forward(x, rec, /*training=*/true);
    std::vector<double> mean, var;
    reference_stats(y, mean, var);
    for (int c = 0; c < 3; ++c) {
        EXPECT_NEAR(mean[c], 0.0, 1e-12);
        EXPECT_NEAR(var[c], 1.0, 1e-4);  // short of 1 by the eps inside the sqrt
    }
}

TEST(BatchNorm, CapturedStatsMatchIndependentComputation) {
    Tensor x = random_tensor({8, 4}, 32, -1, 5, false);
    BNLayerRecord rec = BNLayerRecord::make(4);
    batchnorm_forward(x, rec, true);
    ASSERT_TRUE(rec.batch_fresh);
    std::vector<double> mean, var;
    reference_stats(x, mean, var);
    for (int c = 0; c < 4; ++c) {
        EXPECT_NEAR(rec.batch_mean.values()[c], mean[c], 1e-12);
        EXPECT_NEAR(rec.batch_var.values()[c], var[c], 1e-12);
    }
}

TEST(BatchNorm, FourDimensionalInput) {
    Tensor x = random_tensor({3, 2, 4, 4}, 33, -2, 2, false);
    BNLayerRecord rec = BNLayerRecord::make(2);
    batchnorm_forward(x, rec, true);
    std::vector<double> mean, var;
    reference_stats(x, mean, var);
    for (int c = 0; c < 2; ++c) {
        EXPECT_NEAR(rec.batch_mean.values()[c], mean[c], 1e-12);
        EXPECT_NEAR(rec.batch_var.values()[c], var[c], 1e-12);
    }
}

TEST(BatchNorm, RejectsTinyBatchAndChannelMismatch) {
    BNLayerRecord rec = BNLayerRecord::make(3);
    Tensor one({1, 3}, 1.0);
    EXPECT_THROW(batchnorm_forward(one, rec, true), ValueError);
    Tensor wrong({4, 5}, 1.0);
    EXPECT_THROW(batchnorm_forward(wrong, rec, true), ShapeError);
    Tensor rank3({2, 3, 4}, 1.0);
    EXPECT_THROW(batchnorm_forward(rank3, rec, true), ShapeError);
    // inference mode has no batch-size requirement
    EXPECT_NO_THROW(batchnorm_forward(one, rec, false));
}

TEST(BatchNorm, ConstantChannelIsStabilizedNotFatal) {
    Tensor x({4, 2}, 7.0);  // zero variance everywhere
    BNLayerRecord rec = BNLayerRecord::make(2);
    Tensor y;
    ASSERT_NO_THROW(y = batchnorm_forward(x, rec, true));
    EXPECT_TRUE(all_finite(y.values()));
    for (double v : y.values()) EXPECT_NEAR(v, 0.0, 1e-12);  // centered to shift=0
}

TEST(BatchNorm, RunningStatsFollowMomentumEma) {
    Tensor x = random_tensor({8, 2}, 34, -1, 1, false);
    BNLayerRecord rec = BNLayerRecord::make(2);
    batchnorm_forward(x, rec, true);
    std::vector<double> mean, var;
    reference_stats(x, mean, var);
    const double unbias = 8.0 / 7.0;
    for (int c = 0; c < 2; ++c) {
        EXPECT_NEAR(rec.stored_mean.values()[c], 0.1 * mean[c], 1e-12);
        EXPECT_NEAR(rec.stored_var.values()[c], 0.9 * 1.0 + 0.1 * var[c] * unbias, 1e-12);
    }
}

TEST(BatchNorm, FrozenBlocksRunningUpdate) {
    Tensor x = random_tensor({8, 2}, 35, -1, 1, false);
    BNLayerRecord rec = BNLayerRecord::make(2);
    std::vector<double> m0 = rec.stored_mean.values(), v0 = rec.stored_var.values();
    batchnorm_forward(x, rec, true, /*frozen=*/true);
    EXPECT_EQ(rec.stored_mean.values(), m0);
    EXPECT_EQ(rec.stored_var.values(), v0);
    EXPECT_TRUE(rec.batch_fresh);  // capture still happens
}

TEST(BatchNorm, InferenceUsesStoredStats) {
    BNLayerRecord rec = BNLayerRecord::make(1);
    rec.stored_mean.values()[0] = 2.0;
    rec.stored_var.values()[0] = 4.0;
    rec.scale.values()[0] = 3.0;
    rec.shift.values()[0] = -1.0;
    Tensor x = Tensor::from_values({2, 1}, {2.0, 4.0});
    Tensor y = batchnorm_forward(x, rec, false);
    // y = 3*(x-2)/sqrt(4+eps) - 1
    EXPECT_NEAR(y.values()[0], -1.0, 1e-12);
    EXPECT_NEAR(y.values()[1], 3.0 * 2.0 / std::sqrt(4.0 + kBnEps) - 1.0, 1e-12);
    EXPECT_FALSE(rec.batch_fresh);
}

TEST(BatchNorm, AffineParametersApply) {
    Tensor x = random_tensor({6, 2}, 36, -1, 1, false);
    BNLayerRecord rec = BNLayerRecord::make(2);
    rec.scale.values() = {2.0, 0.5};
    rec.shift.values() = {1.0, -3.0};
    Tensor y = batchnorm_forward(x, rec, true);
    std::vector<double> mean, var;
    reference_stats(y, mean, var);
    EXPECT_NEAR(mean[0], 1.0, 1e-12);
    EXPECT_NEAR(mean[1], -3.0, 1e-12);
    EXPECT_NEAR(var[0], 4.0, 4e-4);
    EXPECT_NEAR(var[1], 0.25, 1e-4);
}

TEST(BatchNorm, GradientsMatchFiniteDifferences) {
    Tensor x = random_tensor({5, 3}, 37, -2, 2);
    BNLayerRecord rec = BNLayerRecord::make(3);
    rec.scale.values() = {1.2, 0.8, -0.5};
    rec.shift.values() = {0.1, -0.2, 0.3};
    expect_grad_matches([&] { return batchnorm_forward(x, rec, true, true); },
                        {x, rec.scale, rec.shift}, 2e-4);

    Tensor fm = random_tensor({3, 2, 2, 2}, 38, -2, 2);
    BNLayerRecord rec4 = BNLayerRecord::make(2);
    expect_grad_matches([&] { return batchnorm_forward(fm, rec4, true, true); },
                        {fm, rec4.scale, rec4.shift}, 2e-4);
}

TEST(BatchNorm, InferenceGradientsMatchFiniteDifferences) {
    Tensor x = random_tensor({4, 2}, 39, -2, 2);
    BNLayerRecord rec = BNLayerRecord::make(2);
    rec.stored_mean.values() = {0.3, -0.4};
    rec.stored_var.values() = {1.5, 0.7};
    expect_grad_matches([&] { return batchnorm_forward(x, rec, false); },
                        {x, rec.scale, rec.shift}, 2e-4);
}
