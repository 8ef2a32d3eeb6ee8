#include <gtest/gtest.h>

#include <cmath>

#include "ddad/optim.hpp"
#include "ddad/tensor.hpp"

using namespace ddad;

namespace {

Tensor param_with_grad(double value, double grad) {
    Tensor p = Tensor::scalar(value, true);
    p.ensure_grad();
    p.grad()[0] = grad;
    return p;
}

}  // namespace

TEST(Sgd, PlainStepMatchesDefinition) {
    Tensor p = param_with_grad(1.0, 1.0);
    Sgd opt({p}, 0.1);
    opt.step();
    EXPECT_DOUBLE_EQ(p.values()[0], 0.9);
}

TEST(Sgd, ParamWithoutGradIsUntouched) {
    Tensor p = Tensor::scalar(2.5, true);  // no grad buffer at all
    Sgd opt({p}, 0.1, 0.9, 0.01);
    opt.step();
    EXPECT_DOUBLE_EQ(p.values()[0], 2.5);
}

TEST(Sgd, MomentumAccumulates) {
    // v1 = 1, p = 1 - 0.1; v2 = 0.9 + 1 = 1.9, p = 0.9 - 0.19
    Tensor p = param_with_grad(1.0, 1.0);
    Sgd opt({p}, 0.1, 0.9);
    opt.step();
    EXPECT_DOUBLE_EQ(p.values()[0], 0.9);
    p.grad()[0] = 1.0;
    opt.step();
    EXPECT_DOUBLE_EQ(p.values()[0], 0.9 - 0.1 * 1.9);
}

TEST(Sgd, WeightDecayActsThroughGradient) {
    // zero gradient but decay 0.5: effective grad = 0.5 * 2 = 1
    Tensor p = param_with_grad(2.0, 0.0);
    Sgd opt({p}, 0.1, 0.0, 0.5);
    opt.step();
    EXPECT_DOUBLE_EQ(p.values()[0], 1.9);
}

TEST(Sgd, LrScheduleAndValidation) {
    Tensor p = param_with_grad(1.0, 1.0);
    Sgd opt({p}, 0.1);
    opt.set_lr(0.01);
    EXPECT_DOUBLE_EQ(opt.lr(), 0.01);
    opt.step();
    EXPECT_DOUBLE_EQ(p.values()[0], 0.99);
    EXPECT_THROW(opt.set_lr(0.0), ValueError);
    EXPECT_THROW(Sgd({p}, -0.1), ValueError);
    EXPECT_THROW(Sgd({p}, 0.1, -1.0), ValueError);
}

TEST(Sgd, ZeroGradClearsBuffers) {
    Tensor p = param_with_grad(1.0, 3.0);
    Sgd opt({p}, 0.1);
    opt.zero_grad();
    EXPECT_FALSE(p.has_grad());
    opt.step();  // nothing to consume
    EXPECT_DOUBLE_EQ(p.values()[0], 1.0);
}

TEST(Adam, FirstStepMatchesHandFormula) {
    // bias-corrected first step: mhat = g, vhat = g^2 => delta = lr*g/(|g|+eps)
    const double g = 3.0, lr = 0.01, eps = 1e-8;
    Tensor p = param_with_grad(0.0, g);
    Adam opt({p}, lr);
    opt.step();
    EXPECT_NEAR(p.values()[0], -lr * g / (std::fabs(g) + eps), 1e-15);
}

TEST(Adam, SecondStepMatchesHandFormula) {
    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double g1 = 1.0, g2 = -2.0;
    Tensor p = param_with_grad(0.5, g1);
    Adam opt({p}, lr, b1, b2, eps);
    opt.step();
    double m = (1 - b1) * g1, v = (1 - b2) * g1 * g1;
    double x = 0.5 - lr * (m / (1 - b1)) / (std::sqrt(v / (1 - b2)) + eps);
    EXPECT_NEAR(p.values()[0], x, 1e-14);
    p.grad()[0] = g2;
    opt.step();
    m = b1 * m + (1 - b1) * g2;
    v = b2 * v + (1 - b2) * g2 * g2;
    x -= lr * (m / (1 - b1 * b1)) / (std::sqrt(v / (1 - b2 * b2)) + eps);
    EXPECT_NEAR(p.values()[0], x, 1e-14);
}

TEST(Adam, SkipsGradlessAndValidates) {
    Tensor p = Tensor::scalar(1.0, true);
    Adam opt({p}, 0.001);
    opt.step();
    EXPECT_DOUBLE_EQ(p.values()[0], 1.0);
    EXPECT_THROW(Adam({p}, 0.0), ValueError);
    EXPECT_THROW(Adam({p}, 0.001, 1.0), ValueError);
    EXPECT_THROW(Adam({p}, 0.001, 0.9, -0.1), ValueError);
}

TEST(Adam, DeterministicAcrossInstances) {
    auto run = [] {
        Tensor p = param_with_grad(1.0, 0.7);
        Adam opt({p}, 0.01);
        for (int i = 0; i < 5; ++i) {
            p.zero_grad();
            p.ensure_grad();
            p.grad()[0] = 0.7 / (i + 1);
            opt.step();
        }
        return p.values()[0];
    };
    EXPECT_DOUBLE_EQ(run(), run());
}
