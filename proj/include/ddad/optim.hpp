#pragma once

#include <cmath>
#include <vector>

#include "ddad/tensor.hpp"

// Parameter-update rules. Both optimizers hold handles to the parameter
// tensors they manage and consume whatever gradients have accumulated; a
// parameter with no gradient buffer this step is simply skipped.

namespace ddad {

class Sgd {
public:
    Sgd(std::vector<Tensor> params, double lr, double momentum = 0.0, double weight_decay = 0.0)
        : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
        if (!(lr > 0.0)) throw ValueError("sgd: learning rate must be positive");
        if (momentum < 0.0 || weight_decay < 0.0)
            throw ValueError("sgd: momentum and weight decay must be non-negative");
        velocity_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i)
            velocity_[i].assign(params_[i].numel(), 0.0);
    }

    void set_lr(double lr) {
        if (!(lr > 0.0)) throw ValueError("sgd: learning rate must be positive");
        lr_ = lr;
    }
    double lr() const { return lr_; }

    void step() {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = params_[i];
            if (!p.has_grad()) continue;
            const auto& g = p.grad();
            auto& v = velocity_[i];
            auto& w = p.values();
            for (std::size_t j = 0; j < w.size(); ++j) {
                double eff = g[j] + weight_decay_ * w[j];
                v[j] = momentum_ * v[j] + eff;
                w[j] -= lr_ * v[j];
            }
            if (!all_finite(w)) throw NonFiniteError("sgd step produced non-finite parameters");
        }
    }

    void zero_grad() {
        for (Tensor& p : params_) p.zero_grad();
    }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> velocity_;
    double lr_, momentum_, weight_decay_;
};

class Adam {
public:
    Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        if (!(lr > 0.0)) throw ValueError("adam: learning rate must be positive");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
            throw ValueError("adam: betas must lie in [0, 1)");
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].numel(), 0.0);
            v_[i].assign(params_[i].numel(), 0.0);
        }
    }

    void set_lr(double lr) {
        if (!(lr > 0.0)) throw ValueError("adam: learning rate must be positive");
        lr_ = lr;
    }
    double lr() const { return lr_; }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = params_[i];
            if (!p.has_grad()) continue;
            const auto& g = p.grad();
            auto& m = m_[i];
            auto& v = v_[i];
            auto& w = p.values();
            for (std::size_t j = 0; j < w.size(); ++j) {
                m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
                v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
                double mhat = m[j] / bc1;
                double vhat = v[j] / bc2;
                w[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
            if (!all_finite(w)) throw NonFiniteError("adam step produced non-finite parameters");
        }
    }

    void zero_grad() {
        for (Tensor& p : params_) p.zero_grad();
    }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

}  // namespace ddad
