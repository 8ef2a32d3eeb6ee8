#pragma once

#include <string>

#include "ddad/ops.hpp"
#include "ddad/tensor.hpp"

// Batch normalization, built from primitive ops so the backward pass comes
// from the tape. The layer record keeps long-lived running statistics
// (buffers), learnable affine parameters, and the transient statistics of the
// most recent training-mode batch — the latter are live graph nodes, which is
// what lets a statistic-matching loss push gradient back to whatever produced
// the batch.

namespace ddad {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

struct BNLayerRecord {
    int channels = 0;
    Tensor stored_mean;   // buffer, running mean
    Tensor stored_var;    // buffer, running variance (unbiased EMA)
    Tensor scale;         // learnable
    Tensor shift;         // learnable
    Tensor batch_mean;    // transient graph node from the last training forward
    Tensor batch_var;     // transient graph node (biased, divide-by-count)
    bool batch_fresh = false;

    static BNLayerRecord make(int channels) {
        if (channels < 1) throw ValueError("batchnorm: channel count must be positive");
        BNLayerRecord r;
        r.channels = channels;
        r.stored_mean = Tensor({channels}, 0.0);
        r.stored_var = Tensor({channels}, 1.0);
        r.scale = Tensor({channels}, 1.0, /*requires_grad=*/true);
        r.shift = Tensor({channels}, 0.0, /*requires_grad=*/true);
        return r;
    }
};

// x: [N, C] or [N, C, H, W]. In training mode normalizes by the batch's own
// per-channel statistics (biased variance), records them in `record`, and —
// unless `frozen` — folds them into the running buffers with momentum 0.1
// (unbiased variance, framework convention). In inference mode normalizes by
// the stored running statistics and leaves the record untouched.
inline Tensor batchnorm_forward(const Tensor& x, BNLayerRecord& record, bool training,
                                bool frozen = false) {
    if (x.shape().size() != 2 && x.shape().size() != 4)
        throw ShapeError("batchnorm: expected rank 2 or 4 input, got " + shape_str(x.shape()));
    if (x.shape()[1] != record.channels)
        throw ShapeError("batchnorm: input has " + std::to_string(x.shape()[1]) +
                         " channels, layer has " + std::to_string(record.channels));

    if (!training) {
        Tensor denom = ddad::sqrt(scalar_add(record.stored_var, kBnEps));
        Tensor xhat = div(sub(x, broadcast_channel(record.stored_mean, x.shape())),
                          broadcast_channel(denom, x.shape()));
        return add(mul(xhat, broadcast_channel(record.scale, x.shape())),
                   broadcast_channel(record.shift, x.shape()));
    }

    const int N = x.shape()[0];
    if (N < 2) throw ValueError("batchnorm: training mode needs batch size >= 2, got " +
                                std::to_string(N));

    Tensor mu = channel_mean(x);
    Tensor centered = sub(x, broadcast_channel(mu, x.shape()));
    Tensor var = channel_mean(mul(centered, centered));  // biased (divide by count)
    // +eps before sqrt keeps constant channels (variance 0) finite
    Tensor denom = ddad::sqrt(scalar_add(var, kBnEps));
    Tensor xhat = div(centered, broadcast_channel(denom, x.shape()));
    Tensor out = add(mul(xhat, broadcast_channel(record.scale, x.shape())),
                     broadcast_channel(record.shift, x.shape()));

    record.batch_mean = mu;
    record.batch_var = var;
    record.batch_fresh = true;

    if (!frozen) {
        std::int64_t count = x.numel() / record.channels;
        double unbias = count > 1 ? static_cast<double>(count) / (count - 1) : 1.0;
        auto& rm = record.stored_mean.values();
        auto& rv = record.stored_var.values();
        const auto& bm = mu.values();
        const auto& bv = var.values();
        for (int c = 0; c < record.channels; ++c) {
            rm[c] = (1.0 - kBnMomentum) * rm[c] + kBnMomentum * bm[c];
            rv[c] = (1.0 - kBnMomentum) * rv[c] + kBnMomentum * bv[c] * unbias;
        }
    }
    return out;
}

}  // namespace ddad
