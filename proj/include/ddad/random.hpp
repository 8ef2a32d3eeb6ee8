#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "ddad/tensor.hpp"

// Seeded randomness. Every stochastic component draws from an Rng constructed
// from (seed, stream) so that runs with the same seed are bit-reproducible and
// independent consumers (init, data, noise, shuffling) never share a stream.

namespace ddad {

// splitmix64-style finalizer; decorrelates nearby (seed, stream) pairs
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
        : engine_(mix_seed(seed, stream)) {}

    double normal(double mean = 0.0, double stddev = 1.0) {
        std::normal_distribution<double> d(mean, stddev);
        return d(engine_);
    }

    double uniform(double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(engine_);
    }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        std::uniform_int_distribution<int> d(lo, hi);
        return d(engine_);
    }

    std::vector<int> permutation(int n) {
        std::vector<int> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = n - 1; i > 0; --i) {
            int j = uniform_int(0, i);
            std::swap(idx[i], idx[j]);
        }
        return idx;
    }

    void fill_normal(std::vector<double>& v, double mean = 0.0, double stddev = 1.0) {
        for (double& x : v) x = normal(mean, stddev);
    }

    void fill_uniform(std::vector<double>& v, double lo, double hi) {
        for (double& x : v) x = uniform(lo, hi);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

// Kaiming-uniform weight init: U(-b, b) with b = sqrt(6 / fan_in).
inline void kaiming_uniform(Tensor& w, int fan_in, Rng& rng) {
    if (fan_in < 1) throw ValueError("kaiming_uniform: fan_in must be positive");
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    rng.fill_uniform(w.values(), -bound, bound);
}

// Bias init: U(-b, b) with b = 1 / sqrt(fan_in).
inline void bias_uniform(Tensor& b, int fan_in, Rng& rng) {
    if (fan_in < 1) throw ValueError("bias_uniform: fan_in must be positive");
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    rng.fill_uniform(b.values(), -bound, bound);
}

}  // namespace ddad
