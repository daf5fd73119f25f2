#pragma once

#include <cstdint>
#include <random>

#include "kiwi/tensor.hpp"

namespace kiwi {

// Seeded RNG wrapper. All randomness in the project flows through this so
// that runs are reproducible end to end.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(gen_);
    }
    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(gen_);
    }
    int64_t uniform_int(int64_t lo, int64_t hi) { // inclusive bounds
        return std::uniform_int_distribution<int64_t>(lo, hi)(gen_);
    }
    bool bernoulli(double p) { return std::bernoulli_distribution(p)(gen_); }

    Tensor randn(std::vector<int64_t> shape, double stddev = 1.0) {
        Tensor t(std::move(shape));
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = normal(0.0, stddev);
        return t;
    }

    // Derive an independent stream from the original seed, e.g. one per
    // record id; unaffected by how much of this stream was consumed.
    Rng fork(uint64_t salt) const { return Rng(seed_mix(seed_, salt)); }

    uint64_t seed() const { return seed_; }
    std::mt19937_64& engine() { return gen_; }

    static uint64_t seed_mix(uint64_t a, uint64_t b) {
        // splitmix64 finalizer over the pair
        uint64_t x = a + 0x9E3779B97F4A7C15ull * (b + 1);
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
        return x ^ (x >> 31);
    }

private:
    uint64_t seed_;
    std::mt19937_64 gen_;
};

} // namespace kiwi
