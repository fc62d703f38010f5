#pragma once

#include <cstdint>
#include <random>

namespace mha {

// Single deterministic stream per owner (network init, trainer, augmenter).
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : eng_(seed) {}

    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(eng_);
    }
    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(eng_);
    }
    int uniform_int(int lo, int hi) {  // inclusive bounds
        return std::uniform_int_distribution<int>(lo, hi)(eng_);
    }
    bool bernoulli(double p) { return std::bernoulli_distribution(p)(eng_); }

    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
};

}  // namespace mha
