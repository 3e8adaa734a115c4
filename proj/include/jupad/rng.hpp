#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace jupad {

// Derives an independent stream seed from a base seed and up to two tags
// (splitmix64 finalizer). Used to give pairs, trials and dimensions their
// own reproducible streams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag_a = 0, std::uint64_t tag_b = 0);

// Deterministic random source. All draws are produced from explicit
// mt19937_64 output so results are reproducible across standard libraries.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform on [0, 1).
    double uniform01();
    double uniform(double lo, double hi);

    // Standard normal via Box-Muller.
    double normal();

    // Standard exponential.
    double exponential();

    // Index draw proportional to the given nonnegative weights.
    int categorical(const Eigen::VectorXd& weights);

  private:
    std::mt19937_64 engine_;
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

} // namespace jupad
