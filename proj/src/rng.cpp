#include "jupad/rng.hpp"

#include <cmath>

#include "jupad/errors.hpp"

namespace jupad {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag_a, std::uint64_t tag_b) {
    auto finalize = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    };
    std::uint64_t state = finalize(seed);
    state = finalize(state ^ (tag_a + 0x9e3779b97f4a7c15ull));
    state = finalize(state ^ (tag_b + 0x7f4a7c159e3779b9ull));
    return state;
}

double Rng::uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform01();
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_normal_;
    }
    double u1 = 1.0 - uniform01(); // (0, 1]
    double u2 = uniform01();
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * M_PI * u2;
    spare_normal_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

double Rng::exponential() {
    return -std::log(1.0 - uniform01());
}

int Rng::categorical(const Eigen::VectorXd& weights) {
    if (weights.size() == 0) {
        throw config_error("categorical draw from empty weight vector");
    }
    const double total = weights.sum();
    if (!(total > 0.0)) {
        throw config_error("categorical draw from non-positive weight vector");
    }
    double u = uniform01() * total;
    double cumulative = 0.0;
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
        cumulative += weights[i];
        if (u < cumulative) {
            return static_cast<int>(i);
        }
    }
    // u landed in the rounding gap past the last cumulative sum.
    return static_cast<int>(weights.size() - 1);
}

} // namespace jupad
