#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "jupad/rng.hpp"

#include "support/stats.hpp"

using jupad::Rng;
using jupad::mix_seed;

TEST_CASE("same seed reproduces the same stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) CHECK(a.uniform01() == b.uniform01());
    for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
    for (int i = 0; i < 100; ++i) CHECK(a.exponential() == b.exponential());
}

TEST_CASE("different seeds give different streams") {
    Rng a(1), b(2);
    int equal = 0;
    for (int i = 0; i < 100; ++i)
        if (a.uniform01() == b.uniform01()) ++equal;
    CHECK(equal < 5);
}

TEST_CASE("uniform01 stays in [0, 1)") {
    Rng rng(7);
    for (int i = 0; i < 100000; ++i) {
        const double u = rng.uniform01();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("uniform(lo, hi) stays in range and fills it") {
    Rng rng(7);
    double lo_seen = 1e300, hi_seen = -1e300;
    for (int i = 0; i < 20000; ++i) {
        const double u = rng.uniform(-3.0, 5.0);
        CHECK(u >= -3.0);
        CHECK(u < 5.0);
        lo_seen = std::min(lo_seen, u);
        hi_seen = std::max(hi_seen, u);
    }
    CHECK(lo_seen < -2.9);
    CHECK(hi_seen > 4.9);
}

TEST_CASE("normal moments match the standard normal") {
    Rng rng(11);
    const int n = 200000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        sum += z;
        sum_sq += z * z;
    }
    const double mean = sum / n;
    const double var = sum_sq / n - mean * mean;
    CHECK(std::fabs(mean) < 0.01);
    CHECK(std::fabs(var - 1.0) < 0.02);
}

TEST_CASE("exponential moments match the unit exponential") {
    Rng rng(13);
    const int n = 200000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double e = rng.exponential();
        CHECK(e >= 0.0);
        sum += e;
        sum_sq += e * e;
    }
    const double mean = sum / n;
    const double var = sum_sq / n - mean * mean;
    CHECK(std::fabs(mean - 1.0) < 0.02);
    CHECK(std::fabs(var - 1.0) < 0.05);
}

TEST_CASE("categorical draws follow the weights") {
    Rng rng(17);
    Eigen::VectorXd w(4);
    w << 1.0, 2.0, 3.0, 4.0;
    const int n = 100000;
    std::vector<long> counts(4, 0);
    for (int i = 0; i < n; ++i) {
        const int k = rng.categorical(w);
        REQUIRE(k >= 0);
        REQUIRE(k < 4);
        ++counts[static_cast<std::size_t>(k)];
    }
    double chi2 = 0.0;
    for (int k = 0; k < 4; ++k) {
        const double expected = n * w[k] / w.sum();
        const double diff = counts[static_cast<std::size_t>(k)] - expected;
        chi2 += diff * diff / expected;
    }
    CHECK(testsupport::chi_square_sf(chi2, 3.0) > 0.001);
}

TEST_CASE("categorical zero-weight states are never drawn") {
    Rng rng(19);
    Eigen::VectorXd w(3);
    w << 0.0, 1.0, 0.0;
    for (int i = 0; i < 1000; ++i) CHECK(rng.categorical(w) == 1);
}

TEST_CASE("mix_seed separates streams by tag") {
    const std::uint64_t base = 1234;
    std::set<std::uint64_t> seen;
    for (std::uint64_t a = 0; a < 10; ++a)
        for (std::uint64_t b = 0; b < 10; ++b) seen.insert(mix_seed(base, a, b));
    CHECK(seen.size() == 100);
    CHECK(mix_seed(base, 3, 4) == mix_seed(base, 3, 4));
    CHECK(mix_seed(base, 3, 4) != mix_seed(base, 4, 3));
    CHECK(mix_seed(base) != mix_seed(base + 1));
}

TEST_CASE("chi-square survival function sanity") {
    // Q(k/2, x/2) reference points: sf at the mean is near 0.39-0.48 for
    // small dof; sf(0) = 1; sf(large) ~ 0.
    CHECK(testsupport::chi_square_sf(0.0, 5.0) == doctest::Approx(1.0));
    CHECK(testsupport::chi_square_sf(100.0, 5.0) < 1e-10);
    // 1 dof: P(X > 3.841) = 0.05 within rounding of the usual table.
    CHECK(testsupport::chi_square_sf(3.841, 1.0) == doctest::Approx(0.05).epsilon(0.01));
    // 10 dof: P(X > 18.307) = 0.05.
    CHECK(testsupport::chi_square_sf(18.307, 10.0) == doctest::Approx(0.05).epsilon(0.01));
}
