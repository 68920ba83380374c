#include <doctest.h>

#include <random>

#include "microseg/equalize.hpp"

using namespace microseg;

TEST_CASE("global equalization spreads a two-value image to the extremes") {
    Micrograph m(16, 16);
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c) m.at(r, c) = (c < 8) ? 0.4 : 0.6;

    Micrograph eq = global_hist_equalize(m, 1.0);
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c) {
            if (c < 8)
                CHECK(eq.at(r, c) == doctest::Approx(0.0).epsilon(1e-12));
            else
                CHECK(eq.at(r, c) == doctest::Approx(1.0).epsilon(1e-12));
        }
}

TEST_CASE("constant image passes through unchanged") {
    Micrograph m(32, 32, 0.7);
    Micrograph eq = local_hist_equalize(m, 8, 1.0);
    CHECK(eq.pixels == m.pixels);
}

TEST_CASE("output stays in [0,1] and is deterministic") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.2, 0.8);
    Micrograph m(96, 80);
    for (double& v : m.pixels) v = u(rng);

    Micrograph a = local_hist_equalize(m, 32, 0.05);
    Micrograph b = local_hist_equalize(m, 32, 0.05);
    CHECK(a.pixels == b.pixels);
    for (double v : a.pixels) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("tile larger than the image falls back to global equalization") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0, 1);
    Micrograph m(16, 16);
    for (double& v : m.pixels) v = u(rng);

    Micrograph local = local_hist_equalize(m, 64, 0.5);
    Micrograph global = global_hist_equalize(m, 0.5);
    CHECK(local.pixels == global.pixels);
}

TEST_CASE("equalization increases contrast on a low-contrast ramp") {
    Micrograph m(64, 64);
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c) m.at(r, c) = 0.45 + 0.1 * c / 63.0;

    Micrograph eq = local_hist_equalize(m, 32, 1.0);
    const auto range = [](const Micrograph& im) {
        double lo = 1, hi = 0;
        for (double v : im.pixels) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        return hi - lo;
    };
    CHECK(range(eq) > range(m));
}

TEST_CASE("parameter preconditions") {
    Micrograph m(16, 16, 0.5);
    CHECK_THROWS_AS(local_hist_equalize(m, 4, 0.5), ImageError);
    CHECK_THROWS_AS(local_hist_equalize(m, 16, 0.0), ImageError);
    CHECK_THROWS_AS(local_hist_equalize(m, 16, 1.5), ImageError);
}
