#include <doctest.h>

#include <cmath>

#include "microseg/synthgen.hpp"

using namespace microseg;

TEST_CASE("microconstituent scenes are deterministic per seed") {
    SceneSpec spec;
    spec.seed = 42;
    auto a = generate_microconstituent_scene(spec);
    auto b = generate_microconstituent_scene(spec);
    CHECK(a.image.pixels == b.image.pixels);
    CHECK(a.labels.labels == b.labels.labels);

    spec.seed = 43;
    auto c = generate_microconstituent_scene(spec);
    CHECK(a.labels.labels != c.labels.labels);
}

TEST_CASE("class fractions track the requested targets") {
    SceneSpec spec;
    spec.seed = 7;
    spec.size = 128;
    auto scene = generate_microconstituent_scene(spec);

    const double n = static_cast<double>(scene.labels.size());
    size_t counts[4] = {0, 0, 0, 0};
    for (uint8_t v : scene.labels.labels) {
        REQUIRE(v < 4);
        counts[v]++;
    }
    CHECK(counts[kNetwork] / n == doctest::Approx(spec.network_fraction).epsilon(0.02));
    CHECK(counts[kSpheroidite] / n ==
          doctest::Approx(spec.particle_density).epsilon(0.15));
    CHECK(counts[kMatrix] > 0);
}

TEST_CASE("particle scene truth matches the rasterized labels") {
    SceneSpec spec;
    spec.seed = 11;
    auto scene = generate_particle_scene(spec);

    long truth_area = 0;
    for (const Particle& p : scene.truth.particles) truth_area += p.area_px;

    long label_area = 0;
    for (uint8_t v : scene.labels.labels)
        if (v == kParticleSpheroidite) label_area++;
    CHECK(truth_area == label_area);

    // the label grid agrees with the class map
    for (size_t i = 0; i < scene.labels.size(); ++i)
        CHECK((scene.truth.label_grid[i] > 0) ==
              (scene.labels.labels[i] == kParticleSpheroidite));
}

TEST_CASE("annulus fixture has the exact geometry") {
    const int r1 = 10, r2 = 25, size = 64;
    auto scene = generate_annulus_scene(r1, r2, size);
    const double cy = (size - 1) / 2.0, cx = (size - 1) / 2.0;

    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) {
            const double d = std::hypot(r - cy, c - cx);
            const uint8_t v = scene.labels.at(r, c);
            if (d <= r1)
                CHECK(v == kNetwork);
            else if (d <= r2)
                CHECK(v == kMatrix);
            else
                CHECK(v == kSpheroidite);
        }
}

TEST_CASE("rendered intensities stay in [0,1] and phases separate") {
    SceneSpec spec;
    spec.seed = 3;
    auto scene = generate_microconstituent_scene(spec);
    double matrix_sum = 0, carbide_sum = 0;
    long matrix_n = 0, carbide_n = 0;
    for (size_t i = 0; i < scene.image.size(); ++i) {
        const double v = scene.image.pixels[i];
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        if (scene.labels.labels[i] == kMatrix) {
            matrix_sum += v;
            matrix_n++;
        } else if (scene.labels.labels[i] == kNetwork) {
            carbide_sum += v;
            carbide_n++;
        }
    }
    REQUIRE(matrix_n > 0);
    REQUIRE(carbide_n > 0);
    CHECK(carbide_sum / carbide_n > matrix_sum / matrix_n + 0.1);
}

TEST_CASE("spec validation rejects nonsense") {
    SceneSpec spec;
    spec.network_fraction = 1.5;
    CHECK_THROWS_AS(spec.validate(), ImageError);
    spec = SceneSpec{};
    spec.size = 0;
    CHECK_THROWS_AS(spec.validate(), ImageError);
    CHECK_THROWS_AS(generate_annulus_scene(25, 10, 64), ImageError);
}
