#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <queue>
#include <random>

#include "microseg/particles.hpp"

using namespace microseg;

namespace {

Micrograph random_image(int h, int w, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    Micrograph m(h, w);
    for (double& v : m.pixels) v = u(rng);
    return m;
}

// independent Otsu oracle: recompute the between-class variance from scratch
// at every candidate threshold and take the smallest argmax
double otsu_oracle(const Micrograph& m) {
    std::vector<long> hist(256, 0);
    for (double v : m.pixels)
        hist[std::clamp(static_cast<int>(std::lround(v * 255.0)), 0, 255)]++;

    const double total = static_cast<double>(m.size());
    double best = -1;
    int best_t = -1;
    for (int t = 0; t < 255; ++t) {
        long n0 = 0, n1 = 0;
        double s0 = 0, s1 = 0;
        for (int b = 0; b <= t; ++b) {
            n0 += hist[b];
            s0 += static_cast<double>(hist[b]) * b;
        }
        for (int b = t + 1; b < 256; ++b) {
            n1 += hist[b];
            s1 += static_cast<double>(hist[b]) * b;
        }
        if (n0 == 0 || n1 == 0) continue;
        const double w0 = n0 / total, w1 = n1 / total;
        const double mu0 = s0 / n0, mu1 = s1 / n1;
        const double var = total * total * w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (var > best + 1e-9 * std::abs(best)) {
            best = var;
            best_t = t;
        }
    }
    REQUIRE(best_t >= 0);
    return best_t / 255.0;
}

// independent connected-components oracle: BFS flood fill
std::vector<int> ccl_oracle(const Mask& mask, int connectivity) {
    std::vector<int> label(mask.on.size(), 0);
    int next = 0;
    const int h = mask.height, w = mask.width;
    for (int sr = 0; sr < h; ++sr)
        for (int sc = 0; sc < w; ++sc) {
            if (!mask.at(sr, sc) || label[static_cast<size_t>(sr) * w + sc]) continue;
            ++next;
            std::queue<std::pair<int, int>> q;
            q.push({sr, sc});
            label[static_cast<size_t>(sr) * w + sc] = next;
            while (!q.empty()) {
                auto [r, c] = q.front();
                q.pop();
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        if (dr == 0 && dc == 0) continue;
                        if (connectivity == 4 && dr != 0 && dc != 0) continue;
                        const int nr = r + dr, nc = c + dc;
                        if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
                        size_t i = static_cast<size_t>(nr) * w + nc;
                        if (mask.on[i] && !label[i]) {
                            label[i] = next;
                            q.push({nr, nc});
                        }
                    }
            }
        }
    return label;
}

}  // namespace

TEST_CASE("otsu matches the exhaustive sweep oracle") {
    for (uint64_t seed = 0; seed < 30; ++seed) {
        // bimodal mixture so a threshold is meaningful
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> lo(0.3, 0.05), hi(0.75, 0.05);
        std::bernoulli_distribution pick(0.4);
        Micrograph m(24, 24);
        for (double& v : m.pixels)
            v = std::clamp(pick(rng) ? hi(rng) : lo(rng), 0.0, 1.0);

        OtsuResult res = otsu_threshold(m);
        CHECK(res.threshold == doctest::Approx(otsu_oracle(m)).epsilon(1e-12));
        for (size_t i = 0; i < m.size(); ++i)
            CHECK(static_cast<bool>(res.mask.on[i]) == (m.pixels[i] > res.threshold));
    }
}

TEST_CASE("otsu separates a clean bimodal image and rejects a constant one") {
    Micrograph m(8, 8, 0.2);
    for (int r = 0; r < 8; ++r)
        for (int c = 4; c < 8; ++c) m.at(r, c) = 0.8;
    OtsuResult res = otsu_threshold(m);
    CHECK(res.threshold >= 0.2);
    CHECK(res.threshold < 0.8);
    CHECK(res.mask.count() == 32);

    CHECK_THROWS_AS(otsu_threshold(Micrograph(4, 4, 0.5)), ImageError);
}

TEST_CASE("connected components agree with the flood-fill oracle") {
    std::mt19937_64 rng(77);
    std::bernoulli_distribution b(0.4);
    for (int trial = 0; trial < 25; ++trial) {
        Mask mask(16, 16);
        for (auto& v : mask.on) v = b(rng) ? 1 : 0;
        for (int connectivity : {4, 8}) {
            ParticleSet ps = connected_components(mask, connectivity);
            auto oracle = ccl_oracle(mask, connectivity);

            const int n = *std::max_element(oracle.begin(), oracle.end());
            REQUIRE(static_cast<int>(ps.particles.size()) == n);
            // same partition: labels must correspond one-to-one
            std::vector<int> mapping(n + 1, 0);
            for (size_t i = 0; i < mask.on.size(); ++i) {
                CHECK((ps.label_grid[i] > 0) == (oracle[i] > 0));
                if (oracle[i] > 0) {
                    if (mapping[oracle[i]] == 0) mapping[oracle[i]] = ps.label_grid[i];
                    CHECK(mapping[oracle[i]] == ps.label_grid[i]);
                }
            }
        }
    }
}

TEST_CASE("diagonal pixels merge under 8- but not 4-connectivity") {
    Mask mask(2, 2);
    mask.at(0, 0) = 1;
    mask.at(1, 1) = 1;
    CHECK(connected_components(mask, 8).particles.size() == 1);
    CHECK(connected_components(mask, 4).particles.size() == 2);
    CHECK_THROWS_AS(connected_components(mask, 6), ImageError);
}

TEST_CASE("particles are reported in row-major first-pixel order with exact stats") {
    Mask mask(5, 6);
    // particle A: rows 0-1, cols 0-1 (touches border); B: single pixel (3,3)
    mask.at(0, 0) = mask.at(0, 1) = mask.at(1, 0) = mask.at(1, 1) = 1;
    mask.at(3, 3) = 1;
    ParticleSet ps = connected_components(mask, 8);
    REQUIRE(ps.particles.size() == 2);

    CHECK(ps.particles[0].area_px == 4);
    CHECK(ps.particles[0].centroid_r == doctest::Approx(0.5));
    CHECK(ps.particles[0].centroid_c == doctest::Approx(0.5));
    CHECK(ps.particles[0].touches_border);
    CHECK(ps.particles[1].area_px == 1);
    CHECK_FALSE(ps.particles[1].touches_border);
    CHECK(ps.particles[1].min_r == 3);
    CHECK(ps.particles[1].max_c == 3);

    ParticleSet inner = remove_border_particles(ps);
    REQUIRE(inner.particles.size() == 1);
    CHECK(inner.particles[0].area_px == 1);
    for (size_t i = 0; i < inner.label_grid.size(); ++i)
        CHECK((inner.label_grid[i] == 1) == (i == 3 * 6 + 3));
}

TEST_CASE("equivalent radii follow sqrt(area/pi) and honor the scale") {
    Mask mask(10, 10);
    for (int r = 2; r < 6; ++r)
        for (int c = 2; c < 6; ++c) mask.at(r, c) = 1;  // area 16
    ParticleSet ps = connected_components(mask, 8, 0.5);  // 0.5 um per px

    EmpiricalDistribution d = particle_size_distribution(ps);
    REQUIRE(d.samples.size() == 1);
    CHECK(d.units == "um");
    CHECK(d.samples[0] == doctest::Approx(std::sqrt(16.0 / M_PI) * 0.5).epsilon(1e-12));

    ParticleSet no_scale = connected_components(mask, 8);
    EmpiricalDistribution dpx = particle_size_distribution(no_scale);
    CHECK(dpx.units == "px");
    CHECK(dpx.samples[0] == doctest::Approx(std::sqrt(16.0 / M_PI)).epsilon(1e-12));

    // min-area filter drops the particle
    CHECK(particle_size_distribution(ps, 17).samples.empty());
}

TEST_CASE("empirical distribution quantiles") {
    auto d = EmpiricalDistribution::from({3, 1, 2, 5, 4});
    CHECK(std::is_sorted(d.samples.begin(), d.samples.end()));
    CHECK(d.median() == doctest::Approx(3.0));
    CHECK(d.ecdf(2.5) == doctest::Approx(0.4));
    CHECK(d.ecdf(0.0) == doctest::Approx(0.0));
    CHECK(d.ecdf(5.0) == doctest::Approx(1.0));
}

TEST_CASE("ks statistic on a hand example") {
    auto a = EmpiricalDistribution::from({1.0, 2.0});
    auto b = EmpiricalDistribution::from({1.5, 2.5});
    KsResult r = ks_two_sample(a, b);
    CHECK(r.d == doctest::Approx(0.5).epsilon(1e-12));
    // critical value c(0.05) * sqrt((n+m)/(n*m)) with c = sqrt(-ln(0.025)/2)
    const double c = std::sqrt(-0.5 * std::log(0.025));
    CHECK(r.critical == doctest::Approx(c * std::sqrt(4.0 / 4.0)).epsilon(1e-12));
    CHECK_FALSE(r.reject);
}

TEST_CASE("identical samples never reject; disjoint large samples always do") {
    std::vector<double> v;
    for (int i = 0; i < 100; ++i) v.push_back(i * 0.01);
    auto a = EmpiricalDistribution::from(v);
    KsResult same = ks_two_sample(a, a);
    CHECK(same.d == doctest::Approx(0.0));
    CHECK_FALSE(same.reject);

    std::vector<double> w;
    for (int i = 0; i < 100; ++i) w.push_back(10.0 + i * 0.01);
    KsResult diff = ks_two_sample(a, EmpiricalDistribution::from(w));
    CHECK(diff.d == doctest::Approx(1.0));
    CHECK(diff.reject);
}

TEST_CASE("ks decision agrees with a permutation oracle") {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> base(0.0, 1.0);
    std::uniform_real_distribution<double> shift(0.0, 1.5);

    auto ks_stat = [](std::vector<double> a, std::vector<double> b) {
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        size_t i = 0, j = 0;
        double d = 0;
        while (i < a.size() && j < b.size()) {
            if (a[i] <= b[j])
                ++i;
            else
                ++j;
            d = std::max(d, std::abs(static_cast<double>(i) / a.size() -
                                     static_cast<double>(j) / b.size()));
        }
        return d;
    };

    int agree = 0;
    const int pairs = 50;
    for (int trial = 0; trial < pairs; ++trial) {
        const size_t n = 20 + rng() % 15, m = 20 + rng() % 15;
        const double mu = (trial % 2) ? shift(rng) : 0.0;
        std::vector<double> a(n), b(m);
        for (double& x : a) x = base(rng);
        for (double& x : b) x = base(rng) + mu;

        KsResult res = ks_two_sample(EmpiricalDistribution::from(a),
                                     EmpiricalDistribution::from(b), 0.05);

        // permutation test: shuffle the pooled sample 1000 times
        std::vector<double> pooled = a;
        pooled.insert(pooled.end(), b.begin(), b.end());
        const double observed = ks_stat(a, b);
        int ge = 0;
        const int shuffles = 1000;
        for (int s = 0; s < shuffles; ++s) {
            std::shuffle(pooled.begin(), pooled.end(), rng);
            std::vector<double> pa(pooled.begin(), pooled.begin() + n);
            std::vector<double> pb(pooled.begin() + n, pooled.end());
            if (ks_stat(pa, pb) >= observed - 1e-12) ++ge;
        }
        const bool perm_reject = (ge + 1.0) / (shuffles + 1.0) < 0.05;
        if (perm_reject == res.reject) ++agree;
    }
    CHECK(agree >= 45);  // >= 90% in the unit test; acceptance uses its own run
}

TEST_CASE("consistency score counts the non-rejecting fraction") {
    std::vector<double> same(40), far(40);
    for (int i = 0; i < 40; ++i) {
        same[i] = i * 0.1;
        far[i] = 100.0 + i * 0.1;
    }
    auto s = EmpiricalDistribution::from(same);
    auto f = EmpiricalDistribution::from(far);

    std::vector<std::pair<EmpiricalDistribution, EmpiricalDistribution>> pairs;
    pairs.emplace_back(s, s);  // consistent
    for (int i = 0; i < 23; ++i) pairs.emplace_back(s, f);
    CHECK(ks_consistency_score(pairs) == doctest::Approx(1.0 / 24.0).epsilon(1e-12));
    CHECK_THROWS_AS(ks_consistency_score({}), ImageError);
}

TEST_CASE("fusion keeps particles only inside predicted spheroidite regions") {
    LabelMap particle(2, 3, 2);
    particle.labels = {1, 1, 0, 1, 0, 1};
    LabelMap micro(2, 3, 4);
    micro.labels = {kSpheroidite, kMatrix, kSpheroidite,
                    kNetwork,     kSpheroidite, kSpheroidite};

    LabelMap fused = fuse_predictions(particle, micro);
    CHECK(fused.labels ==
          std::vector<uint8_t>{kParticleSpheroidite, kParticleMatrix, kParticleMatrix,
                               kParticleMatrix, kParticleMatrix, kParticleSpheroidite});

    LabelMap wrong(3, 3, 4);
    CHECK_THROWS_AS(fuse_predictions(particle, wrong), ImageError);
}

TEST_CASE("class mask extracts one class") {
    LabelMap l(2, 2, 4);
    l.labels = {0, 2, 2, 3};
    Mask m = class_mask(l, kSpheroidite);
    CHECK(m.on == std::vector<uint8_t>{0, 1, 1, 0});
    CHECK(m.count() == 2);
}
