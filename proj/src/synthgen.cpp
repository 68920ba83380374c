#include "microseg/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "microseg/dzone.hpp"

namespace microseg {
namespace {

constexpr double kMatrixIntensity = 0.35;
constexpr double kCarbideIntensity = 0.80;

double phase_intensity(uint8_t label, int num_classes) {
    if (num_classes == 2) return label == kParticleSpheroidite ? kCarbideIntensity : kMatrixIntensity;
    return label == kMatrix ? kMatrixIntensity : kCarbideIntensity;
}

void gaussian_blur_inplace(Micrograph& m, double sd) {
    if (sd <= 0.0) return;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sd)));
    std::vector<double> kernel(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * i * i / (sd * sd));
        sum += kernel[i + radius];
    }
    for (double& k : kernel) k /= sum;

    Micrograph tmp(m.height, m.width);
    // horizontal, edge clamped
    for (int r = 0; r < m.height; ++r) {
        for (int c = 0; c < m.width; ++c) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[i + radius] * m.at(r, std::clamp(c + i, 0, m.width - 1));
            tmp.at(r, c) = acc;
        }
    }
    for (int r = 0; r < m.height; ++r) {
        for (int c = 0; c < m.width; ++c) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[i + radius] * tmp.at(std::clamp(r + i, 0, m.height - 1), c);
            m.at(r, c) = acc;
        }
    }
}

struct DiskPlacer {
    // rasterizes a disk onto a label map, restricted to allowed pixels
    static long rasterize(LabelMap& labels, const std::vector<uint8_t>& allowed,
                          double cr, double cc, double rad, uint8_t cls,
                          std::vector<std::pair<int, int>>* pixels) {
        const int r0 = std::max(0, static_cast<int>(std::floor(cr - rad)));
        const int r1 = std::min(labels.height - 1, static_cast<int>(std::ceil(cr + rad)));
        const int c0 = std::max(0, static_cast<int>(std::floor(cc - rad)));
        const int c1 = std::min(labels.width - 1, static_cast<int>(std::ceil(cc + rad)));
        long placed = 0;
        for (int r = r0; r <= r1; ++r) {
            for (int c = c0; c <= c1; ++c) {
                const double dr = r - cr, dc = c - cc;
                if (dr * dr + dc * dc > rad * rad) continue;
                const size_t i = static_cast<size_t>(r) * labels.width + c;
                if (!allowed.empty() && !allowed[i]) continue;
                if (labels.labels[i] == cls) continue;  // overlap stays with the first disk
                labels.labels[i] = cls;
                ++placed;
                if (pixels) pixels->emplace_back(r, c);
            }
        }
        return placed;
    }
};

double lognormal_sigma(double mean, double sd) {
    return std::sqrt(std::log(1.0 + (sd * sd) / (mean * mean)));
}
double lognormal_mu(double mean, double sd) {
    const double s2 = std::log(1.0 + (sd * sd) / (mean * mean));
    return std::log(mean) - 0.5 * s2;
}

}  // namespace

void SceneSpec::validate() const {
    if (size < 16) throw ImageError("scene size must be >= 16 px");
    auto frac_ok = [](double f) { return f >= 0.0 && f <= 1.0; };
    if (!frac_ok(network_fraction) || !frac_ok(particle_density) || !frac_ok(lath_density))
        throw ImageError("scene fractions must lie in [0,1]");
    if (network_fraction + particle_density + lath_density >= 1.0)
        throw ImageError("foreground fractions must sum to < 1");
    if (noise_sd < 0 || blur_sd < 0) throw ImageError("noise/blur sd must be >= 0");
    if (radius_mean_um <= 0 || radius_sd_um < 0 || um_per_px <= 0)
        throw ImageError("radius distribution parameters must be positive");
}

Micrograph render_labels(const LabelMap& labels, double blur_sd, double noise_sd,
                         uint64_t seed) {
    Micrograph m(labels.height, labels.width);
    for (size_t i = 0; i < labels.size(); ++i)
        m.pixels[i] = phase_intensity(labels.labels[i], labels.num_classes);
    gaussian_blur_inplace(m, blur_sd);
    if (noise_sd > 0.0) {
        std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
        std::normal_distribution<double> noise(0.0, noise_sd);
        for (double& v : m.pixels) v = std::clamp(v + noise(rng), 0.0, 1.0);
    }
    return m;
}

MicroconstituentScene generate_microconstituent_scene(const SceneSpec& spec) {
    spec.validate();
    const int n = spec.size;
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    LabelMap labels(n, n, 4, kMatrix);

    // tessellation sites; ridge measure = gap between nearest and 2nd-nearest
    const int n_sites = std::max(3, (n * n) / 2048);
    std::vector<std::pair<double, double>> sites(n_sites);
    for (auto& s : sites) s = {unif(rng) * n, unif(rng) * n};

    std::vector<double> ridge(static_cast<size_t>(n) * n);
    for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
            double d1 = 1e30, d2 = 1e30;
            for (const auto& [sr, sc] : sites) {
                const double dr = r - sr, dc = c - sc;
                const double d = std::sqrt(dr * dr + dc * dc);
                if (d < d1) {
                    d2 = d1;
                    d1 = d;
                } else if (d < d2) {
                    d2 = d;
                }
            }
            ridge[static_cast<size_t>(r) * n + c] = d2 - d1;
        }
    }

    // network = the network_fraction quantile of the ridge measure
    if (spec.network_fraction > 0.0) {
        std::vector<double> sorted = ridge;
        const size_t k = std::min(sorted.size() - 1,
                                  static_cast<size_t>(spec.network_fraction * sorted.size()));
        std::nth_element(sorted.begin(), sorted.begin() + k, sorted.end());
        const double thresh = sorted[k];
        for (size_t i = 0; i < ridge.size(); ++i)
            if (ridge[i] <= thresh) labels.labels[i] = kNetwork;
    }

    // denuded band: matrix strip of the requested width next to the network
    std::vector<uint8_t> allowed(labels.size(), 1);
    Mask network = class_mask(labels, kNetwork);
    if (network.count() > 0 && spec.band_width_px > 0) {
        DistanceMap to_net = distance_transform(network);
        for (size_t i = 0; i < labels.size(); ++i)
            if (to_net.d[i] <= spec.band_width_px) allowed[i] = 0;
    } else {
        for (size_t i = 0; i < labels.size(); ++i)
            if (labels.labels[i] == kNetwork) allowed[i] = 0;
    }

    const double total = static_cast<double>(labels.size());
    std::lognormal_distribution<double> radius_px(
        lognormal_mu(spec.radius_mean_um / spec.um_per_px, spec.radius_sd_um / spec.um_per_px),
        lognormal_sigma(spec.radius_mean_um / spec.um_per_px, spec.radius_sd_um / spec.um_per_px));

    // spheroidite disks until the target fraction is met
    long particle_px = 0;
    const long particle_target = static_cast<long>(spec.particle_density * total);
    long attempts = 0;
    while (particle_px < particle_target) {
        if (++attempts > 200000) throw ImageError("infeasible particle fraction");
        const double cr = unif(rng) * n, cc = unif(rng) * n;
        const double rad = std::clamp(radius_px(rng), 1.0, n / 4.0);
        const size_t ci = static_cast<size_t>(std::min<int>(n - 1, int(cr))) * n +
                          std::min<int>(n - 1, int(cc));
        if (!allowed[ci]) continue;
        particle_px += DiskPlacer::rasterize(labels, allowed, cr, cc, rad, kSpheroidite, nullptr);
    }

    // widmanstatten: thin oriented segments
    long lath_px = 0;
    const long lath_target = static_cast<long>(spec.lath_density * total);
    attempts = 0;
    while (lath_px < lath_target) {
        if (++attempts > 200000) throw ImageError("infeasible lath fraction");
        const double cr = unif(rng) * n, cc = unif(rng) * n;
        const size_t ci = static_cast<size_t>(std::min<int>(n - 1, int(cr))) * n +
                          std::min<int>(n - 1, int(cc));
        if (!allowed[ci]) continue;
        const double theta = unif(rng) * M_PI;
        const double len = 8.0 + unif(rng) * 12.0;
        const double dr = std::sin(theta), dc = std::cos(theta);
        for (double t = -len / 2; t <= len / 2; t += 0.5) {
            for (int thick = -1; thick <= 0; ++thick) {
                const int r = static_cast<int>(std::lround(cr + t * dr - thick * dc));
                const int c = static_cast<int>(std::lround(cc + t * dc + thick * dr));
                if (r < 0 || r >= n || c < 0 || c >= n) continue;
                const size_t i = static_cast<size_t>(r) * n + c;
                if (!allowed[i] || labels.labels[i] != kMatrix) continue;
                labels.labels[i] = kWidmanstatten;
                ++lath_px;
            }
        }
    }

    MicroconstituentScene scene;
    scene.image = render_labels(labels, spec.blur_sd, spec.noise_sd, spec.seed);
    scene.image.um_per_px = spec.um_per_px;
    scene.labels = std::move(labels);
    return scene;
}

ParticleScene generate_particle_scene(const SceneSpec& spec) {
    spec.validate();
    const int n = spec.size;
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    LabelMap labels(n, n, 2, kParticleMatrix);
    std::lognormal_distribution<double> radius_px(
        lognormal_mu(spec.radius_mean_um / spec.um_per_px, spec.radius_sd_um / spec.um_per_px),
        lognormal_sigma(spec.radius_mean_um / spec.um_per_px, spec.radius_sd_um / spec.um_per_px));

    ParticleScene scene;
    scene.truth.height = n;
    scene.truth.width = n;
    scene.truth.um_per_px = spec.um_per_px;
    scene.truth.label_grid.assign(labels.size(), 0);

    struct Placed {
        double r, c, rad;
    };
    std::vector<Placed> placed;

    long particle_px = 0;
    const long target = static_cast<long>(spec.particle_density * n * n);
    long attempts = 0;
    std::vector<std::pair<int, int>> pixels;
    while (particle_px < target) {
        if (++attempts > 200000) throw ImageError("infeasible particle fraction");
        const double cr = unif(rng) * n, cc = unif(rng) * n;
        const double rad = std::clamp(radius_px(rng), 1.0, n / 4.0);
        if (spec.enforce_min_separation) {
            bool clash = false;
            for (const auto& q : placed) {
                const double dr = cr - q.r, dc = cc - q.c;
                if (std::sqrt(dr * dr + dc * dc) < rad + q.rad + spec.min_separation_px) {
                    clash = true;
                    break;
                }
            }
            if (clash) continue;
        }
        pixels.clear();
        const long got = DiskPlacer::rasterize(labels, {}, cr, cc, rad,
                                               kParticleSpheroidite, &pixels);
        if (got == 0) continue;
        particle_px += got;
        placed.push_back({cr, cc, rad});

        Particle p;
        p.min_r = labels.height;
        p.min_c = labels.width;
        p.max_r = p.max_c = 0;
        double sum_r = 0, sum_c = 0;
        const int32_t id = static_cast<int32_t>(scene.truth.particles.size()) + 1;
        for (auto [pr, pc] : pixels) {
            ++p.area_px;
            sum_r += pr;
            sum_c += pc;
            p.min_r = std::min(p.min_r, pr);
            p.max_r = std::max(p.max_r, pr);
            p.min_c = std::min(p.min_c, pc);
            p.max_c = std::max(p.max_c, pc);
            scene.truth.label_grid[static_cast<size_t>(pr) * n + pc] = id;
        }
        p.centroid_r = sum_r / p.area_px;
        p.centroid_c = sum_c / p.area_px;
        p.touches_border =
            p.min_r == 0 || p.min_c == 0 || p.max_r == n - 1 || p.max_c == n - 1;
        scene.truth.particles.push_back(p);
    }

    scene.image = render_labels(labels, spec.blur_sd, spec.noise_sd, spec.seed);
    scene.image.um_per_px = spec.um_per_px;
    scene.labels = std::move(labels);
    return scene;
}

MicroconstituentScene generate_annulus_scene(int r1, int r2, int size) {
    if (!(0 < r1 && r1 < r2 && r2 < size / 2))
        throw ImageError("annulus requires 0 < r1 < r2 < size/2");

    LabelMap labels(size, size, 4, kSpheroidite);
    const double center = (size - 1) / 2.0;
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            const double d = std::hypot(r - center, c - center);
            if (d <= r1)
                labels.at(r, c) = kNetwork;
            else if (d <= r2)
                labels.at(r, c) = kMatrix;
        }
    }

    MicroconstituentScene scene;
    scene.image = render_labels(labels, 1.0, 0.02,
                                static_cast<uint64_t>(r1) * 1000003u + r2);
    scene.labels = std::move(labels);
    return scene;
}

}  // namespace microseg
