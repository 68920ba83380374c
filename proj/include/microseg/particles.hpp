#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "microseg/image.hpp"

namespace microseg {

// Binary mask over an image grid.
struct Mask {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> on;

    Mask() = default;
    Mask(int h, int w, uint8_t fill = 0)
        : height(h), width(w), on(static_cast<size_t>(h) * w, fill) {}

    uint8_t& at(int r, int c) { return on[static_cast<size_t>(r) * width + c]; }
    uint8_t at(int r, int c) const { return on[static_cast<size_t>(r) * width + c]; }
    size_t count() const;
};

struct Particle {
    long area_px = 0;            // pixel count
    double centroid_r = 0;       // row centroid, px
    double centroid_c = 0;
    int min_r = 0, min_c = 0, max_r = 0, max_c = 0;  // inclusive bounding box
    bool touches_border = false;
};

struct ParticleSet {
    std::vector<Particle> particles;
    int height = 0;
    int width = 0;
    std::optional<double> um_per_px;
    // label grid: 0 = background, i+1 = particles[i]
    std::vector<int32_t> label_grid;
};

// Sorted scalar samples (particle radii, zone widths).
struct EmpiricalDistribution {
    std::vector<double> samples;  // ascending
    std::string units = "px";

    static EmpiricalDistribution from(std::vector<double> values, std::string units = "px");
    double ecdf(double x) const;  // fraction of samples <= x
    double quantile(double q) const;
    double median() const { return quantile(0.5); }
};

struct OtsuResult {
    double threshold = 0;  // in [0,1); mask = intensity > threshold
    Mask mask;
};

// Maximizes between-class variance over a 256-bin histogram; ties break to
// the smallest maximizing threshold. Throws on a constant image.
OtsuResult otsu_threshold(const Micrograph& m);

// Maximal connected foreground regions; particles appear in row-major order
// of their first pixel. connectivity is 4 or 8.
ParticleSet connected_components(const Mask& mask, int connectivity = 8,
                                 std::optional<double> um_per_px = std::nullopt);

// Drops particles whose bounding box touches the image edge.
ParticleSet remove_border_particles(const ParticleSet& ps);

// Equivalent circular radii r = sqrt(area/pi), in px, or um when the set
// carries a scale. Particles below min_area_px are skipped.
EmpiricalDistribution particle_size_distribution(const ParticleSet& ps,
                                                 long min_area_px = 1);

struct KsResult {
    double d = 0;            // sup |ECDF_a - ECDF_b|
    double critical = 0;     // asymptotic two-sample critical value
    bool reject = false;
};

// Two-sample Kolmogorov-Smirnov test at the given significance level.
KsResult ks_two_sample(const EmpiricalDistribution& a, const EmpiricalDistribution& b,
                       double significance = 0.05);

// Fraction of prediction/ground-truth pairs whose KS test fails to reject.
double ks_consistency_score(
    const std::vector<std::pair<EmpiricalDistribution, EmpiricalDistribution>>& pairs,
    double significance = 0.05);

// Keeps particle predictions only inside predicted spheroidite regions of the
// microconstituent map; everything else becomes matrix.
LabelMap fuse_predictions(const LabelMap& particle_map, const LabelMap& micro_map);

// Foreground mask of one class of a label map.
Mask class_mask(const LabelMap& map, uint8_t cls);

}  // namespace microseg
