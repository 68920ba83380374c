#pragma once

#include <cstdint>

#include "microseg/image.hpp"
#include "microseg/particles.hpp"

namespace microseg {

// Procedural scene parameters. Fractions are target area fractions of the
// whole image; radii are lognormal in um (um_per_px converts to px).
struct SceneSpec {
    int size = 128;
    uint64_t seed = 0;
    double network_fraction = 0.08;
    double particle_density = 0.15;
    double lath_density = 0.03;
    double radius_mean_um = 4.0;
    double radius_sd_um = 1.2;
    double um_per_px = 1.0;
    int band_width_px = 6;     // denuded band flanking the network
    double noise_sd = 0.03;    // intensity units
    double blur_sd = 1.0;      // px
    bool enforce_min_separation = false;
    double min_separation_px = 2.0;

    void validate() const;
};

struct MicroconstituentScene {
    Micrograph image;
    LabelMap labels;  // K=4, exact generator geometry (pre-noise)
};

struct ParticleScene {
    Micrograph image;
    LabelMap labels;  // K=2
    ParticleSet truth;  // exact rasterized particles
};

// Network as bright ridges along cell boundaries of a random tessellation,
// a matrix band of band_width_px flanking it, spheroidite disks and thin
// oriented laths outside the band. Deterministic per seed.
MicroconstituentScene generate_microconstituent_scene(const SceneSpec& spec);

// Disks only, K=2, with the exact per-particle ground truth.
ParticleScene generate_particle_scene(const SceneSpec& spec);

// Analytic fixture: network disk of radius r1 at center, matrix annulus
// r1..r2, spheroidite elsewhere. Requires 0 < r1 < r2 < size/2.
MicroconstituentScene generate_annulus_scene(int r1, int r2, int size);

// Renders exact labels into an intensity image: matrix ~0.35, carbide
// phases ~0.8, Gaussian blur then Gaussian noise, clamped to [0,1].
Micrograph render_labels(const LabelMap& labels, double blur_sd, double noise_sd,
                         uint64_t seed);

}  // namespace microseg
