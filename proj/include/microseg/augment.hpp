#pragma once

#include <random>
#include <vector>

#include "microseg/image.hpp"

namespace microseg {

// Training-time augmentation recipe: rotation in [0,2pi), zoom scale in
// [1,2], independent h/v mirrors, multiplicative intensity shift of +-5%.
struct AugmentSpec {
    bool enabled = true;
    double rotation_min = 0.0;
    double rotation_max = 2.0 * 3.14159265358979323846;  // exclusive
    double scale_min = 1.0;
    double scale_max = 2.0;
    bool mirror_h = true;  // drawn with probability 0.5 when true
    bool mirror_v = true;
    double intensity_shift = 0.05;  // relative, multiplicative

    void validate() const;
};

// One concrete draw.
struct AugmentParams {
    double angle = 0.0;
    double scale = 1.0;
    bool flip_h = false;
    bool flip_v = false;
    double intensity_factor = 1.0;

    static AugmentParams identity() { return {}; }
};

AugmentParams sample_augmentation(std::mt19937_64& rng, const AugmentSpec& spec);

// Resamples about the image center: bilinear for the image, nearest-neighbor
// for labels, mirror boundary handling. Scale > 1 zooms in (output size is
// unchanged). The intensity factor is applied then clamped to [0,1].
std::pair<Micrograph, LabelMap> apply_augmentation(const Micrograph& m,
                                                   const LabelMap& l,
                                                   const AugmentParams& p);

// n distinct pixel coordinates, uniform without replacement.
std::vector<std::pair<int, int>> sample_pixels(const LabelMap& l, size_t n,
                                               std::mt19937_64& rng);

}  // namespace microseg
