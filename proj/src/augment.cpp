#include "microseg/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace microseg {
namespace {

// mirror boundary: abc|cba, period 2n
int reflect(int x, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    x %= period;
    if (x < 0) x += period;
    return x < n ? x : period - 1 - x;
}

}  // namespace

void AugmentSpec::validate() const {
    if (scale_min < 1.0 || scale_max < scale_min)
        throw ImageError("augment scale range must satisfy 1 <= min <= max");
    if (rotation_min < 0.0 || rotation_max > 2.0 * M_PI || rotation_max < rotation_min)
        throw ImageError("augment rotation range must lie within [0, 2pi)");
    if (intensity_shift < 0.0 || intensity_shift >= 1.0)
        throw ImageError("intensity shift must lie in [0,1)");
}

AugmentParams sample_augmentation(std::mt19937_64& rng, const AugmentSpec& spec) {
    spec.validate();
    AugmentParams p;
    if (!spec.enabled) return p;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    p.angle = spec.rotation_min + unif(rng) * (spec.rotation_max - spec.rotation_min);
    p.scale = spec.scale_min + unif(rng) * (spec.scale_max - spec.scale_min);
    p.flip_h = spec.mirror_h && unif(rng) < 0.5;
    p.flip_v = spec.mirror_v && unif(rng) < 0.5;
    p.intensity_factor = 1.0 + (2.0 * unif(rng) - 1.0) * spec.intensity_shift;
    return p;
}

std::pair<Micrograph, LabelMap> apply_augmentation(const Micrograph& m, const LabelMap& l,
                                                   const AugmentParams& p) {
    if (m.height != l.height || m.width != l.width)
        throw ImageError("apply_augmentation: image/label dimension mismatch");

    const int h = m.height, w = m.width;
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    const double cos_t = std::cos(p.angle), sin_t = std::sin(p.angle);

    Micrograph out_img(h, w);
    out_img.um_per_px = m.um_per_px;
    LabelMap out_lbl(h, w, l.num_classes);

    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double dr = r - cy, dc = c - cx;
            if (p.flip_h) dc = -dc;
            if (p.flip_v) dr = -dr;
            // inverse rotation, then zoom (scale > 1 samples a smaller extent)
            const double sr = cy + (cos_t * dr - sin_t * dc) / p.scale;
            const double sc = cx + (sin_t * dr + cos_t * dc) / p.scale;

            const int r0 = static_cast<int>(std::floor(sr));
            const int c0 = static_cast<int>(std::floor(sc));
            const double fr = sr - r0, fc = sc - c0;

            const int rr0 = reflect(r0, h), rr1 = reflect(r0 + 1, h);
            const int cc0 = reflect(c0, w), cc1 = reflect(c0 + 1, w);

            const double v = (1 - fr) * ((1 - fc) * m.at(rr0, cc0) + fc * m.at(rr0, cc1)) +
                             fr * ((1 - fc) * m.at(rr1, cc0) + fc * m.at(rr1, cc1));
            out_img.at(r, c) = std::clamp(v * p.intensity_factor, 0.0, 1.0);

            const int nr = reflect(static_cast<int>(std::lround(sr)), h);
            const int nc = reflect(static_cast<int>(std::lround(sc)), w);
            out_lbl.at(r, c) = l.at(nr, nc);
        }
    }
    return {std::move(out_img), std::move(out_lbl)};
}

std::vector<std::pair<int, int>> sample_pixels(const LabelMap& l, size_t n,
                                               std::mt19937_64& rng) {
    const size_t total = l.size();
    if (n > total) throw ImageError("sample_pixels: n exceeds pixel count");

    std::vector<uint32_t> idx(total);
    std::iota(idx.begin(), idx.end(), 0u);
    // partial Fisher-Yates
    for (size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<size_t> pick(i, total - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    std::vector<std::pair<int, int>> coords(n);
    for (size_t i = 0; i < n; ++i)
        coords[i] = {static_cast<int>(idx[i] / l.width), static_cast<int>(idx[i] % l.width)};
    return coords;
}

}  // namespace microseg
