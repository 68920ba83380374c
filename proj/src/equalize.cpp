#include "microseg/equalize.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace microseg {
namespace {

constexpr int kBins = 256;

int bin_of(double v) {
    int b = static_cast<int>(v * (kBins - 1) + 0.5);
    return std::clamp(b, 0, kBins - 1);
}

// Histogram -> monotone mapping LUT in [0,1]. Returns false for a
// degenerate (single occupied bin) histogram.
bool make_lut(std::array<double, kBins>& hist, double total, double clip,
              std::array<double, kBins>& lut) {
    // clip and redistribute
    const double cap = clip * total;
    double excess = 0.0;
    for (double& h : hist) {
        if (h > cap) {
            excess += h - cap;
            h = cap;
        }
    }
    if (excess > 0.0) {
        const double add = excess / kBins;
        for (double& h : hist) h += add;
    }

    std::array<double, kBins> cdf{};
    double acc = 0.0;
    for (int b = 0; b < kBins; ++b) {
        acc += hist[b];
        cdf[b] = acc;
    }
    double cdf_min = 0.0;
    for (int b = 0; b < kBins; ++b) {
        if (hist[b] > 0.0) {
            cdf_min = cdf[b];
            break;
        }
    }
    const double denom = total - cdf_min;
    if (denom <= 0.0) return false;  // constant tile: identity
    for (int b = 0; b < kBins; ++b)
        lut[b] = std::clamp((cdf[b] - cdf_min) / denom, 0.0, 1.0);
    return true;
}

}  // namespace

Micrograph global_hist_equalize(const Micrograph& m, double clip) {
    std::array<double, kBins> hist{};
    for (double v : m.pixels) hist[bin_of(v)] += 1.0;
    std::array<double, kBins> lut{};
    if (!make_lut(hist, static_cast<double>(m.size()), clip, lut)) return m;

    Micrograph out = m;
    for (double& v : out.pixels) v = lut[bin_of(v)];
    return out;
}

Micrograph local_hist_equalize(const Micrograph& m, int tile, double clip) {
    if (tile < 8) throw ImageError("equalization tile must be >= 8");
    if (!(clip > 0.0 && clip <= 1.0)) throw ImageError("clip must be in (0,1]");
    if (tile > m.height || tile > m.width) return global_hist_equalize(m, clip);
    if (std::all_of(m.pixels.begin(), m.pixels.end(),
                    [&](double v) { return v == m.pixels[0]; }))
        return m;

    const int ty = (m.height + tile - 1) / tile;
    const int tx = (m.width + tile - 1) / tile;

    // Per-tile mapping LUTs; degenerate tiles fall back to identity.
    std::vector<std::array<double, kBins>> luts(static_cast<size_t>(ty) * tx);
    for (int i = 0; i < ty; ++i) {
        for (int j = 0; j < tx; ++j) {
            const int r0 = i * tile, r1 = std::min(m.height, r0 + tile);
            const int c0 = j * tile, c1 = std::min(m.width, c0 + tile);
            std::array<double, kBins> hist{};
            for (int r = r0; r < r1; ++r)
                for (int c = c0; c < c1; ++c) hist[bin_of(m.at(r, c))] += 1.0;
            auto& lut = luts[static_cast<size_t>(i) * tx + j];
            const double total = static_cast<double>(r1 - r0) * (c1 - c0);
            if (!make_lut(hist, total, clip, lut))
                for (int b = 0; b < kBins; ++b) lut[b] = b / double(kBins - 1);
        }
    }

    // Bilinear blend between the four surrounding tile centers.
    Micrograph out = m;
    for (int r = 0; r < m.height; ++r) {
        const double fy = (r + 0.5) / tile - 0.5;
        const int i0 = std::clamp(static_cast<int>(std::floor(fy)), 0, ty - 1);
        const int i1 = std::min(i0 + 1, ty - 1);
        const double wy = std::clamp(fy - i0, 0.0, 1.0);
        for (int c = 0; c < m.width; ++c) {
            const double fx = (c + 0.5) / tile - 0.5;
            const int j0 = std::clamp(static_cast<int>(std::floor(fx)), 0, tx - 1);
            const int j1 = std::min(j0 + 1, tx - 1);
            const double wx = std::clamp(fx - j0, 0.0, 1.0);
            const int b = bin_of(m.at(r, c));
            const double v00 = luts[static_cast<size_t>(i0) * tx + j0][b];
            const double v01 = luts[static_cast<size_t>(i0) * tx + j1][b];
            const double v10 = luts[static_cast<size_t>(i1) * tx + j0][b];
            const double v11 = luts[static_cast<size_t>(i1) * tx + j1][b];
            out.at(r, c) = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                           wy * ((1 - wx) * v10 + wx * v11);
        }
    }
    return out;
}

}  // namespace microseg
