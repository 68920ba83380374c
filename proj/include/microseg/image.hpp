#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace microseg {

// Grayscale micrograph, intensities normalized to [0,1], row-major.
struct Micrograph {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;
    std::optional<double> um_per_px;  // physical scale, if known

    Micrograph() = default;
    Micrograph(int h, int w, double fill = 0.0)
        : height(h), width(w), pixels(static_cast<size_t>(h) * w, fill) {}

    double& at(int r, int c) { return pixels[static_cast<size_t>(r) * width + c]; }
    double at(int r, int c) const { return pixels[static_cast<size_t>(r) * width + c]; }
    size_t size() const { return pixels.size(); }
};

// Per-pixel class indices in [0, num_classes).
struct LabelMap {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> labels;
    int num_classes = 0;

    LabelMap() = default;
    LabelMap(int h, int w, int k, uint8_t fill = 0)
        : height(h), width(w), labels(static_cast<size_t>(h) * w, fill), num_classes(k) {}

    uint8_t& at(int r, int c) { return labels[static_cast<size_t>(r) * width + c]; }
    uint8_t at(int r, int c) const { return labels[static_cast<size_t>(r) * width + c]; }
    size_t size() const { return labels.size(); }
};

using Rgb = std::array<uint8_t, 3>;

// Fixed, ordered class list with display palette.
struct ClassTaxonomy {
    std::vector<std::string> names;
    std::vector<Rgb> palette;

    int num_classes() const { return static_cast<int>(names.size()); }

    // matrix / network / spheroidite / widmanstatten, K=4.
    // Palette: matrix dark blue, network light blue, spheroidite yellow,
    // widmanstatten green.
    static const ClassTaxonomy& microconstituent();

    // matrix / spheroidite, K=2.
    static const ClassTaxonomy& particle();
};

// Class indices for the built-in taxonomies.
inline constexpr uint8_t kMatrix = 0;
inline constexpr uint8_t kNetwork = 1;
inline constexpr uint8_t kSpheroidite = 2;
inline constexpr uint8_t kWidmanstatten = 3;
inline constexpr uint8_t kParticleMatrix = 0;
inline constexpr uint8_t kParticleSpheroidite = 1;

struct ImageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require_same_shape(const LabelMap& a, const LabelMap& b, const char* what) {
    if (a.height != b.height || a.width != b.width)
        throw ImageError(std::string(what) + ": dimension mismatch");
}

}  // namespace microseg
