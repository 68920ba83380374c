#pragma once

#include "microseg/image.hpp"
#include "microseg/particles.hpp"

namespace microseg {

// Per-pixel Euclidean distance (px, pixel-center metric) to the nearest
// target pixel; zero exactly on the target set.
struct DistanceMap {
    int height = 0;
    int width = 0;
    std::vector<double> d;

    double at(int r, int c) const { return d[static_cast<size_t>(r) * width + c]; }
};

// Exact Euclidean distance transform (two-pass lower-envelope algorithm,
// rows parallelized). Throws on an empty target mask.
DistanceMap distance_transform(const Mask& target);

namespace serial {
// Reference implementation, kept for testing the parallel kernel against.
DistanceMap distance_transform(const Mask& target);
}  // namespace serial

// Disk structuring element of the given radius (offsets with dr^2+dc^2 <= r^2).
Mask dilate(const Mask& m, int radius);
Mask erode(const Mask& m, int radius);
Mask closing(const Mask& m, int radius);

// Fills background components not connected to the image border.
Mask fill_holes(const Mask& m);

struct DzoneParams {
    int closing_radius = 5;
    long min_network_component_px = 0;  // 0 disables the spurious-network filter
};

// Reduces a K=4 microconstituent map to {matrix adjacent to network, network,
// spheroidite}: fills matrix inside the network, prunes matrix segments whose
// closing does not reach the network, reassigns matrix nearer widmanstatten
// than network, then drops widmanstatten. Removed pixels become spheroidite.
// Throws when the map contains no network pixels.
LabelMap clean_microconstituent_map(const LabelMap& map, const DzoneParams& params = {});

struct InterfaceSet {
    Mask network_interface;   // matrix boundary pixels 4-adjacent to network
    Mask zone_boundary;       // remaining matrix boundary pixels
};

// Boundary = matrix pixels with a non-matrix 4-neighbor, split by adjacency
// to the network.
InterfaceSet extract_interfaces(const LabelMap& cleaned);

// Network distances sampled at every denuded-zone boundary pixel; um when a
// scale is given.
EmpiricalDistribution denuded_zone_widths(const LabelMap& map,
                                          const DzoneParams& params = {},
                                          std::optional<double> um_per_px = std::nullopt);

}  // namespace microseg
