#pragma once

#include <filesystem>

#include "microseg/image.hpp"

namespace microseg {

// Reads an 8- or 16-bit single-channel PNG and normalizes intensities to
// [0,1] by the max representable value. A sidecar "<path>.json" with an
// "um_per_px" field supplies the physical scale when present. Multi-channel
// input is an error, never silently converted.
Micrograph load_micrograph(const std::filesystem::path& path);

// Writes 8-bit (default) or 16-bit grayscale.
void save_micrograph(const Micrograph& m, const std::filesystem::path& path,
                     int bit_depth = 8);

// Reads an 8-bit paletted PNG; every index must be < taxonomy K.
LabelMap load_labelmap(const std::filesystem::path& path, const ClassTaxonomy& taxonomy);

// Writes a paletted PNG carrying the taxonomy palette.
void save_labelmap(const LabelMap& map, const ClassTaxonomy& taxonomy,
                   const std::filesystem::path& path);

}  // namespace microseg
