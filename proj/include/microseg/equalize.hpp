#pragma once

#include "microseg/image.hpp"

namespace microseg {

// Contrast-limited adaptive histogram equalization. Per-tile 256-bin
// histograms are clipped at clip * tile_pixels per bin with the clipped mass
// redistributed uniformly; pixel mappings are blended bilinearly between the
// four surrounding tile mappings. Falls back to global equalization when the
// tile does not fit the image. A constant image is returned unchanged.
//
// Preconditions: tile >= 8, clip in (0,1].
Micrograph local_hist_equalize(const Micrograph& m, int tile = 64, double clip = 0.01);

// Plain global histogram equalization over 256 bins (clip applied the same way).
Micrograph global_hist_equalize(const Micrograph& m, double clip = 1.0);

}  // namespace microseg
