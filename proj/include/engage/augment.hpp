#pragma once

#include <cstdint>

#include "engage/corpus.hpp"
#include "engage/rng.hpp"

namespace engage {

struct AugmentConfig {
    double scale_min = 0.08;  // crop area as a fraction of the source area
    double scale_max = 1.0;
    double aspect_min = 3.0 / 4.0;
    double aspect_max = 4.0 / 3.0;
    double hflip_prob = 0.5;
    std::size_t out_height = 224;
    std::size_t out_width = 224;

    void validate() const;
};

// Bilinear resampling with half-pixel centers: every destination pixel maps
// to (dst + 0.5) * in/out - 0.5 in the source, clamped at the borders.
Raster bilinear_resize(const Raster& src, std::size_t out_height, std::size_t out_width);

Raster hflip(const Raster& src);

Raster crop(const Raster& src, std::size_t top, std::size_t left, std::size_t height,
            std::size_t width);

// Random resized crop: up to ten attempts drawing an area fraction and a
// log-uniform aspect ratio, falling back to a centered aspect-clamped crop,
// then resize and (maybe) horizontal flip. Draw order is part of the
// contract: per attempt area fraction, aspect, then top and left if the box
// fits; the flip coin comes last.
Raster augment(const Raster& src, const AugmentConfig& config, Rng& rng);

}  // namespace engage
