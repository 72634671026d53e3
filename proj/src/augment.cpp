#include "engage/augment.hpp"

#include <algorithm>
#include <cmath>

#include "engage/errors.hpp"

namespace engage {

void AugmentConfig::validate() const {
    if (!(scale_min > 0.0) || scale_min > scale_max || scale_max > 1.0)
        throw ConfigError("augment scale range must satisfy 0 < min <= max <= 1");
    if (!(aspect_min > 0.0) || aspect_min > aspect_max)
        throw ConfigError("augment aspect range must satisfy 0 < min <= max");
    if (hflip_prob < 0.0 || hflip_prob > 1.0)
        throw ConfigError("augment hflip probability must lie in [0, 1]");
    if (out_height == 0 || out_width == 0)
        throw ConfigError("augment output size must be positive");
}

Raster crop(const Raster& src, std::size_t top, std::size_t left, std::size_t height,
            std::size_t width) {
    if (height == 0 || width == 0) throw InputError("crop size must be positive");
    if (top + height > src.height || left + width > src.width)
        throw InputError("crop window exceeds raster bounds");
    Raster out;
    out.height = height;
    out.width = width;
    out.channels = src.channels;
    out.pixels.resize(height * width * src.channels);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x)
            for (std::size_t c = 0; c < src.channels; ++c)
                out.at(y, x, c) = src.at(top + y, left + x, c);
    return out;
}

Raster hflip(const Raster& src) {
    Raster out = src;
    for (std::size_t y = 0; y < src.height; ++y)
        for (std::size_t x = 0; x < src.width; ++x)
            for (std::size_t c = 0; c < src.channels; ++c)
                out.at(y, x, c) = src.at(y, src.width - 1 - x, c);
    return out;
}

Raster bilinear_resize(const Raster& src, std::size_t out_height, std::size_t out_width) {
    if (src.height == 0 || src.width == 0) throw InputError("cannot resize an empty raster");
    if (out_height == 0 || out_width == 0) throw InputError("resize target must be positive");

    Raster out;
    out.height = out_height;
    out.width = out_width;
    out.channels = src.channels;
    out.pixels.resize(out_height * out_width * src.channels);

    const double scale_y = static_cast<double>(src.height) / static_cast<double>(out_height);
    const double scale_x = static_cast<double>(src.width) / static_cast<double>(out_width);

    for (std::size_t y = 0; y < out_height; ++y) {
        double sy = (static_cast<double>(y) + 0.5) * scale_y - 0.5;
        sy = std::clamp(sy, 0.0, static_cast<double>(src.height - 1));
        const auto y0 = static_cast<std::size_t>(sy);
        const std::size_t y1 = std::min(y0 + 1, src.height - 1);
        const double fy = sy - static_cast<double>(y0);
        for (std::size_t x = 0; x < out_width; ++x) {
            double sx = (static_cast<double>(x) + 0.5) * scale_x - 0.5;
            sx = std::clamp(sx, 0.0, static_cast<double>(src.width - 1));
            const auto x0 = static_cast<std::size_t>(sx);
            const std::size_t x1 = std::min(x0 + 1, src.width - 1);
            const double fx = sx - static_cast<double>(x0);
            for (std::size_t c = 0; c < src.channels; ++c) {
                const double v00 = src.at(y0, x0, c);
                const double v01 = src.at(y0, x1, c);
                const double v10 = src.at(y1, x0, c);
                const double v11 = src.at(y1, x1, c);
                out.at(y, x, c) = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) +
                                  fy * ((1.0 - fx) * v10 + fx * v11);
            }
        }
    }
    return out;
}

Raster augment(const Raster& src, const AugmentConfig& config, Rng& rng) {
    config.validate();
    if (src.height == 0 || src.width == 0) throw InputError("cannot augment an empty raster");

    const double area = static_cast<double>(src.height) * static_cast<double>(src.width);
    const double log_aspect_min = std::log(config.aspect_min);
    const double log_aspect_max = std::log(config.aspect_max);

    std::size_t crop_top = 0, crop_left = 0;
    std::size_t crop_h = 0, crop_w = 0;
    bool found = false;
    for (int attempt = 0; attempt < 10 && !found; ++attempt) {
        const double target_area = area * rng.uniform(config.scale_min, config.scale_max);
        const double aspect = std::exp(rng.uniform(log_aspect_min, log_aspect_max));
        const auto w = static_cast<long long>(std::llround(std::sqrt(target_area * aspect)));
        const auto h = static_cast<long long>(std::llround(std::sqrt(target_area / aspect)));
        if (w > 0 && h > 0 && static_cast<std::size_t>(w) <= src.width &&
            static_cast<std::size_t>(h) <= src.height) {
            crop_w = static_cast<std::size_t>(w);
            crop_h = static_cast<std::size_t>(h);
            crop_top = rng.uniform_int(src.height - crop_h + 1);
            crop_left = rng.uniform_int(src.width - crop_w + 1);
            found = true;
        }
    }
    if (!found) {
        // Center crop at the nearest aspect inside the allowed range.
        const double in_ratio =
            static_cast<double>(src.width) / static_cast<double>(src.height);
        if (in_ratio < config.aspect_min) {
            crop_w = src.width;
            crop_h = static_cast<std::size_t>(
                std::llround(static_cast<double>(crop_w) / config.aspect_min));
        } else if (in_ratio > config.aspect_max) {
            crop_h = src.height;
            crop_w = static_cast<std::size_t>(
                std::llround(static_cast<double>(crop_h) * config.aspect_max));
        } else {
            crop_w = src.width;
            crop_h = src.height;
        }
        crop_h = std::min(std::max<std::size_t>(crop_h, 1), src.height);
        crop_w = std::min(std::max<std::size_t>(crop_w, 1), src.width);
        crop_top = (src.height - crop_h) / 2;
        crop_left = (src.width - crop_w) / 2;
    }

    Raster result = crop(src, crop_top, crop_left, crop_h, crop_w);
    result = bilinear_resize(result, config.out_height, config.out_width);
    if (rng.uniform() < config.hflip_prob) result = hflip(result);
    return result;
}

}  // namespace engage
