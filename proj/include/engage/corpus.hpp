#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "engage/features.hpp"

namespace engage {

// Raster image, row-major height x width x channels, values in [0, 1].
struct Raster {
    std::size_t height = 0, width = 0, channels = 0;
    std::vector<double> pixels;

    double at(std::size_t y, std::size_t x, std::size_t c) const {
        return pixels[(y * width + x) * channels + c];
    }
    double& at(std::size_t y, std::size_t x, std::size_t c) {
        return pixels[(y * width + x) * channels + c];
    }
};

using FeatureVec = std::vector<double>;

// One ingested social post. The image is either a raster or a precomputed
// feature vector, never both.
struct Post {
    std::string id;
    std::variant<Raster, FeatureVec> image;
    std::vector<std::string> comments;
    ReactionCounts reactions;

    bool has_raster() const { return std::holds_alternative<Raster>(image); }
    const Raster& raster() const { return std::get<Raster>(image); }
    const FeatureVec& features() const { return std::get<FeatureVec>(image); }
};

// Shared image schema: {"pixels", "h", "w", "c"} for rasters or
// {"features"} for precomputed vectors, exactly one of the two.
nlohmann::json image_to_json(const std::variant<Raster, FeatureVec>& image);
std::variant<Raster, FeatureVec> image_from_json(const nlohmann::json& img,
                                                 const std::string& context);

// JSON-lines corpus, one post per line. Load validates the schema, pixel
// range, reaction keys, and id uniqueness.
std::vector<Post> load_corpus(const std::filesystem::path& path);
void save_corpus(const std::filesystem::path& path, std::span<const Post> posts);

}  // namespace engage
