#include "engage/corpus.hpp"

#include <fstream>
#include <unordered_set>

#include "json.hpp"

#include "engage/errors.hpp"

namespace engage {

using nlohmann::json;

json image_to_json(const std::variant<Raster, FeatureVec>& image) {
    if (std::holds_alternative<Raster>(image)) {
        const Raster& r = std::get<Raster>(image);
        return {{"pixels", r.pixels}, {"h", r.height}, {"w", r.width}, {"c", r.channels}};
    }
    return {{"features", std::get<FeatureVec>(image)}};
}

std::variant<Raster, FeatureVec> image_from_json(const json& img, const std::string& context) {
    auto fail = [&](const std::string& msg) -> void { throw InputError(context + ": " + msg); };

    if (!img.is_object()) fail("image must be an object");
    const bool has_pixels = img.contains("pixels");
    const bool has_features = img.contains("features");
    if (has_pixels == has_features) fail("image must carry exactly one of 'pixels' or 'features'");
    if (has_pixels) {
        for (const char* key : {"h", "w", "c"}) {
            if (!img.contains(key) || !img.at(key).is_number_unsigned())
                fail(std::string("raster image missing unsigned field '") + key + "'");
        }
        Raster r;
        r.height = img.at("h").get<std::size_t>();
        r.width = img.at("w").get<std::size_t>();
        r.channels = img.at("c").get<std::size_t>();
        r.pixels = img.at("pixels").get<std::vector<double>>();
        if (r.pixels.size() != r.height * r.width * r.channels)
            fail("pixel count does not match h*w*c");
        for (double v : r.pixels) {
            if (!(v >= 0.0 && v <= 1.0)) fail("pixel values must lie in [0, 1]");
        }
        return r;
    }
    return img.at("features").get<FeatureVec>();
}

namespace {

json post_to_json(const Post& p) {
    json j;
    j["id"] = p.id;
    j["image"] = image_to_json(p.image);
    j["comments"] = p.comments;
    json reactions;
    for (std::size_t i = 0; i < 5; ++i) reactions[kReactionNames[i]] = p.reactions.counts[i];
    j["reactions"] = std::move(reactions);
    return j;
}

Post post_from_json(const json& j, std::size_t line_no) {
    const std::string context = "corpus line " + std::to_string(line_no);
    auto fail = [&](const std::string& msg) -> void { throw InputError(context + ": " + msg); };

    Post p;
    if (!j.contains("id") || !j.at("id").is_string()) fail("missing string field 'id'");
    p.id = j.at("id").get<std::string>();

    if (!j.contains("image")) fail("missing object field 'image'");
    p.image = image_from_json(j.at("image"), context);

    if (j.contains("comments")) p.comments = j.at("comments").get<std::vector<std::string>>();

    if (!j.contains("reactions") || !j.at("reactions").is_object())
        fail("missing object field 'reactions'");
    const json& re = j.at("reactions");
    for (std::size_t i = 0; i < 5; ++i) {
        if (!re.contains(kReactionNames[i]))
            fail(std::string("reactions missing key '") + kReactionNames[i] + "'");
        if (!re.at(kReactionNames[i]).is_number_unsigned())
            fail(std::string("reaction count '") + kReactionNames[i] +
                 "' must be a non-negative integer");
        p.reactions.counts[i] = re.at(kReactionNames[i]).get<std::uint64_t>();
    }
    return p;
}

}  // namespace

std::vector<Post> load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read corpus file: " + path.string());

    std::vector<Post> posts;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw InputError("corpus line " + std::to_string(line_no) + ": " + e.what());
        }
        Post p = post_from_json(j, line_no);
        if (!seen.insert(p.id).second)
            throw InputError("corpus line " + std::to_string(line_no) + ": duplicate post id '" +
                             p.id + "'");
        posts.push_back(std::move(p));
    }
    return posts;
}

void save_corpus(const std::filesystem::path& path, std::span<const Post> posts) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write corpus file: " + path.string());
    for (const auto& p : posts) out << post_to_json(p).dump() << "\n";
}

}  // namespace engage
