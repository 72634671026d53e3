#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "engage/corpus.hpp"
#include "engage/transfer.hpp"

namespace engage {

// Desk-scale corpus generator. A hidden class per post drives the image
// features (class mean plus Gaussian noise), the comment vocabulary, and
// the reaction profile, so engagement genuinely predicts the latent class.
struct SynthConfig {
    std::size_t n_posts = 1000;
    std::size_t n_classes = 5;
    double noise = 1.0;
    std::size_t feature_dim = 32;
    double class_separation = 3.0;
    std::size_t words_per_class = 6;
    std::size_t shared_words = 8;
    std::size_t min_comments = 1;
    std::size_t max_comments = 4;
    std::size_t min_words = 3;
    std::size_t max_words = 7;
    // fraction of posts emitted with no comments and no reactions
    double empty_engagement_fraction = 0.0;
    std::uint64_t min_reactions = 20;
    std::uint64_t max_reactions = 200;

    void validate() const;
    nlohmann::json to_json() const;
    static SynthConfig from_json(const nlohmann::json& j);
};

struct SynthCorpus {
    std::vector<Post> posts;
    std::vector<std::uint32_t> classes;  // aligned with posts
};

SynthCorpus generate_corpus(const SynthConfig& config, std::uint64_t seed);

// Sidecar with the ground truth that downstream tasks are built from:
// JSON lines {"id", "class"}.
void save_classes(const std::filesystem::path& path, const SynthCorpus& corpus);
std::vector<std::pair<std::string, std::uint32_t>> load_classes(const std::filesystem::path& path);

struct DownstreamSynthConfig {
    double train_fraction = 0.7;
    double val_fraction = 0.1;  // remainder is the test split
    bool text_features = false;
    double text_noise = 0.1;

    void validate() const;
    nlohmann::json to_json() const;
    static DownstreamSynthConfig from_json(const nlohmann::json& j);
};

// Turns a generated corpus plus its class sidecar into a labeled
// downstream task with seeded train/val/test splits. Optional text
// features are a noisy one-hot encoding of the class, standing in for
// precomputed text-encoder outputs.
DownstreamDataset make_downstream(const SynthCorpus& corpus, const DownstreamSynthConfig& config,
                                  std::uint64_t seed);

}  // namespace engage
