#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "engage/corpus.hpp"
#include "engage/kmeans.hpp"
#include "engage/text_features.hpp"

namespace engage {

// Disjoint partition of a corpus: one side fits the cluster models, the
// other side is what pre-training runs on. Id lists are kept sorted.
struct CorpusSplit {
    std::vector<std::string> cluster_fit_ids;
    std::vector<std::string> train_ids;

    void save(const std::filesystem::path& path, double holdout_fraction,
              std::uint64_t seed) const;
    static CorpusSplit load(const std::filesystem::path& path);
};

// Seeded uniform split; holdout size = round(fraction * n). The fraction
// must leave at least one post on each side.
CorpusSplit split_corpus(std::span<const Post> corpus, double holdout_fraction,
                         std::uint64_t seed);

// At most max_n comments per post. Under the cap all comments come back in
// their original order; above it a seeded uniform sample without
// replacement is taken (original relative order preserved).
std::vector<std::string> sample_comments(const Post& post, std::size_t max_n, std::uint64_t seed);

// Per-post supervision targets derived from cluster assignments.
struct PseudoLabels {
    // cluster index -> weight; weights are assignment multiplicities
    // normalized to sum to 1. Absent when no comment embeds to a nonzero
    // vector.
    std::optional<std::map<std::uint32_t, double>> comment_target;
    // absent when the post has zero reactions
    std::optional<std::uint32_t> reaction_label;

    bool empty() const { return !comment_target.has_value() && !reaction_label.has_value(); }
};

PseudoLabels create_labels(const Post& post, const ClusterModel& comment_model,
                           const ClusterModel& reaction_model, const Vocabulary& vocab,
                           std::uint64_t seed, std::size_t max_comments = 100,
                           const RandomProjection* projection = nullptr);

struct LabeledExample {
    std::string id;
    std::size_t post_index = 0;  // into the corpus the dataset was built from
    PseudoLabels labels;
};

struct LabeledDataset {
    std::vector<LabeledExample> examples;  // train ids only, in id order
    std::size_t excluded_posts = 0;        // posts dropped because both targets were absent
};

// Labels every train-side post. Posts with neither target are excluded
// (counted). Errors out if model/vocabulary provenance overlaps train ids.
LabeledDataset build_dataset(std::span<const Post> corpus, const CorpusSplit& split,
                             const ClusterModel& comment_model, const ClusterModel& reaction_model,
                             const Vocabulary& vocab, std::uint64_t seed,
                             std::size_t max_comments = 100,
                             const RandomProjection* projection = nullptr);

// JSON-lines label records: {"id", "comment_target": {index: weight} | null,
// "reaction_label": int | null}.
void save_labels(const std::filesystem::path& path, const LabeledDataset& dataset);

struct LabelRecord {
    std::string id;
    PseudoLabels labels;
};
std::vector<LabelRecord> load_labels(const std::filesystem::path& path);

}  // namespace engage
