#include "engage/labeling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "engage/errors.hpp"
#include "engage/log.hpp"
#include "engage/rng.hpp"

namespace engage {

using nlohmann::json;

void CorpusSplit::save(const std::filesystem::path& path, double holdout_fraction,
                       std::uint64_t seed) const {
    json j;
    j["version"] = 1;
    j["holdout_fraction"] = holdout_fraction;
    j["seed"] = seed;
    j["cluster_fit_ids"] = cluster_fit_ids;
    j["train_ids"] = train_ids;
    std::ofstream out(path);
    if (!out) throw IoError("cannot open split file for writing: " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed writing split file: " + path.string());
}

CorpusSplit CorpusSplit::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open split file: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InputError("malformed split file " + path.string() + ": " + e.what());
    }
    if (!j.contains("cluster_fit_ids") || !j.contains("train_ids"))
        throw InputError("split file missing id lists: " + path.string());
    CorpusSplit split;
    split.cluster_fit_ids = j.at("cluster_fit_ids").get<std::vector<std::string>>();
    split.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    return split;
}

CorpusSplit split_corpus(std::span<const Post> corpus, double holdout_fraction,
                         std::uint64_t seed) {
    const std::size_t n = corpus.size();
    if (n < 2) throw InputError("corpus must contain at least two posts to split");
    if (!(holdout_fraction > 0.0) || !(holdout_fraction < 1.0))
        throw ConfigError("holdout fraction must lie strictly between 0 and 1");

    const auto holdout = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(n)));
    if (holdout == 0 || holdout >= n)
        throw ConfigError("holdout fraction leaves an empty split side");

    std::vector<std::string> ids;
    ids.reserve(n);
    for (const auto& post : corpus) ids.push_back(post.id);
    std::sort(ids.begin(), ids.end());

    Rng rng(seed);
    rng.shuffle(ids);

    CorpusSplit split;
    split.cluster_fit_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(holdout));
    split.train_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(holdout), ids.end());
    std::sort(split.cluster_fit_ids.begin(), split.cluster_fit_ids.end());
    std::sort(split.train_ids.begin(), split.train_ids.end());
    return split;
}

std::vector<std::string> sample_comments(const Post& post, std::size_t max_n, std::uint64_t seed) {
    if (post.comments.size() <= max_n)
        return post.comments;
    Rng rng(seed);
    const auto picked = rng.sample_indices(post.comments.size(), max_n);
    std::vector<std::string> out;
    out.reserve(max_n);
    for (auto idx : picked) out.push_back(post.comments[idx]);
    return out;
}

PseudoLabels create_labels(const Post& post, const ClusterModel& comment_model,
                           const ClusterModel& reaction_model, const Vocabulary& vocab,
                           std::uint64_t seed, std::size_t max_comments,
                           const RandomProjection* projection) {
    if (comment_model.kind != FeatureKind::Comment)
        throw InputError("comment cluster model has wrong feature kind");
    if (reaction_model.kind != FeatureKind::Reaction)
        throw InputError("reaction cluster model has wrong feature kind");

    PseudoLabels labels;

    const auto comments = sample_comments(post, max_comments, seed);
    std::map<std::uint32_t, double> counts;
    double total = 0.0;
    for (const auto& text : comments) {
        const auto vec = embed_comment(text, vocab, projection);
        if (zero_embedding(vec)) continue;
        const auto cluster = assign_cluster(vec, comment_model);
        counts[static_cast<std::uint32_t>(cluster)] += 1.0;
        total += 1.0;
    }
    if (total > 0.0) {
        for (auto& [cluster, weight] : counts) weight /= total;
        labels.comment_target = std::move(counts);
    }

    if (const auto reaction_vec = normalize_reactions(post.reactions)) {
        labels.reaction_label = assign_cluster(*reaction_vec, reaction_model);
    }

    return labels;
}

LabeledDataset build_dataset(std::span<const Post> corpus, const CorpusSplit& split,
                             const ClusterModel& comment_model, const ClusterModel& reaction_model,
                             const Vocabulary& vocab, std::uint64_t seed,
                             std::size_t max_comments, const RandomProjection* projection) {
    // Provenance check: anything the models were fit on must not leak into
    // the training set we are about to label.
    std::unordered_set<std::string> fit_ids;
    fit_ids.insert(vocab.fit_post_ids.begin(), vocab.fit_post_ids.end());
    fit_ids.insert(comment_model.fit_post_ids.begin(), comment_model.fit_post_ids.end());
    fit_ids.insert(reaction_model.fit_post_ids.begin(), reaction_model.fit_post_ids.end());
    if (!fit_ids.empty()) {
        for (const auto& id : split.train_ids) {
            if (fit_ids.count(id))
                throw IntegrityError("post " + id + " appears in both cluster-fit provenance and train split");
        }
    }

    std::unordered_set<std::string> train_ids(split.train_ids.begin(), split.train_ids.end());

    struct Candidate {
        const Post* post;
        std::size_t index;
    };
    std::vector<Candidate> candidates;
    candidates.reserve(train_ids.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (train_ids.count(corpus[i].id)) candidates.push_back({&corpus[i], i});
    }
    if (candidates.size() != train_ids.size())
        throw InputError("train split references post ids missing from the corpus");

    std::sort(candidates.begin(), candidates.end(),
              [](const Candidate& a, const Candidate& b) { return a.post->id < b.post->id; });

    LabeledDataset dataset;
    dataset.examples.reserve(candidates.size());
    for (const auto& cand : candidates) {
        // Seed per post id, not per position, so labels do not depend on
        // corpus file order.
        const auto post_seed = derive_seed(seed, cand.post->id);
        auto labels = create_labels(*cand.post, comment_model, reaction_model, vocab, post_seed,
                                    max_comments, projection);
        if (labels.empty()) {
            ++dataset.excluded_posts;
            continue;
        }
        dataset.examples.push_back({cand.post->id, cand.index, std::move(labels)});
    }
    if (dataset.excluded_posts > 0) {
        log_info("excluded " + std::to_string(dataset.excluded_posts) +
                 " posts with no usable engagement signal");
    }
    return dataset;
}

void save_labels(const std::filesystem::path& path, const LabeledDataset& dataset) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open labels file for writing: " + path.string());
    for (const auto& ex : dataset.examples) {
        json j;
        j["id"] = ex.id;
        if (ex.labels.comment_target) {
            json target = json::object();
            for (const auto& [cluster, weight] : *ex.labels.comment_target)
                target[std::to_string(cluster)] = weight;
            j["comment_target"] = std::move(target);
        } else {
            j["comment_target"] = nullptr;
        }
        if (ex.labels.reaction_label) {
            j["reaction_label"] = *ex.labels.reaction_label;
        } else {
            j["reaction_label"] = nullptr;
        }
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("failed writing labels file: " + path.string());
}

std::vector<LabelRecord> load_labels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open labels file: " + path.string());
    std::vector<LabelRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw InputError("labels line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.contains("id") || !j.at("id").is_string())
            throw InputError("labels line " + std::to_string(line_no) + ": missing id");
        LabelRecord rec;
        rec.id = j.at("id").get<std::string>();
        if (j.contains("comment_target") && !j.at("comment_target").is_null()) {
            const auto& target = j.at("comment_target");
            if (!target.is_object())
                throw InputError("labels line " + std::to_string(line_no) +
                                 ": comment_target must be an object or null");
            std::map<std::uint32_t, double> weights;
            for (const auto& [key, value] : target.items()) {
                std::uint32_t cluster = 0;
                try {
                    cluster = static_cast<std::uint32_t>(std::stoul(key));
                } catch (const std::exception&) {
                    throw InputError("labels line " + std::to_string(line_no) +
                                     ": non-numeric cluster key '" + key + "'");
                }
                if (!value.is_number())
                    throw InputError("labels line " + std::to_string(line_no) +
                                     ": cluster weight must be a number");
                weights[cluster] = value.get<double>();
            }
            if (weights.empty())
                throw InputError("labels line " + std::to_string(line_no) +
                                 ": comment_target present but empty");
            rec.labels.comment_target = std::move(weights);
        }
        if (j.contains("reaction_label") && !j.at("reaction_label").is_null()) {
            if (!j.at("reaction_label").is_number_unsigned())
                throw InputError("labels line " + std::to_string(line_no) +
                                 ": reaction_label must be a non-negative integer");
            rec.labels.reaction_label = j.at("reaction_label").get<std::uint32_t>();
        }
        if (rec.labels.empty())
            throw InputError("labels line " + std::to_string(line_no) + ": record has no targets");
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace engage
