#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "engage/features.hpp"

namespace engage {

struct VocabConfig {
    std::size_t min_token_length = 2;  // tokens shorter than this are dropped
    std::uint32_t min_df = 1;          // keep terms appearing in >= min_df documents
    std::size_t max_terms = 50000;     // 0 = unlimited; highest-df terms kept
};

// Lowercase, split on non-alphanumeric runs, drop short tokens.
std::vector<std::string> tokenize(std::string_view text, std::size_t min_token_length);

struct TermEntry {
    std::string term;
    std::uint32_t index = 0;
    std::uint32_t df = 0;  // number of documents containing the term
};

// Bag-of-words basis fitted on a comment corpus. Indices are a contiguous
// range assigned in lexicographic term order, so a fit is fully determined
// by (corpus, config). Immutable after fit.
class Vocabulary {
public:
    Vocabulary() = default;

    static Vocabulary fit(std::span<const std::string> corpus, const VocabConfig& cfg = {});

    std::size_t size() const { return terms_.size(); }
    std::uint64_t corpus_size() const { return corpus_size_; }
    const VocabConfig& config() const { return cfg_; }
    const std::vector<TermEntry>& terms() const { return terms_; }

    // nullptr when the term is out of vocabulary
    const TermEntry* find(std::string_view term) const;

    // Smoothed idf: ln((1+N)/(1+df)) + 1. Terms present in every document
    // keep a positive weight instead of being zeroed out.
    double idf(const TermEntry& e) const;

    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

    // Optional provenance: ids of the posts whose comments the vocabulary was
    // fitted on. Used to detect holdout/train contamination downstream.
    std::vector<std::string> fit_post_ids;

private:
    VocabConfig cfg_;
    std::uint64_t corpus_size_ = 0;
    std::vector<TermEntry> terms_;  // position == index
    std::unordered_map<std::string, std::uint32_t> lookup_;
};

Vocabulary fit_vocabulary(std::span<const std::string> corpus, const VocabConfig& cfg = {});

// Seeded dense Gaussian projection for shrinking large tf-idf vectors before
// clustering. Regenerated from (dims, seed), never serialized.
class RandomProjection {
public:
    static RandomProjection make(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed);

    std::size_t in_dim() const { return in_dim_; }
    std::size_t out_dim() const { return out_dim_; }

    std::vector<double> apply(std::span<const double> v) const;

private:
    std::size_t in_dim_ = 0, out_dim_ = 0;
    std::vector<double> weights_;  // out_dim x in_dim row-major
};

// tf-idf embedding of a single comment, L2-normalized when nonzero.
// A comment with no in-vocabulary token embeds to the zero vector, which
// callers treat as "skip this comment".
EngagementVector embed_comment(const std::string& comment, const Vocabulary& vocab,
                               const RandomProjection* projection = nullptr);

}  // namespace engage
