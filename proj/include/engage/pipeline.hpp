#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "engage/kmeans.hpp"
#include "engage/synth.hpp"
#include "engage/text_features.hpp"
#include "engage/train.hpp"
#include "engage/transfer.hpp"

namespace engage {

// Optional dimensionality reduction between tf-idf vectors and clustering.
// The projection is regenerated from (vocab size, dim, derived seed), so it
// needs no artifact of its own.
struct ProjectionConfig {
    bool enabled = false;
    std::size_t dim = 256;
};

// Every stage artifact lives under one output directory with fixed names.
struct PipelinePaths {
    std::filesystem::path out_dir;

    std::filesystem::path corpus() const { return out_dir / "corpus.jsonl"; }
    std::filesystem::path classes() const { return out_dir / "classes.jsonl"; }
    std::filesystem::path downstream() const { return out_dir / "downstream.jsonl"; }
    std::filesystem::path split() const { return out_dir / "split.json"; }
    std::filesystem::path vocab() const { return out_dir / "vocab.json"; }
    std::filesystem::path comment_clusters() const { return out_dir / "comment_clusters.json"; }
    std::filesystem::path reaction_clusters() const { return out_dir / "reaction_clusters.json"; }
    std::filesystem::path labels() const { return out_dir / "labels.jsonl"; }
    std::filesystem::path checkpoint() const { return out_dir / "checkpoint.json"; }
    std::filesystem::path train_log() const { return out_dir / "train_log.csv"; }
    std::filesystem::path report() const { return out_dir / "report.json"; }
    std::filesystem::path lock() const { return out_dir / ".engage.lock"; }
};

struct PipelineConfig {
    std::uint64_t seed = 1;
    double holdout_fraction = 0.1;
    std::size_t max_comments = 100;  // per-post comment cap before embedding
    std::size_t k_comment = 5000;
    std::size_t k_reaction = 128;

    VocabConfig vocab;
    ProjectionConfig projection;
    KmeansConfig kmeans;

    std::vector<std::size_t> hidden_dims = {64, 64};
    std::size_t embedding_dim = 32;
    double head_bias_prior = 0.01;

    TrainConfig train;
    TransferConfig transfer;
    SynthConfig synth;
    DownstreamSynthConfig downstream;

    void validate() const;
    nlohmann::json to_json() const;
    static PipelineConfig from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static PipelineConfig load(const std::filesystem::path& path);
};

// Exclusive lockfile guarding an output directory against concurrent runs.
// Created O_EXCL, removed on destruction.
class DirLock {
public:
    explicit DirLock(const std::filesystem::path& dir);
    ~DirLock();
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    std::filesystem::path path_;
    int fd_ = -1;
};

// Pipeline stages. Each one locks the output directory, reads its inputs,
// writes its artifacts, and re-reads them as schema validation before
// returning. All randomness derives from the global seed plus a stage name.
void run_synth(const PipelineConfig& config, const PipelinePaths& paths);
void run_cluster_fit(const PipelineConfig& config, const PipelinePaths& paths);
void run_label(const PipelineConfig& config, const PipelinePaths& paths);
void run_pretrain(const PipelineConfig& config, const PipelinePaths& paths);
void run_transfer(const PipelineConfig& config, const PipelinePaths& paths);

}  // namespace engage
