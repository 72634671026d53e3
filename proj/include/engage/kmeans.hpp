#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "engage/features.hpp"

namespace engage {

struct KmeansConfig {
    std::uint32_t max_iters = 300;
    double tol = 1e-6;  // convergence threshold on maximum centroid displacement
    std::uint32_t restarts = 3;
    std::size_t minibatch_size = 0;  // 0 = full-batch Lloyd's; >0 enables mini-batch updates
    bool check_monotonic = false;    // debug: assert inertia never increases across iterations
};

// Fitted cluster model over one engagement feature space. Immutable once
// fitted; safe for concurrent reads.
struct ClusterModel {
    FeatureKind kind = FeatureKind::Comment;
    std::uint32_t k = 0;
    std::size_t dim = 0;
    std::uint64_t seed = 0;
    std::vector<double> centroids;  // k x dim, row-major
    double inertia = 0.0;
    std::uint32_t iterations_run = 0;

    // Optional provenance: ids of the posts whose engagement the model was
    // fitted on (holdout split). Empty when unknown.
    std::vector<std::string> fit_post_ids;

    std::span<const double> centroid(std::uint32_t i) const {
        return {centroids.data() + static_cast<std::size_t>(i) * dim, dim};
    }

    void save(const std::filesystem::path& path) const;
    static ClusterModel load(const std::filesystem::path& path);
};

// Number of distinct vectors in the input; fitting requires at least k.
std::size_t count_distinct(std::span<const EngagementVector> features);

// Lloyd's algorithm with k-means++ seeding and restarts (lowest inertia
// wins, earliest restart on ties). An emptied cluster is repaired by
// resetting its centroid to the point farthest from that centroid.
// Fully deterministic for fixed (features, k, seed, config).
ClusterModel fit_clusters(std::span<const EngagementVector> features, std::uint32_t k,
                          std::uint64_t seed, const KmeansConfig& cfg = {});

// Index of the nearest centroid by squared Euclidean distance; ties break
// toward the lowest index.
std::uint32_t assign_cluster(const EngagementVector& feature, const ClusterModel& model);

}  // namespace engage
