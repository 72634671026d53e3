#include "engage/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"

#include "engage/errors.hpp"
#include "engage/rng.hpp"

namespace engage {

using nlohmann::json;

namespace {

double dist2(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

std::span<const double> point(std::span<const EngagementVector> feats, std::size_t i) {
    return {feats[i].values.data(), feats[i].values.size()};
}

std::span<const double> centroid_row(const std::vector<double>& centroids, std::size_t dim,
                                     std::size_t c) {
    return {centroids.data() + c * dim, dim};
}

// index of nearest centroid, lowest index on ties
std::uint32_t nearest(std::span<const double> x, const std::vector<double>& centroids,
                      std::uint32_t k, std::size_t dim, double* best_out = nullptr) {
    std::uint32_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::uint32_t c = 0; c < k; ++c) {
        double d = dist2(x, centroid_row(centroids, dim, c));
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    if (best_out != nullptr) *best_out = best_d;
    return best;
}

std::vector<double> kmeanspp_init(std::span<const EngagementVector> feats, std::uint32_t k,
                                  std::size_t dim, Rng& rng) {
    const std::size_t n = feats.size();
    std::vector<double> centroids(static_cast<std::size_t>(k) * dim);
    std::vector<double> d2(n);

    std::size_t first = static_cast<std::size_t>(rng.uniform_int(n));
    std::copy_n(point(feats, first).data(), dim, centroids.begin());
    for (std::size_t i = 0; i < n; ++i) d2[i] = dist2(point(feats, i), centroid_row(centroids, dim, 0));

    for (std::uint32_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (double d : d2) total += d;
        std::size_t chosen = 0;
        if (total > 0.0) {
            double r = rng.uniform() * total;
            double cum = 0.0;
            chosen = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                cum += d2[i];
                if (cum > r) {
                    chosen = i;
                    break;
                }
            }
        } else {
            // all mass on already-chosen points; cannot happen when the input
            // has >= k distinct vectors, but keep the walk well defined
            chosen = static_cast<std::size_t>(rng.uniform_int(n));
        }
        std::copy_n(point(feats, chosen).data(), dim, centroids.begin() + c * dim);
        for (std::size_t i = 0; i < n; ++i) {
            double d = dist2(point(feats, i), centroid_row(centroids, dim, c));
            if (d < d2[i]) d2[i] = d;
        }
    }
    return centroids;
}

struct LloydResult {
    std::vector<double> centroids;
    double inertia = 0.0;
    std::uint32_t iterations = 0;
};

LloydResult lloyd(std::span<const EngagementVector> feats, std::uint32_t k, std::size_t dim,
                  const KmeansConfig& cfg, Rng& rng) {
    const std::size_t n = feats.size();
    LloydResult res;
    res.centroids = kmeanspp_init(feats, k, dim, rng);

    std::vector<std::uint32_t> assign(n);
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d;
        assign[i] = nearest(point(feats, i), res.centroids, k, dim, &d);
        inertia += d;
    }

    std::vector<double> sums(static_cast<std::size_t>(k) * dim);
    std::vector<std::size_t> counts(k);
    std::vector<double> next(res.centroids.size());

    for (std::uint32_t iter = 0; iter < cfg.max_iters; ++iter) {
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto x = point(feats, i);
            double* row = &sums[static_cast<std::size_t>(assign[i]) * dim];
            for (std::size_t d = 0; d < dim; ++d) row[d] += x[d];
            ++counts[assign[i]];
        }
        std::vector<std::size_t> repair_used;
        for (std::uint32_t c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                for (std::size_t d = 0; d < dim; ++d)
                    next[c * dim + d] = sums[c * dim + d] / static_cast<double>(counts[c]);
            } else {
                // repair: move the centroid onto the point farthest from it,
                // skipping points already claimed by another repair this round
                std::size_t far_idx = 0;
                double far_d = -1.0;
                for (std::size_t i = 0; i < n; ++i) {
                    if (std::find(repair_used.begin(), repair_used.end(), i) != repair_used.end())
                        continue;
                    double d = dist2(point(feats, i), centroid_row(res.centroids, dim, c));
                    if (d > far_d) {
                        far_d = d;
                        far_idx = i;
                    }
                }
                repair_used.push_back(far_idx);
                std::copy_n(point(feats, far_idx).data(), dim, next.begin() + c * dim);
            }
        }

        double max_shift2 = 0.0;
        for (std::uint32_t c = 0; c < k; ++c) {
            max_shift2 = std::max(
                max_shift2, dist2(centroid_row(next, dim, c), centroid_row(res.centroids, dim, c)));
        }
        res.centroids.swap(next);
        ++res.iterations;

        bool changed = false;
        double new_inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double d;
            std::uint32_t a = nearest(point(feats, i), res.centroids, k, dim, &d);
            if (a != assign[i]) changed = true;
            assign[i] = a;
            new_inertia += d;
        }
        if (cfg.check_monotonic && new_inertia > inertia + 1e-9 * std::max(1.0, inertia))
            throw FitError("inertia increased during Lloyd iteration");
        inertia = new_inertia;

        if (!changed) break;
        if (max_shift2 < cfg.tol * cfg.tol) break;
    }

    res.inertia = inertia;
    return res;
}

LloydResult minibatch(std::span<const EngagementVector> feats, std::uint32_t k, std::size_t dim,
                      const KmeansConfig& cfg, Rng& rng) {
    const std::size_t n = feats.size();
    LloydResult res;
    res.centroids = kmeanspp_init(feats, k, dim, rng);
    std::vector<std::size_t> counts(k, 0);

    for (std::uint32_t iter = 0; iter < cfg.max_iters; ++iter) {
        for (std::size_t b = 0; b < cfg.minibatch_size; ++b) {
            std::size_t i = static_cast<std::size_t>(rng.uniform_int(n));
            auto x = point(feats, i);
            std::uint32_t c = nearest(x, res.centroids, k, dim);
            ++counts[c];
            double eta = 1.0 / static_cast<double>(counts[c]);
            double* row = &res.centroids[static_cast<std::size_t>(c) * dim];
            for (std::size_t d = 0; d < dim; ++d) row[d] += eta * (x[d] - row[d]);
        }
        ++res.iterations;
    }

    for (std::size_t i = 0; i < n; ++i) {
        double d;
        nearest(point(feats, i), res.centroids, k, dim, &d);
        res.inertia += d;
    }
    return res;
}

}  // namespace

std::size_t count_distinct(std::span<const EngagementVector> features) {
    std::vector<std::span<const double>> pts(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) pts[i] = point(features, i);
    std::sort(pts.begin(), pts.end(), [](auto a, auto b) {
        return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
    });
    std::size_t distinct = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (i == 0 || !std::equal(pts[i].begin(), pts[i].end(), pts[i - 1].begin(), pts[i - 1].end()))
            ++distinct;
    }
    return distinct;
}

ClusterModel fit_clusters(std::span<const EngagementVector> features, std::uint32_t k,
                          std::uint64_t seed, const KmeansConfig& cfg) {
    if (features.empty()) throw InputError("cannot fit clusters on an empty feature set");
    if (k == 0) throw ConfigError("k must be positive");
    const std::size_t dim = features[0].values.size();
    const FeatureKind kind = features[0].kind;
    for (const auto& f : features) {
        if (f.values.size() != dim) throw InputError("feature dimension mismatch in cluster fit");
        if (f.kind != kind) throw InputError("mixed feature kinds in cluster fit");
    }
    if (count_distinct(features) < k)
        throw FitError("cluster fit needs at least k distinct points (k=" + std::to_string(k) + ")");

    const bool use_minibatch = cfg.minibatch_size > 0 && cfg.minibatch_size < features.size();
    const std::uint32_t restarts = std::max<std::uint32_t>(1, cfg.restarts);

    LloydResult best;
    bool have_best = false;
    for (std::uint32_t r = 0; r < restarts; ++r) {
        Rng rng(derive_seed(seed, "kmeans_restart", r));
        LloydResult cur = use_minibatch ? minibatch(features, k, dim, cfg, rng)
                                        : lloyd(features, k, dim, cfg, rng);
        if (!have_best || cur.inertia < best.inertia) {
            best = std::move(cur);
            have_best = true;
        }
    }

    ClusterModel model;
    model.kind = kind;
    model.k = k;
    model.dim = dim;
    model.seed = seed;
    model.centroids = std::move(best.centroids);
    model.inertia = best.inertia;
    model.iterations_run = best.iterations;
    return model;
}

std::uint32_t assign_cluster(const EngagementVector& feature, const ClusterModel& model) {
    if (model.k == 0 || model.centroids.size() != static_cast<std::size_t>(model.k) * model.dim)
        throw StateError("cluster model is not fitted");
    if (feature.values.size() != model.dim)
        throw InputError("feature dimension does not match cluster model");
    if (feature.kind != model.kind) throw InputError("feature kind does not match cluster model");
    return nearest({feature.values.data(), feature.values.size()}, model.centroids, model.k,
                   model.dim);
}

void ClusterModel::save(const std::filesystem::path& path) const {
    json j;
    j["version"] = 1;
    j["kind"] = kind == FeatureKind::Comment ? "comment" : "reaction";
    j["k"] = k;
    j["dim"] = dim;
    j["seed"] = seed;
    j["centroids"] = centroids;
    j["inertia"] = inertia;
    j["iterations_run"] = iterations_run;
    if (!fit_post_ids.empty()) j["fit_post_ids"] = fit_post_ids;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write cluster model: " + path.string());
    out << j.dump() << "\n";
}

ClusterModel ClusterModel::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read cluster model: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError("invalid cluster model file " + path.string() + ": " + e.what());
    }
    for (const char* field : {"version", "kind", "k", "dim", "seed", "centroids", "inertia"}) {
        if (!j.contains(field))
            throw IoError("cluster model file missing field '" + std::string(field) +
                          "': " + path.string());
    }
    ClusterModel m;
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "comment") {
        m.kind = FeatureKind::Comment;
    } else if (kind == "reaction") {
        m.kind = FeatureKind::Reaction;
    } else {
        throw IoError("unknown cluster kind '" + kind + "' in " + path.string());
    }
    m.k = j.at("k").get<std::uint32_t>();
    m.dim = j.at("dim").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.centroids = j.at("centroids").get<std::vector<double>>();
    m.inertia = j.at("inertia").get<double>();
    if (j.contains("iterations_run")) m.iterations_run = j.at("iterations_run").get<std::uint32_t>();
    if (j.contains("fit_post_ids"))
        m.fit_post_ids = j.at("fit_post_ids").get<std::vector<std::string>>();
    if (m.centroids.size() != static_cast<std::size_t>(m.k) * m.dim)
        throw IoError("centroid matrix shape mismatch in " + path.string());
    return m;
}

}  // namespace engage
