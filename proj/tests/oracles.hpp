#pragma once

// Independent reference implementations the test suites check the library
// against. Deliberately naive: exhaustive enumeration and O(n^2) counting
// instead of the algorithms under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "engage/features.hpp"
#include "engage/model.hpp"

namespace oracles {

// Globally optimal k-means inertia by trying every assignment of n points
// to k clusters. Feasible for n <= 8, k <= 3.
inline double brute_force_inertia(std::span<const engage::EngagementVector> points,
                                  std::size_t k) {
    const std::size_t n = points.size();
    const std::size_t dim = points.front().values.size();
    std::size_t total = 1;
    for (std::size_t i = 0; i < n; ++i) total *= k;

    double best = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> assign(n);
    for (std::size_t code = 0; code < total; ++code) {
        std::size_t c = code;
        for (std::size_t i = 0; i < n; ++i) {
            assign[i] = c % k;
            c /= k;
        }
        std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[assign[i]];
            for (std::size_t d = 0; d < dim; ++d) sums[assign[i]][d] += points[i].values[d];
        }
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& sum = sums[assign[i]];
            const double cnt = static_cast<double>(counts[assign[i]]);
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = points[i].values[d] - sum[d] / cnt;
                inertia += diff * diff;
            }
        }
        best = std::min(best, inertia);
    }
    return best;
}

// AUC for one positive class by counting every positive/negative pair,
// ties worth half.
inline double pairwise_auc(std::span<const std::vector<double>> scores, std::size_t column,
                           std::span<const std::uint32_t> labels, std::uint32_t positive) {
    double wins = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != positive) continue;
        ++n_pos;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] == positive) continue;
            if (scores[i][column] > scores[j][column])
                wins += 1.0;
            else if (scores[i][column] == scores[j][column])
                wins += 0.5;
        }
    }
    for (auto label : labels)
        if (label != positive) ++n_neg;
    return wins / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Macro AUC with the same skip rule as the library: classes lacking a
// positive or a negative are left out of the average.
inline double pairwise_macro_auc(std::span<const std::vector<double>> scores,
                                 std::span<const std::uint32_t> labels) {
    const std::size_t k = scores.front().size();
    if (k == 1) return pairwise_auc(scores, 0, labels, 1);
    double sum = 0.0;
    std::size_t evaluable = 0;
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t n_pos = 0;
        for (auto label : labels)
            if (label == c) ++n_pos;
        if (n_pos == 0 || n_pos == labels.size()) continue;
        sum += pairwise_auc(scores, c, labels, static_cast<std::uint32_t>(c));
        ++evaluable;
    }
    return sum / static_cast<double>(evaluable);
}

struct GradCheck {
    double max_rel_err = 0.0;
    std::string worst_tensor;
};

// Central finite differences against the analytic batch gradient. When the
// encoder is frozen only the heads are difference-checked (the loss still
// depends on frozen weights; their analytic gradient is zero by contract).
inline GradCheck finite_diff_check(engage::ModelParams& params,
                                   std::span<const std::vector<double>> inputs,
                                   std::span<const engage::PseudoLabels> targets,
                                   const engage::LossOptions& opts, double eps) {
    auto grads = engage::zero_grads_like(params);
    engage::batch_loss_and_grads(params, inputs, targets, opts, &grads);

    auto param_refs = engage::tensor_refs(params);
    auto grad_refs = engage::tensor_refs(grads);

    GradCheck result;
    for (std::size_t t = 0; t < param_refs.size(); ++t) {
        const bool encoder_tensor = param_refs[t].name.rfind("encoder.", 0) == 0;
        if (opts.freeze_encoder && encoder_tensor) continue;
        auto& theta = *param_refs[t].data;
        const auto& analytic = *grad_refs[t].data;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double saved = theta[i];
            theta[i] = saved + eps;
            const double up =
                engage::batch_loss_and_grads(params, inputs, targets, opts, nullptr).total;
            theta[i] = saved - eps;
            const double down =
                engage::batch_loss_and_grads(params, inputs, targets, opts, nullptr).total;
            theta[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
            const double rel = std::abs(analytic[i] - numeric) / denom;
            if (rel > result.max_rel_err) {
                result.max_rel_err = rel;
                result.worst_tensor = param_refs[t].name;
            }
        }
    }
    return result;
}

inline double population_std(std::span<const double> values) {
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    return std::sqrt(var / static_cast<double>(values.size()));
}

}  // namespace oracles
