#include "engage/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "engage/errors.hpp"
#include "engage/log.hpp"

namespace engage {

namespace {

std::size_t validate_scores(std::span<const std::vector<double>> scores,
                            std::span<const std::uint32_t> labels) {
    if (scores.empty()) throw InputError("metric computed over an empty sample set");
    if (scores.size() != labels.size())
        throw InputError("scores and labels differ in length");
    const std::size_t k = scores.front().size();
    if (k == 0) throw InputError("score vectors must be non-empty");
    for (const auto& row : scores)
        if (row.size() != k) throw InputError("score vectors have inconsistent widths");
    return k;
}

// AUC of one class from average ranks: sort ascending, give tied scores
// their mean rank, then (rank sum of positives - n_pos(n_pos+1)/2) /
// (n_pos * n_neg).
double rank_auc(std::span<const std::vector<double>> scores, std::size_t column,
                std::span<const std::uint32_t> labels, std::uint32_t positive_class,
                std::size_t n_pos, std::size_t n_neg) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a][column] < scores[b][column];
    });

    double pos_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]][column] == scores[order[i]][column]) ++j;
        const double avg_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t t = i; t <= j; ++t)
            if (labels[order[t]] == positive_class) pos_rank_sum += avg_rank;
        i = j + 1;
    }

    const double np = static_cast<double>(n_pos);
    const double nn = static_cast<double>(n_neg);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

}  // namespace

double accuracy(std::span<const std::vector<double>> scores,
                std::span<const std::uint32_t> labels) {
    const std::size_t k = validate_scores(scores, labels);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] >= k)
            throw InputError("label " + std::to_string(labels[i]) + " out of range for " +
                             std::to_string(k) + " classes");
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c)
            if (scores[i][c] > scores[i][best]) best = c;
        if (best == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(scores.size());
}

double macro_auc(std::span<const std::vector<double>> scores,
                 std::span<const std::uint32_t> labels) {
    const std::size_t k = validate_scores(scores, labels);

    if (k == 1) {
        std::size_t n_pos = 0;
        for (auto label : labels) {
            if (label > 1)
                throw InputError("binary AUC labels must be 0 or 1, got " + std::to_string(label));
            if (label == 1) ++n_pos;
        }
        const std::size_t n_neg = labels.size() - n_pos;
        if (n_pos == 0 || n_neg == 0)
            throw MetricError("binary AUC needs at least one positive and one negative");
        return rank_auc(scores, 0, labels, 1, n_pos, n_neg);
    }

    for (auto label : labels)
        if (label >= k)
            throw InputError("label " + std::to_string(label) + " out of range for " +
                             std::to_string(k) + " classes");

    std::vector<std::size_t> class_counts(k, 0);
    for (auto label : labels) ++class_counts[label];

    double sum = 0.0;
    std::size_t evaluable = 0;
    for (std::size_t c = 0; c < k; ++c) {
        const std::size_t n_pos = class_counts[c];
        const std::size_t n_neg = labels.size() - n_pos;
        if (n_pos == 0 || n_neg == 0) {
            log_warn("class " + std::to_string(c) +
                     " skipped in macro AUC: needs a positive and a negative sample");
            continue;
        }
        sum += rank_auc(scores, c, labels, static_cast<std::uint32_t>(c), n_pos, n_neg);
        ++evaluable;
    }
    if (evaluable == 0) throw MetricError("no class had both positives and negatives");
    return sum / static_cast<double>(evaluable);
}

}  // namespace engage
