#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace engage {

// Fraction of samples whose top-scoring class matches the label; argmax
// ties go to the lowest class index.
double accuracy(std::span<const std::vector<double>> scores,
                std::span<const std::uint32_t> labels);

// Macro-averaged one-vs-rest ROC AUC via the rank statistic (tied scores
// earn 0.5 credit). Classes without both a positive and a negative are
// skipped with a warning; if nothing is evaluable that is an error.
// Single-column scores are treated as binary positive-class scores with
// labels in {0, 1}.
double macro_auc(std::span<const std::vector<double>> scores,
                 std::span<const std::uint32_t> labels);

}  // namespace engage
